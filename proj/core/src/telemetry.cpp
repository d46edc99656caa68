#include "locaris/telemetry.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "locaris/error.hpp"

namespace locaris {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                            : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  T value{};
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc{} || ptr != end) return std::nullopt;
  return value;
}

// Accepts integers written as "-45" or "-45.0".
std::optional<int> parse_int_cell(std::string_view s) {
  if (auto i = parse_number<int>(s)) return i;
  if (auto d = parse_number<double>(s); d && *d == static_cast<double>(static_cast<int>(*d))) {
    return static_cast<int>(*d);
  }
  return std::nullopt;
}

// Column suffix after a prefix, e.g. "AP007" -> 7. Returns 0 when not matching.
int column_index(std::string_view name, std::string_view prefix) {
  if (name.size() <= prefix.size() || name.substr(0, prefix.size()) != prefix) return 0;
  const auto idx = parse_number<int>(name.substr(prefix.size()));
  return idx && *idx > 0 ? *idx : 0;
}

std::string where(const std::filesystem::path& path, std::size_t line_no) {
  return path.string() + ":" + std::to_string(line_no);
}

std::optional<int> read_rssi(std::string_view cell, const std::filesystem::path& path,
                             std::size_t line_no) {
  if (cell.empty()) return std::nullopt;
  const auto v = parse_int_cell(cell);
  if (!v) fail(Errc::SchemaError, where(path, line_no) + ": bad RSSI cell '" + std::string(cell) + "'");
  if (*v == kRssiMissingSentinel) return std::nullopt;
  if (*v < kRssiMin || *v > kRssiMax) {
    fail(Errc::RangeError, where(path, line_no) + ": RSSI " + std::to_string(*v) +
                               " outside [-104, 0]");
  }
  return v;
}

std::optional<int> read_rtt(std::string_view cell, const std::filesystem::path& path,
                            std::size_t line_no) {
  if (cell.empty()) return std::nullopt;
  const auto v = parse_int_cell(cell);
  if (!v) fail(Errc::SchemaError, where(path, line_no) + ": bad RTT cell '" + std::string(cell) + "'");
  if (*v <= 0) {
    fail(Errc::RangeError, where(path, line_no) + ": RTT " + std::to_string(*v) + " must be > 0");
  }
  return v;
}

double read_coord(std::string_view cell, const std::filesystem::path& path, std::size_t line_no) {
  const auto v = parse_number<double>(cell);
  if (!v) fail(Errc::SchemaError, where(path, line_no) + ": bad coordinate '" + std::string(cell) + "'");
  return *v;
}

struct Layout {
  std::map<int, std::size_t> rssi_col;  // ap_id -> column
  std::map<int, std::size_t> rtt_col;
  std::size_t x = 0, y = 0;
  std::vector<std::pair<std::string, std::size_t>> meta;  // metadata key -> column
};

Layout parse_header(std::string_view header, CsvFormat format, const std::filesystem::path& path) {
  const auto cols = split_csv(header);
  Layout layout;
  std::optional<std::size_t> x, y;
  std::set<std::string, std::less<>> seen;

  std::map<std::string_view, std::string_view> meta_columns;
  if (format == CsvFormat::SodCsv) {
    meta_columns = {{"FLOOR", "floor"}, {"BUILDINGID", "building"}, {"USERID", "user"},
                    {"PHONEID", "phone"}};
  } else {
    meta_columns = {{"ENV", "environment"}};
  }

  for (std::size_t c = 0; c < cols.size(); ++c) {
    const auto name = cols[c];
    if (!seen.insert(std::string(name)).second) {
      fail(Errc::SchemaError, path.string() + ": duplicate column '" + std::string(name) + "'");
    }
    if (name == "X") { x = c; continue; }
    if (name == "Y") { y = c; continue; }
    if (auto it = meta_columns.find(name); it != meta_columns.end()) {
      layout.meta.emplace_back(std::string(it->second), c);
      continue;
    }
    if (format == CsvFormat::SodCsv) {
      if (const int ap = column_index(name, "AP")) { layout.rssi_col[ap] = c; continue; }
    } else {
      if (const int ap = column_index(name, "RTT")) { layout.rtt_col[ap] = c; continue; }
      if (const int ap = column_index(name, "RSS")) { layout.rssi_col[ap] = c; continue; }
    }
    fail(Errc::SchemaError, path.string() + ": unknown column '" + std::string(name) + "'");
  }

  if (!x || !y) fail(Errc::SchemaError, path.string() + ": missing X/Y columns");
  layout.x = *x;
  layout.y = *y;
  if (layout.meta.size() != meta_columns.size()) {
    fail(Errc::SchemaError, path.string() + ": missing metadata columns");
  }
  if (layout.rssi_col.empty()) fail(Errc::SchemaError, path.string() + ": no AP columns");
  if (format == CsvFormat::FtmRssiCsv) {
    for (const auto& [ap, col] : layout.rssi_col) {
      if (!layout.rtt_col.contains(ap)) {
        fail(Errc::SchemaError, path.string() + ": RSS" + std::to_string(ap) + " without RTT column");
      }
    }
    for (const auto& [ap, col] : layout.rtt_col) {
      if (!layout.rssi_col.contains(ap)) {
        fail(Errc::SchemaError, path.string() + ": RTT" + std::to_string(ap) + " without RSS column");
      }
    }
  }
  return layout;
}

std::string format_coord(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

void validate(const TelemetrySample& sample) {
  if (sample.readings.empty()) fail(Errc::InvalidSample, "sample has no readings");
  int prev = 0;
  for (const auto& r : sample.readings) {
    if (r.ap_id <= prev) fail(Errc::InvalidSample, "ap_ids must be positive and strictly increasing");
    prev = r.ap_id;
    if (!r.rssi && !r.ftm_rtt) {
      fail(Errc::InvalidSample, "AP" + std::to_string(r.ap_id) + " has neither RSSI nor FTM");
    }
    if (r.rssi && (*r.rssi < kRssiMin || *r.rssi > kRssiMax)) {
      fail(Errc::InvalidSample, "AP" + std::to_string(r.ap_id) + " RSSI out of range");
    }
    if (r.ftm_rtt && *r.ftm_rtt <= 0) {
      fail(Errc::InvalidSample, "AP" + std::to_string(r.ap_id) + " RTT must be positive");
    }
  }
}

std::set<int> collect_ap_universe(std::span<const TelemetrySample> samples) {
  std::set<int> out;
  for (const auto& s : samples) {
    for (const auto& r : s.readings) out.insert(r.ap_id);
  }
  return out;
}

std::string_view modality_name(Modality m) noexcept {
  switch (m) {
    case Modality::Both: return "both";
    case Modality::FtmOnly: return "ftm_only";
    case Modality::RssiOnly: return "rssi_only";
  }
  return "both";
}

Modality parse_modality(std::string_view name) {
  if (name == "both") return Modality::Both;
  if (name == "ftm_only") return Modality::FtmOnly;
  if (name == "rssi_only") return Modality::RssiOnly;
  fail(Errc::ConfigError, "unknown modality '" + std::string(name) + "'");
}

TelemetrySample apply_ablation(const TelemetrySample& sample, const AblationSpec& spec) {
  TelemetrySample out;
  out.position = sample.position;
  if (spec.keep_metadata) out.metadata = sample.metadata;
  for (const auto& r : sample.readings) {
    if (spec.dropped_aps.contains(r.ap_id)) continue;
    ApReading kept = r;
    if (spec.modality == Modality::FtmOnly) kept.rssi.reset();
    if (spec.modality == Modality::RssiOnly) kept.ftm_rtt.reset();
    if (kept.rssi || kept.ftm_rtt) out.readings.push_back(kept);
  }
  if (out.readings.empty()) {
    fail(Errc::AllReadingsDropped, "ablation removes every reading of the sample");
  }
  return out;
}

std::string_view metadata_keyword(std::string_view key) {
  if (key == "building") return "BUILDING:";
  if (key == "floor") return "FLOOR:";
  if (key == "user") return "USER:";
  if (key == "phone") return "PHONE:";
  if (key == "environment") return "ENV:";
  fail(Errc::InvalidSample, "unknown metadata key '" + std::string(key) + "'");
}

std::string serialize_prompt(const TelemetrySample& sample, const AblationSpec& spec) {
  const TelemetrySample kept = apply_ablation(sample, spec);
  std::string out;
  out.reserve(16 * kept.readings.size() + 32);
  auto field = [&out](std::string_view head, std::string_view kw, std::string_view value) {
    if (!out.empty()) out += ' ';
    out += head;
    if (!head.empty()) out += ' ';
    out += kw;
    out += ' ';
    out += value;
  };
  for (const auto& r : kept.readings) {
    if (r.ftm_rtt) field("AP" + std::to_string(r.ap_id), "RTT:", std::to_string(*r.ftm_rtt));
  }
  for (const auto& r : kept.readings) {
    if (r.rssi) field("AP" + std::to_string(r.ap_id), "RSS:", std::to_string(*r.rssi));
  }
  for (const auto key : kMetadataKeys) {
    if (auto it = kept.metadata.find(key); it != kept.metadata.end()) {
      field({}, metadata_keyword(key), it->second);
    }
  }
  return out;
}

CsvFormat parse_csv_format(std::string_view name) {
  if (name == "sod_csv") return CsvFormat::SodCsv;
  if (name == "ftm_rssi_csv") return CsvFormat::FtmRssiCsv;
  fail(Errc::ConfigError, "unknown dataset format '" + std::string(name) + "'");
}

std::vector<TelemetrySample> load_samples(const std::filesystem::path& path, CsvFormat format) {
  std::ifstream in(path);
  if (!in) fail(Errc::IoError, "cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) fail(Errc::EmptyDataset, path.string() + ": no header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const Layout layout = parse_header(line, format, path);
  const std::size_t n_cols = split_csv(line).size();

  std::vector<TelemetrySample> samples;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != n_cols) {
      fail(Errc::SchemaError, where(path, line_no) + ": expected " + std::to_string(n_cols) +
                                  " cells, got " + std::to_string(cells.size()));
    }
    TelemetrySample s;
    // std::map keeps ap ids ascending.
    std::map<int, ApReading> by_ap;
    for (const auto& [ap, col] : layout.rssi_col) {
      if (auto v = read_rssi(cells[col], path, line_no)) by_ap[ap].rssi = v;
    }
    for (const auto& [ap, col] : layout.rtt_col) {
      if (auto v = read_rtt(cells[col], path, line_no)) by_ap[ap].ftm_rtt = v;
    }
    for (auto& [ap, reading] : by_ap) {
      reading.ap_id = ap;
      s.readings.push_back(reading);
    }
    if (s.readings.empty()) continue;
    s.position = {read_coord(cells[layout.x], path, line_no), read_coord(cells[layout.y], path, line_no)};
    for (const auto& [key, col] : layout.meta) {
      if (!cells[col].empty()) s.metadata.emplace(key, std::string(cells[col]));
    }
    samples.push_back(std::move(s));
  }
  if (samples.empty()) fail(Errc::EmptyDataset, path.string() + ": no samples");
  return samples;
}

DatasetSplit ingest_dataset(const std::filesystem::path& train_path,
                            const std::filesystem::path& test_path, CsvFormat format) {
  DatasetSplit split;
  split.train = load_samples(train_path, format);
  split.test = load_samples(test_path, format);
  split.ap_universe = collect_ap_universe(split.train);
  split.ap_universe.merge(collect_ap_universe(split.test));
  return split;
}

void write_ftm_rssi_csv(const std::filesystem::path& path,
                        std::span<const TelemetrySample> samples, int n_aps) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  for (int i = 1; i <= n_aps; ++i) out << "RTT" << i << ',';
  for (int i = 1; i <= n_aps; ++i) out << "RSS" << i << ',';
  out << "X,Y,ENV\n";
  std::vector<const ApReading*> slot(static_cast<std::size_t>(n_aps) + 1);
  for (const auto& s : samples) {
    std::fill(slot.begin(), slot.end(), nullptr);
    for (const auto& r : s.readings) {
      if (r.ap_id < 1 || r.ap_id > n_aps) {
        fail(Errc::InvalidSample, "AP" + std::to_string(r.ap_id) + " outside CSV column range");
      }
      slot[static_cast<std::size_t>(r.ap_id)] = &r;
    }
    for (int i = 1; i <= n_aps; ++i) {
      const auto* r = slot[static_cast<std::size_t>(i)];
      if (r && r->ftm_rtt) out << *r->ftm_rtt;
      out << ',';
    }
    for (int i = 1; i <= n_aps; ++i) {
      const auto* r = slot[static_cast<std::size_t>(i)];
      if (r && r->rssi) out << *r->rssi;
      out << ',';
    }
    out << format_coord(s.position.x) << ',' << format_coord(s.position.y) << ',';
    if (auto it = s.metadata.find("environment"); it != s.metadata.end()) out << it->second;
    out << '\n';
  }
  if (!out) fail(Errc::IoError, "write failed for " + path.string());
}

std::vector<std::set<int>> ap_drop_schedule(const std::set<int>& ap_universe, int k) {
  if (k < 1) fail(Errc::InvalidConfig, "drop count must be >= 1");
  if (ap_universe.size() <= static_cast<std::size_t>(k)) {
    fail(Errc::TooFewAPs, "need more than " + std::to_string(k) + " APs, have " +
                              std::to_string(ap_universe.size()));
  }
  const std::vector<int> aps(ap_universe.begin(), ap_universe.end());
  const std::size_t n = aps.size();
  const auto kk = static_cast<std::size_t>(k);
  std::vector<std::set<int>> out;
  std::vector<std::size_t> idx(kk);
  for (std::size_t i = 0; i < kk; ++i) idx[i] = i;
  // Lexicographic k-combinations of positions.
  while (true) {
    std::set<int> combo;
    for (auto i : idx) combo.insert(aps[i]);
    out.push_back(std::move(combo));
    std::size_t pos = kk;
    while (pos > 0 && idx[pos - 1] == n - kk + pos - 1) --pos;
    if (pos == 0) break;
    ++idx[pos - 1];
    for (std::size_t j = pos; j < kk; ++j) idx[j] = idx[j - 1] + 1;
  }
  return out;
}

}  // namespace locaris
