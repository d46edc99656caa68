#include "locaris/eval.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "locaris/error.hpp"
#include "locaris/training.hpp"

namespace locaris {

std::vector<double> distance_errors(std::span<const Position> predictions,
                                    std::span<const Position> truths) {
  if (predictions.size() != truths.size()) {
    fail(Errc::LengthMismatch, "distance_errors: " + std::to_string(predictions.size()) +
                                   " predictions vs " + std::to_string(truths.size()) + " truths");
  }
  std::vector<double> out(predictions.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::hypot(predictions[i].x - truths[i].x, predictions[i].y - truths[i].y);
  }
  return out;
}

double percentile(std::span<const double> sorted, double p) {
  if (sorted.empty()) fail(Errc::Empty, "percentile of an empty set");
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

ErrorSummary summarize(std::span<const double> errors) {
  if (errors.empty()) fail(Errc::Empty, "summarize: no errors");
  std::vector<double> sorted(errors.begin(), errors.end());
  std::sort(sorted.begin(), sorted.end());
  ErrorSummary s;
  s.n = errors.size();
  double sum = 0.0, sq = 0.0;
  for (double e : errors) {
    sum += e;
    sq += e * e;
  }
  const auto n = static_cast<double>(s.n);
  s.mae = sum / n;
  s.rmse = std::sqrt(sq / n);
  s.p50 = percentile(sorted, 0.50);
  s.p75 = percentile(sorted, 0.75);
  s.p95 = percentile(sorted, 0.95);
  s.p99 = percentile(sorted, 0.99);
  return s;
}

namespace {

template <class T>
nlohmann::json opt_json(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <class T>
std::optional<T> json_opt(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

}  // namespace

void to_json(nlohmann::json& j, const EvalReport& r) {
  const auto& f = r.run;
  j = {{"kind", f.kind},
       {"condition", f.condition},
       {"method", f.method},
       {"environment", f.environment},
       {"seed", f.seed_mean ? nlohmann::json("mean") : opt_json(f.seed)},
       {"modality", f.modality},
       {"dropped_aps", f.dropped_aps},
       {"fraction", opt_json(f.fraction)},
       {"quant_bits", opt_json(f.quant_bits)},
       {"n_train", f.n_train},
       {"n_samples", r.errors.n},
       {"mae", r.errors.mae},
       {"rmse", r.errors.rmse},
       {"p50", r.errors.p50},
       {"p75", r.errors.p75},
       {"p95", r.errors.p95},
       {"p99", r.errors.p99},
       {"total_params", r.total_params},
       {"trainable_params", r.trainable_params},
       {"weight_memory_bytes", r.weight_memory_bytes},
       {"throughput", opt_json(r.throughput)},
       {"train_seconds", opt_json(r.train_seconds)},
       {"energy_samples_per_wh", opt_json(r.energy_samples_per_wh)}};
}

void from_json(const nlohmann::json& j, EvalReport& r) {
  auto& f = r.run;
  f.kind = j.value("kind", std::string());
  f.condition = j.value("condition", std::string());
  f.method = j.value("method", std::string("locaris"));
  f.environment = j.value("environment", std::string());
  f.seed_mean = j.contains("seed") && j.at("seed").is_string();
  f.seed = f.seed_mean ? std::nullopt : json_opt<std::uint64_t>(j, "seed");
  f.modality = j.value("modality", std::string("both"));
  f.dropped_aps = j.value("dropped_aps", std::string());
  f.fraction = json_opt<double>(j, "fraction");
  f.quant_bits = json_opt<int>(j, "quant_bits");
  f.n_train = j.value("n_train", std::size_t{0});
  r.errors.n = j.value("n_samples", std::size_t{0});
  r.errors.mae = j.at("mae").get<double>();
  r.errors.rmse = j.at("rmse").get<double>();
  r.errors.p50 = j.at("p50").get<double>();
  r.errors.p75 = j.at("p75").get<double>();
  r.errors.p95 = j.at("p95").get<double>();
  r.errors.p99 = j.at("p99").get<double>();
  r.total_params = j.value("total_params", std::size_t{0});
  r.trainable_params = j.value("trainable_params", std::size_t{0});
  r.weight_memory_bytes = j.value("weight_memory_bytes", std::size_t{0});
  r.throughput = json_opt<double>(j, "throughput");
  r.train_seconds = json_opt<double>(j, "train_seconds");
  r.energy_samples_per_wh = json_opt<double>(j, "energy_samples_per_wh");
}

const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols = {
      "kind",  "condition", "method", "environment", "seed",  "modality",
      "dropped_aps", "fraction", "quant_bits", "n_train", "n_samples", "mae",
      "rmse",  "p50",       "p75",    "p95",         "p99",   "total_params",
      "trainable_params", "weight_memory_bytes"};
  return cols;
}

std::string csv_header() {
  std::string out;
  for (const auto& c : csv_columns()) {
    if (!out.empty()) out += ',';
    out += c;
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

std::string csv_row(const EvalReport& r) {
  const auto& f = r.run;
  std::vector<std::string> cells = {
      csv_escape(f.kind),
      csv_escape(f.condition),
      csv_escape(f.method),
      csv_escape(f.environment),
      f.seed_mean ? "mean" : (f.seed ? std::to_string(*f.seed) : ""),
      csv_escape(f.modality),
      csv_escape(f.dropped_aps),
      f.fraction ? format_double(*f.fraction) : "",
      f.quant_bits ? std::to_string(*f.quant_bits) : "",
      std::to_string(f.n_train),
      std::to_string(r.errors.n),
      format_double(r.errors.mae),
      format_double(r.errors.rmse),
      format_double(r.errors.p50),
      format_double(r.errors.p75),
      format_double(r.errors.p95),
      format_double(r.errors.p99),
      std::to_string(r.total_params),
      std::to_string(r.trainable_params),
      std::to_string(r.weight_memory_bytes)};
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ',';
    out += cells[i];
  }
  return out;
}

EvalReport mean_report(std::span<const EvalReport> per_seed) {
  if (per_seed.empty()) fail(Errc::Empty, "mean_report: no reports");
  EvalReport out = per_seed.front();
  out.run.seed.reset();
  out.run.seed_mean = true;
  const auto n = static_cast<double>(per_seed.size());
  auto avg = [&](auto member) {
    double s = 0.0;
    for (const auto& r : per_seed) s += r.errors.*member;
    return s / n;
  };
  out.errors.mae = avg(&ErrorSummary::mae);
  out.errors.rmse = avg(&ErrorSummary::rmse);
  out.errors.p50 = avg(&ErrorSummary::p50);
  out.errors.p75 = avg(&ErrorSummary::p75);
  out.errors.p95 = avg(&ErrorSummary::p95);
  out.errors.p99 = avg(&ErrorSummary::p99);
  if (std::all_of(per_seed.begin(), per_seed.end(), [](const auto& r) { return r.throughput.has_value(); })) {
    double s = 0.0;
    for (const auto& r : per_seed) s += *r.throughput;
    out.throughput = s / n;
  }
  out.train_seconds.reset();
  return out;
}

double measure_throughput(const std::function<void()>& pass, std::size_t n_samples,
                          int timed_passes) {
  if (timed_passes < 1) fail(Errc::InvalidConfig, "measure_throughput needs at least one timed pass");
  pass();  // warm-up
  std::vector<double> seconds;
  for (int i = 0; i < timed_passes; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    pass();
    const auto t1 = std::chrono::steady_clock::now();
    seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(seconds.begin(), seconds.end());
  const double median = seconds[seconds.size() / 2];
  return static_cast<double>(n_samples) / std::max(median, 1e-12);
}

double measure_throughput(const Model& model, std::span<const TelemetrySample> samples,
                          const AblationSpec& spec, const Vocab& vocab, std::size_t batch_size) {
  if (samples.empty()) fail(Errc::Empty, "measure_throughput: no samples");
  return measure_throughput([&] { predict(model, samples, spec, vocab, batch_size); }, samples.size());
}

double measure_throughput(const QuantizedModel& model, std::span<const TelemetrySample> samples,
                          const AblationSpec& spec, const Vocab& vocab, std::size_t batch_size) {
  if (samples.empty()) fail(Errc::Empty, "measure_throughput: no samples");
  return measure_throughput([&] { predict(model, samples, spec, vocab, batch_size); }, samples.size());
}

namespace {

constexpr std::size_t kFloatBytes = 4;

std::size_t group_bytes(const Model& model, ParamGroup group) {
  std::size_t n = 0;
  for (const auto& p : model.named_parameters()) {
    if (p.group == group) n += p.tensor.size();
  }
  return n * kFloatBytes;
}

}  // namespace

WeightMemory weight_memory(const Model& model) {
  return {group_bytes(model, ParamGroup::Backbone), group_bytes(model, ParamGroup::Adapter),
          group_bytes(model, ParamGroup::Head)};
}

WeightMemory weight_memory(const QuantizedModel& model) {
  const auto& cfg = model.config();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  WeightMemory m;
  m.backbone = model.backbone_bytes();
  m.head = (d * (d / 2) + d / 2 + (d / 2) * 2 + 2) * kFloatBytes;
  if (const auto& lora = model.lora_config()) {
    m.adapters = static_cast<std::size_t>(cfg.n_layers) * 4 * 2 * static_cast<std::size_t>(lora->rank) * d *
                 kFloatBytes;
  }
  return m;
}

std::size_t expected_backbone_bytes(const ModelConfig& cfg, int bits) {
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto f = static_cast<std::size_t>(cfg.ffn_mult) * d;
  const auto v = static_cast<std::size_t>(cfg.vocab_size);
  const auto layers = static_cast<std::size_t>(cfg.n_layers);
  const std::size_t gains = (2 * layers + 1) * d * kFloatBytes;
  // Per-row storage of a rows x cols matrix.
  auto matrix = [&](std::size_t rows, std::size_t cols) -> std::size_t {
    if (bits == 32) return rows * cols * kFloatBytes;
    const std::size_t code_bytes = bits == 8 ? cols : (cols + 1) / 2;
    return rows * (code_bytes + kFloatBytes);
  };
  if (bits != 32) quant_max(bits);  // validates
  return matrix(v, d) + layers * (4 * matrix(d, d) + matrix(d, f) + matrix(f, d)) + gains;
}

}  // namespace locaris
