#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace locaris {

inline constexpr int kRssiMin = -104;
inline constexpr int kRssiMax = 0;
/// RSSI value used by SODIndoorLoc-style files for "not measured".
inline constexpr int kRssiMissingSentinel = 100;

struct ApReading {
  int ap_id = 0;  // 1-based
  std::optional<int> rssi;     // dBm
  std::optional<int> ftm_rtt;  // ns

  friend bool operator==(const ApReading&, const ApReading&) = default;
};

struct Position {
  double x = 0.0;  // meters
  double y = 0.0;

  friend bool operator==(const Position&, const Position&) = default;
};

/// Metadata keys in their serialization order.
inline constexpr std::array<std::string_view, 5> kMetadataKeys = {
    "building", "floor", "user", "phone", "environment"};

using Metadata = std::map<std::string, std::string, std::less<>>;

struct TelemetrySample {
  std::vector<ApReading> readings;  // ascending ap_id, no duplicates
  Position position;
  Metadata metadata;

  friend bool operator==(const TelemetrySample&, const TelemetrySample&) = default;
};

/// Throws Error(InvalidSample) when any reading or ordering invariant is broken.
void validate(const TelemetrySample& sample);

struct DatasetSplit {
  std::vector<TelemetrySample> train;
  std::vector<TelemetrySample> test;
  std::set<int> ap_universe;
};

std::set<int> collect_ap_universe(std::span<const TelemetrySample> samples);

enum class Modality { Both, FtmOnly, RssiOnly };

std::string_view modality_name(Modality m) noexcept;
Modality parse_modality(std::string_view name);

struct AblationSpec {
  Modality modality = Modality::Both;
  std::set<int> dropped_aps;
  /// When false, metadata fields are left out of the prompt.
  bool keep_metadata = true;
};

/// Applies modality filtering and AP dropping. Readings left with no
/// modality are removed. Throws AllReadingsDropped if nothing survives.
TelemetrySample apply_ablation(const TelemetrySample& sample, const AblationSpec& spec);

/// "AP1 RTT: <v> ... AP1 RSS: <v> ... [KEY: value ...]"
std::string serialize_prompt(const TelemetrySample& sample, const AblationSpec& spec = {});

/// Prompt keyword for a metadata key, e.g. "environment" -> "ENV:".
std::string_view metadata_keyword(std::string_view key);

enum class CsvFormat { SodCsv, FtmRssiCsv };

CsvFormat parse_csv_format(std::string_view name);

/// Reads one CSV file. RSSI sentinel 100 and empty cells become absent
/// readings; APs with no modality left are dropped from that row; rows with
/// no readings at all are skipped.
std::vector<TelemetrySample> load_samples(const std::filesystem::path& path, CsvFormat format);

/// Loads a train/test pair. Throws EmptyDataset if either side is empty.
DatasetSplit ingest_dataset(const std::filesystem::path& train_path,
                            const std::filesystem::path& test_path,
                            CsvFormat format);

/// Writes samples in the ftm_rssi_csv layout with `n_aps` RTT/RSS column pairs.
void write_ftm_rssi_csv(const std::filesystem::path& path,
                        std::span<const TelemetrySample> samples, int n_aps);

/// k = 1: one singleton per AP ascending. k = 2: all unordered pairs in
/// lexicographic order. Throws TooFewAPs if |universe| <= k.
std::vector<std::set<int>> ap_drop_schedule(const std::set<int>& ap_universe, int k);

}  // namespace locaris
