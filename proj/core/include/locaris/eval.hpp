#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "locaris/model.hpp"
#include "locaris/quantize.hpp"
#include "locaris/telemetry.hpp"
#include "locaris/tokenizer.hpp"

namespace locaris {

/// Euclidean distance per sample. Throws LengthMismatch.
std::vector<double> distance_errors(std::span<const Position> predictions,
                                    std::span<const Position> truths);

/// Linear interpolation at fractional index p * (n - 1) of sorted values.
double percentile(std::span<const double> sorted, double p);

struct ErrorSummary {
  std::size_t n = 0;
  double mae = 0.0;
  double rmse = 0.0;
  double p50 = 0.0;
  double p75 = 0.0;
  double p95 = 0.0;
  double p99 = 0.0;
};

/// Throws Empty for an empty error vector.
ErrorSummary summarize(std::span<const double> errors);

/// Identifies the condition a report belongs to. Empty optionals print as
/// empty CSV cells; a seed-averaged row prints "mean" in the seed column.
struct RunFingerprint {
  std::string kind;
  std::string condition;
  std::string method = "locaris";
  std::string environment;
  std::optional<std::uint64_t> seed;
  bool seed_mean = false;
  std::string modality = "both";
  std::string dropped_aps;  // ';'-separated AP ids
  std::optional<double> fraction;
  std::optional<int> quant_bits;
  std::size_t n_train = 0;
};

struct EvalReport {
  RunFingerprint run;
  ErrorSummary errors;
  std::size_t total_params = 0;
  std::size_t trainable_params = 0;
  std::size_t weight_memory_bytes = 0;
  // Wall-clock measurements; kept out of the CSV so repeated runs compare equal.
  std::optional<double> throughput;  // samples/s
  std::optional<double> train_seconds;
  std::optional<double> energy_samples_per_wh;  // never measured, always null
};

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

/// Stable column list shared by every experiment kind.
const std::vector<std::string>& csv_columns();
std::string csv_header();
std::string csv_row(const EvalReport& r);

/// Mean of the error statistics across per-seed reports of one condition.
/// The fingerprint of the first report is kept with seed_mean set.
EvalReport mean_report(std::span<const EvalReport> per_seed);

/// One untimed warm-up call, then `timed_passes` timed calls; returns
/// n_samples divided by the median pass time.
double measure_throughput(const std::function<void()>& pass, std::size_t n_samples,
                          int timed_passes = 3);

/// Forward passes over `samples` in batches of `batch_size`, timed as above.
double measure_throughput(const Model& model, std::span<const TelemetrySample> samples,
                          const AblationSpec& spec, const Vocab& vocab, std::size_t batch_size);
double measure_throughput(const QuantizedModel& model, std::span<const TelemetrySample> samples,
                          const AblationSpec& spec, const Vocab& vocab, std::size_t batch_size);

/// Weight storage in bytes, excluding activations. Float tensors count 4
/// bytes per value (their checkpoint width); quantized matrices count packed
/// codes plus one float32 scale per row.
struct WeightMemory {
  std::size_t backbone = 0;
  std::size_t adapters = 0;
  std::size_t head = 0;
  std::size_t total() const { return backbone + adapters + head; }
};

WeightMemory weight_memory(const Model& model);
WeightMemory weight_memory(const QuantizedModel& model);

/// Closed forms for the backbone bytes of a config; bits 32 means float.
std::size_t expected_backbone_bytes(const ModelConfig& cfg, int bits);

/// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace locaris
