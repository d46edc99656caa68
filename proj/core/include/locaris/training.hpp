#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "locaris/model.hpp"
#include "locaris/quantize.hpp"
#include "locaris/telemetry.hpp"
#include "locaris/tokenizer.hpp"

namespace locaris {

enum class TrainMode { Full, Lora };

std::string_view train_mode_name(TrainMode m) noexcept;
TrainMode parse_train_mode(std::string_view name);

enum class LrSchedule { Constant, Cosine };

std::string_view schedule_name(LrSchedule s) noexcept;
LrSchedule parse_schedule(std::string_view name);

struct TrainConfig {
  TrainMode mode = TrainMode::Full;
  double lr = 1e-4;
  std::size_t batch_size = 8;
  int epochs = 10;
  std::uint64_t seed = 0;
  double clip_norm = 1.0;
  double weight_decay = 0.01;
  std::size_t max_steps = 0;  // 0 = no cap
  LrSchedule schedule = LrSchedule::Constant;
  std::size_t warmup_steps = 0;  // linear ramp before the schedule
  // Shift the head output bias so the mean prediction on (up to 256 of) the
  // training samples equals their mean target before the first step.
  bool recenter_head = true;

  /// Throws InvalidConfig.
  void validate() const;
  /// Learning rate at optimizer step `step` (0-based) of `total_steps`.
  double lr_at(std::size_t step, std::size_t total_steps) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;  // sample-weighted mean of batch losses
  double seconds = 0.0;
  std::size_t steps = 0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  std::size_t steps = 0;
  double trainable_fraction = 0.0;
  double seconds = 0.0;

  /// One JSON object per epoch.
  void write_jsonl(std::ostream& os) const;
};

struct EncodedSample {
  TokenSequence tokens;
  Position target;
};

/// apply_ablation + serialize_prompt + encode for each sample.
std::vector<EncodedSample> encode_samples(std::span<const TelemetrySample> samples,
                                          const AblationSpec& spec, const Vocab& vocab);

/// Batch MSE: mean over rows of the squared Euclidean distance (m^2).
nn::Tensor regression_loss(const nn::Tensor& predictions, std::span<const Position> targets);

/// Trains `model` in place. Full mode requires a non-adapted model
/// (InvalidConfig otherwise); LoRA mode requires adapters (NotAdapted).
/// Each step: seeded shuffle, pad, forward, MSE, backward, clip, AdamW.
/// Throws EmptyDataset and NonFinite.
TrainLog train(Model& model, std::span<const TelemetrySample> data, const AblationSpec& spec,
               const Vocab& vocab, const TrainConfig& cfg);

using BatchForward = std::function<ForwardResult(const Batch&)>;

/// Inference in chunks of `batch_size`, results in input order.
std::vector<Position> predict(const BatchForward& forward, std::span<const TelemetrySample> samples,
                              const AblationSpec& spec, const Vocab& vocab,
                              std::size_t batch_size = 64);
std::vector<Position> predict(const Model& model, std::span<const TelemetrySample> samples,
                              const AblationSpec& spec, const Vocab& vocab,
                              std::size_t batch_size = 64);
std::vector<Position> predict(const QuantizedModel& model, std::span<const TelemetrySample> samples,
                              const AblationSpec& spec, const Vocab& vocab,
                              std::size_t batch_size = 64);

/// max(1, floor(fraction * N)) samples drawn without replacement, kept in
/// dataset order. fraction 1.0 returns the whole set. Throws BadFraction.
std::vector<TelemetrySample> few_shot_subset(std::span<const TelemetrySample> data, double fraction,
                                             std::uint64_t seed);

/// Runs fn(0) .. fn(n - 1) on up to `jobs` threads. Exceptions propagate
/// (the first one by index).
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

struct CrossEnvConfig {
  ModelConfig model;
  LoraConfig lora;
  TrainConfig source_train;  // full mode
  TrainConfig adapt_train;   // LoRA mode; seed replaced per run
  AblationSpec spec;
  std::uint64_t init_seed = 0;
  int jobs = 1;
};

struct AdaptRun {
  double fraction = 1.0;
  std::uint64_t seed = 0;
  std::size_t n_train = 0;
  TrainLog log;
  std::vector<Position> predictions;  // on the target test split
  double mae = 0.0;
};

struct CrossEnvResult {
  std::size_t target = 0;
  TrainLog source_log;
  std::optional<Model> source_model;
  std::vector<AdaptRun> runs;  // fraction-major, seed-minor
  std::vector<double> mean_mae_by_fraction;
};

/// Full-trains one backbone on the union of the non-target training splits,
/// then for every (fraction, seed) deep-copies it, attaches fresh adapters,
/// adapts on a few-shot subset of the target training split and evaluates on
/// the target test split. Throws BadTarget.
CrossEnvResult cross_env_protocol(std::span<const DatasetSplit> envs, std::size_t target,
                                  std::span<const double> fractions,
                                  std::span<const std::uint64_t> seeds, const Vocab& vocab,
                                  const CrossEnvConfig& cfg);

}  // namespace locaris
