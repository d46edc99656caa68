#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "locaris/baselines.hpp"
#include "locaris/error.hpp"
#include "locaris/eval.hpp"
#include "locaris/model.hpp"
#include "locaris/simulator.hpp"
#include "locaris/telemetry.hpp"
#include "locaris/training.hpp"

namespace locaris {

enum class ExperimentKind {
  Train,
  Adapt,
  Evaluate,
  FewshotSweep,
  TelemetryAblation,
  ApAblation,
  QuantizeSweep,
  Simulate
};

std::string_view kind_name(ExperimentKind k) noexcept;
ExperimentKind parse_kind(std::string_view name);

/// One environment: either simulated from a spec (preset or custom) or
/// loaded from a train/test CSV pair.
struct EnvironmentSource {
  std::string name;
  std::optional<EnvironmentSpec> spec;
  std::filesystem::path train_csv;
  std::filesystem::path test_csv;
  CsvFormat format = CsvFormat::FtmRssiCsv;
};

struct BaselineConfig {
  bool knn = false;
  int knn_k = 3;
  bool mlp = false;
  MlpConfig mlp_cfg;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::Train;
  std::vector<EnvironmentSource> environments;
  std::uint64_t data_seed = 0;
  std::string target;  // fewshot_sweep / adapt target environment
  ModelConfig model;
  LoraConfig lora;
  TrainConfig source_train;  // full-mode backbone training
  TrainConfig adapt_train;   // LoRA adaptation
  std::uint64_t init_seed = 0;
  std::vector<double> fractions{1.0};
  std::vector<std::uint64_t> seeds{0};
  std::vector<Modality> modalities{Modality::Both};
  std::vector<int> drop_k{1, 2};
  std::vector<int> bits{32, 8, 4};
  std::optional<std::filesystem::path> checkpoint;          // backbone
  std::optional<std::filesystem::path> adapter_checkpoint;  // evaluate only
  BaselineConfig baselines;
  std::size_t eval_batch_size = 64;
  bool measure_throughput = false;
  bool save_checkpoints = true;
  std::filesystem::path output_dir = "out";
  int jobs = 1;

  /// Relative paths resolve against `base_dir`. Throws ConfigError.
  static ExperimentConfig from_json(const nlohmann::json& j,
                                    const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path);
  /// Complete echo; from_json(to_json()) reproduces the config.
  nlohmann::json to_json() const;
  /// Throws ConfigError.
  void validate() const;
};

struct ExperimentResult {
  std::vector<EvalReport> reports;  // results.csv order
  std::vector<std::filesystem::path> artifacts;
};

/// Executes the configured protocol and writes results.csv, report.json,
/// manifest.json, train logs and checkpoints under cfg.output_dir.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Writes <name>_train.csv / <name>_test.csv per environment plus
/// environments.json under cfg.output_dir.
std::vector<std::filesystem::path> simulate_environments(const ExperimentConfig& cfg);

/// Re-renders results.csv from <dir>/report.json. Returns the reports.
std::vector<EvalReport> rerender_report(const std::filesystem::path& dir);

/// 2 for configuration errors, 3 for data errors, 4 for numeric failures, 1 otherwise.
int exit_code_for(Errc code) noexcept;

/// Version string recorded in manifests.
std::string_view code_version() noexcept;

}  // namespace locaris
