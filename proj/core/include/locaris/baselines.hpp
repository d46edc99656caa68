#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "locaris/telemetry.hpp"

namespace locaris {

/// Fixed-length feature layout: FTM per AP, then RSSI per AP (each block
/// present only if the modality is), then one-hot environment bits. Absent
/// readings take the mask values.
struct FeatureSchema {
  static constexpr double kRssiMask = -200.0;
  static constexpr double kFtmMask = 100000.0;

  std::vector<int> ap_ids;  // ascending
  Modality modality = Modality::Both;
  std::vector<std::string> environments;

  std::size_t length() const;
};

FeatureSchema make_schema(std::span<const TelemetrySample> train, Modality modality);

/// Throws UnknownAP if the sample has a reading for an AP outside the schema.
std::vector<double> featurize(const TelemetrySample& sample, const FeatureSchema& schema);

class KnnRegressor {
 public:
  /// Throws EmptyTrain, BadK (k < 1 or k > N).
  static KnnRegressor fit(std::span<const TelemetrySample> train, const FeatureSchema& schema, int k);

  /// Inverse-distance weighted mean of the k nearest training positions
  /// (weights 1 / (d + 1e-9); ties go to the lower training index).
  Position predict(const TelemetrySample& sample) const;
  std::vector<Position> predict(std::span<const TelemetrySample> samples) const;

  const FeatureSchema& schema() const noexcept { return schema_; }
  int k() const noexcept { return k_; }

 private:
  FeatureSchema schema_;
  int k_ = 1;
  std::size_t dim_ = 0;
  std::vector<double> features_;  // N x dim
  std::vector<Position> positions_;
};

struct MlpConfig {
  std::size_t hidden1 = 64;
  std::size_t hidden2 = 32;
  double lr = 1e-3;
  int epochs = 100;
  std::size_t batch_size = 32;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
};

/// Two hidden ReLU layers on standardized features. Standardization
/// statistics come from the training set; zero-variance dimensions are only
/// centred.
class MlpRegressor {
 public:
  /// Throws EmptyTrain.
  static MlpRegressor fit(std::span<const TelemetrySample> train, const FeatureSchema& schema,
                          const MlpConfig& cfg);

  Position predict(const TelemetrySample& sample) const;
  std::vector<Position> predict(std::span<const TelemetrySample> samples) const;

  const FeatureSchema& schema() const noexcept { return schema_; }

 private:
  std::vector<double> standardize(std::vector<double> x) const;

  FeatureSchema schema_;
  std::vector<double> mean_, inv_std_;
  // Row-major (in x out) weights and biases for the three layers.
  std::vector<std::vector<double>> w_, b_;
  std::vector<std::size_t> dims_;
};

}  // namespace locaris
