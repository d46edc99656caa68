#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "locaris/checkpoint.hpp"
#include "locaris/tensor.hpp"
#include "locaris/tokenizer.hpp"

namespace locaris {

struct ModelConfig {
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int ffn_mult = 4;
  int vocab_size = 64;
  int max_seq_len = 128;
  double rope_base = 10000.0;

  /// Throws InvalidConfig.
  void validate() const;
  int head_dim() const { return d_model / n_heads; }
};

struct LoraConfig {
  int rank = 16;
  double alpha = 32.0;
  double dropout = 0.05;

  void validate() const;
  double scaling() const { return alpha / rank; }
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const LoraConfig& c);
void from_json(const nlohmann::json& j, LoraConfig& c);

enum class Projection { Query = 0, Key = 1, Value = 2, Output = 3 };
inline constexpr std::array<const char*, 4> kProjectionNames = {"q_proj", "k_proj", "v_proj", "o_proj"};

/// Rank-r update: x -> x * down * up * (alpha / r).
struct LoraAdapter {
  nn::Tensor down;  // d_model x r   (the "A" matrix)
  nn::Tensor up;    // r x d_model   (the "B" matrix, zero at attach time)
};

struct DecoderLayer {
  nn::Tensor attn_norm;                  // d
  std::array<nn::Tensor, 4> proj;        // q, k, v, o; each d x d (in x out)
  std::array<std::optional<LoraAdapter>, 4> lora;
  nn::Tensor ffn_norm;                   // d
  nn::Tensor ffn_in;                     // d x ffn_mult*d
  nn::Tensor ffn_out;                    // ffn_mult*d x d
};

struct RegressionHead {
  nn::Tensor hidden_w;  // d x d/2
  nn::Tensor hidden_b;  // d/2
  nn::Tensor out_w;     // d/2 x 2
  nn::Tensor out_b;     // 2
};

/// Every tensor of a model, grouped the way checkpoints and the freeze
/// contract see them.
struct ModelWeights {
  nn::Tensor embed;  // vocab x d
  std::vector<DecoderLayer> layers;
  nn::Tensor final_norm;  // d
  RegressionHead head;
};

enum class ParamGroup { Backbone, Adapter, Head };

struct NamedParam {
  std::string name;  // "backbone.*", "adapter.*" or "head.*"
  nn::Tensor tensor;
  ParamGroup group;
};

struct ForwardOptions {
  bool training = false;            // enables LoRA dropout
  std::mt19937_64* rng = nullptr;   // required when training with dropout > 0
};

struct ForwardResult {
  nn::Tensor predictions;  // batch x 2, meters
  nn::Tensor pooled;       // batch x d
  nn::Tensor hidden;       // (batch * max_len) x d, final layer after the last norm
};

/// Row index of the last non-padding token of each sequence. Throws EmptyMaskRow.
std::vector<std::size_t> last_token_rows(std::size_t batch, std::size_t seq_len,
                                         std::span<const std::uint8_t> mask);
/// hidden[(i * seq_len) + L_i - 1, :] for each row i, L_i = sum(mask row i).
nn::Tensor pool_last_token(const nn::Tensor& hidden, std::size_t batch, std::size_t seq_len,
                           std::span<const std::uint8_t> mask);

/// Shared forward pass over an explicit weight set (used by float and
/// quantized models alike).
ForwardResult forward_weights(const ModelWeights& w, const ModelConfig& cfg,
                              const std::optional<LoraConfig>& lora, const Batch& batch,
                              const ForwardOptions& opts = {});

class Model {
 public:
  /// Deterministic initialization: backbone ~ N(0, 0.02^2) with residual
  /// output projections scaled by 1/sqrt(2 * n_layers), unit norm gains, head
  /// hidden layer ~ N(0, 1/d), head output layer zero.
  static Model init(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return cfg_; }
  const std::optional<LoraConfig>& lora_config() const noexcept { return lora_; }
  bool adapted() const noexcept { return lora_.has_value(); }
  const ModelWeights& weights() const noexcept { return w_; }

  /// Adds adapters to q/k/v/o of every layer (down ~ N(0, 0.02^2), up = 0)
  /// and freezes the backbone. Throws AlreadyAdapted.
  void attach_lora(const LoraConfig& lcfg, std::uint64_t seed);

  ForwardResult forward(const Batch& batch, const ForwardOptions& opts = {}) const;

  std::vector<NamedParam> named_parameters() const;
  std::vector<nn::Tensor> trainable_parameters() const;
  std::vector<nn::Tensor> frozen_parameters() const;

  /// Deep copy; the copy shares no storage with this model.
  Model clone() const;

  /// Checkpoint tensors. Adapted models export only adapter + head tensors
  /// unless `include_backbone` is set.
  std::vector<nn::NamedTensor> export_tensors(bool include_backbone) const;
  /// Overwrites tensors by name. Throws CheckpointFormat on unknown names or
  /// shape mismatches.
  void import_tensors(std::span<const nn::NamedTensor> tensors);

  /// Backbone with adapters folded in: W' = W + (alpha/r) * down * up.
  Model merged() const;

 private:
  Model() = default;
  void apply_freeze();

  ModelConfig cfg_;
  std::optional<LoraConfig> lora_;
  ModelWeights w_;
};

inline Model init_model(const ModelConfig& cfg, std::uint64_t seed) { return Model::init(cfg, seed); }

/// Returns a copy with adapters attached; throws AlreadyAdapted.
Model attach_lora(const Model& base, const LoraConfig& lcfg, std::uint64_t seed);

struct ParameterCount {
  std::size_t total = 0;
  std::size_t trainable = 0;
  double trainable_fraction = 0.0;
};

/// Enumerates tensors.
ParameterCount count_parameters(const Model& model);
/// Closed form for the same counts.
ParameterCount expected_parameter_count(const ModelConfig& cfg, const std::optional<LoraConfig>& lora);

}  // namespace locaris
