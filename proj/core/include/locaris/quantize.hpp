#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "locaris/model.hpp"

namespace locaris {

/// Symmetric per-row quantization of one rank-2 matrix. Codes are held one
/// per byte in memory; storage_bytes() reports the packed size (two int4
/// codes per byte) plus one float32 scale per row.
struct QuantizedMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  int bits = 8;
  std::vector<std::int8_t> codes;  // rows x cols
  std::vector<float> scales;       // one per row

  double dequant(std::size_t r, std::size_t c) const {
    return static_cast<double>(codes[r * cols + c]) * static_cast<double>(scales[r]);
  }
  nn::Tensor dequantize() const;
  std::size_t storage_bytes() const;
};

int quant_max(int bits);  // 127 for 8 bits, 7 for 4 bits; throws UnsupportedBits

/// scale = max|row| / qmax (float32), codes = round-half-away-from-zero(w / scale),
/// nudged to the nearest representable neighbor so |w - code*scale| <= scale/2.
/// An all-zero row gets scale 1 and zero codes.
QuantizedMatrix quantize_rows(const nn::Tensor& weight, int bits);

/// A model whose backbone matrices are stored as int8/int4 codes. Norm gains,
/// adapters and the head stay floating point.
class QuantizedModel {
 public:
  int bits() const noexcept { return bits_; }
  const ModelConfig& config() const noexcept { return cfg_; }
  const std::optional<LoraConfig>& lora_config() const noexcept { return lora_; }
  const std::vector<QuantizedMatrix>& matrices() const noexcept { return matrices_; }

  /// Dequantizes each matrix at use, then runs the shared forward pass.
  ForwardResult forward(const Batch& batch, const ForwardOptions& opts = {}) const;

  /// Bytes of backbone storage: packed codes + scales + float32 norm gains.
  std::size_t backbone_bytes() const;

 private:
  friend QuantizedModel quantize_backbone(const Model& model, int bits);
  ModelWeights dequantized_weights() const;

  int bits_ = 8;
  ModelConfig cfg_;
  std::optional<LoraConfig> lora_;
  ModelWeights rest_;  // quantized matrices left undefined here
  // Order: embed, then per layer q, k, v, o, ffn_in, ffn_out.
  std::vector<QuantizedMatrix> matrices_;
};

/// Throws UnsupportedBits for anything but 8 or 4.
QuantizedModel quantize_backbone(const Model& model, int bits);

}  // namespace locaris
