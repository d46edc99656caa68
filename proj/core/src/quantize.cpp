#include "locaris/quantize.hpp"

#include <algorithm>
#include <cmath>

#include "locaris/error.hpp"

namespace locaris {

int quant_max(int bits) {
  if (bits == 8) return 127;
  if (bits == 4) return 7;
  fail(Errc::UnsupportedBits, "unsupported quantization width " + std::to_string(bits));
}

namespace {

double round_half_away(double v) { return v < 0.0 ? -std::floor(-v + 0.5) : std::floor(v + 0.5); }

}  // namespace

nn::Tensor QuantizedMatrix::dequantize() const {
  nn::Tensor t({rows, cols});
  auto v = t.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double s = scales[r];
    for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] = static_cast<double>(codes[r * cols + c]) * s;
  }
  return t;
}

std::size_t QuantizedMatrix::storage_bytes() const {
  const std::size_t row_bytes = bits == 8 ? cols : (cols + 1) / 2;
  return rows * (row_bytes + sizeof(float));
}

QuantizedMatrix quantize_rows(const nn::Tensor& weight, int bits) {
  const int qmax = quant_max(bits);
  if (weight.rank() != 2) fail(Errc::ShapeMismatch, "quantize_rows expects a matrix");
  QuantizedMatrix q;
  q.rows = weight.dim(0);
  q.cols = weight.dim(1);
  q.bits = bits;
  q.codes.resize(q.rows * q.cols);
  q.scales.resize(q.rows);
  const auto w = weight.values();
  for (std::size_t r = 0; r < q.rows; ++r) {
    const double* row = w.data() + r * q.cols;
    double amax = 0.0;
    for (std::size_t c = 0; c < q.cols; ++c) amax = std::max(amax, std::abs(row[c]));
    if (amax == 0.0) {
      q.scales[r] = 1.0f;
      continue;  // codes already zero
    }
    const float scale = static_cast<float>(amax / qmax);
    q.scales[r] = scale;
    const double s = scale;
    for (std::size_t c = 0; c < q.cols; ++c) {
      double code = std::clamp(round_half_away(row[c] / s), -double(qmax), double(qmax));
      // The float scale can push w/s a hair across a rounding boundary; take
      // the neighbor if it is strictly closer.
      for (const double alt : {code - 1.0, code + 1.0}) {
        if (std::abs(alt) <= qmax && std::abs(row[c] - alt * s) < std::abs(row[c] - code * s)) code = alt;
      }
      q.codes[r * q.cols + c] = static_cast<std::int8_t>(code);
    }
  }
  return q;
}

ModelWeights QuantizedModel::dequantized_weights() const {
  ModelWeights w = rest_;  // shares norm/adapter/head tensors
  std::size_t i = 0;
  w.embed = matrices_[i++].dequantize();
  for (auto& layer : w.layers) {
    for (auto& p : layer.proj) p = matrices_[i++].dequantize();
    layer.ffn_in = matrices_[i++].dequantize();
    layer.ffn_out = matrices_[i++].dequantize();
  }
  return w;
}

ForwardResult QuantizedModel::forward(const Batch& batch, const ForwardOptions& opts) const {
  return forward_weights(dequantized_weights(), cfg_, lora_, batch, opts);
}

std::size_t QuantizedModel::backbone_bytes() const {
  std::size_t bytes = 0;
  for (const auto& m : matrices_) bytes += m.storage_bytes();
  bytes += rest_.final_norm.size() * sizeof(float);
  for (const auto& layer : rest_.layers) {
    bytes += (layer.attn_norm.size() + layer.ffn_norm.size()) * sizeof(float);
  }
  return bytes;
}

QuantizedModel quantize_backbone(const Model& model, int bits) {
  quant_max(bits);
  QuantizedModel q;
  q.bits_ = bits;
  q.cfg_ = model.config();
  q.lora_ = model.lora_config();
  const Model copy = model.clone();
  q.rest_ = copy.weights();
  q.matrices_.push_back(quantize_rows(q.rest_.embed, bits));
  q.rest_.embed = {};
  for (auto& layer : q.rest_.layers) {
    for (auto& p : layer.proj) {
      q.matrices_.push_back(quantize_rows(p, bits));
      p = {};
    }
    q.matrices_.push_back(quantize_rows(layer.ffn_in, bits));
    q.matrices_.push_back(quantize_rows(layer.ffn_out, bits));
    layer.ffn_in = {};
    layer.ffn_out = {};
  }
  return q;
}

}  // namespace locaris
