#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

#include "locaris/tensor.hpp"

namespace locaris::nn {

// Differentiable primitives. Each op records itself on the active tape when
// any input requires a gradient. Matrices are rank-2 row-major; every row of
// an output depends only on the matching input row(s), so results for one
// sequence never depend on what else shares the batch. All ops throw
// ShapeMismatch on incompatible inputs and NonFinite if an output entry is
// NaN or infinite.

Tensor matmul(const Tensor& a, const Tensor& b);
/// Elementwise sum; `b` may also be a rank-1 row vector broadcast over rows of `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& x);
Tensor silu(const Tensor& x);
/// Row-wise softmax with the row max subtracted first.
Tensor softmax_rows(const Tensor& x);
/// gain * x / sqrt(mean(x^2) + eps), per row.
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps = 1e-6);
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);
/// Rotary position encoding; row r of `x` is position r % seq_len. Each head's
/// slice of width cols/n_heads is rotated pairwise.
Tensor rope(const Tensor& x, std::size_t seq_len, std::size_t n_heads, double base);
/// Multi-head scaled dot-product attention. Query j sees key i iff i <= j and
/// key_mask[b * seq_len + i] != 0. q, k, v are (batch * seq_len) x d.
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch,
                        std::size_t seq_len, std::size_t n_heads,
                        std::span<const std::uint8_t> key_mask);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor sum(const Tensor& x);
/// Mean over rows of the squared Euclidean distance between `pred` rows and
/// the matching rows of `target` (same layout, not differentiated).
Tensor mse_loss(const Tensor& pred, std::span<const double> target);
/// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);

}  // namespace locaris::nn
