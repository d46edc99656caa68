#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "locaris/tensor.hpp"

namespace locaris::nn {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  AdamWConfig config;
  std::vector<std::vector<double>> m;  // first moments, one per parameter
  std::vector<std::vector<double>> v;  // second moments
  std::int64_t t = 0;

  static AdamWState for_params(std::span<const Tensor> params, AdamWConfig config = {});
};

/// Decoupled weight decay (w -= lr * wd * w) followed by the bias-corrected
/// Adam update. Throws ShapeMismatch if params, grads and state disagree.
void adamw_step(std::span<const Tensor> params, std::span<const std::vector<double>> grads,
                AdamWState& state);
/// Same, reading each parameter's gradient buffer.
void adamw_step(std::span<const Tensor> params, AdamWState& state);

double global_grad_norm(std::span<const Tensor> params);
/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<const Tensor> params, double max_norm);

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// with step `h`. Every coordinate is checked when the parameters hold at most
/// `exhaustive_limit` values in total; otherwise `sample_size` coordinates are
/// drawn with a seeded generator. Error per coordinate is
/// |analytic - numeric| / max(1e-12, |numeric|).
FiniteDiffReport finite_diff_check(const std::function<Tensor()>& loss_fn,
                                   std::span<const Tensor> params, double h,
                                   std::uint64_t seed = 0, std::size_t sample_size = 512,
                                   std::size_t exhaustive_limit = 10000);

}  // namespace locaris::nn
