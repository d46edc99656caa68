#include "locaris/optim.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "locaris/error.hpp"

namespace locaris::nn {

AdamWState AdamWState::for_params(std::span<const Tensor> params, AdamWConfig config) {
  AdamWState state;
  state.config = config;
  for (const auto& p : params) {
    state.m.emplace_back(p.size(), 0.0);
    state.v.emplace_back(p.size(), 0.0);
  }
  return state;
}

void adamw_step(std::span<const Tensor> params, std::span<const std::vector<double>> grads,
                AdamWState& state) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    fail(Errc::ShapeMismatch, "adamw_step: parameter/gradient/state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].size() || state.m[i].size() != params[i].size()) {
      fail(Errc::ShapeMismatch, "adamw_step: parameter " + std::to_string(i) + " size mismatch");
    }
  }
  const auto& c = state.config;
  ++state.t;
  const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  const double decay = 1.0 - c.lr * c.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].values();
    const auto& g = grads[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      w[j] *= decay;
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bias1;
      const double v_hat = v[j] / bias2;
      w[j] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

void adamw_step(std::span<const Tensor> params, AdamWState& state) {
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) {
    if (p.has_grad()) {
      const auto g = p.grad();
      grads.emplace_back(g.begin(), g.end());
    } else {
      grads.emplace_back(p.size(), 0.0);
    }
  }
  adamw_step(params, grads, state);
}

double global_grad_norm(std::span<const Tensor> params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(std::span<const Tensor> params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& p : params) {
      if (!p.has_grad()) continue;
      for (auto& g : p.grad()) g *= factor;
    }
  }
  return norm;
}

FiniteDiffReport finite_diff_check(const std::function<Tensor()>& loss_fn,
                                   std::span<const Tensor> params, double h, std::uint64_t seed,
                                   std::size_t sample_size, std::size_t exhaustive_limit) {
  if (h <= 0.0) fail(Errc::InvalidConfig, "finite-difference step must be positive");
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor loss = loss_fn();
    if (loss.requires_grad()) {
      analytic = grad(loss, params);
    } else {
      // Nothing recorded: the loss does not depend on any parameter.
      for (const auto& p : params) analytic.emplace_back(p.size(), 0.0);
    }
  }

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  std::size_t total = 0;
  for (const auto& p : params) total += p.size();
  if (total <= exhaustive_limit) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (std::size_t j = 0; j < params[i].size(); ++j) coords.emplace_back(i, j);
    }
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    for (std::size_t s = 0; s < sample_size; ++s) {
      std::size_t flat = pick(rng);
      std::size_t i = 0;
      while (flat >= params[i].size()) flat -= params[i++].size();
      coords.emplace_back(i, flat);
    }
  }

  FiniteDiffReport report;
  NoGradScope no_grad;
  for (const auto& [i, j] : coords) {
    auto w = params[i].values();
    const double original = w[j];
    w[j] = original + h;
    const double plus = loss_fn().item();
    w[j] = original - h;
    const double minus = loss_fn().item();
    w[j] = original;
    const double numeric = (plus - minus) / (2.0 * h);
    const double a = analytic[i][j];
    const double err = std::abs(a - numeric) / std::max(1e-12, std::abs(numeric));
    ++report.checked;
    if (report.checked == 1 || err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_param = i;
      report.worst_index = j;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
  }
  return report;
}

}  // namespace locaris::nn
