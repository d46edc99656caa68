#include "locaris/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "locaris/error.hpp"

namespace locaris::nn {

namespace {

// GEMM kernels work on 8 x 8 register tiles. Every output element is
// accumulated over the inner dimension in ascending order whatever tile it
// lands in, so a row's result is bitwise independent of M (this relies on
// -ffp-contract=off).
constexpr std::size_t kTile = 8;
typedef double Vec8 __attribute__((vector_size(kTile * sizeof(double))));

inline Vec8 load8(const double* p) {
  Vec8 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}
inline void store8(double* p, Vec8 v) { std::memcpy(p, &v, sizeof v); }
inline Vec8 splat8(double x) { return x - Vec8{}; }

// Dot product with a fixed lane-wise association when n is a multiple of 8.
inline double dot(const double* __restrict x, const double* __restrict y, std::size_t n) {
  if (n % kTile != 0) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += x[c] * y[c];
    return s;
  }
  Vec8 acc{};
  for (std::size_t c = 0; c < n; c += kTile) acc += load8(x + c) * load8(y + c);
  double s = 0.0;
  for (std::size_t l = 0; l < kTile; ++l) s += acc[l];
  return s;
}

// C[M x N] (+)= A[M x K] * B[K x N].
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* __restrict a,
             const double* __restrict b, double* __restrict c, bool accumulate) {
  for (std::size_t i0 = 0; i0 < m; i0 += kTile) {
    const std::size_t mr = std::min(kTile, m - i0);
    for (std::size_t j0 = 0; j0 < n; j0 += kTile) {
      const std::size_t nr = std::min(kTile, n - j0);
      if (mr == kTile && nr == kTile) {
        Vec8 acc[kTile];
        for (std::size_t r = 0; r < kTile; ++r) acc[r] = accumulate ? load8(c + (i0 + r) * n + j0) : Vec8{};
        for (std::size_t p = 0; p < k; ++p) {
          const Vec8 bv = load8(b + p * n + j0);
          for (std::size_t r = 0; r < kTile; ++r) acc[r] += splat8(a[(i0 + r) * k + p]) * bv;
        }
        for (std::size_t r = 0; r < kTile; ++r) store8(c + (i0 + r) * n + j0, acc[r]);
      } else {
        for (std::size_t r = 0; r < mr; ++r) {
          for (std::size_t j = 0; j < nr; ++j) {
            double s = accumulate ? c[(i0 + r) * n + j0 + j] : 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a[(i0 + r) * k + p] * b[p * n + j0 + j];
            c[(i0 + r) * n + j0 + j] = s;
          }
        }
      }
    }
  }
}

// C[K x N] += A^T * D with A: M x K, D: M x N.
void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const double* __restrict a,
                 const double* __restrict d, double* __restrict c) {
  for (std::size_t p0 = 0; p0 < k; p0 += kTile) {
    const std::size_t pr = std::min(kTile, k - p0);
    for (std::size_t j0 = 0; j0 < n; j0 += kTile) {
      const std::size_t nr = std::min(kTile, n - j0);
      if (pr == kTile && nr == kTile) {
        Vec8 acc[kTile];
        for (std::size_t r = 0; r < kTile; ++r) acc[r] = load8(c + (p0 + r) * n + j0);
        for (std::size_t i = 0; i < m; ++i) {
          const Vec8 dv = load8(d + i * n + j0);
          for (std::size_t r = 0; r < kTile; ++r) acc[r] += splat8(a[i * k + p0 + r]) * dv;
        }
        for (std::size_t r = 0; r < kTile; ++r) store8(c + (p0 + r) * n + j0, acc[r]);
      } else {
        for (std::size_t r = 0; r < pr; ++r) {
          for (std::size_t j = 0; j < nr; ++j) {
            double s = c[(p0 + r) * n + j0 + j];
            for (std::size_t i = 0; i < m; ++i) s += a[i * k + p0 + r] * d[i * n + j0 + j];
            c[(p0 + r) * n + j0 + j] = s;
          }
        }
      }
    }
  }
}

std::vector<double> transpose(const double* src, std::size_t rows, std::size_t cols) {
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  }
  return out;
}

void require(bool ok, const std::string& what) {
  if (!ok) fail(Errc::ShapeMismatch, what);
}

void require_matrix(const Tensor& t, const char* op) {
  require(t.defined() && t.rank() == 2, std::string(op) + ": expected a rank-2 tensor");
}

Tensor finish(Tensor out, const char* op) {
  for (double v : out.values()) {
    if (!std::isfinite(v)) fail(Errc::NonFinite, std::string(op) + " produced a non-finite value");
  }
  return out;
}

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (active_tape() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) require(false, "matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor out({m, n});
  gemm_nn(m, n, k, a.values().data(), b.values().data(), out.values().data(), false);
  out = finish(out, "matmul");
  if (tracking({&a, &b})) {
    active_tape()->record(out, [a, b, out, m, n, k] {
      const double* dout = out.grad().data();
      if (a.requires_grad()) {
        const auto bt = transpose(b.values().data(), k, n);
        gemm_nn(m, k, n, dout, bt.data(), a.grad().data(), true);
      }
      if (b.requires_grad()) gemm_tn_acc(m, k, n, a.values().data(), dout, b.grad().data());
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.defined() && b.defined(), "add: undefined tensor");
  const bool broadcast = a.shape() != b.shape();
  if (broadcast) {
    require(b.rank() == 1 && b.size() == a.cols(),
            "add: " + shape_string(a.shape()) + " + " + shape_string(b.shape()));
  }
  Tensor out(a.shape());
  const auto av = a.values(), bv = b.values();
  auto ov = out.values();
  const std::size_t n = a.cols();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[broadcast ? i % n : i];
  out = finish(out, "add");
  if (tracking({&a, &b})) {
    active_tape()->record(out, [a, b, out, broadcast, n] {
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[broadcast ? i % n : i] += g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.defined() && b.defined() && a.shape() == b.shape(),
          "mul: shapes differ");
  Tensor out(a.shape());
  const auto av = a.values(), bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  out = finish(out, "mul");
  if (tracking({&a, &b})) {
    active_tape()->record(out, [a, b, out] {
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        const auto bv = b.values();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        const auto av = a.values();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  require(a.defined(), "scale: undefined tensor");
  Tensor out(a.shape());
  const auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * factor;
  out = finish(out, "scale");
  if (tracking({&a})) {
    active_tape()->record(out, [a, out, factor] {
      const auto g = out.grad();
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  require(x.defined(), "relu: undefined tensor");
  Tensor out(x.shape());
  const auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  if (tracking({&x})) {
    active_tape()->record(out, [x, out] {
      const auto g = out.grad();
      const auto xv = x.values();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xv[i] > 0.0) gx[i] += g[i];
      }
    });
  }
  return out;
}

Tensor silu(const Tensor& x) {
  require(x.defined(), "silu: undefined tensor");
  Tensor out(x.shape());
  const auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] / (1.0 + std::exp(-xv[i]));
  out = finish(out, "silu");
  if (tracking({&x})) {
    active_tape()->record(out, [x, out] {
      const auto g = out.grad();
      const auto xv = x.values();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-xv[i]));
        gx[i] += g[i] * s * (1.0 + xv[i] * (1.0 - s));
      }
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  require_matrix(x, "softmax_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor out(x.shape());
  const auto xv = x.values();
  auto ov = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    double* o = ov.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  out = finish(out, "softmax_rows");
  if (tracking({&x})) {
    active_tape()->record(out, [x, out, rows, cols] {
      const auto g = out.grad();
      const auto y = out.values();
      auto gx = x.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) {
          gx[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
        }
      }
    });
  }
  return out;
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
  require_matrix(x, "rms_norm");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  require(gain.defined() && gain.size() == cols, "rms_norm: gain width mismatch");
  Tensor out(x.shape());
  std::vector<double> inv_rms(rows);
  const auto xv = x.values(), gv = gain.values();
  auto ov = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    double ms = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ms += in[c] * in[c];
    ms /= static_cast<double>(cols);
    inv_rms[r] = 1.0 / std::sqrt(ms + eps);
    for (std::size_t c = 0; c < cols; ++c) ov[r * cols + c] = gv[c] * in[c] * inv_rms[r];
  }
  out = finish(out, "rms_norm");
  if (tracking({&x, &gain})) {
    active_tape()->record(out, [x, gain, out, rows, cols, inv_rms = std::move(inv_rms)] {
      const auto g = out.grad();
      const auto xv = x.values(), gv = gain.values();
      const bool want_x = x.requires_grad(), want_g = gain.requires_grad();
      auto gx = want_x ? x.grad() : std::span<double>{};
      auto gg = want_g ? gain.grad() : std::span<double>{};
      for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * cols;
        const double* dy = g.data() + r * cols;
        const double s = inv_rms[r];
        if (want_g) {
          for (std::size_t c = 0; c < cols; ++c) gg[c] += dy[c] * in[c] * s;
        }
        if (want_x) {
          // d/dx_c of g_c x_c s: s g_c dy_c - x_c s^3 / n * sum_j g_j dy_j x_j
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += gv[c] * dy[c] * in[c];
          const double coef = s * s * s * dot / static_cast<double>(cols);
          for (std::size_t c = 0; c < cols; ++c) {
            gx[r * cols + c] += s * gv[c] * dy[c] - in[c] * coef;
          }
        }
      }
    });
  }
  return out;
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  require_matrix(table, "embedding_lookup");
  require(!ids.empty(), "embedding_lookup: no ids");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  Tensor out({ids.size(), d});
  const auto tv = table.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < vocab,
            "embedding_lookup: id " + std::to_string(ids[i]) + " out of range");
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, ov.data() + i * d);
  }
  if (tracking({&table})) {
    std::vector<int> ids_copy(ids.begin(), ids.end());
    active_tape()->record(out, [table, out, d, ids_copy = std::move(ids_copy)] {
      const auto g = out.grad();
      auto gt = table.grad();
      for (std::size_t i = 0; i < ids_copy.size(); ++i) {
        double* dst = gt.data() + static_cast<std::size_t>(ids_copy[i]) * d;
        const double* src = g.data() + i * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
      }
    });
  }
  return out;
}

Tensor rope(const Tensor& x, std::size_t seq_len, std::size_t n_heads, double base) {
  require_matrix(x, "rope");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  require(seq_len > 0 && rows % seq_len == 0, "rope: rows not a multiple of seq_len");
  require(n_heads > 0 && d % n_heads == 0 && (d / n_heads) % 2 == 0,
          "rope: head width must be even");
  const std::size_t hd = d / n_heads, half = hd / 2;
  std::vector<double> cos_t(seq_len * half), sin_t(seq_len * half);
  for (std::size_t p = 0; p < seq_len; ++p) {
    for (std::size_t i = 0; i < half; ++i) {
      const double inv_freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
      const double angle = static_cast<double>(p) * inv_freq;
      cos_t[p * half + i] = std::cos(angle);
      sin_t[p * half + i] = std::sin(angle);
    }
  }
  Tensor out(x.shape());
  const auto xv = x.values();
  auto ov = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t p = r % seq_len;
    for (std::size_t h = 0; h < n_heads; ++h) {
      for (std::size_t i = 0; i < half; ++i) {
        const std::size_t c0 = r * d + h * hd + 2 * i;
        const double cs = cos_t[p * half + i], sn = sin_t[p * half + i];
        const double x0 = xv[c0], x1 = xv[c0 + 1];
        ov[c0] = x0 * cs - x1 * sn;
        ov[c0 + 1] = x0 * sn + x1 * cs;
      }
    }
  }
  if (tracking({&x})) {
    active_tape()->record(out, [x, out, rows, d, seq_len, n_heads, hd, half,
                                cos_t = std::move(cos_t), sin_t = std::move(sin_t)] {
      const auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t p = r % seq_len;
        for (std::size_t h = 0; h < n_heads; ++h) {
          for (std::size_t i = 0; i < half; ++i) {
            const std::size_t c0 = r * d + h * hd + 2 * i;
            const double cs = cos_t[p * half + i], sn = sin_t[p * half + i];
            gx[c0] += g[c0] * cs + g[c0 + 1] * sn;
            gx[c0 + 1] += -g[c0] * sn + g[c0 + 1] * cs;
          }
        }
      }
    });
  }
  return out;
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch,
                        std::size_t seq_len, std::size_t n_heads,
                        std::span<const std::uint8_t> key_mask) {
  require_matrix(q, "causal_attention");
  require(q.shape() == k.shape() && q.shape() == v.shape(), "causal_attention: q/k/v shapes differ");
  const std::size_t rows = q.dim(0), d = q.dim(1);
  require(rows == batch * seq_len, "causal_attention: rows != batch * seq_len");
  require(key_mask.size() == rows, "causal_attention: mask size mismatch");
  require(n_heads > 0 && d % n_heads == 0, "causal_attention: d not divisible by heads");
  const std::size_t hd = d / n_heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t tt = seq_len * seq_len;

  // probs[(b * H + h) * T * T + j * T + i]; zero where key i is not visible.
  std::vector<double> probs(batch * n_heads * tt, 0.0);
  Tensor out({rows, d});
  const auto qv = q.values(), kv = k.values(), vv = v.values();
  auto ov = out.values();
  for (std::size_t b = 0; b < batch; ++b) {
    const std::uint8_t* mask = key_mask.data() + b * seq_len;
    for (std::size_t h = 0; h < n_heads; ++h) {
      double* p_bh = probs.data() + (b * n_heads + h) * tt;
      for (std::size_t j = 0; j < seq_len; ++j) {
        const double* qj = qv.data() + (b * seq_len + j) * d + h * hd;
        double* pj = p_bh + j * seq_len;
        double mx = -INFINITY;
        for (std::size_t i = 0; i <= j; ++i) {
          if (!mask[i]) continue;
          const double* ki = kv.data() + (b * seq_len + i) * d + h * hd;
          pj[i] = dot(qj, ki, hd) * scale_factor;
          mx = std::max(mx, pj[i]);
        }
        if (mx == -INFINITY) continue;  // no visible key: output stays zero
        double total = 0.0;
        for (std::size_t i = 0; i <= j; ++i) {
          if (!mask[i]) continue;
          pj[i] = std::exp(pj[i] - mx);
          total += pj[i];
        }
        double* oj = ov.data() + (b * seq_len + j) * d + h * hd;
        for (std::size_t i = 0; i <= j; ++i) {
          if (!mask[i]) continue;
          pj[i] /= total;
          const double* vi = vv.data() + (b * seq_len + i) * d + h * hd;
          for (std::size_t c = 0; c < hd; ++c) oj[c] += pj[i] * vi[c];
        }
      }
    }
  }
  out = finish(out, "causal_attention");
  if (tracking({&q, &k, &v})) {
    std::vector<std::uint8_t> mask_copy(key_mask.begin(), key_mask.end());
    active_tape()->record(out, [q, k, v, out, batch, seq_len, n_heads, d, hd, tt, scale_factor,
                                probs = std::move(probs), mask_copy = std::move(mask_copy)] {
      const auto g = out.grad();
      const auto qv = q.values(), kv = k.values(), vv = v.values();
      std::vector<double> gq(q.size(), 0.0), gk(k.size(), 0.0), gv(v.size(), 0.0);
      std::vector<double> dp(seq_len);
      for (std::size_t b = 0; b < batch; ++b) {
        const std::uint8_t* mask = mask_copy.data() + b * seq_len;
        for (std::size_t h = 0; h < n_heads; ++h) {
          const double* p_bh = probs.data() + (b * n_heads + h) * tt;
          for (std::size_t j = 0; j < seq_len; ++j) {
            const double* pj = p_bh + j * seq_len;
            const std::size_t rj = (b * seq_len + j) * d + h * hd;
            const double* go = g.data() + rj;
            double weighted = 0.0;
            for (std::size_t i = 0; i <= j; ++i) {
              if (!mask[i]) continue;
              const std::size_t ri = (b * seq_len + i) * d + h * hd;
              const double s = dot(go, vv.data() + ri, hd);
              for (std::size_t c = 0; c < hd; ++c) gv[ri + c] += pj[i] * go[c];
              dp[i] = s;
              weighted += pj[i] * s;
            }
            for (std::size_t i = 0; i <= j; ++i) {
              if (!mask[i]) continue;
              const std::size_t ri = (b * seq_len + i) * d + h * hd;
              const double ds = pj[i] * (dp[i] - weighted) * scale_factor;
              for (std::size_t c = 0; c < hd; ++c) {
                gq[rj + c] += ds * kv[ri + c];
                gk[ri + c] += ds * qv[rj + c];
              }
            }
          }
        }
      }
      auto accumulate = [](const Tensor& t, const std::vector<double>& src) {
        if (!t.requires_grad()) return;
        auto dst = t.grad();
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
      };
      accumulate(q, gq);
      accumulate(k, gk);
      accumulate(v, gv);
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_matrix(x, "gather_rows");
  require(!rows.empty(), "gather_rows: no rows");
  const std::size_t d = x.dim(1);
  Tensor out({rows.size(), d});
  const auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < x.dim(0), "gather_rows: row index out of range");
    std::copy_n(xv.data() + rows[i] * d, d, ov.data() + i * d);
  }
  if (tracking({&x})) {
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    active_tape()->record(out, [x, out, d, idx = std::move(idx)] {
      const auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t c = 0; c < d; ++c) gx[idx[i] * d + c] += g[i * d + c];
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  require(x.defined(), "sum: undefined tensor");
  double total = 0.0;
  for (double v : x.values()) total += v;
  Tensor out = finish(Tensor::scalar(total), "sum");
  if (tracking({&x})) {
    active_tape()->record(out, [x, out] {
      const double g = out.grad()[0];
      for (auto& gx : x.grad()) gx += g;
    });
  }
  return out;
}

Tensor mse_loss(const Tensor& pred, std::span<const double> target) {
  require_matrix(pred, "mse_loss");
  require(target.size() == pred.size(), "mse_loss: target size mismatch");
  const std::size_t rows = pred.dim(0);
  const auto pv = pred.values();
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double diff = pv[i] - target[i];
    total += diff * diff;
  }
  Tensor out = finish(Tensor::scalar(total / static_cast<double>(rows)), "mse_loss");
  if (tracking({&pred})) {
    std::vector<double> tgt(target.begin(), target.end());
    active_tape()->record(out, [pred, out, rows, tgt = std::move(tgt)] {
      const double g = out.grad()[0] * 2.0 / static_cast<double>(rows);
      const auto pv = pred.values();
      auto gp = pred.grad();
      for (std::size_t i = 0; i < pv.size(); ++i) gp[i] += g * (pv[i] - tgt[i]);
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
  require(x.defined(), "dropout: undefined tensor");
  if (p < 0.0 || p >= 1.0) fail(Errc::InvalidConfig, "dropout probability must be in [0, 1)");
  if (p == 0.0) return x;
  Tensor keep(x.shape());
  std::bernoulli_distribution coin(1.0 - p);
  const double kept_scale = 1.0 / (1.0 - p);
  for (auto& m : keep.values()) m = coin(rng) ? kept_scale : 0.0;
  return mul(x, keep);
}

}  // namespace locaris::nn
