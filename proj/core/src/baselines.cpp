#include "locaris/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "locaris/error.hpp"
#include "locaris/ops.hpp"
#include "locaris/optim.hpp"
#include "locaris/tensor.hpp"

namespace locaris {

namespace {

bool has_ftm(Modality m) { return m != Modality::RssiOnly; }
bool has_rssi(Modality m) { return m != Modality::FtmOnly; }

}  // namespace

std::size_t FeatureSchema::length() const {
  std::size_t blocks = (has_ftm(modality) ? 1 : 0) + (has_rssi(modality) ? 1 : 0);
  return blocks * ap_ids.size() + environments.size();
}

FeatureSchema make_schema(std::span<const TelemetrySample> train, Modality modality) {
  FeatureSchema s;
  s.modality = modality;
  const auto universe = collect_ap_universe(train);
  s.ap_ids.assign(universe.begin(), universe.end());
  std::set<std::string> envs;
  for (const auto& t : train) {
    if (auto it = t.metadata.find("environment"); it != t.metadata.end()) envs.insert(it->second);
  }
  s.environments.assign(envs.begin(), envs.end());
  return s;
}

std::vector<double> featurize(const TelemetrySample& sample, const FeatureSchema& schema) {
  const std::size_t n = schema.ap_ids.size();
  const bool ftm = has_ftm(schema.modality), rssi = has_rssi(schema.modality);
  std::vector<double> out(schema.length());
  const std::size_t ftm_off = 0, rssi_off = ftm ? n : 0, env_off = rssi_off + (rssi ? n : 0);
  if (ftm) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(ftm_off), n, FeatureSchema::kFtmMask);
  if (rssi) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(rssi_off), n, FeatureSchema::kRssiMask);
  for (const auto& r : sample.readings) {
    const auto it = std::lower_bound(schema.ap_ids.begin(), schema.ap_ids.end(), r.ap_id);
    if (it == schema.ap_ids.end() || *it != r.ap_id) {
      fail(Errc::UnknownAP, "AP" + std::to_string(r.ap_id) + " is not in the feature schema");
    }
    const auto slot = static_cast<std::size_t>(it - schema.ap_ids.begin());
    if (ftm && r.ftm_rtt) out[ftm_off + slot] = *r.ftm_rtt;
    if (rssi && r.rssi) out[rssi_off + slot] = *r.rssi;
  }
  if (auto it = sample.metadata.find("environment"); it != sample.metadata.end()) {
    const auto e = std::lower_bound(schema.environments.begin(), schema.environments.end(), it->second);
    if (e != schema.environments.end() && *e == it->second) {
      out[env_off + static_cast<std::size_t>(e - schema.environments.begin())] = 1.0;
    }
  }
  return out;
}

KnnRegressor KnnRegressor::fit(std::span<const TelemetrySample> train, const FeatureSchema& schema,
                               int k) {
  if (train.empty()) fail(Errc::EmptyTrain, "KNN: empty training set");
  if (k < 1 || static_cast<std::size_t>(k) > train.size()) {
    fail(Errc::BadK, "KNN: k=" + std::to_string(k) + " with " + std::to_string(train.size()) +
                         " training samples");
  }
  KnnRegressor m;
  m.schema_ = schema;
  m.k_ = k;
  m.dim_ = schema.length();
  m.features_.reserve(train.size() * m.dim_);
  for (const auto& s : train) {
    const auto f = featurize(s, schema);
    m.features_.insert(m.features_.end(), f.begin(), f.end());
    m.positions_.push_back(s.position);
  }
  return m;
}

Position KnnRegressor::predict(const TelemetrySample& sample) const {
  const auto q = featurize(sample, schema_);
  const std::size_t n = positions_.size();
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* f = features_.data() + i * dim_;
    double d2 = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) {
      const double diff = f[j] - q[j];
      d2 += diff * diff;
    }
    dist[i] = {std::sqrt(d2), i};
  }
  const auto k = static_cast<std::size_t>(k_);
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  double wsum = 0.0, x = 0.0, y = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double w = 1.0 / (dist[i].first + 1e-9);
    wsum += w;
    x += w * positions_[dist[i].second].x;
    y += w * positions_[dist[i].second].y;
  }
  return {x / wsum, y / wsum};
}

std::vector<Position> KnnRegressor::predict(std::span<const TelemetrySample> samples) const {
  std::vector<Position> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(predict(s));
  return out;
}

std::vector<double> MlpRegressor::standardize(std::vector<double> x) const {
  for (std::size_t j = 0; j < x.size(); ++j) x[j] = (x[j] - mean_[j]) * inv_std_[j];
  return x;
}

MlpRegressor MlpRegressor::fit(std::span<const TelemetrySample> train, const FeatureSchema& schema,
                               const MlpConfig& cfg) {
  if (train.empty()) fail(Errc::EmptyTrain, "MLP: empty training set");
  if (cfg.batch_size == 0 || cfg.epochs < 1) fail(Errc::InvalidConfig, "MLP: bad batch_size/epochs");
  MlpRegressor m;
  m.schema_ = schema;
  const std::size_t dim = schema.length(), n = train.size();

  std::vector<std::vector<double>> feats;
  feats.reserve(n);
  for (const auto& s : train) feats.push_back(featurize(s, schema));
  m.mean_.assign(dim, 0.0);
  m.inv_std_.assign(dim, 1.0);
  for (const auto& f : feats) {
    for (std::size_t j = 0; j < dim; ++j) m.mean_[j] += f[j];
  }
  for (auto& v : m.mean_) v /= static_cast<double>(n);
  std::vector<double> var(dim, 0.0);
  for (const auto& f : feats) {
    for (std::size_t j = 0; j < dim; ++j) var[j] += (f[j] - m.mean_[j]) * (f[j] - m.mean_[j]);
  }
  for (std::size_t j = 0; j < dim; ++j) {
    const double sd = std::sqrt(var[j] / static_cast<double>(n));
    if (sd > 1e-12) m.inv_std_[j] = 1.0 / sd;
  }
  std::vector<double> x_all;
  x_all.reserve(n * dim);
  for (auto& f : feats) {
    const auto z = m.standardize(std::move(f));
    x_all.insert(x_all.end(), z.begin(), z.end());
  }

  m.dims_ = {dim, cfg.hidden1, cfg.hidden2, 2};
  std::mt19937_64 rng(cfg.seed);
  std::vector<nn::Tensor> params;
  for (std::size_t l = 0; l + 1 < m.dims_.size(); ++l) {
    const std::size_t in = m.dims_[l], out = m.dims_[l + 1];
    std::normal_distribution<double> init(0.0, std::sqrt(2.0 / static_cast<double>(in)));
    std::vector<double> w(in * out);
    for (auto& v : w) v = init(rng);
    params.emplace_back(nn::Shape{in, out}, std::move(w), true);
    params.emplace_back(nn::Shape{out}, 0.0, true);
  }

  auto state = nn::AdamWState::for_params(params, {.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t off = 0; off < n; off += cfg.batch_size) {
      const auto bs = std::min(cfg.batch_size, n - off);
      std::vector<double> xb(bs * dim), yb(bs * 2);
      for (std::size_t i = 0; i < bs; ++i) {
        const auto r = order[off + i];
        std::copy_n(x_all.begin() + static_cast<std::ptrdiff_t>(r * dim), dim,
                    xb.begin() + static_cast<std::ptrdiff_t>(i * dim));
        yb[2 * i] = train[r].position.x;
        yb[2 * i + 1] = train[r].position.y;
      }
      for (const auto& p : params) p.zero_grad();
      nn::Tape tape;
      {
        nn::TapeScope scope(tape);
        nn::Tensor h(nn::Shape{bs, dim}, std::move(xb));
        for (std::size_t l = 0; l < 3; ++l) {
          h = nn::add(nn::matmul(h, params[2 * l]), params[2 * l + 1]);
          if (l < 2) h = nn::relu(h);
        }
        tape.backward(nn::mse_loss(h, yb));
      }
      nn::adamw_step(params, state);
    }
  }
  for (std::size_t l = 0; l < 3; ++l) {
    const auto w = params[2 * l].values();
    const auto b = params[2 * l + 1].values();
    m.w_.emplace_back(w.begin(), w.end());
    m.b_.emplace_back(b.begin(), b.end());
  }
  return m;
}

Position MlpRegressor::predict(const TelemetrySample& sample) const {
  std::vector<double> h = standardize(featurize(sample, schema_));
  for (std::size_t l = 0; l < 3; ++l) {
    const std::size_t in = dims_[l], out = dims_[l + 1];
    std::vector<double> next(b_[l]);
    for (std::size_t i = 0; i < in; ++i) {
      const double hi = h[i];
      const double* row = w_[l].data() + i * out;
      for (std::size_t j = 0; j < out; ++j) next[j] += hi * row[j];
    }
    if (l < 2) {
      for (auto& v : next) v = std::max(v, 0.0);
    }
    h = std::move(next);
  }
  return {h[0], h[1]};
}

std::vector<Position> MlpRegressor::predict(std::span<const TelemetrySample> samples) const {
  std::vector<Position> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(predict(s));
  return out;
}

}  // namespace locaris
