#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "helpers.hpp"
#include "locaris/baselines.hpp"
#include "locaris/error.hpp"
#include "locaris/eval.hpp"
#include "locaris/simulator.hpp"

using namespace locaris;
using namespace locaris::test;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected locaris::Error");
  return Errc::Empty;
}

TelemetrySample full_sample(int n_aps, int base, Position p, std::string env = "a") {
  TelemetrySample s;
  for (int ap = 1; ap <= n_aps; ++ap) s.readings.push_back(reading(ap, base + ap, -30 - ap));
  s.position = p;
  s.metadata = {{"environment", env}};
  return s;
}

}  // namespace

TEST_SUITE("baselines") {

TEST_CASE("mask-value featurization") {
  std::vector<TelemetrySample> train{full_sample(5, 10, {0, 0})};
  const auto schema = make_schema(train, Modality::Both);
  CHECK(schema.length() == 11);  // 5 FTM + 5 RSSI + 1 env bit
  const auto full = featurize(train[0], schema);
  CHECK(std::count(full.begin(), full.end(), FeatureSchema::kRssiMask) == 0);
  CHECK(std::count(full.begin(), full.end(), FeatureSchema::kFtmMask) == 0);
  const auto dropped = featurize(apply_ablation(train[0], {.dropped_aps = {3}}), schema);
  CHECK(dropped.size() == full.size());
  CHECK(dropped[2] == FeatureSchema::kFtmMask);
  CHECK(dropped[5 + 2] == FeatureSchema::kRssiMask);
  CHECK(dropped[0] == 11);
  CHECK(dropped[5] == -31);
  CHECK(dropped.back() == 1.0);

  const auto rssi_schema = make_schema(train, Modality::RssiOnly);
  CHECK(rssi_schema.length() == 6);
  CHECK(featurize(train[0], rssi_schema).size() == 6);

  TelemetrySample stranger{.readings = {reading(9, 1, -50)}};
  CHECK(code_of([&] { featurize(stranger, schema); }) == Errc::UnknownAP);
}

TEST_CASE("feature length is constant across ablations") {
  const auto split = gen_dataset(preset("lecture"), 0);
  const auto schema = make_schema(split.train, Modality::Both);
  for (const auto& spec : {AblationSpec{}, AblationSpec{.dropped_aps = {1}}, AblationSpec{.dropped_aps = {2, 5}},
                           AblationSpec{.modality = Modality::RssiOnly}}) {
    CHECK(featurize(apply_ablation(split.test[0], spec), schema).size() == schema.length());
  }
}

TEST_CASE("knn exact match, symmetric neighbours and errors") {
  std::vector<TelemetrySample> train{full_sample(2, 10, {0, 0}), full_sample(2, 20, {5, 5}),
                                     full_sample(2, 30, {9, 1})};
  const auto schema = make_schema(train, Modality::Both);
  const auto k1 = KnnRegressor::fit(train, schema, 1);
  CHECK(k1.predict(train[1]) == Position{5, 5});

  // Three neighbours at the same feature distance from the query.
  std::vector<TelemetrySample> ring;
  const std::vector<Position> pos{{0, 0}, {6, 0}, {0, 9}};
  const std::vector<std::pair<int, int>> rssi{{-46, -50}, {-50, -46}, {-50, -54}};
  for (int i = 0; i < 3; ++i) {
    ring.push_back({.readings = {reading(1, 100, rssi[i].first), reading(2, 100, rssi[i].second)},
                    .position = pos[i]});
  }
  const auto rs = make_schema(ring, Modality::Both);
  const auto k3 = KnnRegressor::fit(ring, rs, 3);
  const TelemetrySample q{.readings = {reading(1, 100, -50), reading(2, 100, -50)}};
  const auto c = k3.predict(q);
  CHECK(c.x == doctest::Approx(2.0));
  CHECK(c.y == doctest::Approx(3.0));

  CHECK(code_of([&] { KnnRegressor::fit(train, schema, 4); }) == Errc::BadK);
  CHECK(code_of([&] { KnnRegressor::fit(train, schema, 0); }) == Errc::BadK);
  CHECK(code_of([&] { KnnRegressor::fit({}, schema, 1); }) == Errc::EmptyTrain);
}

TEST_CASE("knn prediction lies in the neighbours' bounding box") {
  const auto split = gen_dataset(preset("office"), 2);
  std::vector<TelemetrySample> train(split.train.begin(), split.train.begin() + 600);
  const auto schema = make_schema(train, Modality::Both);
  const auto knn = KnnRegressor::fit(train, schema, 3);
  double lo_x = 1e9, hi_x = -1e9;
  for (const auto& s : train) {
    lo_x = std::min(lo_x, s.position.x);
    hi_x = std::max(hi_x, s.position.x);
  }
  for (std::size_t i = 0; i < split.test.size(); i += 50) {
    const auto p = knn.predict(split.test[i]);
    CHECK(p.x >= lo_x - 1e-9);
    CHECK(p.x <= hi_x + 1e-9);
  }
}

TEST_CASE("mlp overfits three samples and is seed-deterministic") {
  std::vector<TelemetrySample> train{full_sample(3, 10, {1, 2}), full_sample(3, 40, {4, 0}),
                                     full_sample(3, 90, {7, 5})};
  const auto schema = make_schema(train, Modality::Both);
  MlpConfig cfg{.lr = 1e-2, .epochs = 600, .batch_size = 3, .seed = 4};
  const auto m = MlpRegressor::fit(train, schema, cfg);
  double loss = 0.0;
  for (const auto& s : train) {
    const auto p = m.predict(s);
    loss += (p.x - s.position.x) * (p.x - s.position.x) + (p.y - s.position.y) * (p.y - s.position.y);
  }
  CHECK(loss / 3.0 < 1e-2);
  const auto m2 = MlpRegressor::fit(train, schema, cfg);
  for (const auto& s : train) CHECK(m.predict(s) == m2.predict(s));
  CHECK(code_of([&] { MlpRegressor::fit({}, schema, cfg); }) == Errc::EmptyTrain);
}

TEST_CASE("mlp standardization uses training statistics only") {
  const auto split = gen_dataset(preset("lecture"), 1);
  std::vector<TelemetrySample> train(split.train.begin(), split.train.begin() + 300);
  const auto schema = make_schema(train, Modality::Both);
  MlpConfig cfg{.epochs = 3};
  const auto a = MlpRegressor::fit(train, schema, cfg);
  const auto b = MlpRegressor::fit(train, schema, cfg);
  // Predicting different test sets in different orders never changes a model.
  const auto p1 = a.predict(split.test[0]);
  a.predict(std::span(split.test).subspan(100, 200));
  CHECK(a.predict(split.test[0]) == p1);
  CHECK(b.predict(split.test[0]) == p1);
}

TEST_CASE("baselines learn the lecture preset") {
  const auto split = gen_dataset(preset("lecture"), 0);
  const auto schema = make_schema(split.train, Modality::Both);
  std::vector<Position> truth;
  for (const auto& s : split.test) truth.push_back(s.position);
  const auto knn = KnnRegressor::fit(split.train, schema, 3);
  const double knn_mae = summarize(distance_errors(knn.predict(split.test), truth)).mae;
  CHECK(knn_mae < 1.5);
}

}
