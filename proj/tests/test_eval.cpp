#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "locaris/error.hpp"
#include "locaris/eval.hpp"

using namespace locaris;
using doctest::Approx;

namespace {

/// Independent oracle: sort a copy, interpolate at p*(n-1).
double brute_percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double idx = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(idx));
  const auto hi = static_cast<std::size_t>(std::ceil(idx));
  return v[lo] + (v[hi] - v[lo]) * (idx - static_cast<double>(lo));
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("distance errors") {
  const std::vector<Position> p{{0, 0}, {1, 1}}, t{{3, 4}, {1, 1}};
  const auto e = distance_errors(p, t);
  CHECK(e == std::vector<double>{5.0, 0.0});
  CHECK(distance_errors(t, p) == e);
  const std::vector<Position> one{{0, 0}};
  try {
    distance_errors(p, one);
    FAIL("no throw");
  } catch (const Error& err) {
    CHECK(err.code() == Errc::LengthMismatch);
  }
}

TEST_CASE("summarize examples") {
  const std::vector<double> e{1, 2, 3, 4};
  const auto s = summarize(e);
  CHECK(s.n == 4);
  CHECK(s.mae == 2.5);
  CHECK(s.rmse == Approx(std::sqrt(7.5)).epsilon(1e-15));
  CHECK(s.p50 == 2.5);
  const std::vector<double> seven{7};
  const auto one = summarize(seven);
  CHECK(one.p50 == 7);
  CHECK(one.p99 == 7);
  CHECK(one.mae == 7);
  try {
    summarize(std::vector<double>{});
    FAIL("no throw");
  } catch (const Error& err) {
    CHECK(err.code() == Errc::Empty);
  }
}

TEST_CASE("summarize matches the brute-force oracle and is permutation invariant") {
  std::mt19937_64 rng(1);
  std::exponential_distribution<double> ex(0.5);
  std::uniform_int_distribution<int> len(1, 300);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> e(len(rng));
    for (auto& x : e) x = ex(rng);
    const auto s = summarize(e);
    double sum = 0, sq = 0;
    for (double x : e) {
      sum += x;
      sq += x * x;
    }
    CHECK(s.mae == Approx(sum / e.size()).epsilon(1e-12));
    CHECK(s.rmse == Approx(std::sqrt(sq / e.size())).epsilon(1e-12));
    CHECK(s.p50 == Approx(brute_percentile(e, 0.50)).epsilon(1e-12));
    CHECK(s.p75 == Approx(brute_percentile(e, 0.75)).epsilon(1e-12));
    CHECK(s.p95 == Approx(brute_percentile(e, 0.95)).epsilon(1e-12));
    CHECK(s.p99 == Approx(brute_percentile(e, 0.99)).epsilon(1e-12));
    CHECK(s.rmse >= s.mae);
    CHECK(s.p50 <= s.p75);
    CHECK(s.p75 <= s.p95);
    CHECK(s.p95 <= s.p99);
    std::shuffle(e.begin(), e.end(), rng);
    const auto s2 = summarize(e);
    CHECK(s2.p95 == s.p95);
    CHECK(s2.mae == Approx(s.mae).epsilon(1e-12));
  }
}

TEST_CASE("report JSON and CSV") {
  EvalReport r;
  r.run = {.kind = "fewshot_sweep", .condition = "transfer", .environment = "corridor", .seed = 3};
  r.run.fraction = 0.1;
  r.run.n_train = 510;
  r.errors = summarize(std::vector<double>{1, 2, 3});
  r.total_params = 100;
  r.trainable_params = 10;
  r.weight_memory_bytes = 400;
  r.throughput = 1234.5;

  const nlohmann::json j = r;
  CHECK(j.at("energy_samples_per_wh").is_null());
  const auto back = j.get<EvalReport>();
  CHECK(csv_row(back) == csv_row(r));
  CHECK(back.throughput == r.throughput);

  const auto cols = csv_columns();
  const std::string header = csv_header();
  CHECK(std::count(header.begin(), header.end(), ',') + 1 == static_cast<long>(cols.size()));
  const std::string row = csv_row(r);
  CHECK(std::count(row.begin(), row.end(), ',') + 1 == static_cast<long>(cols.size()));
  CHECK(row.rfind("fewshot_sweep,transfer,locaris,corridor,3,both,,0.1,,510,3,2,", 0) == 0);
  CHECK(row.find("1234") == std::string::npos);
}

TEST_CASE("mean_report averages per-seed statistics") {
  std::vector<EvalReport> rs(2);
  rs[0].run = {.kind = "k", .condition = "c", .environment = "e", .seed = 0};
  rs[1].run = {.kind = "k", .condition = "c", .environment = "e", .seed = 1};
  rs[0].errors = summarize(std::vector<double>{1, 1});
  rs[1].errors = summarize(std::vector<double>{3, 3});
  const auto m = mean_report(rs);
  CHECK(m.run.seed_mean);
  CHECK(m.errors.mae == 2.0);
  CHECK(csv_row(m).find(",mean,") != std::string::npos);
}

TEST_CASE("format_double is shortest round trip") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(2.0) == "2");
  CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("throughput is positive and finite") {
  int calls = 0;
  const double t = measure_throughput([&] {
    ++calls;
    volatile double x = 0;
    for (int i = 0; i < 10000; ++i) x = x + i;
  }, 100, 3);
  CHECK(calls == 4);
  CHECK(t > 0.0);
  CHECK(std::isfinite(t));
}

TEST_CASE("weight memory of the default config equals the byte formula") {
  ModelConfig cfg;
  cfg.vocab_size = build_vocab().size();
  const Model m = attach_lora(Model::init(cfg, 0), LoraConfig{}, 0);
  const auto mem = weight_memory(m);
  const std::size_t d = 128, f = 4, L = 4, V = cfg.vocab_size;
  CHECK(mem.backbone == 4 * (V * d + L * (2 * d + 4 * d * d + 2 * f * d * d) + d));
  CHECK(mem.adapters == 4 * 65536);
  CHECK(mem.head == 4 * 8386);
}

}
