#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "locaris/error.hpp"
#include "locaris/simulator.hpp"

using namespace locaris;
using namespace locaris::test;

namespace {

EnvironmentSpec quiet(Regime regime) {
  auto s = make_environment("quiet", 40, 40, 4, regime);
  s.shadowing_sigma = 0.0;
  s.ftm_noise = 0.0;
  s.ap_positions = {{0, 0}, {40, 0}, {40, 40}, {0, 40}};
  return s;
}

std::set<std::pair<double, double>> positions(const std::vector<TelemetrySample>& v) {
  std::set<std::pair<double, double>> out;
  for (const auto& s : v) out.insert({s.position.x, s.position.y});
  return out;
}

}  // namespace

TEST_SUITE("simulator") {

TEST_CASE("presets match the testbed table") {
  struct Want {
    const char* name;
    double w, h;
    int aps, rps;
    std::size_t train, test;
    Regime regime;
  };
  for (const auto& want : {Want{"lecture", 15, 14.5, 5, 120, 5280, 1920, Regime::Los},
                           Want{"office", 18, 5.5, 5, 108, 4860, 1620, Regime::Mixed},
                           Want{"corridor", 35, 6, 4, 114, 5100, 1740, Regime::Nlos}}) {
    CAPTURE(want.name);
    const auto spec = preset(want.name);
    CHECK(spec.width == want.w);
    CHECK(spec.height == want.h);
    CHECK(spec.n_aps() == want.aps);
    CHECK(spec.regime == want.regime);
    CHECK(spec.grid_spacing == 0.6);
    const auto split = gen_dataset(spec, 0);
    CHECK(split.train.size() == want.train);
    CHECK(split.test.size() == want.test);
    CHECK(split.train.size() + split.test.size() == static_cast<std::size_t>(want.rps * 60));
    const auto tr = positions(split.train), te = positions(split.test);
    CHECK(tr.size() + te.size() == static_cast<std::size_t>(want.rps));
    for (const auto& p : te) CHECK_FALSE(tr.contains(p));
    for (const auto& s : split.train) {
      CHECK(s.metadata.at("environment") == want.name);
      CHECK(s.readings.size() == static_cast<std::size_t>(want.aps));
    }
    for (int ap = 1; ap <= want.aps; ++ap) CHECK(split.ap_universe.contains(ap));
  }
  try {
    preset("atrium");
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::UnknownPreset);
  }
}

TEST_CASE("corners and centre AP placement") {
  const auto l = preset("lecture");
  CHECK(l.ap_positions[0] == Position{0, 0});
  CHECK(l.ap_positions[4] == Position{7.5, 7.25});
  const auto c = preset("corridor");
  CHECK(c.ap_positions.size() == 4);
}

TEST_CASE("rssi closed forms") {
  auto s = quiet(Regime::Los);
  std::mt19937_64 rng(1);
  CHECK(rssi_at(s, 0, {1, 0}, rng) == -40);
  CHECK(rssi_at(s, 0, {10, 0}, rng) == -60);
  CHECK(rssi_at(s, 0, {0, 0}, rng) == -20);  // distance clamped at 0.1 m
  s.shadowing_sigma = 30.0;
  for (int i = 0; i < 2000; ++i) {
    const int v = rssi_at(s, 0, {20, 30}, rng);
    CHECK(v >= -104);
    CHECK(v <= 0);
  }
}

TEST_CASE("ftm closed forms") {
  std::mt19937_64 rng(2);
  const auto los = quiet(Regime::Los);
  CHECK(ftm_at(los, 0, {3, 0}, rng) == 20);
  const auto nlos = quiet(Regime::Nlos);
  for (int i = 0; i < 500; ++i) CHECK(ftm_at(nlos, 0, {3, 0}, rng) >= 20);
  std::mt19937_64 a(9), b(9);
  CHECK(ftm_at(preset("office"), 1, {2, 2}, a) == ftm_at(preset("office"), 1, {2, 2}, b));
}

TEST_CASE("noise-free expectations are monotone in distance") {
  std::mt19937_64 rng(3);
  const auto s = quiet(Regime::Los);
  int prev_rssi = 1, prev_rtt = 0;
  for (double d : {1.0, 2.0, 4.0, 8.0, 16.0, 32.0}) {
    const int r = rssi_at(s, 0, {d, 0}, rng), t = ftm_at(s, 0, {d, 0}, rng);
    CHECK(r < prev_rssi);
    CHECK(t > prev_rtt);
    prev_rssi = r;
    prev_rtt = t;
  }
}

TEST_CASE("NLOS ranging overestimates distance") {
  auto s = quiet(Regime::Nlos);
  std::mt19937_64 rng(4);
  double bias = 0.0;
  int n = 0;
  for (double x = 2; x < 38; x += 3) {
    for (double y = 2; y < 38; y += 3) {
      for (int ap = 0; ap < 4; ++ap) {
        const double d = std::hypot(x - s.ap_positions[ap].x, y - s.ap_positions[ap].y);
        const double range = ftm_at(s, ap, {x, y}, rng) * kSpeedOfLight / 2.0;
        CHECK(range >= d - kSpeedOfLight / 4.0);  // rounding to whole ns
        bias += range - d;
        ++n;
      }
    }
  }
  // Mean excess delay of 25 ns is about 3.7 m of one-way range.
  CHECK(bias / n > 3.0);
  CHECK(bias / n < 4.5);
}

TEST_CASE("generation is seed-deterministic and geometry is seed-independent") {
  auto spec = preset("office");
  spec.samples_per_rp = 3;
  const auto a = gen_dataset(spec, 5), b = gen_dataset(spec, 5), c = gen_dataset(spec, 6);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  CHECK(a.train != c.train);
  CHECK(positions(a.train) == positions(c.train));
  CHECK(positions(a.test) == positions(c.test));
}

TEST_CASE("grid and materialize") {
  auto s = make_environment("g", 3.0, 1.2, 3, Regime::Los);
  const auto g = grid_points(s);
  REQUIRE(g.size() == 10);
  CHECK(g[0].x == doctest::Approx(0.3));
  CHECK(g[0].y == doctest::Approx(0.3));
  s.n_test_rps = 2;
  const auto env = materialize(s);
  CHECK(env.reference_points.size() == 10);
  CHECK(std::count(env.is_test.begin(), env.is_test.end(), true) == 2);
}

TEST_CASE("spec JSON and validation") {
  const nlohmann::json j = {{"preset", "corridor"}, {"shadowing_sigma", 1.5}};
  const auto s = j.get<EnvironmentSpec>();
  CHECK(s.name == "corridor");
  CHECK(s.shadowing_sigma == 1.5);
  CHECK(s.n_aps() == 4);
  const nlohmann::json back = s;
  CHECK(back.get<EnvironmentSpec>().n_rps == s.n_rps);

  auto bad = preset("lecture");
  bad.ap_positions.push_back({100, 1});
  try {
    bad.validate();
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::InvalidConfig);
  }
  bad = preset("lecture");
  bad.grid_spacing = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("custom 3-AP environment") {
  auto s = make_environment("tri", 6, 6, 3, Regime::Mixed);
  s.samples_per_rp = 2;
  s.n_test_rps = 10;
  const auto split = gen_dataset(s, 0);
  CHECK(split.ap_universe == std::set<int>{1, 2, 3});
  CHECK(split.train.size() + split.test.size() == grid_points(s).size() * 2);
  TempDir dir("sim");
  write_ftm_rssi_csv(dir / "t.csv", split.train, 3);
  const std::string text = read_file(dir / "t.csv");
  CHECK(text.substr(0, text.find('\n')) == "RTT1,RTT2,RTT3,RSS1,RSS2,RSS3,X,Y,ENV");
}

}
