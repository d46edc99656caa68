#include "locaris/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "locaris/error.hpp"

namespace locaris {

std::string_view regime_name(Regime r) noexcept {
  switch (r) {
    case Regime::Los: return "los";
    case Regime::Mixed: return "mixed";
    case Regime::Nlos: return "nlos";
  }
  return "los";
}

Regime parse_regime(std::string_view name) {
  if (name == "los") return Regime::Los;
  if (name == "mixed") return Regime::Mixed;
  if (name == "nlos") return Regime::Nlos;
  fail(Errc::ConfigError, "unknown regime '" + std::string(name) + "'");
}

void EnvironmentSpec::validate() const {
  if (name.empty()) fail(Errc::InvalidConfig, "environment needs a name");
  if (!(width > 0.0 && height > 0.0)) fail(Errc::InvalidConfig, name + ": testbed extents must be positive");
  if (!(grid_spacing > 0.0)) fail(Errc::InvalidConfig, name + ": grid_spacing must be positive");
  if (ap_positions.empty()) fail(Errc::InvalidConfig, name + ": no access points");
  for (const auto& p : ap_positions) {
    if (p.x < 0.0 || p.x > width || p.y < 0.0 || p.y > height) {
      fail(Errc::InvalidConfig, name + ": AP outside the testbed");
    }
  }
  if (samples_per_rp < 1) fail(Errc::InvalidConfig, name + ": samples_per_rp must be >= 1");
  if (shadowing_sigma < 0.0 || ftm_noise < 0.0 || nlos_delay_mean < 0.0) {
    fail(Errc::InvalidConfig, name + ": noise parameters must be non-negative");
  }
  const auto grid = grid_points(*this).size();
  if (n_rps < 0 || static_cast<std::size_t>(n_rps) > grid) {
    fail(Errc::InvalidConfig, name + ": n_rps exceeds the grid");
  }
  const std::size_t rps = n_rps ? static_cast<std::size_t>(n_rps) : grid;
  if (n_test_rps < 0 || static_cast<std::size_t>(n_test_rps) >= rps) {
    fail(Errc::InvalidConfig, name + ": n_test_rps must leave training reference points");
  }
}

void to_json(nlohmann::json& j, const EnvironmentSpec& s) {
  nlohmann::json aps = nlohmann::json::array();
  for (const auto& p : s.ap_positions) aps.push_back({p.x, p.y});
  j = {{"name", s.name},
       {"width", s.width},
       {"height", s.height},
       {"grid_spacing", s.grid_spacing},
       {"ap_positions", aps},
       {"regime", regime_name(s.regime)},
       {"path_loss_exponent", s.path_loss_exponent},
       {"ref_power", s.ref_power},
       {"shadowing_sigma", s.shadowing_sigma},
       {"ftm_noise", s.ftm_noise},
       {"nlos_delay_mean", s.nlos_delay_mean},
       {"samples_per_rp", s.samples_per_rp},
       {"n_rps", s.n_rps},
       {"n_test_rps", s.n_test_rps},
       {"layout_seed", s.layout_seed}};
}

void from_json(const nlohmann::json& j, EnvironmentSpec& s) {
  // Base: a named preset, or regime defaults for a custom testbed. Any other
  // field present in the document then overrides the base.
  if (j.contains("preset")) {
    s = preset(j.at("preset").get<std::string>());
    if (j.contains("regime")) {
      const auto defaults = make_environment(s.name, s.width, s.height, s.n_aps(),
                                             parse_regime(j.at("regime").get<std::string>()));
      s.regime = defaults.regime;
      s.path_loss_exponent = defaults.path_loss_exponent;
      s.shadowing_sigma = defaults.shadowing_sigma;
      s.nlos_delay_mean = defaults.nlos_delay_mean;
    }
  } else {
    const Regime regime = parse_regime(j.value("regime", std::string("los")));
    const int n_aps = j.contains("ap_positions") ? static_cast<int>(j.at("ap_positions").size())
                                                 : j.value("n_aps", 4);
    s = make_environment(j.at("name").get<std::string>(), j.at("width").get<double>(),
                         j.at("height").get<double>(), n_aps, regime);
  }
  s.name = j.value("name", s.name);
  if (j.contains("ap_positions")) {
    s.ap_positions.clear();
    for (const auto& p : j.at("ap_positions")) {
      s.ap_positions.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    }
  }
  s.width = j.value("width", s.width);
  s.height = j.value("height", s.height);
  s.grid_spacing = j.value("grid_spacing", s.grid_spacing);
  s.path_loss_exponent = j.value("path_loss_exponent", s.path_loss_exponent);
  s.ref_power = j.value("ref_power", s.ref_power);
  s.shadowing_sigma = j.value("shadowing_sigma", s.shadowing_sigma);
  s.ftm_noise = j.value("ftm_noise", s.ftm_noise);
  s.nlos_delay_mean = j.value("nlos_delay_mean", s.nlos_delay_mean);
  s.samples_per_rp = j.value("samples_per_rp", s.samples_per_rp);
  s.n_rps = j.value("n_rps", s.n_rps);
  s.n_test_rps = j.value("n_test_rps", s.n_test_rps);
  s.layout_seed = j.value("layout_seed", s.layout_seed);
}

EnvironmentSpec make_environment(std::string name, double width, double height, int n_aps,
                                 Regime regime) {
  EnvironmentSpec s;
  s.name = std::move(name);
  s.width = width;
  s.height = height;
  s.regime = regime;
  switch (regime) {
    case Regime::Los: s.path_loss_exponent = 2.0; s.shadowing_sigma = 2.0; break;
    case Regime::Mixed:
      s.path_loss_exponent = 2.7;
      s.shadowing_sigma = 4.0;
      s.nlos_delay_mean = 12.5;
      break;
    case Regime::Nlos: s.path_loss_exponent = 3.3; s.shadowing_sigma = 4.0; break;
  }
  // Corners first, then the centre, then points along the horizontal midline.
  const std::vector<Position> anchors = {
      {0.0, 0.0}, {width, 0.0}, {width, height}, {0.0, height}, {width / 2, height / 2}};
  for (int i = 0; i < n_aps; ++i) {
    if (i < static_cast<int>(anchors.size())) {
      s.ap_positions.push_back(anchors[static_cast<std::size_t>(i)]);
    } else {
      const double t = static_cast<double>(i - 4) / static_cast<double>(n_aps - 3);
      s.ap_positions.push_back({width * t, height / 2});
    }
  }
  return s;
}

EnvironmentSpec preset(std::string_view name) {
  EnvironmentSpec s;
  if (name == "lecture") {
    s = make_environment("lecture", 15.0, 14.5, 5, Regime::Los);
    s.n_rps = 120;
    s.n_test_rps = 32;  // 5280 / 1920 samples
  } else if (name == "office") {
    s = make_environment("office", 18.0, 5.5, 5, Regime::Mixed);
    s.n_rps = 108;
    s.n_test_rps = 27;  // 4860 / 1620
  } else if (name == "corridor") {
    s = make_environment("corridor", 35.0, 6.0, 4, Regime::Nlos);
    s.n_rps = 114;
    s.n_test_rps = 29;  // 5100 / 1740
  } else {
    fail(Errc::UnknownPreset, "unknown environment preset '" + std::string(name) + "'");
  }
  return s;
}

std::vector<Position> grid_points(const EnvironmentSpec& spec) {
  std::vector<Position> out;
  const auto nx = static_cast<std::size_t>(std::floor(spec.width / spec.grid_spacing + 1e-9));
  const auto ny = static_cast<std::size_t>(std::floor(spec.height / spec.grid_spacing + 1e-9));
  for (std::size_t iy = 0; iy < ny; ++iy) {
    for (std::size_t ix = 0; ix < nx; ++ix) {
      out.push_back({(static_cast<double>(ix) + 0.5) * spec.grid_spacing,
                     (static_cast<double>(iy) + 0.5) * spec.grid_spacing});
    }
  }
  return out;
}

Environment materialize(const EnvironmentSpec& spec) {
  spec.validate();
  Environment env;
  env.spec = spec;
  auto grid = grid_points(spec);
  std::mt19937_64 rng(spec.layout_seed);
  std::vector<std::size_t> idx(grid.size());
  std::iota(idx.begin(), idx.end(), 0);
  if (spec.n_rps > 0) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(spec.n_rps));
    std::sort(idx.begin(), idx.end());
  }
  for (auto i : idx) env.reference_points.push_back(grid[i]);

  env.is_test.assign(env.reference_points.size(), false);
  std::vector<std::size_t> order(env.reference_points.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (int i = 0; i < spec.n_test_rps; ++i) env.is_test[order[static_cast<std::size_t>(i)]] = true;
  return env;
}

namespace {

double distance_to_ap(const EnvironmentSpec& env, int ap_index, Position pos) {
  const auto& ap = env.ap_positions.at(static_cast<std::size_t>(ap_index));
  return std::hypot(pos.x - ap.x, pos.y - ap.y);
}

}  // namespace

int rssi_at(const EnvironmentSpec& env, int ap_index, Position pos, std::mt19937_64& rng) {
  const double d = std::max(distance_to_ap(env, ap_index, pos), 0.1);
  double rssi = env.ref_power - 10.0 * env.path_loss_exponent * std::log10(d);
  if (env.shadowing_sigma > 0.0) rssi += std::normal_distribution<double>(0.0, env.shadowing_sigma)(rng);
  const auto rounded = static_cast<int>(std::lround(rssi));
  return std::clamp(rounded, kRssiMin, kRssiMax);
}

int ftm_at(const EnvironmentSpec& env, int ap_index, Position pos, std::mt19937_64& rng) {
  const double d = distance_to_ap(env, ap_index, pos);
  double rtt = 2.0 * d / kSpeedOfLight;
  if (env.ftm_noise > 0.0) rtt += std::normal_distribution<double>(0.0, env.ftm_noise)(rng);
  if (env.regime != Regime::Los && env.nlos_delay_mean > 0.0) {
    rtt += std::exponential_distribution<double>(1.0 / env.nlos_delay_mean)(rng);
  }
  return std::max(1, static_cast<int>(std::lround(rtt)));
}

DatasetSplit gen_dataset(const EnvironmentSpec& spec, std::uint64_t seed) {
  const Environment env = materialize(spec);
  DatasetSplit split;
  for (std::size_t r = 0; r < env.reference_points.size(); ++r) {
    // Per-RP stream so generation order does not matter.
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(r)};
    std::mt19937_64 rng(seq);
    const Position pos = env.reference_points[r];
    auto& dest = env.is_test[r] ? split.test : split.train;
    for (int s = 0; s < spec.samples_per_rp; ++s) {
      TelemetrySample sample;
      sample.position = pos;
      sample.metadata.emplace("environment", spec.name);
      for (int a = 0; a < spec.n_aps(); ++a) {
        ApReading reading;
        reading.ap_id = a + 1;
        reading.ftm_rtt = ftm_at(spec, a, pos, rng);
        reading.rssi = rssi_at(spec, a, pos, rng);
        sample.readings.push_back(reading);
      }
      dest.push_back(std::move(sample));
    }
  }
  for (int a = 1; a <= spec.n_aps(); ++a) split.ap_universe.insert(a);
  return split;
}

}  // namespace locaris
