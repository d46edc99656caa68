#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "locaris/telemetry.hpp"

namespace locaris {

enum class Regime { Los, Mixed, Nlos };

std::string_view regime_name(Regime r) noexcept;
Regime parse_regime(std::string_view name);

/// Speed of light in m/ns.
inline constexpr double kSpeedOfLight = 0.299792458;

struct EnvironmentSpec {
  std::string name;
  double width = 10.0;   // m
  double height = 10.0;  // m
  double grid_spacing = 0.6;
  std::vector<Position> ap_positions;
  Regime regime = Regime::Los;
  double path_loss_exponent = 2.0;
  double ref_power = -40.0;       // dBm at 1 m
  double shadowing_sigma = 2.0;   // dB
  double ftm_noise = 3.0;         // ns
  double nlos_delay_mean = 25.0;  // ns, only when regime != los
  int samples_per_rp = 60;
  int n_rps = 0;       // 0 = every grid point
  int n_test_rps = 0;  // reference points held out for the test split
  std::uint64_t layout_seed = 0;  // fixes RP selection and the split

  int n_aps() const { return static_cast<int>(ap_positions.size()); }
  /// Throws InvalidConfig.
  void validate() const;
};

void to_json(nlohmann::json& j, const EnvironmentSpec& s);
void from_json(const nlohmann::json& j, EnvironmentSpec& s);

/// Regime defaults (los / mixed / nlos): exponent 2.0 / 2.7 / 3.3, shadowing
/// 2 / 4 / 4 dB, excess-delay mean - / 12.5 / 25 ns.
EnvironmentSpec make_environment(std::string name, double width, double height, int n_aps,
                                 Regime regime);

/// lecture (15 x 14.5 m, 5 APs, LOS, 120 RPs), office (18 x 5.5 m, 5 APs,
/// mixed, 108 RPs), corridor (35 x 6 m, 4 APs, NLOS, 114 RPs). Throws UnknownPreset.
EnvironmentSpec preset(std::string_view name);
inline constexpr std::string_view kPresetNames[] = {"lecture", "office", "corridor"};

/// Cell centres of the grid covering the testbed, row-major.
std::vector<Position> grid_points(const EnvironmentSpec& spec);

struct Environment {
  EnvironmentSpec spec;
  std::vector<Position> reference_points;  // ascending grid order
  std::vector<bool> is_test;               // per reference point
};

Environment materialize(const EnvironmentSpec& spec);

/// P0 - 10 n log10(max(d, 0.1)) + N(0, sigma^2), rounded, clamped to [-104, 0].
int rssi_at(const EnvironmentSpec& env, int ap_index, Position pos, std::mt19937_64& rng);
/// 2 d / c + N(0, sigma_t^2) + (non-LOS ? Exp(mean) : 0), rounded, floored at 1 ns.
int ftm_at(const EnvironmentSpec& env, int ap_index, Position pos, std::mt19937_64& rng);

/// samples_per_rp samples per RP with RSSI + FTM from every AP, split by whole
/// reference points. Every sample carries {environment: name}.
DatasetSplit gen_dataset(const EnvironmentSpec& spec, std::uint64_t seed);

}  // namespace locaris
