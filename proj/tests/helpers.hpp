#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "locaris/model.hpp"
#include "locaris/telemetry.hpp"
#include "locaris/tokenizer.hpp"

namespace locaris::test {

inline ApReading reading(int ap, std::optional<int> rtt, std::optional<int> rssi) {
  return ApReading{.ap_id = ap, .rssi = rssi, .ftm_rtt = rtt};
}

/// The two-AP sample used throughout the prompt examples.
inline TelemetrySample two_ap_sample() {
  return TelemetrySample{.readings = {reading(1, 8667, -45), reading(2, 12334, -60)},
                         .position = {1.5, 2.5}};
}

/// Random valid sample over APs 1..n_aps with each modality present with
/// probability 0.85.
inline TelemetrySample random_sample(std::mt19937_64& rng, int n_aps) {
  std::uniform_int_distribution<int> rssi(-104, 0), rtt(1, 400);
  std::uniform_real_distribution<double> coin(0.0, 1.0), pos(0.0, 20.0);
  TelemetrySample s;
  for (int ap = 1; ap <= n_aps; ++ap) {
    ApReading r{.ap_id = ap};
    if (coin(rng) < 0.85) r.rssi = rssi(rng);
    if (coin(rng) < 0.85) r.ftm_rtt = rtt(rng);
    if (!r.rssi && !r.ftm_rtt) r.rssi = rssi(rng);
    s.readings.push_back(r);
  }
  s.position = {pos(rng), pos(rng)};
  return s;
}

inline ModelConfig tiny_config(int d = 16, int layers = 2, int heads = 2) {
  ModelConfig c;
  c.d_model = d;
  c.n_layers = layers;
  c.n_heads = heads;
  c.ffn_mult = 2;
  c.vocab_size = build_vocab().size();
  return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("locaris_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace locaris::test
