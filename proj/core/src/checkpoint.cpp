#include "locaris/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "locaris/error.hpp"

namespace locaris::nn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    fail(Errc::CheckpointFormat, path.string() + ": truncated checkpoint");
  }
  return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  std::vector<float> buf;
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    const auto v = t.values();
    buf.assign(v.begin(), v.end());
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) fail(Errc::IoError, "write failed for " + path.string());
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::IoError, "cannot open " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    fail(Errc::CheckpointFormat, path.string() + ": bad magic");
  }
  if (get<std::uint32_t>(in, path) != kCheckpointVersion) {
    fail(Errc::CheckpointFormat, path.string() + ": unsupported version");
  }
  const auto count = get<std::uint32_t>(in, path);
  std::vector<NamedTensor> out;
  out.reserve(count);
  std::vector<float> buf;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(in, path);
    if (name_len > 4096) fail(Errc::CheckpointFormat, path.string() + ": implausible name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) fail(Errc::CheckpointFormat, path.string() + ": truncated name");
    const auto rank = get<std::uint32_t>(in, path);
    if (rank == 0 || rank > 8) fail(Errc::CheckpointFormat, path.string() + ": bad rank");
    Shape shape(rank);
    for (auto& d : shape) {
      d = static_cast<std::size_t>(get<std::uint64_t>(in, path));
      if (d == 0 || d > (1u << 28)) fail(Errc::CheckpointFormat, path.string() + ": bad extent");
    }
    buf.resize(shape_size(shape));
    if (!in.read(reinterpret_cast<char*>(buf.data()),
                 static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
      fail(Errc::CheckpointFormat, path.string() + ": truncated data for " + name);
    }
    out.push_back({std::move(name), Tensor(std::move(shape), std::vector<double>(buf.begin(), buf.end()))});
  }
  return out;
}

}  // namespace locaris::nn
