#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace locaris {

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view data);
/// Throws IoError if the file cannot be read.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace locaris
