#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "locaris/telemetry.hpp"

namespace locaris {

inline constexpr std::string_view kVocabVersion = "locaris-vocab-v1";
inline constexpr std::string_view kEosToken = "<eos>";

/// Fixed domain vocabulary. Immutable after construction.
class Vocab {
 public:
  Vocab() = default;

  int id(std::string_view token) const;  // -1 if absent
  const std::string& token(int id) const { return id_to_token_.at(static_cast<std::size_t>(id)); }
  int size() const noexcept { return static_cast<int>(id_to_token_.size()); }
  int eos_id() const noexcept { return eos_id_; }
  int pad_id() const noexcept { return eos_id_; }
  int max_ap_id() const noexcept { return max_ap_id_; }
  std::size_t max_token_length() const noexcept { return max_token_length_; }
  const std::vector<std::string>& tokens() const noexcept { return id_to_token_; }

  nlohmann::json to_json() const;
  static Vocab from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.id_to_token_ == b.id_to_token_ && a.eos_id_ == b.eos_id_;
  }

 private:
  friend Vocab build_vocab(int max_ap_id);
  void index();

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  int eos_id_ = 0;
  int max_ap_id_ = 0;
  std::size_t max_token_length_ = 0;
};

/// EOS, space, '-', digits, field keywords, AP1..AP<max_ap_id>, and the
/// character set used by metadata values (a-z, '_', '.').
Vocab build_vocab(int max_ap_id = 16);

struct TokenSequence {
  std::vector<int> ids;
  std::size_t length = 0;  // non-padding ids, including the trailing EOS
};

/// Greedy longest match, one trailing EOS. Throws UnknownToken with the byte
/// offset of the first unmatched character.
TokenSequence encode(std::string_view prompt, const Vocab& vocab);

/// Concatenates the first `length` token strings, skipping EOS.
std::string decode(const TokenSequence& seq, const Vocab& vocab);

struct Batch {
  std::size_t batch = 0;
  std::size_t max_len = 0;
  std::vector<int> ids;                 // batch x max_len, row-major
  std::vector<std::uint8_t> attention_mask;  // batch x max_len
  std::vector<double> targets;          // batch x 2, meters
  std::vector<std::size_t> lengths;

  int id(std::size_t row, std::size_t col) const { return ids[row * max_len + col]; }
  bool mask(std::size_t row, std::size_t col) const { return attention_mask[row * max_len + col] != 0; }
};

/// Pads with pad_id to the longest sequence in this batch only.
Batch pad_batch(std::span<const TokenSequence> seqs, std::span<const Position> targets,
                int pad_id);

}  // namespace locaris
