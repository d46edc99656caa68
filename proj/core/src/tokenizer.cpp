#include "locaris/tokenizer.hpp"

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

#include "locaris/error.hpp"

namespace locaris {

Vocab build_vocab(int max_ap_id) {
  if (max_ap_id < 1) fail(Errc::InvalidConfig, "max_ap_id must be >= 1");
  Vocab v;
  auto& t = v.id_to_token_;
  t.emplace_back(kEosToken);
  t.emplace_back(" ");
  t.emplace_back("-");
  for (char d = '0'; d <= '9'; ++d) t.emplace_back(1, d);
  t.emplace_back("RTT:");
  t.emplace_back("RSS:");
  for (const auto key : kMetadataKeys) t.emplace_back(metadata_keyword(key));
  for (int i = 1; i <= max_ap_id; ++i) t.push_back("AP" + std::to_string(i));
  for (char c = 'a'; c <= 'z'; ++c) t.emplace_back(1, c);
  t.emplace_back("_");
  t.emplace_back(".");
  if (t.size() > 256) fail(Errc::InvalidConfig, "vocabulary exceeds 256 tokens");
  v.eos_id_ = 0;
  v.max_ap_id_ = max_ap_id;
  v.index();
  return v;
}

void Vocab::index() {
  token_to_id_.clear();
  max_token_length_ = 0;
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
    if (!token_to_id_.emplace(id_to_token_[i], static_cast<int>(i)).second) {
      fail(Errc::InvalidConfig, "duplicate vocabulary token '" + id_to_token_[i] + "'");
    }
    if (static_cast<int>(i) != eos_id_) {
      max_token_length_ = std::max(max_token_length_, id_to_token_[i].size());
    }
  }
}

int Vocab::id(std::string_view token) const {
  const auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? -1 : it->second;
}

nlohmann::json Vocab::to_json() const {
  nlohmann::json tokens = nlohmann::json::object();
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) tokens[id_to_token_[i]] = i;
  return {{"version", kVocabVersion},
          {"eos_id", eos_id_},
          {"pad_id", eos_id_},
          {"max_ap_id", max_ap_id_},
          {"tokens", tokens}};
}

Vocab Vocab::from_json(const nlohmann::json& j) {
  if (j.value("version", "") != kVocabVersion) fail(Errc::ConfigError, "unsupported vocab version");
  Vocab v;
  const auto& tokens = j.at("tokens");
  v.id_to_token_.assign(tokens.size(), {});
  for (const auto& [tok, id] : tokens.items()) {
    const auto i = id.get<std::size_t>();
    if (i >= v.id_to_token_.size() || !v.id_to_token_[i].empty()) {
      fail(Errc::ConfigError, "vocab ids are not a permutation");
    }
    v.id_to_token_[i] = tok;
  }
  v.eos_id_ = j.at("eos_id").get<int>();
  if (j.at("pad_id").get<int>() != v.eos_id_) fail(Errc::ConfigError, "pad_id must equal eos_id");
  v.max_ap_id_ = j.at("max_ap_id").get<int>();
  v.index();
  return v;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::IoError, "cannot open " + path.string());
  return from_json(nlohmann::json::parse(in));
}

TokenSequence encode(std::string_view prompt, const Vocab& vocab) {
  TokenSequence seq;
  seq.ids.reserve(prompt.size() + 1);
  std::size_t pos = 0;
  while (pos < prompt.size()) {
    int match = -1;
    std::size_t match_len = 0;
    const std::size_t longest = std::min(vocab.max_token_length(), prompt.size() - pos);
    for (std::size_t len = longest; len >= 1; --len) {
      const int id = vocab.id(prompt.substr(pos, len));
      if (id >= 0 && id != vocab.eos_id()) {
        match = id;
        match_len = len;
        break;
      }
    }
    if (match < 0) {
      throw Error(Errc::UnknownToken,
                  "no token matches '" + std::string(1, prompt[pos]) + "' at byte " + std::to_string(pos),
                  pos);
    }
    seq.ids.push_back(match);
    pos += match_len;
  }
  seq.ids.push_back(vocab.eos_id());
  seq.length = seq.ids.size();
  return seq;
}

std::string decode(const TokenSequence& seq, const Vocab& vocab) {
  std::string out;
  const std::size_t n = std::min(seq.length, seq.ids.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (seq.ids[i] == vocab.eos_id()) continue;
    out += vocab.token(seq.ids[i]);
  }
  return out;
}

Batch pad_batch(std::span<const TokenSequence> seqs, std::span<const Position> targets, int pad_id) {
  if (seqs.empty()) fail(Errc::EmptyBatch, "pad_batch needs at least one sequence");
  if (seqs.size() != targets.size()) fail(Errc::LengthMismatch, "sequence/target count mismatch");
  Batch b;
  b.batch = seqs.size();
  for (const auto& s : seqs) {
    if (s.length == 0 || s.length > s.ids.size()) fail(Errc::EmptyMaskRow, "sequence has no tokens");
    b.max_len = std::max(b.max_len, s.length);
  }
  b.ids.assign(b.batch * b.max_len, pad_id);
  b.attention_mask.assign(b.batch * b.max_len, 0);
  b.targets.resize(b.batch * 2);
  b.lengths.resize(b.batch);
  for (std::size_t i = 0; i < b.batch; ++i) {
    const auto& s = seqs[i];
    std::copy_n(s.ids.begin(), s.length, b.ids.begin() + static_cast<std::ptrdiff_t>(i * b.max_len));
    std::fill_n(b.attention_mask.begin() + static_cast<std::ptrdiff_t>(i * b.max_len), s.length, 1);
    b.lengths[i] = s.length;
    b.targets[2 * i] = targets[i].x;
    b.targets[2 * i + 1] = targets[i].y;
  }
  return b;
}

}  // namespace locaris
