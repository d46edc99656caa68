#include "locaris/model.hpp"

#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

#include "locaris/error.hpp"
#include "locaris/ops.hpp"

namespace locaris {

using nn::Tensor;

void ModelConfig::validate() const {
  if (d_model < 2 || n_layers < 1 || n_heads < 1 || ffn_mult < 1 || vocab_size < 1 ||
      max_seq_len < 1) {
    fail(Errc::InvalidConfig, "model dimensions must be positive");
  }
  if (d_model % n_heads != 0) fail(Errc::InvalidConfig, "d_model must be divisible by n_heads");
  if (head_dim() % 2 != 0) fail(Errc::InvalidConfig, "head dimension must be even for rotary encoding");
  if (d_model % 2 != 0) fail(Errc::InvalidConfig, "d_model must be even for the regression head");
  if (!(rope_base > 1.0)) fail(Errc::InvalidConfig, "rope_base must exceed 1");
}

void LoraConfig::validate() const {
  if (rank < 1) fail(Errc::InvalidConfig, "LoRA rank must be >= 1");
  if (!(alpha > 0.0)) fail(Errc::InvalidConfig, "LoRA alpha must be > 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail(Errc::InvalidConfig, "LoRA dropout must be in [0, 1)");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"d_model", c.d_model},       {"n_layers", c.n_layers},   {"n_heads", c.n_heads},
       {"ffn_mult", c.ffn_mult},     {"vocab_size", c.vocab_size}, {"max_seq_len", c.max_seq_len},
       {"rope_base", c.rope_base}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  const ModelConfig d;
  c.d_model = j.value("d_model", d.d_model);
  c.n_layers = j.value("n_layers", d.n_layers);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.ffn_mult = j.value("ffn_mult", d.ffn_mult);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.max_seq_len = j.value("max_seq_len", d.max_seq_len);
  c.rope_base = j.value("rope_base", d.rope_base);
}

void to_json(nlohmann::json& j, const LoraConfig& c) {
  j = {{"rank", c.rank}, {"alpha", c.alpha}, {"dropout", c.dropout}};
}

void from_json(const nlohmann::json& j, LoraConfig& c) {
  const LoraConfig d;
  c.rank = j.value("rank", d.rank);
  c.alpha = j.value("alpha", d.alpha);
  c.dropout = j.value("dropout", d.dropout);
}

namespace {

Tensor normal_tensor(nn::Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

Tensor project(const Tensor& x, const Tensor& weight, const std::optional<LoraAdapter>& lora,
               const std::optional<LoraConfig>& lcfg, const ForwardOptions& opts) {
  Tensor y = nn::matmul(x, weight);
  if (!lora) return y;
  Tensor in = x;
  if (opts.training && lcfg->dropout > 0.0) {
    if (opts.rng == nullptr) fail(Errc::InvalidConfig, "training forward needs an rng for LoRA dropout");
    in = nn::dropout(x, lcfg->dropout, *opts.rng);
  }
  const Tensor delta = nn::matmul(nn::matmul(in, lora->down), lora->up);
  return nn::add(y, nn::scale(delta, lcfg->scaling()));
}

std::string layer_prefix(std::size_t l) { return "layers." + std::to_string(l) + "."; }

}  // namespace

std::vector<std::size_t> last_token_rows(std::size_t batch, std::size_t seq_len,
                                         std::span<const std::uint8_t> mask) {
  if (mask.size() != batch * seq_len) fail(Errc::ShapeMismatch, "mask size != batch * seq_len");
  std::vector<std::size_t> rows(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t length = 0;
    for (std::size_t t = 0; t < seq_len; ++t) length += mask[b * seq_len + t] ? 1 : 0;
    if (length == 0) fail(Errc::EmptyMaskRow, "batch row " + std::to_string(b) + " has no tokens");
    rows[b] = b * seq_len + length - 1;
  }
  return rows;
}

Tensor pool_last_token(const Tensor& hidden, std::size_t batch, std::size_t seq_len,
                       std::span<const std::uint8_t> mask) {
  if (hidden.rank() != 2 || hidden.dim(0) != batch * seq_len) {
    fail(Errc::ShapeMismatch, "hidden must be (batch * seq_len) x d");
  }
  const auto rows = last_token_rows(batch, seq_len, mask);
  return nn::gather_rows(hidden, rows);
}

ForwardResult forward_weights(const ModelWeights& w, const ModelConfig& cfg,
                              const std::optional<LoraConfig>& lora, const Batch& batch,
                              const ForwardOptions& opts) {
  const std::size_t seq_len = batch.max_len;
  if (seq_len > static_cast<std::size_t>(cfg.max_seq_len)) {
    fail(Errc::SequenceTooLong, "batch length " + std::to_string(seq_len) + " exceeds max_seq_len " +
                                    std::to_string(cfg.max_seq_len));
  }
  for (int id : batch.ids) {
    if (id < 0 || id >= cfg.vocab_size) fail(Errc::ShapeMismatch, "token id outside vocabulary");
  }
  const auto heads = static_cast<std::size_t>(cfg.n_heads);

  Tensor x = nn::embedding_lookup(w.embed, batch.ids);
  for (const auto& layer : w.layers) {
    const Tensor h = nn::rms_norm(x, layer.attn_norm);
    Tensor q = project(h, layer.proj[0], layer.lora[0], lora, opts);
    Tensor k = project(h, layer.proj[1], layer.lora[1], lora, opts);
    const Tensor v = project(h, layer.proj[2], layer.lora[2], lora, opts);
    q = nn::rope(q, seq_len, heads, cfg.rope_base);
    k = nn::rope(k, seq_len, heads, cfg.rope_base);
    const Tensor attn = nn::causal_attention(q, k, v, batch.batch, seq_len, heads, batch.attention_mask);
    x = nn::add(x, project(attn, layer.proj[3], layer.lora[3], lora, opts));
    const Tensor h2 = nn::rms_norm(x, layer.ffn_norm);
    x = nn::add(x, nn::matmul(nn::silu(nn::matmul(h2, layer.ffn_in)), layer.ffn_out));
  }
  ForwardResult r;
  r.hidden = nn::rms_norm(x, w.final_norm);
  r.pooled = pool_last_token(r.hidden, batch.batch, seq_len, batch.attention_mask);
  const Tensor hid = nn::relu(nn::add(nn::matmul(r.pooled, w.head.hidden_w), w.head.hidden_b));
  r.predictions = nn::add(nn::matmul(hid, w.head.out_w), w.head.out_b);
  return r;
}

Model Model::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg_ = cfg;
  std::mt19937_64 rng(seed);
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto f = static_cast<std::size_t>(cfg.ffn_mult) * d;
  const double base_std = 0.02;
  const double resid_std = base_std / std::sqrt(2.0 * cfg.n_layers);

  m.w_.embed = normal_tensor({static_cast<std::size_t>(cfg.vocab_size), d}, base_std, rng);
  m.w_.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  for (auto& layer : m.w_.layers) {
    layer.attn_norm = Tensor({d}, 1.0);
    for (int p = 0; p < 4; ++p) {
      layer.proj[static_cast<std::size_t>(p)] =
          normal_tensor({d, d}, p == 3 ? resid_std : base_std, rng);
    }
    layer.ffn_norm = Tensor({d}, 1.0);
    layer.ffn_in = normal_tensor({d, f}, base_std, rng);
    layer.ffn_out = normal_tensor({f, d}, resid_std, rng);
  }
  m.w_.final_norm = Tensor({d}, 1.0);
  m.w_.head.hidden_w = normal_tensor({d, d / 2}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  m.w_.head.hidden_b = Tensor({d / 2}, 0.0);
  m.w_.head.out_w = Tensor({d / 2, 2}, 0.0);
  m.w_.head.out_b = Tensor({2}, 0.0);
  m.apply_freeze();
  return m;
}

void Model::attach_lora(const LoraConfig& lcfg, std::uint64_t seed) {
  if (lora_) fail(Errc::AlreadyAdapted, "model already carries LoRA adapters");
  lcfg.validate();
  std::mt19937_64 rng(seed);
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  const auto r = static_cast<std::size_t>(lcfg.rank);
  for (auto& layer : w_.layers) {
    for (auto& slot : layer.lora) {
      slot = LoraAdapter{normal_tensor({d, r}, 0.02, rng), Tensor({r, d}, 0.0)};
    }
  }
  lora_ = lcfg;
  apply_freeze();
}

void Model::apply_freeze() {
  for (auto& p : named_parameters()) {
    p.tensor.set_requires_grad(!lora_ || p.group != ParamGroup::Backbone);
  }
}

ForwardResult Model::forward(const Batch& batch, const ForwardOptions& opts) const {
  return forward_weights(w_, cfg_, lora_, batch, opts);
}

std::vector<NamedParam> Model::named_parameters() const {
  std::vector<NamedParam> out;
  out.push_back({"backbone.embed", w_.embed, ParamGroup::Backbone});
  for (std::size_t l = 0; l < w_.layers.size(); ++l) {
    const auto& layer = w_.layers[l];
    const auto pre = layer_prefix(l);
    out.push_back({"backbone." + pre + "attn_norm", layer.attn_norm, ParamGroup::Backbone});
    for (std::size_t p = 0; p < 4; ++p) {
      out.push_back({"backbone." + pre + kProjectionNames[p], layer.proj[p], ParamGroup::Backbone});
    }
    out.push_back({"backbone." + pre + "ffn_norm", layer.ffn_norm, ParamGroup::Backbone});
    out.push_back({"backbone." + pre + "ffn_in", layer.ffn_in, ParamGroup::Backbone});
    out.push_back({"backbone." + pre + "ffn_out", layer.ffn_out, ParamGroup::Backbone});
  }
  out.push_back({"backbone.final_norm", w_.final_norm, ParamGroup::Backbone});
  for (std::size_t l = 0; l < w_.layers.size(); ++l) {
    const auto& layer = w_.layers[l];
    for (std::size_t p = 0; p < 4; ++p) {
      if (!layer.lora[p]) continue;
      const auto pre = "adapter." + layer_prefix(l) + kProjectionNames[p];
      out.push_back({pre + ".lora_a", layer.lora[p]->down, ParamGroup::Adapter});
      out.push_back({pre + ".lora_b", layer.lora[p]->up, ParamGroup::Adapter});
    }
  }
  out.push_back({"head.hidden_w", w_.head.hidden_w, ParamGroup::Head});
  out.push_back({"head.hidden_b", w_.head.hidden_b, ParamGroup::Head});
  out.push_back({"head.out_w", w_.head.out_w, ParamGroup::Head});
  out.push_back({"head.out_b", w_.head.out_b, ParamGroup::Head});
  return out;
}

std::vector<Tensor> Model::trainable_parameters() const {
  std::vector<Tensor> out;
  for (auto& p : named_parameters()) {
    if (!lora_ || p.group != ParamGroup::Backbone) out.push_back(p.tensor);
  }
  return out;
}

std::vector<Tensor> Model::frozen_parameters() const {
  std::vector<Tensor> out;
  if (!lora_) return out;
  for (auto& p : named_parameters()) {
    if (p.group == ParamGroup::Backbone) out.push_back(p.tensor);
  }
  return out;
}

Model Model::clone() const {
  Model m;
  m.cfg_ = cfg_;
  m.lora_ = lora_;
  m.w_.embed = w_.embed.clone();
  m.w_.layers.resize(w_.layers.size());
  for (std::size_t l = 0; l < w_.layers.size(); ++l) {
    const auto& src = w_.layers[l];
    auto& dst = m.w_.layers[l];
    dst.attn_norm = src.attn_norm.clone();
    for (std::size_t p = 0; p < 4; ++p) {
      dst.proj[p] = src.proj[p].clone();
      if (src.lora[p]) dst.lora[p] = LoraAdapter{src.lora[p]->down.clone(), src.lora[p]->up.clone()};
    }
    dst.ffn_norm = src.ffn_norm.clone();
    dst.ffn_in = src.ffn_in.clone();
    dst.ffn_out = src.ffn_out.clone();
  }
  m.w_.final_norm = w_.final_norm.clone();
  m.w_.head = {w_.head.hidden_w.clone(), w_.head.hidden_b.clone(), w_.head.out_w.clone(),
               w_.head.out_b.clone()};
  m.apply_freeze();
  return m;
}

std::vector<nn::NamedTensor> Model::export_tensors(bool include_backbone) const {
  std::vector<nn::NamedTensor> out;
  for (auto& p : named_parameters()) {
    if (p.group == ParamGroup::Backbone && lora_ && !include_backbone) continue;
    out.push_back({p.name, p.tensor});
  }
  return out;
}

void Model::import_tensors(std::span<const nn::NamedTensor> tensors) {
  std::map<std::string, Tensor> by_name;
  for (auto& p : named_parameters()) by_name.emplace(p.name, p.tensor);
  for (const auto& [name, t] : tensors) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) fail(Errc::CheckpointFormat, "unknown tensor '" + name + "'");
    if (it->second.shape() != t.shape()) {
      fail(Errc::CheckpointFormat, "shape mismatch for '" + name + "': " +
                                       nn::shape_string(t.shape()) + " vs " +
                                       nn::shape_string(it->second.shape()));
    }
    const auto src = t.values();
    std::copy(src.begin(), src.end(), it->second.values().begin());
  }
}

Model Model::merged() const {
  Model m = clone();
  if (!m.lora_) return m;
  const double s = m.lora_->scaling();
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  const auto r = static_cast<std::size_t>(m.lora_->rank);
  for (auto& layer : m.w_.layers) {
    for (std::size_t p = 0; p < 4; ++p) {
      auto& ad = layer.lora[p];
      if (!ad) continue;
      auto w = layer.proj[p].values();
      const auto a = ad->down.values(), b = ad->up.values();
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          double acc = 0.0;
          for (std::size_t k = 0; k < r; ++k) acc += a[i * r + k] * b[k * d + j];
          w[i * d + j] += s * acc;
        }
      }
      ad.reset();
    }
  }
  m.lora_.reset();
  m.apply_freeze();
  return m;
}

Model attach_lora(const Model& base, const LoraConfig& lcfg, std::uint64_t seed) {
  Model m = base.clone();
  m.attach_lora(lcfg, seed);
  return m;
}

ParameterCount count_parameters(const Model& model) {
  ParameterCount c;
  const bool frozen = model.adapted();
  for (auto& p : model.named_parameters()) {
    c.total += p.tensor.size();
    if (!frozen || p.group != ParamGroup::Backbone) c.trainable += p.tensor.size();
  }
  c.trainable_fraction = c.total ? static_cast<double>(c.trainable) / static_cast<double>(c.total) : 0.0;
  return c;
}

ParameterCount expected_parameter_count(const ModelConfig& cfg, const std::optional<LoraConfig>& lora) {
  const std::size_t d = static_cast<std::size_t>(cfg.d_model);
  const std::size_t layers = static_cast<std::size_t>(cfg.n_layers);
  const std::size_t f = static_cast<std::size_t>(cfg.ffn_mult);
  const std::size_t backbone = static_cast<std::size_t>(cfg.vocab_size) * d +
                               layers * (2 * d + 4 * d * d + 2 * f * d * d) + d;
  const std::size_t adapters = lora ? layers * 4 * 2 * static_cast<std::size_t>(lora->rank) * d : 0;
  const std::size_t head = d * (d / 2) + d / 2 + (d / 2) * 2 + 2;
  ParameterCount c;
  c.total = backbone + adapters + head;
  c.trainable = lora ? adapters + head : c.total;
  c.trainable_fraction = static_cast<double>(c.trainable) / static_cast<double>(c.total);
  return c;
}

}  // namespace locaris
