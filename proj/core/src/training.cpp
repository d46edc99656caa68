#include "locaris/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <numbers>
#include <ostream>
#include <random>
#include <thread>

#include <nlohmann/json.hpp>

#include "locaris/error.hpp"
#include "locaris/eval.hpp"
#include "locaris/ops.hpp"
#include "locaris/optim.hpp"

namespace locaris {

std::string_view train_mode_name(TrainMode m) noexcept { return m == TrainMode::Full ? "full" : "lora"; }

TrainMode parse_train_mode(std::string_view name) {
  if (name == "full") return TrainMode::Full;
  if (name == "lora") return TrainMode::Lora;
  fail(Errc::ConfigError, "unknown training mode '" + std::string(name) + "'");
}

std::string_view schedule_name(LrSchedule s) noexcept { return s == LrSchedule::Constant ? "constant" : "cosine"; }

LrSchedule parse_schedule(std::string_view name) {
  if (name == "constant") return LrSchedule::Constant;
  if (name == "cosine") return LrSchedule::Cosine;
  fail(Errc::ConfigError, "unknown lr schedule '" + std::string(name) + "'");
}

double TrainConfig::lr_at(std::size_t step, std::size_t total_steps) const {
  if (step < warmup_steps) return lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  if (schedule == LrSchedule::Constant || total_steps <= warmup_steps) return lr;
  const double t = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, t)));
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) fail(Errc::InvalidConfig, "lr must be positive");
  if (batch_size == 0) fail(Errc::InvalidConfig, "batch_size must be >= 1");
  if (epochs < 1) fail(Errc::InvalidConfig, "epochs must be >= 1");
  if (!(clip_norm > 0.0)) fail(Errc::InvalidConfig, "clip_norm must be positive");
  if (weight_decay < 0.0) fail(Errc::InvalidConfig, "weight_decay must be non-negative");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"mode", train_mode_name(c.mode)}, {"lr", c.lr},
       {"batch_size", c.batch_size},       {"epochs", c.epochs},
       {"seed", c.seed},                   {"clip_norm", c.clip_norm},
       {"weight_decay", c.weight_decay},   {"max_steps", c.max_steps},
       {"schedule", schedule_name(c.schedule)}, {"warmup_steps", c.warmup_steps},
       {"recenter_head", c.recenter_head}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.mode = parse_train_mode(j.value("mode", std::string(train_mode_name(d.mode))));
  c.lr = j.value("lr", d.lr);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.seed = j.value("seed", d.seed);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.schedule = parse_schedule(j.value("schedule", std::string(schedule_name(d.schedule))));
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.recenter_head = j.value("recenter_head", d.recenter_head);
}

void TrainLog::write_jsonl(std::ostream& os) const {
  for (const auto& e : epochs) {
    nlohmann::json j = {{"epoch", e.epoch},
                        {"loss", e.mean_loss},
                        {"seconds", e.seconds},
                        {"steps", e.steps},
                        {"trainable_fraction", trainable_fraction}};
    os << j.dump() << '\n';
  }
}

std::vector<EncodedSample> encode_samples(std::span<const TelemetrySample> samples,
                                          const AblationSpec& spec, const Vocab& vocab) {
  std::vector<EncodedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const auto ablated = apply_ablation(s, spec);
    out.push_back({encode(serialize_prompt(ablated, spec), vocab), s.position});
  }
  return out;
}

nn::Tensor regression_loss(const nn::Tensor& predictions, std::span<const Position> targets) {
  std::vector<double> flat;
  flat.reserve(targets.size() * 2);
  for (const auto& p : targets) {
    flat.push_back(p.x);
    flat.push_back(p.y);
  }
  return nn::mse_loss(predictions, flat);
}

namespace {

Batch make_batch(std::span<const EncodedSample> encoded, std::span<const std::size_t> idx,
                 const Vocab& vocab) {
  std::vector<TokenSequence> seqs;
  std::vector<Position> targets;
  seqs.reserve(idx.size());
  targets.reserve(idx.size());
  for (auto i : idx) {
    seqs.push_back(encoded[i].tokens);
    targets.push_back(encoded[i].target);
  }
  return pad_batch(seqs, targets, vocab.pad_id());
}

void recenter_head(const Model& model, std::span<const TelemetrySample> all, const AblationSpec& spec,
                   const Vocab& vocab) {
  const std::size_t stride = (all.size() + 255) / 256;
  std::vector<TelemetrySample> data;
  for (std::size_t i = 0; i < all.size(); i += stride) data.push_back(all[i]);
  const auto pred = predict(model, data, spec, vocab, 64);
  double dx = 0.0, dy = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    dx += data[i].position.x - pred[i].x;
    dy += data[i].position.y - pred[i].y;
  }
  const auto b = model.weights().head.out_b.values();
  b[0] += dx / static_cast<double>(data.size());
  b[1] += dy / static_cast<double>(data.size());
}

}  // namespace

TrainLog train(Model& model, std::span<const TelemetrySample> data, const AblationSpec& spec,
               const Vocab& vocab, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) fail(Errc::EmptyDataset, "train: no samples");
  if (cfg.mode == TrainMode::Full && model.adapted()) {
    fail(Errc::InvalidConfig, "full training on an adapted model");
  }
  if (cfg.mode == TrainMode::Lora && !model.adapted()) {
    fail(Errc::NotAdapted, "LoRA training needs attached adapters");
  }

  if (cfg.recenter_head) recenter_head(model, data, spec, vocab);

  const auto encoded = encode_samples(data, spec, vocab);
  const auto params = model.trainable_parameters();
  auto state = nn::AdamWState::for_params(params, {.lr = cfg.lr, .weight_decay = cfg.weight_decay});

  TrainLog log;
  log.trainable_fraction = count_parameters(model).trainable_fraction;

  const std::size_t per_epoch = (encoded.size() + cfg.batch_size - 1) / cfg.batch_size;
  std::size_t total_steps = per_epoch * static_cast<std::size_t>(cfg.epochs);
  if (cfg.max_steps) total_steps = std::min(total_steps, cfg.max_steps);

  std::mt19937_64 shuffle_rng(cfg.seed);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(encoded.size());
  std::iota(order.begin(), order.end(), 0);

  const auto start = std::chrono::steady_clock::now();
  bool capped = false;
  for (int epoch = 1; epoch <= cfg.epochs && !capped; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochLog elog;
    elog.epoch = epoch;
    double weighted = 0.0;
    std::size_t seen = 0;
    for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
      if (cfg.max_steps && log.steps >= cfg.max_steps) {
        capped = true;
        break;
      }
      const auto n = std::min(cfg.batch_size, order.size() - off);
      const std::span<const std::size_t> idx(order.data() + off, n);
      const Batch batch = make_batch(encoded, idx, vocab);

      for (const auto& p : params) p.zero_grad();
      nn::Tape tape;
      double loss_value = 0.0;
      {
        nn::TapeScope scope(tape);
        const auto fwd = model.forward(batch, {.training = true, .rng = &dropout_rng});
        const auto loss = nn::mse_loss(fwd.predictions, batch.targets);
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) fail(Errc::NonFinite, "training loss is not finite");
        tape.backward(loss);
      }
      nn::clip_grad_norm(params, cfg.clip_norm);
      state.config.lr = cfg.lr_at(log.steps, total_steps);
      nn::adamw_step(params, state);

      weighted += loss_value * static_cast<double>(n);
      seen += n;
      ++elog.steps;
      ++log.steps;
    }
    if (seen == 0) break;
    elog.mean_loss = weighted / static_cast<double>(seen);
    elog.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.epochs.push_back(elog);
  }
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return log;
}

std::vector<Position> predict(const BatchForward& forward, std::span<const TelemetrySample> samples,
                              const AblationSpec& spec, const Vocab& vocab,
                              std::size_t batch_size) {
  if (batch_size == 0) fail(Errc::InvalidConfig, "batch_size must be >= 1");
  const auto encoded = encode_samples(samples, spec, vocab);
  std::vector<Position> out;
  out.reserve(encoded.size());
  nn::NoGradScope no_grad;
  std::vector<std::size_t> idx;
  for (std::size_t off = 0; off < encoded.size(); off += batch_size) {
    const auto n = std::min(batch_size, encoded.size() - off);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), off);
    const auto res = forward(make_batch(encoded, idx, vocab));
    const auto v = res.predictions.values();
    for (std::size_t i = 0; i < n; ++i) out.push_back({v[2 * i], v[2 * i + 1]});
  }
  return out;
}

std::vector<Position> predict(const Model& model, std::span<const TelemetrySample> samples,
                              const AblationSpec& spec, const Vocab& vocab,
                              std::size_t batch_size) {
  return predict([&](const Batch& b) { return model.forward(b); }, samples, spec, vocab, batch_size);
}

std::vector<Position> predict(const QuantizedModel& model, std::span<const TelemetrySample> samples,
                              const AblationSpec& spec, const Vocab& vocab,
                              std::size_t batch_size) {
  return predict([&](const Batch& b) { return model.forward(b); }, samples, spec, vocab, batch_size);
}

std::vector<TelemetrySample> few_shot_subset(std::span<const TelemetrySample> data, double fraction,
                                             std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    fail(Errc::BadFraction, "fraction must be in (0, 1], got " + format_double(fraction));
  }
  if (data.empty()) fail(Errc::EmptyDataset, "few_shot_subset: no samples");
  if (fraction == 1.0) return {data.begin(), data.end()};
  // The epsilon keeps products such as 0.29 * 100 from landing just below an integer.
  const auto k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(data.size()) + 1e-9)));
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  std::vector<TelemetrySample> out;
  out.reserve(k);
  for (auto i : idx) out.push_back(data[i]);
  return out;
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const auto workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::mutex mu;
  std::size_t next = 0;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next >= n) return;
        i = next++;
      }
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < workers; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

CrossEnvResult cross_env_protocol(std::span<const DatasetSplit> envs, std::size_t target,
                                  std::span<const double> fractions,
                                  std::span<const std::uint64_t> seeds, const Vocab& vocab,
                                  const CrossEnvConfig& cfg) {
  if (target >= envs.size()) {
    fail(Errc::BadTarget, "target index " + std::to_string(target) + " with " +
                              std::to_string(envs.size()) + " environments");
  }
  if (envs.size() < 2) fail(Errc::BadTarget, "cross-environment protocol needs a source environment");
  if (seeds.empty()) fail(Errc::InvalidConfig, "no seeds");

  std::vector<TelemetrySample> source;
  for (std::size_t e = 0; e < envs.size(); ++e) {
    if (e == target) continue;
    source.insert(source.end(), envs[e].train.begin(), envs[e].train.end());
  }

  CrossEnvResult result;
  result.target = target;
  Model backbone = Model::init(cfg.model, cfg.init_seed);
  TrainConfig src = cfg.source_train;
  src.mode = TrainMode::Full;
  result.source_log = train(backbone, source, cfg.spec, vocab, src);

  const auto& tgt = envs[target];
  std::vector<Position> truths;
  for (const auto& s : tgt.test) truths.push_back(s.position);

  result.runs.resize(fractions.size() * seeds.size());
  parallel_for(result.runs.size(), cfg.jobs, [&](std::size_t i) {
    AdaptRun& run = result.runs[i];
    run.fraction = fractions[i / seeds.size()];
    run.seed = seeds[i % seeds.size()];
    const auto subset = few_shot_subset(tgt.train, run.fraction, run.seed);
    run.n_train = subset.size();
    Model m = attach_lora(backbone, cfg.lora, run.seed);
    TrainConfig ad = cfg.adapt_train;
    ad.mode = TrainMode::Lora;
    ad.seed = run.seed;
    run.log = train(m, subset, cfg.spec, vocab, ad);
    run.predictions = predict(m, tgt.test, cfg.spec, vocab);
    run.mae = summarize(distance_errors(run.predictions, truths)).mae;
  });

  for (std::size_t f = 0; f < fractions.size(); ++f) {
    double s = 0.0;
    for (std::size_t k = 0; k < seeds.size(); ++k) s += result.runs[f * seeds.size() + k].mae;
    result.mean_mae_by_fraction.push_back(s / static_cast<double>(seeds.size()));
  }
  result.source_model.emplace(std::move(backbone));
  return result;
}

}  // namespace locaris
