#include "locaris/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include "locaris/checkpoint.hpp"
#include "locaris/error.hpp"
#include "locaris/quantize.hpp"

#ifndef LOCARIS_VERSION
#define LOCARIS_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace locaris {

namespace {

constexpr std::pair<ExperimentKind, std::string_view> kKinds[] = {
    {ExperimentKind::Train, "train"},
    {ExperimentKind::Adapt, "adapt"},
    {ExperimentKind::Evaluate, "evaluate"},
    {ExperimentKind::FewshotSweep, "fewshot_sweep"},
    {ExperimentKind::TelemetryAblation, "telemetry_ablation"},
    {ExperimentKind::ApAblation, "ap_ablation"},
    {ExperimentKind::QuantizeSweep, "quantize_sweep"},
    {ExperimentKind::Simulate, "simulate"},
};

[[noreturn]] void config_error(const std::string& what) { fail(Errc::ConfigError, what); }

std::string csv_format_name(CsvFormat f) { return f == CsvFormat::SodCsv ? "sod_csv" : "ftm_rssi_csv"; }

}  // namespace

std::string_view kind_name(ExperimentKind k) noexcept {
  for (const auto& [kind, name] : kKinds) {
    if (kind == k) return name;
  }
  return "train";
}

ExperimentKind parse_kind(std::string_view name) {
  for (const auto& [kind, n] : kKinds) {
    if (n == name) return kind;
  }
  config_error("unknown experiment kind '" + std::string(name) + "'");
}

std::string_view code_version() noexcept { return LOCARIS_VERSION; }

int exit_code_for(Errc code) noexcept {
  switch (code) {
    case Errc::ConfigError:
    case Errc::InvalidConfig:
    case Errc::BadFraction:
    case Errc::BadTarget:
    case Errc::UnknownPreset:
    case Errc::BadK:
    case Errc::UnsupportedBits:
    case Errc::TooFewAPs:
    case Errc::AlreadyAdapted:
    case Errc::NotAdapted:
      return 2;
    case Errc::DataError:
    case Errc::SchemaError:
    case Errc::RangeError:
    case Errc::EmptyDataset:
    case Errc::InvalidSample:
    case Errc::AllReadingsDropped:
    case Errc::UnknownToken:
    case Errc::SequenceTooLong:
    case Errc::UnknownAP:
    case Errc::EmptyTrain:
    case Errc::CheckpointFormat:
    case Errc::IoError:
      return 3;
    case Errc::NonFinite:
      return 4;
    default:
      return 1;
  }
}

// ---------------------------------------------------------------------------
// Config

namespace {

const std::set<std::string, std::less<>> kConfigKeys = {
    "kind",       "environments", "data_seed",        "target",         "model",
    "lora",       "source_train", "adapt_train",      "init_seed",      "fractions",
    "seeds",      "modalities",   "drop_k",           "bits",           "checkpoint",
    "adapter_checkpoint",         "baselines",        "eval_batch_size", "measure_throughput",
    "save_checkpoints",           "output_dir",       "jobs",
    // Written into manifests, ignored on input.
    "code_version"};

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

// Manifests store absolute paths so they can be re-run from any directory.
std::string absolute_string(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

EnvironmentSource parse_environment(const json& j, const fs::path& base) {
  EnvironmentSource src;
  if (j.is_string()) {
    src.spec = preset(j.get<std::string>());
    src.name = src.spec->name;
    return src;
  }
  if (!j.is_object()) config_error("environment entries must be preset names or objects");
  if (j.contains("train_csv") || j.contains("test_csv")) {
    src.name = j.at("name").get<std::string>();
    src.train_csv = resolve(base, j.at("train_csv").get<std::string>());
    src.test_csv = resolve(base, j.at("test_csv").get<std::string>());
    src.format = parse_csv_format(j.value("format", std::string("ftm_rssi_csv")));
    return src;
  }
  EnvironmentSpec spec;
  from_json(j, spec);
  spec.validate();
  src.name = spec.name;
  src.spec = std::move(spec);
  return src;
}

json environment_json(const EnvironmentSource& src) {
  if (src.spec) return *src.spec;
  return {{"name", src.name},
          {"train_csv", absolute_string(src.train_csv)},
          {"test_csv", absolute_string(src.test_csv)},
          {"format", csv_format_name(src.format)}};
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base_dir) {
  ExperimentConfig c;
  try {
    if (!j.is_object()) config_error("config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (!kConfigKeys.contains(key)) config_error("unknown config key '" + key + "'");
    }
    c.kind = parse_kind(j.at("kind").get<std::string>());
    if (j.contains("environments")) {
      for (const auto& e : j.at("environments")) c.environments.push_back(parse_environment(e, base_dir));
    }
    c.data_seed = j.value("data_seed", c.data_seed);
    c.target = j.value("target", c.target);
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    if (j.contains("lora")) c.lora = j.at("lora").get<LoraConfig>();
    if (j.contains("source_train")) c.source_train = j.at("source_train").get<TrainConfig>();
    if (j.contains("adapt_train")) {
      c.adapt_train = j.at("adapt_train").get<TrainConfig>();
    } else {
      c.adapt_train.mode = TrainMode::Lora;
    }
    c.source_train.mode = TrainMode::Full;
    c.adapt_train.mode = TrainMode::Lora;
    c.init_seed = j.value("init_seed", c.init_seed);
    if (j.contains("fractions")) c.fractions = j.at("fractions").get<std::vector<double>>();
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("modalities")) {
      c.modalities.clear();
      for (const auto& m : j.at("modalities")) c.modalities.push_back(parse_modality(m.get<std::string>()));
    } else if (c.kind == ExperimentKind::TelemetryAblation) {
      c.modalities = {Modality::Both, Modality::FtmOnly, Modality::RssiOnly};
    }
    if (j.contains("drop_k")) c.drop_k = j.at("drop_k").get<std::vector<int>>();
    if (j.contains("bits")) c.bits = j.at("bits").get<std::vector<int>>();
    if (j.contains("checkpoint") && !j.at("checkpoint").is_null()) {
      c.checkpoint = resolve(base_dir, j.at("checkpoint").get<std::string>());
    }
    if (j.contains("adapter_checkpoint") && !j.at("adapter_checkpoint").is_null()) {
      c.adapter_checkpoint = resolve(base_dir, j.at("adapter_checkpoint").get<std::string>());
    }
    if (j.contains("baselines")) {
      const auto& b = j.at("baselines");
      c.baselines.knn = b.value("knn", false);
      c.baselines.knn_k = b.value("knn_k", c.baselines.knn_k);
      c.baselines.mlp = b.value("mlp", false);
      if (b.contains("mlp_config")) {
        const auto& m = b.at("mlp_config");
        auto& mc = c.baselines.mlp_cfg;
        mc.hidden1 = m.value("hidden1", mc.hidden1);
        mc.hidden2 = m.value("hidden2", mc.hidden2);
        mc.lr = m.value("lr", mc.lr);
        mc.epochs = m.value("epochs", mc.epochs);
        mc.batch_size = m.value("batch_size", mc.batch_size);
        mc.weight_decay = m.value("weight_decay", mc.weight_decay);
      }
    }
    c.eval_batch_size = j.value("eval_batch_size", c.eval_batch_size);
    c.measure_throughput = j.value("measure_throughput", c.measure_throughput);
    c.save_checkpoints = j.value("save_checkpoints", c.save_checkpoints);
    if (j.contains("output_dir")) c.output_dir = resolve(base_dir, j.at("output_dir").get<std::string>());
    c.jobs = j.value("jobs", c.jobs);
  } catch (const json::exception& e) {
    config_error(std::string("malformed config: ") + e.what());
  } catch (const Error& e) {
    if (exit_code_for(e.code()) == 2) config_error(e.what());
    throw;
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    config_error(path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

json ExperimentConfig::to_json() const {
  json envs = json::array();
  for (const auto& e : environments) envs.push_back(environment_json(e));
  json mods = json::array();
  for (auto m : modalities) mods.push_back(modality_name(m));
  const auto& mc = baselines.mlp_cfg;
  json j = {{"kind", kind_name(kind)},
            {"environments", envs},
            {"data_seed", data_seed},
            {"target", target},
            {"model", model},
            {"lora", lora},
            {"source_train", source_train},
            {"adapt_train", adapt_train},
            {"init_seed", init_seed},
            {"fractions", fractions},
            {"seeds", seeds},
            {"modalities", mods},
            {"drop_k", drop_k},
            {"bits", bits},
            {"checkpoint", checkpoint ? json(absolute_string(*checkpoint)) : json(nullptr)},
            {"adapter_checkpoint", adapter_checkpoint ? json(absolute_string(*adapter_checkpoint)) : json(nullptr)},
            {"baselines",
             {{"knn", baselines.knn},
              {"knn_k", baselines.knn_k},
              {"mlp", baselines.mlp},
              {"mlp_config",
               {{"hidden1", mc.hidden1},
                {"hidden2", mc.hidden2},
                {"lr", mc.lr},
                {"epochs", mc.epochs},
                {"batch_size", mc.batch_size},
                {"weight_decay", mc.weight_decay}}}}},
            {"eval_batch_size", eval_batch_size},
            {"measure_throughput", measure_throughput},
            {"save_checkpoints", save_checkpoints},
            {"output_dir", absolute_string(output_dir)},
            {"jobs", jobs}};
  return j;
}

void ExperimentConfig::validate() const {
  try {
    if (seeds.empty()) config_error("seeds must be non-empty");
    if (environments.empty()) config_error("at least one environment is required");
    std::set<std::string> names;
    for (const auto& e : environments) {
      if (!names.insert(e.name).second) config_error("duplicate environment '" + e.name + "'");
      if (!e.spec) {
        for (const auto& p : {e.train_csv, e.test_csv}) {
          if (!fs::exists(p)) config_error("dataset file not found: " + p.string());
        }
      }
    }
    for (double f : fractions) {
      if (!(f > 0.0 && f <= 1.0)) config_error("fraction " + format_double(f) + " outside (0, 1]");
    }
    if (fractions.empty()) config_error("fractions must be non-empty");
    for (int b : bits) {
      if (b != 32 && b != 8 && b != 4) config_error("bits must be 32, 8 or 4");
    }
    for (int k : drop_k) {
      if (k != 1 && k != 2) config_error("drop_k entries must be 1 or 2");
    }
    if (modalities.empty()) config_error("modalities must be non-empty");
    if (eval_batch_size == 0) config_error("eval_batch_size must be >= 1");
    if (jobs < 1) config_error("jobs must be >= 1");
    if (baselines.knn_k < 1) config_error("knn_k must be >= 1");
    model.validate();
    lora.validate();
    source_train.validate();
    adapt_train.validate();
    const bool needs_target = kind == ExperimentKind::FewshotSweep;
    if (needs_target || !target.empty()) {
      if (!names.contains(target)) config_error("target '" + target + "' is not a configured environment");
    }
    if (kind == ExperimentKind::FewshotSweep && environments.size() < 2) {
      config_error("fewshot_sweep needs at least one source environment besides the target");
    }
    if ((kind == ExperimentKind::Adapt || kind == ExperimentKind::Evaluate) && !checkpoint) {
      config_error(std::string(kind_name(kind)) + " needs a backbone checkpoint");
    }
    for (const auto& p : {checkpoint, adapter_checkpoint}) {
      if (p && !fs::exists(*p)) config_error("checkpoint not found: " + p->string());
    }
  } catch (const Error& e) {
    if (e.code() == Errc::ConfigError) throw;
    config_error(e.what());
  }
}

// ---------------------------------------------------------------------------
// Running

namespace {

struct LoadedEnv {
  std::string name;
  DatasetSplit data;
  std::vector<Position> truths;
};

std::vector<LoadedEnv> load_environments(const ExperimentConfig& cfg) {
  std::vector<LoadedEnv> out;
  for (const auto& src : cfg.environments) {
    LoadedEnv env;
    env.name = src.name;
    env.data = src.spec ? gen_dataset(*src.spec, cfg.data_seed)
                        : ingest_dataset(src.train_csv, src.test_csv, src.format);
    for (const auto& s : env.data.test) env.truths.push_back(s.position);
    out.push_back(std::move(env));
  }
  return out;
}

int max_ap_id(const std::vector<LoadedEnv>& envs) {
  int m = 1;
  for (const auto& e : envs) {
    for (const auto* split : {&e.data.train, &e.data.test}) {
      for (const auto& s : *split) {
        for (const auto& r : s.readings) m = std::max(m, r.ap_id);
      }
    }
  }
  return m;
}

std::string join_aps(const std::set<int>& aps) {
  std::string out;
  for (int a : aps) {
    if (!out.empty()) out += ';';
    out += std::to_string(a);
  }
  return out;
}

std::string safe_name(std::string s) {
  for (auto& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '.') c = '_';
  }
  return s;
}

/// Shared state of one run: output paths, logs, and the single writer.
class Run {
 public:
  explicit Run(const ExperimentConfig& cfg) : cfg_(cfg) {
    fs::create_directories(cfg.output_dir);
    if (cfg.save_checkpoints) fs::create_directories(cfg.output_dir / "checkpoints");
    fs::create_directories(cfg.output_dir / "logs");
  }

  const ExperimentConfig& cfg() const { return cfg_; }

  void save_log(const std::string& name, const TrainLog& log) {
    const auto path = cfg_.output_dir / "logs" / (safe_name(name) + ".jsonl");
    std::ofstream out(path);
    log.write_jsonl(out);
    std::lock_guard lock(mu_);
    artifacts_.push_back(path);
    logs_[name] = log;
  }

  void save_tensors(const std::string& name, const std::vector<nn::NamedTensor>& tensors) {
    if (!cfg_.save_checkpoints) return;
    const auto path = cfg_.output_dir / "checkpoints" / (safe_name(name) + ".ckpt");
    nn::save_checkpoint(path, tensors);
    std::lock_guard lock(mu_);
    artifacts_.push_back(path);
  }

  std::vector<fs::path> artifacts() const { return artifacts_; }
  const std::map<std::string, TrainLog>& logs() const { return logs_; }

 private:
  const ExperimentConfig& cfg_;
  std::mutex mu_;
  std::vector<fs::path> artifacts_;
  std::map<std::string, TrainLog> logs_;
};

EvalReport make_report(RunFingerprint fp, std::span<const Position> preds,
                       std::span<const Position> truths, const ParameterCount& counts,
                       std::size_t memory_bytes) {
  EvalReport r;
  r.run = std::move(fp);
  r.errors = summarize(distance_errors(preds, truths));
  r.total_params = counts.total;
  r.trainable_params = counts.trainable;
  r.weight_memory_bytes = memory_bytes;
  return r;
}

EvalReport evaluate_model(const Model& model, RunFingerprint fp, const LoadedEnv& env,
                          const AblationSpec& spec, const Vocab& vocab, std::size_t batch) {
  const auto preds = predict(model, env.data.test, spec, vocab, batch);
  return make_report(std::move(fp), preds, env.truths, count_parameters(model),
                     weight_memory(model).total());
}

/// Runs `fn` with numeric and data errors re-labelled by condition.
template <class Fn>
auto labelled(const std::string& condition, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.code(), condition + ": " + e.what(), e.offset());
  }
}

Model init_backbone(const ExperimentConfig& cfg, const ModelConfig& mc) {
  Model m = Model::init(mc, cfg.init_seed);
  if (cfg.checkpoint) m.import_tensors(nn::load_checkpoint(*cfg.checkpoint));
  return m;
}

/// Backbone from the configured checkpoint, or full-trained on `sources`.
Model obtain_backbone(Run& run, const ModelConfig& mc, std::span<const TelemetrySample> sources,
                      const Vocab& vocab) {
  const auto& cfg = run.cfg();
  if (cfg.checkpoint) return init_backbone(cfg, mc);
  Model m = Model::init(mc, cfg.init_seed);
  auto log = labelled("backbone", [&] { return train(m, sources, AblationSpec{}, vocab, cfg.source_train); });
  run.save_log("backbone", log);
  run.save_tensors("backbone", m.export_tensors(true));
  return m;
}

Model adapt_copy(Run& run, const Model& backbone, std::span<const TelemetrySample> data,
                 const AblationSpec& spec, const Vocab& vocab, std::uint64_t seed,
                 const std::string& name) {
  const auto& cfg = run.cfg();
  Model m = attach_lora(backbone, cfg.lora, seed);
  TrainConfig tc = cfg.adapt_train;
  tc.seed = seed;
  const auto log = train(m, data, spec, vocab, tc);
  run.save_log(name, log);
  run.save_tensors(name, m.export_tensors(false));
  return m;
}

std::vector<TelemetrySample> pooled_train(const std::vector<LoadedEnv>& envs,
                                          std::optional<std::size_t> skip = std::nullopt) {
  std::vector<TelemetrySample> out;
  for (std::size_t i = 0; i < envs.size(); ++i) {
    if (skip && *skip == i) continue;
    out.insert(out.end(), envs[i].data.train.begin(), envs[i].data.train.end());
  }
  return out;
}

/// Appends, after the per-seed rows, one seed-mean row per group of reports
/// sharing everything in the fingerprint but the seed.
std::vector<EvalReport> with_seed_means(std::vector<EvalReport> rows) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<EvalReport>> groups;
  for (const auto& r : rows) {
    EvalReport key_report = r;
    key_report.run.seed.reset();
    const std::string key = csv_row(EvalReport{key_report.run, {}, 0, 0, 0, {}, {}, {}});
    if (!groups.contains(key)) order.push_back(key);
    groups[key].push_back(r);
  }
  for (const auto& key : order) {
    const auto& g = groups[key];
    if (g.size() > 1 || g.front().run.seed) rows.push_back(mean_report(g));
  }
  return rows;
}

struct Baselines {
  std::optional<KnnRegressor> knn;
  std::optional<MlpRegressor> mlp;
};

Baselines fit_baselines(const ExperimentConfig& cfg, std::span<const TelemetrySample> train,
                        const FeatureSchema& schema, std::uint64_t seed) {
  Baselines b;
  if (cfg.baselines.knn) {
    const int k = std::min<int>(cfg.baselines.knn_k, static_cast<int>(train.size()));
    b.knn = KnnRegressor::fit(train, schema, k);
  }
  if (cfg.baselines.mlp) {
    MlpConfig mc = cfg.baselines.mlp_cfg;
    mc.seed = seed;
    b.mlp = MlpRegressor::fit(train, schema, mc);
  }
  return b;
}

std::vector<TelemetrySample> ablated(std::span<const TelemetrySample> samples, const AblationSpec& spec) {
  std::vector<TelemetrySample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(apply_ablation(s, spec));
  return out;
}

void baseline_rows(const Baselines& b, const RunFingerprint& base, std::span<const TelemetrySample> test,
                   std::span<const Position> truths, std::vector<EvalReport>& out) {
  if (b.knn) {
    RunFingerprint fp = base;
    fp.method = "knn";
    out.push_back(make_report(fp, b.knn->predict(test), truths, {}, 0));
  }
  if (b.mlp) {
    RunFingerprint fp = base;
    fp.method = "mlp";
    out.push_back(make_report(fp, b.mlp->predict(test), truths, {}, 0));
  }
}

// A unit of work whose reports land at a fixed slot, so output order does
// not depend on scheduling.
using Task = std::function<std::vector<EvalReport>()>;

std::vector<EvalReport> run_tasks(const std::vector<Task>& tasks, int jobs) {
  std::vector<std::vector<EvalReport>> slots(tasks.size());
  parallel_for(tasks.size(), jobs, [&](std::size_t i) { slots[i] = tasks[i](); });
  std::vector<EvalReport> out;
  for (auto& s : slots) {
    for (auto& r : s) out.push_back(std::move(r));
  }
  return out;
}

std::vector<EvalReport> run_train(Run& run, const std::vector<LoadedEnv>& envs, const ModelConfig& mc,
                                  const Vocab& vocab) {
  const auto& cfg = run.cfg();
  const auto pooled = pooled_train(envs);
  std::vector<Task> tasks;
  for (auto seed : cfg.seeds) {
    tasks.push_back([&, seed] {
      const std::string cond = "full_seed" + std::to_string(seed);
      return labelled(cond, [&] {
        Model m = Model::init(mc, seed);
        TrainConfig tc = cfg.source_train;
        tc.seed = seed;
        run.save_log(cond, train(m, pooled, AblationSpec{}, vocab, tc));
        run.save_tensors("backbone_seed" + std::to_string(seed), m.export_tensors(true));
        std::vector<EvalReport> rows;
        for (const auto& env : envs) {
          RunFingerprint fp{.kind = "train", .condition = "full", .environment = env.name, .seed = seed};
          fp.n_train = pooled.size();
          rows.push_back(evaluate_model(m, fp, env, {}, vocab, cfg.eval_batch_size));
        }
        return rows;
      });
    });
  }
  return with_seed_means(run_tasks(tasks, cfg.jobs));
}

std::size_t env_index(const std::vector<LoadedEnv>& envs, const std::string& name) {
  for (std::size_t i = 0; i < envs.size(); ++i) {
    if (envs[i].name == name) return i;
  }
  fail(Errc::BadTarget, "unknown environment '" + name + "'");
}

std::vector<EvalReport> run_adapt(Run& run, const std::vector<LoadedEnv>& envs, const ModelConfig& mc,
                                  const Vocab& vocab) {
  const auto& cfg = run.cfg();
  const auto& env = envs[cfg.target.empty() ? 0 : env_index(envs, cfg.target)];
  const Model backbone = init_backbone(cfg, mc);
  std::vector<Task> tasks;
  for (double fraction : cfg.fractions) {
    for (auto seed : cfg.seeds) {
      tasks.push_back([&, fraction, seed] {
        const std::string cond = "adapt_" + env.name + "_f" + format_double(fraction) + "_seed" + std::to_string(seed);
        return labelled(cond, [&] {
          const auto subset = few_shot_subset(env.data.train, fraction, seed);
          const Model m = adapt_copy(run, backbone, subset, {}, vocab, seed, cond);
          RunFingerprint fp{.kind = "adapt", .condition = "lora", .environment = env.name, .seed = seed};
          fp.fraction = fraction;
          fp.n_train = subset.size();
          return std::vector{evaluate_model(m, fp, env, {}, vocab, cfg.eval_batch_size)};
        });
      });
    }
  }
  return with_seed_means(run_tasks(tasks, cfg.jobs));
}

std::vector<EvalReport> run_evaluate(Run& run, const std::vector<LoadedEnv>& envs, const ModelConfig& mc,
                                     const Vocab& vocab) {
  const auto& cfg = run.cfg();
  Model m = init_backbone(cfg, mc);
  if (cfg.adapter_checkpoint) {
    m.attach_lora(cfg.lora, 0);
    m.import_tensors(nn::load_checkpoint(*cfg.adapter_checkpoint));
  }
  std::vector<EvalReport> rows;
  for (const auto& env : envs) {
    for (auto mod : cfg.modalities) {
      RunFingerprint fp{.kind = "evaluate", .condition = m.adapted() ? "lora" : "full", .environment = env.name};
      fp.modality = modality_name(mod);
      rows.push_back(labelled(env.name, [&] {
        return evaluate_model(m, fp, env, AblationSpec{.modality = mod}, vocab, cfg.eval_batch_size);
      }));
    }
  }
  return rows;
}

std::vector<EvalReport> run_fewshot(Run& run, const std::vector<LoadedEnv>& envs, const ModelConfig& mc,
                                    const Vocab& vocab) {
  const auto& cfg = run.cfg();
  const std::size_t target = env_index(envs, cfg.target);
  const auto& env = envs[target];
  const Model backbone = obtain_backbone(run, mc, pooled_train(envs, target), vocab);
  const auto schema = make_schema(env.data.train, Modality::Both);

  std::vector<Task> tasks;
  for (double fraction : cfg.fractions) {
    for (auto seed : cfg.seeds) {
      tasks.push_back([&, fraction, seed] {
        const std::string cond = "fewshot_" + env.name + "_f" + format_double(fraction) + "_seed" + std::to_string(seed);
        return labelled(cond, [&] {
          const auto subset = few_shot_subset(env.data.train, fraction, seed);
          const Model m = adapt_copy(run, backbone, subset, {}, vocab, seed, cond);
          RunFingerprint fp{.kind = "fewshot_sweep", .condition = "transfer", .environment = env.name, .seed = seed};
          fp.fraction = fraction;
          fp.n_train = subset.size();
          std::vector<EvalReport> rows{evaluate_model(m, fp, env, {}, vocab, cfg.eval_batch_size)};
          baseline_rows(fit_baselines(cfg, subset, schema, seed), fp, env.data.test, env.truths, rows);
          return rows;
        });
      });
    }
  }
  return with_seed_means(run_tasks(tasks, cfg.jobs));
}

std::vector<EvalReport> run_telemetry(Run& run, const std::vector<LoadedEnv>& envs, const ModelConfig& mc,
                                      const Vocab& vocab) {
  const auto& cfg = run.cfg();
  const Model backbone = obtain_backbone(run, mc, pooled_train(envs), vocab);
  std::vector<Task> tasks;
  for (const auto& env : envs) {
    for (auto mod : cfg.modalities) {
      for (auto seed : cfg.seeds) {
        tasks.push_back([&, mod, seed] {
          const std::string cond = "telemetry_" + env.name + "_" + std::string(modality_name(mod)) + "_seed" +
                                   std::to_string(seed);
          return labelled(cond, [&] {
            const AblationSpec spec{.modality = mod};
            const Model m = adapt_copy(run, backbone, env.data.train, spec, vocab, seed, cond);
            RunFingerprint fp{.kind = "telemetry_ablation", .condition = "modality", .environment = env.name, .seed = seed};
            fp.modality = modality_name(mod);
            fp.n_train = env.data.train.size();
            std::vector<EvalReport> rows{evaluate_model(m, fp, env, spec, vocab, cfg.eval_batch_size)};
            if (cfg.baselines.knn || cfg.baselines.mlp) {
              const auto train_ab = ablated(env.data.train, spec);
              const auto schema = make_schema(train_ab, mod);
              baseline_rows(fit_baselines(cfg, train_ab, schema, seed), fp, ablated(env.data.test, spec),
                            env.truths, rows);
            }
            return rows;
          });
        });
      }
    }
  }
  return with_seed_means(run_tasks(tasks, cfg.jobs));
}

/// Mean over drop sets of the seed-mean rows for each (environment, k, method).
std::vector<EvalReport> rotation_means(const std::vector<EvalReport>& rows) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<EvalReport>> groups;
  for (const auto& r : rows) {
    if (!r.run.seed_mean) continue;
    const std::string key = r.run.environment + '\n' + r.run.condition + '\n' + r.run.method;
    if (!groups.contains(key)) order.push_back(key);
    groups[key].push_back(r);
  }
  std::vector<EvalReport> out;
  for (const auto& key : order) {
    EvalReport m = mean_report(groups[key]);
    m.run.dropped_aps = "rotation_mean";
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<EvalReport> run_ap_ablation(Run& run, const std::vector<LoadedEnv>& envs, const ModelConfig& mc,
                                        const Vocab& vocab) {
  const auto& cfg = run.cfg();
  const Model backbone = obtain_backbone(run, mc, pooled_train(envs), vocab);
  std::vector<Task> tasks;
  for (const auto& env : envs) {
    for (auto seed : cfg.seeds) {
      tasks.push_back([&, seed] {
        const std::string cond = "ap_" + env.name + "_seed" + std::to_string(seed);
        return labelled(cond, [&] {
          const Model m = adapt_copy(run, backbone, env.data.train, {}, vocab, seed, cond);
          const auto schema = make_schema(env.data.train, Modality::Both);
          const auto base = fit_baselines(cfg, env.data.train, schema, seed);
          std::vector<EvalReport> rows;
          for (int k : cfg.drop_k) {
            // Fewer than three remaining APs cannot trilaterate; such drop sizes are skipped.
            if (env.data.ap_universe.size() < static_cast<std::size_t>(k) + 3) continue;
            for (const auto& dropped : ap_drop_schedule(env.data.ap_universe, k)) {
              const AblationSpec spec{.dropped_aps = dropped};
              RunFingerprint fp{.kind = "ap_ablation", .condition = "drop" + std::to_string(k),
                                .environment = env.name, .seed = seed};
              fp.dropped_aps = join_aps(dropped);
              fp.n_train = env.data.train.size();
              rows.push_back(evaluate_model(m, fp, env, spec, vocab, cfg.eval_batch_size));
              baseline_rows(base, fp, ablated(env.data.test, spec), env.truths, rows);
            }
          }
          return rows;
        });
      });
    }
  }
  auto rows = with_seed_means(run_tasks(tasks, cfg.jobs));
  for (auto& r : rotation_means(rows)) rows.push_back(std::move(r));
  return rows;
}

std::vector<EvalReport> run_quantize(Run& run, const std::vector<LoadedEnv>& envs, const ModelConfig& mc,
                                     const Vocab& vocab, json& table) {
  const auto& cfg = run.cfg();
  const Model backbone = obtain_backbone(run, mc, pooled_train(envs), vocab);
  std::vector<Task> tasks;
  std::mutex table_mu;
  std::map<std::size_t, json> table_rows;
  std::size_t slot = 0;
  for (const auto& env : envs) {
    for (auto seed : cfg.seeds) {
      const std::size_t my_slot = slot++;
      tasks.push_back([&, seed, my_slot] {
        const std::string cond = "quant_" + env.name + "_seed" + std::to_string(seed);
        return labelled(cond, [&] {
          const Model m = adapt_copy(run, backbone, env.data.train, {}, vocab, seed, cond);
          std::vector<EvalReport> rows;
          json trows = json::array();
          for (int bits : cfg.bits) {
            RunFingerprint fp{.kind = "quantize_sweep", .condition = "bits" + std::to_string(bits),
                              .environment = env.name, .seed = seed};
            fp.quant_bits = bits;
            fp.n_train = env.data.train.size();
            EvalReport r;
            WeightMemory mem;
            if (bits == 32) {
              r = evaluate_model(m, fp, env, {}, vocab, cfg.eval_batch_size);
              mem = weight_memory(m);
              if (cfg.measure_throughput) {
                r.throughput = measure_throughput(m, env.data.test, {}, vocab, cfg.eval_batch_size);
              }
            } else {
              const auto q = quantize_backbone(m, bits);
              const auto preds = predict(q, env.data.test, {}, vocab, cfg.eval_batch_size);
              mem = weight_memory(q);
              r = make_report(fp, preds, env.truths, count_parameters(m), mem.total());
              if (cfg.measure_throughput) {
                r.throughput = measure_throughput(q, env.data.test, {}, vocab, cfg.eval_batch_size);
              }
            }
            rows.push_back(r);
            trows.push_back({{"environment", env.name},
                             {"seed", seed},
                             {"bits", bits},
                             {"mae", r.errors.mae},
                             {"rmse", r.errors.rmse},
                             {"p95", r.errors.p95},
                             {"throughput", r.throughput ? json(*r.throughput) : json(nullptr)},
                             {"backbone_bytes", mem.backbone},
                             {"weight_memory_bytes", mem.total()}});
          }
          std::lock_guard lock(table_mu);
          table_rows[my_slot] = std::move(trows);
          return rows;
        });
      });
    }
  }
  auto rows = with_seed_means(run_tasks(tasks, cfg.jobs));
  table = json::array();
  for (auto& [_, t] : table_rows) {
    for (auto& row : t) table.push_back(std::move(row));
  }
  return rows;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  out << text;
  if (!out) fail(Errc::IoError, "write failed for " + path.string());
}

std::string results_csv(const std::vector<EvalReport>& reports) {
  std::string out = csv_header() + '\n';
  for (const auto& r : reports) out += csv_row(r) + '\n';
  return out;
}

void write_quantization_table(const fs::path& path, const json& table) {
  std::string out = "environment,seed,bits,mae,rmse,p95,throughput,backbone_bytes,weight_memory_bytes\n";
  for (const auto& r : table) {
    out += r.at("environment").get<std::string>() + ',' + std::to_string(r.at("seed").get<std::uint64_t>()) +
           ',' + std::to_string(r.at("bits").get<int>()) + ',' + format_double(r.at("mae").get<double>()) + ',' +
           format_double(r.at("rmse").get<double>()) + ',' + format_double(r.at("p95").get<double>()) + ',' +
           (r.at("throughput").is_null() ? std::string() : format_double(r.at("throughput").get<double>())) +
           ',' + std::to_string(r.at("backbone_bytes").get<std::size_t>()) + ',' +
           std::to_string(r.at("weight_memory_bytes").get<std::size_t>()) + '\n';
  }
  write_text(path, out);
}

}  // namespace

std::vector<fs::path> simulate_environments(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  std::vector<fs::path> written;
  json manifest = {{"code_version", code_version()}, {"data_seed", cfg.data_seed}, {"environments", json::array()}};
  for (const auto& src : cfg.environments) {
    if (!src.spec) config_error("simulate needs a preset or custom spec for '" + src.name + "'");
    const auto split = gen_dataset(*src.spec, cfg.data_seed);
    const auto train_path = cfg.output_dir / (safe_name(src.name) + "_train.csv");
    const auto test_path = cfg.output_dir / (safe_name(src.name) + "_test.csv");
    write_ftm_rssi_csv(train_path, split.train, src.spec->n_aps());
    write_ftm_rssi_csv(test_path, split.test, src.spec->n_aps());
    written.push_back(train_path);
    written.push_back(test_path);
    manifest["environments"].push_back({{"spec", *src.spec},
                                        {"train_csv", train_path.filename().string()},
                                        {"test_csv", test_path.filename().string()},
                                        {"train_samples", split.train.size()},
                                        {"test_samples", split.test.size()}});
  }
  const auto manifest_path = cfg.output_dir / "environments.json";
  write_text(manifest_path, manifest.dump(2) + '\n');
  written.push_back(manifest_path);
  return written;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult result;
  if (cfg.kind == ExperimentKind::Simulate) {
    result.artifacts = simulate_environments(cfg);
    return result;
  }

  Run run(cfg);
  json manifest = cfg.to_json();
  manifest["code_version"] = code_version();
  write_text(cfg.output_dir / "manifest.json", manifest.dump(2) + '\n');

  const auto envs = load_environments(cfg);
  const Vocab vocab = build_vocab(std::max(16, max_ap_id(envs)));
  ModelConfig mc = cfg.model;
  mc.vocab_size = static_cast<int>(vocab.size());

  json quant_table;
  switch (cfg.kind) {
    case ExperimentKind::Train: result.reports = run_train(run, envs, mc, vocab); break;
    case ExperimentKind::Adapt: result.reports = run_adapt(run, envs, mc, vocab); break;
    case ExperimentKind::Evaluate: result.reports = run_evaluate(run, envs, mc, vocab); break;
    case ExperimentKind::FewshotSweep: result.reports = run_fewshot(run, envs, mc, vocab); break;
    case ExperimentKind::TelemetryAblation: result.reports = run_telemetry(run, envs, mc, vocab); break;
    case ExperimentKind::ApAblation: result.reports = run_ap_ablation(run, envs, mc, vocab); break;
    case ExperimentKind::QuantizeSweep: result.reports = run_quantize(run, envs, mc, vocab, quant_table); break;
    case ExperimentKind::Simulate: break;
  }

  write_text(cfg.output_dir / "results.csv", results_csv(result.reports));
  json logs = json::object();
  for (const auto& [name, log] : run.logs()) {
    json epochs = json::array();
    for (const auto& e : log.epochs) {
      epochs.push_back({{"epoch", e.epoch}, {"loss", e.mean_loss}, {"seconds", e.seconds}, {"steps", e.steps}});
    }
    logs[name] = {{"epochs", epochs}, {"steps", log.steps}, {"seconds", log.seconds},
                  {"trainable_fraction", log.trainable_fraction}};
  }
  json report = {{"code_version", code_version()}, {"reports", result.reports}, {"train_logs", logs}};
  if (!quant_table.is_null()) {
    report["quantization"] = quant_table;
    write_quantization_table(cfg.output_dir / "quantization.csv", quant_table);
    result.artifacts.push_back(cfg.output_dir / "quantization.csv");
  }
  write_text(cfg.output_dir / "report.json", report.dump(2) + '\n');

  result.artifacts.push_back(cfg.output_dir / "manifest.json");
  result.artifacts.push_back(cfg.output_dir / "results.csv");
  result.artifacts.push_back(cfg.output_dir / "report.json");
  for (auto& p : run.artifacts()) result.artifacts.push_back(p);
  return result;
}

std::vector<EvalReport> rerender_report(const fs::path& dir) {
  std::ifstream in(dir / "report.json");
  if (!in) fail(Errc::IoError, "no report.json in " + dir.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(Errc::DataError, "report.json: " + std::string(e.what()));
  }
  std::vector<EvalReport> reports;
  try {
    reports = j.at("reports").get<std::vector<EvalReport>>();
  } catch (const json::exception& e) {
    fail(Errc::DataError, "report.json: " + std::string(e.what()));
  }
  write_text(dir / "results.csv", results_csv(reports));
  if (j.contains("quantization")) write_quantization_table(dir / "quantization.csv", j.at("quantization"));
  return reports;
}

}  // namespace locaris
