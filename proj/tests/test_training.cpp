#include <doctest.h>

#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "locaris/digest.hpp"
#include "locaris/error.hpp"
#include "locaris/ops.hpp"
#include "locaris/simulator.hpp"
#include "locaris/training.hpp"

using namespace locaris;
using namespace locaris::test;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected locaris::Error");
  return Errc::Empty;
}

std::string digest_group(const Model& m, bool backbone) {
  std::string bytes;
  for (const auto& p : m.named_parameters()) {
    if ((p.group == ParamGroup::Backbone) != backbone) continue;
    bytes += p.name;
    const auto v = p.tensor.values();
    bytes.append(reinterpret_cast<const char*>(v.data()), v.size_bytes());
  }
  return sha256_hex(bytes);
}

std::vector<TelemetrySample> random_set(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TelemetrySample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_sample(rng, 3));
  return out;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("mse loss examples") {
  const nn::Tensor p({1, 2}, 0.0);
  CHECK(regression_loss(p, std::vector<Position>{{3, 4}}).item() == 25.0);
  CHECK(regression_loss(nn::Tensor({1, 2}, std::vector<double>{3, 4}), std::vector<Position>{{3, 4}}).item() == 0.0);
  CHECK(regression_loss(nn::Tensor({2, 2}, 0.0), std::vector<Position>{{3, 4}, {0, 0}}).item() == 12.5);
  CHECK(code_of([&] { regression_loss(p, std::vector<Position>{{1, 1}, {2, 2}}); }) == Errc::ShapeMismatch);
}

TEST_CASE("overfit one sample in full mode") {
  const Vocab v = build_vocab();
  Model m = Model::init(tiny_config(16, 1, 2), 1);
  const auto data = random_set(1, 2);
  TrainConfig cfg{.mode = TrainMode::Full, .lr = 3e-3, .batch_size = 1, .epochs = 200, .seed = 0, .weight_decay = 0.0};
  const auto log = train(m, data, {}, v, cfg);
  CHECK(log.steps == 200);
  // Recorded at this seed: 4.4e-3 m^2.
  CHECK(log.epochs.back().mean_loss < 1e-2);
  CHECK(log.trainable_fraction == 1.0);
}

TEST_CASE("training is bitwise deterministic") {
  const Vocab v = build_vocab();
  const auto data = random_set(20, 3);
  auto run = [&] {
    Model m = attach_lora(Model::init(tiny_config(), 4), LoraConfig{.rank = 2}, 5);
    TrainConfig cfg{.mode = TrainMode::Lora, .lr = 1e-3, .batch_size = 4, .epochs = 2, .seed = 9};
    const auto log = train(m, data, {}, v, cfg);
    std::vector<double> losses;
    for (const auto& e : log.epochs) losses.push_back(e.mean_loss);
    return std::pair{losses, digest_group(m, false)};
  };
  CHECK(run() == run());
}

TEST_CASE("lora mode leaves the backbone bitwise unchanged") {
  const Vocab v = build_vocab();
  Model m = attach_lora(Model::init(tiny_config(), 6), LoraConfig{.rank = 2}, 7);
  const std::string before = digest_group(m, true), head_before = digest_group(m, false);
  const auto data = random_set(24, 8);
  train(m, data, {}, v, {.mode = TrainMode::Lora, .lr = 1e-2, .batch_size = 4, .epochs = 2, .weight_decay = 0.1});
  CHECK(digest_group(m, true) == before);
  CHECK(digest_group(m, false) != head_before);
}

TEST_CASE("training never mutates its inputs") {
  const Vocab v = build_vocab();
  const auto data = random_set(10, 10);
  const auto copy = data;
  const Vocab vcopy = v;
  Model m = Model::init(tiny_config(), 1);
  train(m, data, {.modality = Modality::FtmOnly}, v, {.batch_size = 3, .epochs = 1});
  CHECK(data == copy);
  CHECK(v == vcopy);
}

TEST_CASE("first step lowers the loss on a fixed batch") {
  const Vocab v = build_vocab();
  Model m = Model::init(tiny_config(), 11);
  const auto data = random_set(4, 12);
  auto loss_now = [&] {
    nn::NoGradScope ng;
    const auto enc = encode_samples(data, {}, v);
    std::vector<TokenSequence> seqs;
    std::vector<Position> t;
    for (const auto& e : enc) {
      seqs.push_back(e.tokens);
      t.push_back(e.target);
    }
    return regression_loss(m.forward(pad_batch(seqs, t, v.pad_id())).predictions, t).item();
  };
  const double before = loss_now();
  train(m, data, {}, v, {.lr = 1e-3, .batch_size = 4, .epochs = 1, .weight_decay = 0.0});
  CHECK(loss_now() < before);
}

TEST_CASE("mode and dataset errors") {
  const Vocab v = build_vocab();
  const auto data = random_set(3, 1);
  Model base = Model::init(tiny_config(), 1);
  CHECK(code_of([&] { train(base, data, {}, v, {.mode = TrainMode::Lora}); }) == Errc::NotAdapted);
  CHECK(code_of([&] { train(base, {}, {}, v, {}); }) == Errc::EmptyDataset);
  Model adapted = attach_lora(base, LoraConfig{}, 0);
  CHECK(code_of([&] { train(adapted, data, {}, v, {.mode = TrainMode::Full}); }) == Errc::InvalidConfig);
  CHECK(code_of([&] { train(base, data, {}, v, {.batch_size = 0}); }) == Errc::InvalidConfig);
  CHECK(code_of([&] { train(base, data, {}, v, {.epochs = 0}); }) == Errc::InvalidConfig);
}

TEST_CASE("max_steps caps training and the log serializes as JSON lines") {
  const Vocab v = build_vocab();
  Model m = Model::init(tiny_config(), 2);
  const auto data = random_set(10, 2);
  const auto log = train(m, data, {}, v, {.batch_size = 2, .epochs = 10, .max_steps = 7});
  CHECK(log.steps == 7);
  CHECK(log.epochs.size() == 2);
  std::ostringstream os;
  log.write_jsonl(os);
  std::istringstream is(os.str());
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("epoch"));
    CHECK(j.contains("loss"));
    CHECK(j.contains("seconds"));
    ++n;
  }
  CHECK(n == 2);
}

TEST_CASE("learning-rate schedules") {
  TrainConfig c{.lr = 1.0};
  CHECK(c.lr_at(0, 100) == 1.0);
  CHECK(c.lr_at(99, 100) == 1.0);
  c.schedule = LrSchedule::Cosine;
  c.warmup_steps = 10;
  CHECK(c.lr_at(0, 110) == doctest::Approx(0.1));
  CHECK(c.lr_at(9, 110) == doctest::Approx(1.0));
  CHECK(c.lr_at(10, 110) == doctest::Approx(1.0));
  CHECK(c.lr_at(60, 110) == doctest::Approx(0.5));
  CHECK(c.lr_at(109, 110) < 1e-3);
  const nlohmann::json j = c;
  CHECK(j.get<TrainConfig>().schedule == LrSchedule::Cosine);
  CHECK(j.get<TrainConfig>().warmup_steps == 10);
}

TEST_CASE("few_shot_subset") {
  const auto data = random_set(50, 1);
  CHECK(few_shot_subset(data, 1.0, 3) == data);
  const auto a = few_shot_subset(data, 0.3, 7), b = few_shot_subset(data, 0.3, 7), c = few_shot_subset(data, 0.3, 8);
  CHECK(a.size() == 15);
  CHECK(a == b);
  CHECK(a != c);
  // Subset keeps dataset order.
  std::size_t pos = 0;
  for (const auto& s : a) {
    while (pos < data.size() && !(data[pos] == s)) ++pos;
    CHECK(pos < data.size());
  }
  CHECK(few_shot_subset(data, 0.001, 1).size() == 1);
  for (double bad : {0.0, -0.1, 1.5}) CHECK(code_of([&] { few_shot_subset(data, bad, 0); }) == Errc::BadFraction);
  const auto lecture = gen_dataset(preset("lecture"), 0);
  CHECK(few_shot_subset(lecture.train, 0.03, 0).size() == 158);
  CHECK(few_shot_subset(lecture.train, 0.01, 0).size() == 52);
}

TEST_CASE("parallel_for runs every index and propagates errors") {
  std::vector<int> hit(37, 0);
  parallel_for(hit.size(), 4, [&](std::size_t i) { hit[i] += 1; });
  CHECK(std::all_of(hit.begin(), hit.end(), [](int h) { return h == 1; }));
  CHECK(code_of([] {
    parallel_for(5, 2, [](std::size_t i) {
      if (i == 3) fail(Errc::NonFinite, "boom");
    });
  }) == Errc::NonFinite);
}

TEST_CASE("cross-environment protocol wiring") {
  const Vocab v = build_vocab();
  std::vector<DatasetSplit> envs;
  for (auto name : kPresetNames) {
    auto spec = preset(name);
    spec.samples_per_rp = 2;
    auto split = gen_dataset(spec, 1);
    split.train.resize(40);
    split.test.resize(20);
    envs.push_back(std::move(split));
  }
  CrossEnvConfig cfg;
  cfg.model = tiny_config();
  cfg.lora = {.rank = 2};
  cfg.source_train = {.lr = 1e-3, .batch_size = 8, .epochs = 1};
  cfg.adapt_train = {.mode = TrainMode::Lora, .lr = 1e-3, .batch_size = 8, .epochs = 1};
  const std::vector<double> fractions{0.1, 1.0};
  const std::vector<std::uint64_t> seeds{0, 1};
  const auto res = cross_env_protocol(envs, 2, fractions, seeds, v, cfg);
  REQUIRE(res.runs.size() == 4);
  CHECK(res.runs[0].n_train == 4);
  CHECK(res.runs[3].n_train == 40);
  CHECK(res.runs[1].seed == 1);
  CHECK(res.mean_mae_by_fraction.size() == 2);
  CHECK(res.mean_mae_by_fraction[1] == doctest::Approx((res.runs[2].mae + res.runs[3].mae) / 2));
  CHECK(code_of([&] { cross_env_protocol(envs, 3, fractions, seeds, v, cfg); }) == Errc::BadTarget);
  CHECK(code_of([&] { cross_env_protocol(std::span(envs).first(1), 0, fractions, seeds, v, cfg); }) == Errc::BadTarget);
}

}
