#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "locaris/model.hpp"
#include "locaris/ops.hpp"
#include "locaris/optim.hpp"
#include "locaris/simulator.hpp"
#include "locaris/training.hpp"

using namespace locaris;

namespace {

nn::Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  std::vector<double> v(r * c);
  for (auto& x : v) x = n(rng);
  return nn::Tensor({r, c}, std::move(v));
}

struct Fixture {
  Vocab vocab = build_vocab();
  Model model = Model::init(config(vocab), 0);
  Batch batch;

  static ModelConfig config(const Vocab& vocab) {
    ModelConfig mc;
    mc.d_model = 64;
    mc.n_layers = 2;
    mc.n_heads = 4;
    mc.vocab_size = vocab.size();
    return mc;
  }

  explicit Fixture(std::size_t batch_size) {
    const auto data = gen_dataset(preset("office"), 0).train;
    std::vector<TokenSequence> seqs;
    std::vector<Position> targets;
    for (std::size_t i = 0; i < batch_size; ++i) {
      const auto e = encode_samples(std::span(data).subspan(i, 1), {}, vocab).front();
      seqs.push_back(e.tokens);
      targets.push_back(e.target);
    }
    batch = pad_batch(seqs, targets, vocab.pad_id());
  }
};

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  nn::NoGradScope no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(nn::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256)->Arg(512);

void BM_Forward(benchmark::State& state) {
  Fixture f(static_cast<std::size_t>(state.range(0)));
  nn::NoGradScope no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(f.model.forward(f.batch).predictions);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(16)->Arg(64);

void BM_TrainStep(benchmark::State& state) {
  Fixture f(16);
  if (state.range(0) == 1) f.model = attach_lora(f.model, LoraConfig{}, 1);
  const auto params = f.model.trainable_parameters();
  auto opt = nn::AdamWState::for_params(params);
  for (auto _ : state) {
    nn::Tape tape;
    nn::TapeScope scope(tape);
    for (const auto& p : params) p.zero_grad();
    const auto loss = nn::mse_loss(f.model.forward(f.batch).predictions, f.batch.targets);
    tape.backward(loss);
    nn::adamw_step(params, opt);
  }
  state.SetLabel(state.range(0) == 1 ? "lora" : "full");
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
