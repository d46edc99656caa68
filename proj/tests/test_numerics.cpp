#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "locaris/checkpoint.hpp"
#include "locaris/error.hpp"
#include "locaris/ops.hpp"
#include "locaris/optim.hpp"
#include "locaris/tensor.hpp"

using namespace locaris;
using namespace locaris::nn;
using doctest::Approx;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool grad = false, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = n(rng);
  return Tensor(std::move(shape), std::move(v), grad);
}

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected locaris::Error");
  return Errc::Empty;
}

}  // namespace

TEST_SUITE("numerics") {

TEST_CASE("matmul identity and reference") {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({3, 5}, rng);
  Tensor eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.values()[i * 3 + i] = 1.0;
  const Tensor y = matmul(eye, x);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);

  // Odd shapes exercise the tile edges; compare with a naive triple loop.
  for (auto [m, k, n] : {std::tuple{1, 1, 1}, {7, 9, 11}, {17, 33, 19}, {64, 64, 64}, {3, 100, 2}}) {
    const Tensor a = random_tensor({std::size_t(m), std::size_t(k)}, rng);
    const Tensor b = random_tensor({std::size_t(k), std::size_t(n)}, rng);
    const Tensor c = matmul(a, b);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        double ref = 0.0;
        for (int t = 0; t < k; ++t) ref += a[i * k + t] * b[t * n + j];
        CHECK(c[i * n + j] == Approx(ref).epsilon(1e-12));
      }
    }
  }
  CHECK(code_of([&] { matmul(random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)); }) ==
        Errc::ShapeMismatch);
}

TEST_CASE("matmul rows do not depend on other rows") {
  std::mt19937_64 rng(2);
  const Tensor b = random_tensor({40, 24}, rng);
  const Tensor a = random_tensor({13, 40}, rng);
  const Tensor full = matmul(a, b);
  for (std::size_t r = 0; r < 13; ++r) {
    const Tensor row(Shape{1, 40}, std::vector<double>(a.values().begin() + r * 40, a.values().begin() + (r + 1) * 40));
    const Tensor one = matmul(row, b);
    for (std::size_t j = 0; j < 24; ++j) CHECK(one[j] == full[r * 24 + j]);
  }
}

TEST_CASE("softmax_rows") {
  const Tensor z = softmax_rows(Tensor({1, 3}, 0.0));
  for (int i = 0; i < 3; ++i) CHECK(z[i] == Approx(1.0 / 3.0).epsilon(1e-15));
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_tensor({4, 9}, rng, false, 20.0);
    Tensor shifted = x.clone();
    for (std::size_t c = 0; c < 9; ++c) shifted.values()[9 + c] += 123.0;
    const Tensor s = softmax_rows(x), s2 = softmax_rows(shifted);
    for (std::size_t r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 9; ++c) sum += s[r * 9 + c];
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(s[i] - s2[i]) < 1e-12);
  }
  // Huge logits stay finite because the row max is subtracted first.
  const Tensor big({1, 2}, std::vector<double>{1000.0, 999.0});
  const Tensor sb = softmax_rows(big);
  CHECK(sb[0] == Approx(1.0 / (1.0 + std::exp(-1.0))));
}

TEST_CASE("rms_norm of a constant vector is ones") {
  for (double c : {1e-3, 0.5, 3.0, 1e4}) {
    const Tensor y = rms_norm(Tensor({1, 6}, c), Tensor({6}, 1.0));
    for (int i = 0; i < 6; ++i) {
      CHECK(y[i] == Approx(c / std::sqrt(c * c + 1e-6)).epsilon(1e-14));
      // Ones up to the epsilon's influence, which vanishes once c*c >> 1e-6.
      if (c >= 0.5) CHECK(y[i] == Approx(1.0).epsilon(1e-5));
    }
  }
  CHECK(code_of([] { rms_norm(Tensor({2, 6}, 1.0), Tensor({5}, 1.0)); }) == Errc::ShapeMismatch);
}

TEST_CASE("relu, add broadcast, embedding") {
  const Tensor x({2, 2}, std::vector<double>{-1, 2, 0, -3});
  const Tensor r = relu(x);
  CHECK(std::vector<double>(r.values().begin(), r.values().end()) == std::vector<double>{0, 2, 0, 0});
  const Tensor b = add(x, Tensor({2}, std::vector<double>{10, 20}));
  CHECK(std::vector<double>(b.values().begin(), b.values().end()) == std::vector<double>{9, 22, 10, 17});
  const Tensor table({3, 2}, std::vector<double>{0, 1, 2, 3, 4, 5});
  const std::vector<int> ids{2, 0, 2};
  const Tensor e = embedding_lookup(table, ids);
  CHECK(std::vector<double>(e.values().begin(), e.values().end()) == std::vector<double>{4, 5, 0, 1, 4, 5});
  CHECK(code_of([&] { add(x, Tensor({3}, 1.0)); }) == Errc::ShapeMismatch);
  const std::vector<int> bad{3};
  CHECK(code_of([&] { embedding_lookup(table, bad); }) == Errc::ShapeMismatch);
}

TEST_CASE("grad of x^2 at 3 is 6") {
  Tape tape;
  TapeScope scope(tape);
  const Tensor x = Tensor::scalar(3.0, true);
  const auto g = grad(mul(x, x), std::vector<Tensor>{x});
  CHECK(g[0][0] == 6.0);
}

TEST_CASE("leaf off the loss path gets a zero gradient") {
  Tape tape;
  TapeScope scope(tape);
  const Tensor x = Tensor::scalar(2.0, true), w = Tensor::scalar(5.0, true);
  const auto g = grad(scale(x, 4.0), std::vector<Tensor>{x, w});
  CHECK(g[0][0] == 4.0);
  CHECK(g[1][0] == 0.0);
}

TEST_CASE("grad errors") {
  const Tensor x({2}, 1.0, true);
  CHECK(code_of([&] { grad(sum(x), std::vector<Tensor>{x}); }) == Errc::NoTape);
  Tape tape;
  TapeScope scope(tape);
  CHECK(code_of([&] { grad(scale(x, 2.0), std::vector<Tensor>{x}); }) == Errc::NotScalar);
}

TEST_CASE("shared inputs accumulate gradients") {
  Tape tape;
  TapeScope scope(tape);
  const Tensor x({3}, std::vector<double>{1, 2, 3}, true);
  // f = sum(x*x) + sum(2x) -> df/dx = 2x + 2
  const auto g = grad(add(sum(mul(x, x)), sum(scale(x, 2.0))), std::vector<Tensor>{x});
  CHECK(g[0] == std::vector<double>{4, 6, 8});
}

TEST_CASE("two-layer MLP gradients match finite differences") {
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({6, 5}, rng);
  const Tensor w1 = random_tensor({5, 8}, rng, true, 0.5), b1 = random_tensor({8}, rng, true, 0.1);
  const Tensor w2 = random_tensor({8, 2}, rng, true, 0.5), b2 = random_tensor({2}, rng, true, 0.1);
  std::vector<double> target(12);
  for (auto& t : target) t = std::normal_distribution<double>(0, 2)(rng);
  auto loss = [&] { return mse_loss(add(matmul(relu(add(matmul(x, w1), b1)), w2), b2), target); };
  const std::vector<Tensor> params{w1, b1, w2, b2};
  const auto rep = finite_diff_check(loss, params, 1e-5);
  CHECK(rep.checked == 5 * 8 + 8 + 8 * 2 + 2);
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("finite_diff_check on a quadratic and on a constant") {
  std::mt19937_64 rng(5);
  const Tensor w = random_tensor({10}, rng, true);
  const auto quad = finite_diff_check([&] { return sum(mul(w, w)); }, std::vector<Tensor>{w}, 1e-5);
  CHECK(quad.max_rel_error < 1e-9);
  const Tensor c = random_tensor({4}, rng, true);
  const auto flat = finite_diff_check([&] { return Tensor::scalar(1.5); }, std::vector<Tensor>{c}, 1e-5);
  CHECK(flat.max_rel_error == 0.0);
}

TEST_CASE("silu, softmax, rms_norm, rope and attention gradients") {
  std::mt19937_64 rng(6);
  const std::size_t batch = 2, seq = 4, heads = 2, d = 8;
  const Tensor q = random_tensor({batch * seq, d}, rng, true);
  const Tensor k = random_tensor({batch * seq, d}, rng, true);
  const Tensor v = random_tensor({batch * seq, d}, rng, true);
  const Tensor gain = random_tensor({d}, rng, true);
  const std::vector<std::uint8_t> mask{1, 1, 1, 0, 1, 1, 1, 1};
  const Tensor probe = random_tensor({batch * seq, d}, rng);
  auto loss = [&] {
    const Tensor qr = rope(q, seq, heads, 10000.0), kr = rope(k, seq, heads, 10000.0);
    const Tensor a = causal_attention(qr, kr, v, batch, seq, heads, mask);
    const Tensor h = silu(rms_norm(a, gain));
    return sum(mul(softmax_rows(h), probe));
  };
  const auto rep = finite_diff_check(loss, std::vector<Tensor>{q, k, v, gain}, 1e-5);
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("gradient is linear in the loss") {
  std::mt19937_64 rng(7);
  const Tensor w = random_tensor({4, 2}, rng, true);
  const Tensor x = random_tensor({5, 4}, rng);
  const std::vector<double> t(10, 0.5);
  auto f = [&] { return mse_loss(matmul(x, scale(w, 0.7)), t); };
  auto g = [&] { return sum(silu(matmul(x, w))); };
  const double a = 2.5, b = -0.75;
  std::vector<std::vector<double>> gf, gg, gc;
  {
    Tape tape;
    TapeScope s(tape);
    gf = grad(f(), std::vector<Tensor>{w});
  }
  {
    Tape tape;
    TapeScope s(tape);
    gg = grad(g(), std::vector<Tensor>{w});
  }
  {
    Tape tape;
    TapeScope s(tape);
    gc = grad(add(scale(f(), a), scale(g(), b)), std::vector<Tensor>{w});
  }
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::abs(gc[0][i] - (a * gf[0][i] + b * gg[0][i])) < 1e-9);
}

TEST_CASE("random finite inputs give finite outputs") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor({6, 8}, rng, false, 30.0);
    const Tensor w = random_tensor({8, 8}, rng, false, 3.0);
    const std::vector<std::uint8_t> mask(6, 1);
    for (const Tensor& y : {matmul(x, w), relu(x), silu(x), softmax_rows(x), rms_norm(x, Tensor({8}, 1.0)),
                            rope(x, 3, 2, 10000.0), causal_attention(x, x, x, 2, 3, 2, mask)}) {
      for (double v : y.values()) CHECK(std::isfinite(v));
    }
  }
}

TEST_CASE("non-finite outputs are rejected") {
  const Tensor x({1, 2}, std::vector<double>{1e200, 1e200});
  CHECK(code_of([&] { mul(x, x); }) == Errc::NonFinite);
}

TEST_CASE("adamw closed forms") {
  SUBCASE("zero gradient and no decay leaves params unchanged") {
    const Tensor w({3}, std::vector<double>{1, -2, 3});
    auto st = AdamWState::for_params(std::vector<Tensor>{w}, {.lr = 0.1, .weight_decay = 0.0});
    adamw_step(std::vector<Tensor>{w}, std::vector<std::vector<double>>{{0, 0, 0}}, st);
    CHECK(std::vector<double>(w.values().begin(), w.values().end()) == std::vector<double>{1, -2, 3});
    CHECK(st.t == 1);
  }
  SUBCASE("zero gradient with decay shrinks by lr*wd") {
    const Tensor w({2}, std::vector<double>{1, -2});
    auto st = AdamWState::for_params(std::vector<Tensor>{w}, {.lr = 0.1, .weight_decay = 0.5});
    adamw_step(std::vector<Tensor>{w}, std::vector<std::vector<double>>{{0, 0}}, st);
    CHECK(w[0] == Approx(1 * (1 - 0.05)).epsilon(1e-15));
    CHECK(w[1] == Approx(-2 * (1 - 0.05)).epsilon(1e-15));
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    const Tensor w({2}, std::vector<double>{0.5, 0.5});
    auto st = AdamWState::for_params(std::vector<Tensor>{w}, {.lr = 1e-3, .weight_decay = 0.0});
    adamw_step(std::vector<Tensor>{w}, std::vector<std::vector<double>>{{4.0, -0.01}}, st);
    // m_hat = g, v_hat = g^2, step = lr * g / (|g| + eps)
    CHECK(w[0] == Approx(0.5 - 1e-3 * 4.0 / (4.0 + 1e-8)).epsilon(1e-14));
    CHECK(w[1] == Approx(0.5 + 1e-3 * 0.01 / (0.01 + 1e-8)).epsilon(1e-14));
  }
  SUBCASE("shape mismatch") {
    const Tensor w({2}, 1.0);
    auto st = AdamWState::for_params(std::vector<Tensor>{w});
    CHECK(code_of([&] { adamw_step(std::vector<Tensor>{w}, std::vector<std::vector<double>>{{1, 2, 3}}, st); }) ==
          Errc::ShapeMismatch);
  }
}

TEST_CASE("adamw is bitwise deterministic") {
  std::mt19937_64 rng(9);
  const Tensor init = random_tensor({16}, rng);
  std::vector<std::vector<double>> grads;
  for (int s = 0; s < 5; ++s) {
    const Tensor g = random_tensor({16}, rng);
    grads.emplace_back(g.values().begin(), g.values().end());
  }
  auto run = [&] {
    const Tensor w = init.clone();
    auto st = AdamWState::for_params(std::vector<Tensor>{w}, {.lr = 1e-2});
    for (const auto& g : grads) adamw_step(std::vector<Tensor>{w}, std::vector<std::vector<double>>{g}, st);
    return std::vector<double>(w.values().begin(), w.values().end());
  };
  CHECK(run() == run());
}

TEST_CASE("clip_grad_norm") {
  const Tensor a({2}, 0.0, true), b({1}, 0.0, true);
  a.grad()[0] = 3.0;
  a.grad()[1] = 0.0;
  b.grad()[0] = 4.0;
  const std::vector<Tensor> ps{a, b};
  CHECK(global_grad_norm(ps) == Approx(5.0));
  CHECK(clip_grad_norm(ps, 1.0) == Approx(5.0));
  CHECK(global_grad_norm(ps) == Approx(1.0));
  CHECK(a.grad()[0] == Approx(0.6));
  CHECK(clip_grad_norm(ps, 10.0) == Approx(1.0));
  CHECK(b.grad()[0] == Approx(0.8));
}

TEST_CASE("checkpoint round trip and format errors") {
  test::TempDir dir("ckpt");
  std::mt19937_64 rng(10);
  std::vector<NamedTensor> ts{{"a.w", random_tensor({3, 4}, rng)}, {"b", random_tensor({5}, rng)}};
  save_checkpoint(dir / "m.ckpt", ts);
  const auto back = load_checkpoint(dir / "m.ckpt");
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "a.w");
  CHECK(back[0].tensor.shape() == Shape{3, 4});
  for (std::size_t i = 0; i < 12; ++i) CHECK(back[0].tensor[i] == static_cast<double>(static_cast<float>(ts[0].tensor[i])));
  const std::string bytes = test::read_file(dir / "m.ckpt");
  CHECK(bytes.substr(0, 8) == "LCRSCKPT");
  // header + 2 * (len + name + rank) + extents + floats
  CHECK(bytes.size() == 16 + (4 + 3 + 4 + 16 + 48) + (4 + 1 + 4 + 8 + 20));
  test::write_file(dir / "trunc.ckpt", bytes.substr(0, bytes.size() - 3));
  CHECK(code_of([&] { load_checkpoint(dir / "trunc.ckpt"); }) == Errc::CheckpointFormat);
  test::write_file(dir / "magic.ckpt", "NOTACKPT" + bytes.substr(8));
  CHECK(code_of([&] { load_checkpoint(dir / "magic.ckpt"); }) == Errc::CheckpointFormat);
}

}
