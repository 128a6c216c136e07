#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "credence/adam.hpp"
#include "credence/ops.hpp"
#include "credence/rng.hpp"
#include "credence/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace credence;

namespace {

Tensor leaf(Shape shape, std::vector<float> data) {
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

Tensor random_leaf(Shape shape, Rng& rng, float scale = 1.0f) {
  std::vector<float> data(static_cast<std::size_t>(numel(shape)));
  for (auto& v : data) v = rng.next_normal() * scale;
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

// Scalarizes an op output with a fixed random linear functional so that the
// finite-difference oracle sees a well-conditioned loss.
Tensor weighted_sum(const Tensor& out, const std::vector<float>& weights) {
  Tensor w = Tensor::from_data(out.shape(), weights, false);
  return sum(mul(out, w));
}

std::vector<float> random_weights(std::int64_t n, Rng& rng) {
  std::vector<float> w(static_cast<std::size_t>(n));
  for (auto& v : w) v = rng.next_normal();
  return w;
}

// Builds the loss twice: once recording gradients, then repeatedly without
// recording for the finite-difference probes.  atol sits at the float32
// noise floor of a central difference (eps * |loss| / h) for losses of
// magnitude ~10; elements whose gradients sink below it are untestable in
// 32-bit arithmetic, while any genuinely wrong gradient overshoots it.
void expect_gradients_match(std::vector<Tensor> params,
                            const std::function<Tensor()>& build,
                            double rtol = 1e-2, double atol = 3e-3) {
  for (auto& p : params) p.zero_grad();
  Tensor loss = build();
  backward(loss);
  auto fd_loss = [&]() {
    NoGradGuard guard;
    return static_cast<double>(build().item());
  };
  auto result = testing::check_gradients(params, fd_loss, 1e-3, rtol, atol);
  INFO(result.detail);
  CHECK(result.ok);
}

}  // namespace

TEST_CASE("rng determinism and stream independence") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng base(7);
  Rng c1 = base.child("dropout");
  Rng c2 = base.child("init");
  CHECK(c1.next_u64() != c2.next_u64());
  // Child derivation does not consume parent state.
  CHECK(base.next_u64() == Rng(7).next_u64());
  // Same label, same seed: reproducible stream.
  CHECK(Rng(7).child("dropout").next_u64() == Rng(7).child("dropout").next_u64());

  Rng n(3);
  double mean = 0.0;
  for (int i = 0; i < 10000; ++i) mean += n.next_normal();
  mean /= 10000.0;
  CHECK(std::fabs(mean) < 0.05);

  Rng t(5);
  for (int i = 0; i < 1000; ++i) {
    float z = t.next_truncated_normal(0.02f);
    CHECK(std::fabs(z) <= 0.04f);
  }
}

TEST_CASE("matmul identity") {
  Tensor i2 = leaf({2, 2}, {1, 0, 0, 1});
  Tensor m = leaf({2, 2}, {1, 2, 3, 4});
  Tensor out = matmul(i2, m);
  CHECK(out.data() == std::vector<float>{1, 2, 3, 4});
}

TEST_CASE("matmul direct arithmetic") {
  Tensor a = leaf({2, 2}, {1, 2, 3, 4});
  Tensor b = leaf({2, 1}, {5, 6});
  Tensor out = matmul(a, b);
  CHECK(out.shape() == Shape{2, 1});
  CHECK(out.data() == std::vector<float>{17, 39});
}

TEST_CASE("matmul dimension error names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  CHECK_THROWS_WITH_AS(matmul(a, b),
                       doctest::Contains("[2,3]"), std::invalid_argument);
}

TEST_CASE("softmax symmetry and shift invariance") {
  Tensor x = leaf({3}, {0, 0, 0});
  Tensor y = softmax(x, 0);
  for (float v : y.data()) CHECK(v == doctest::Approx(1.0f / 3).epsilon(1e-6));

  Tensor big = leaf({2}, {1000, 1000});
  Tensor yb = softmax(big, 0);
  CHECK(yb.data()[0] == doctest::Approx(0.5f).epsilon(1e-6));
  CHECK(yb.data()[1] == doctest::Approx(0.5f).epsilon(1e-6));
  CHECK(yb.all_finite());
}

TEST_CASE("softmax hand-computed values") {
  Tensor x = leaf({2}, {1, 2});
  Tensor y = softmax(x, -1);
  CHECK(y.data()[0] == doctest::Approx(0.2689f).epsilon(1e-3));
  CHECK(y.data()[1] == doctest::Approx(0.7311f).epsilon(1e-3));
}

TEST_CASE("softmax properties on random input") {
  Rng rng(11);
  Tensor x = random_leaf({4, 7}, rng, 3.0f);
  Tensor y = softmax(x, 1);
  for (int r = 0; r < 4; ++r) {
    float s = 0;
    for (int c = 0; c < 7; ++c) s += y.data()[r * 7 + c];
    CHECK(s == doctest::Approx(1.0f).epsilon(1e-6));
  }
  // Adding a constant per row leaves the output unchanged.
  std::vector<float> shifted = x.data();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 7; ++c) shifted[r * 7 + c] += 5.0f;
  Tensor y2 = softmax(leaf({4, 7}, shifted), 1);
  for (std::size_t i = 0; i < y.data().size(); ++i) {
    CHECK(y2.data()[i] == doctest::Approx(y.data()[i]).epsilon(1e-6));
  }
}

TEST_CASE("softmax invalid axis") {
  Tensor x = Tensor::zeros({2, 2});
  CHECK_THROWS_AS(softmax(x, 2), std::invalid_argument);
  CHECK_THROWS_AS(softmax(x, -3), std::invalid_argument);
}

TEST_CASE("layer_norm constant rows") {
  Tensor x = leaf({2, 4}, {3, 3, 3, 3, -1, -1, -1, -1});
  Tensor gamma = Tensor::full({4}, 1.0f);
  Tensor beta = Tensor::zeros({4});
  Tensor y = layer_norm(x, gamma, beta, 1e-5f);
  for (float v : y.data()) CHECK(v == doctest::Approx(0.0f).epsilon(1e-6));

  Tensor beta_b = Tensor::full({4}, 2.5f);
  Tensor y2 = layer_norm(x, gamma, beta_b, 1e-5f);
  for (float v : y2.data()) CHECK(v == doctest::Approx(2.5f).epsilon(1e-6));
}

TEST_CASE("layer_norm hand arithmetic") {
  Tensor x = leaf({1, 2}, {1, 3});
  Tensor y = layer_norm(x, Tensor::full({2}, 1.0f), Tensor::zeros({2}), 0.0f);
  CHECK(y.data()[0] == doctest::Approx(-1.0f).epsilon(1e-6));
  CHECK(y.data()[1] == doctest::Approx(1.0f).epsilon(1e-6));
}

TEST_CASE("layer_norm H mismatch") {
  Tensor x = Tensor::zeros({2, 8});
  CHECK_THROWS_AS(layer_norm(x, Tensor::zeros({4}), Tensor::zeros({8}), 1e-5f),
                  std::invalid_argument);
}

TEST_CASE("layer_norm normalization property") {
  Rng rng(23);
  Tensor x = random_leaf({6, 16}, rng, 2.0f);
  Tensor y = layer_norm(x, Tensor::full({16}, 1.0f), Tensor::zeros({16}), 1e-6f);
  for (int r = 0; r < 6; ++r) {
    double mean = 0, var = 0;
    for (int c = 0; c < 16; ++c) mean += y.data()[r * 16 + c];
    mean /= 16;
    for (int c = 0; c < 16; ++c) {
      double d = y.data()[r * 16 + c] - mean;
      var += d * d;
    }
    var /= 16;
    CHECK(std::fabs(mean) < 1e-5);
    CHECK(std::fabs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("gelu values") {
  Tensor x = leaf({3}, {0, 10, 1});
  Tensor y = gelu(x);
  CHECK(y.data()[0] == doctest::Approx(0.0f));
  CHECK(y.data()[1] == doctest::Approx(10.0f).epsilon(1e-5));
  CHECK(std::fabs(y.data()[2] - 0.8412f) < 1e-3);
}

TEST_CASE("cross_entropy uniform and saturated") {
  Tensor uniform = leaf({1, 2}, {0.3f, 0.3f});
  CHECK(cross_entropy(uniform, {0}).item() ==
        doctest::Approx(std::log(2.0f)).epsilon(1e-5));

  Tensor confident = leaf({1, 3}, {50.0f, 0.0f, 0.0f});
  CHECK(cross_entropy(confident, {0}).item() < 1e-6f);
}

TEST_CASE("cross_entropy hand arithmetic") {
  Tensor logits = leaf({1, 2}, {1, 2});
  CHECK(cross_entropy(logits, {1}).item() ==
        doctest::Approx(0.3133f).epsilon(1e-3));
}

TEST_CASE("cross_entropy out-of-range label names index") {
  Tensor logits = Tensor::zeros({2, 2});
  CHECK_THROWS_WITH_AS(cross_entropy(logits, {0, 5}),
                       doctest::Contains("index 1"), std::invalid_argument);
}

TEST_CASE("conv1d identity kernel") {
  Tensor x = leaf({1, 4}, {1, 2, 3, 4});
  Tensor k = leaf({1, 1, 1}, {1});
  Tensor y = conv1d(x, k, 1, 0);
  CHECK(y.data() == x.data());
}

TEST_CASE("conv1d hand cross-correlation") {
  Tensor x = leaf({1, 3}, {1, 2, 3});
  Tensor k = leaf({1, 1, 2}, {1, 1});
  Tensor y = conv1d(x, k, 1, 0);
  CHECK(y.shape() == Shape{1, 2});
  CHECK(y.data() == std::vector<float>{3, 5});
}

TEST_CASE("conv1d output length formula") {
  Tensor x = Tensor::zeros({1, 5});
  Tensor k = Tensor::zeros({2, 1, 3});
  Tensor y = conv1d(x, k, 2, 1);
  CHECK(y.shape() == Shape{2, 3});
}

TEST_CASE("conv1d kernel larger than padded input") {
  Tensor x = Tensor::zeros({1, 3});
  Tensor k = Tensor::zeros({1, 1, 5});
  CHECK_THROWS_AS(conv1d(x, k, 1, 0), std::invalid_argument);
  CHECK_NOTHROW(conv1d(x, k, 1, 1));
}

TEST_CASE("dropout eval and degenerate modes") {
  Rng rng(1);
  Tensor x = leaf({4}, {1, 2, 3, 4});
  Tensor eval_out = dropout(x, 0.7f, false, rng);
  CHECK(eval_out.data() == x.data());
  Tensor p0 = dropout(x, 0.0f, true, rng);
  CHECK(p0.data() == x.data());
  CHECK_THROWS_AS(dropout(x, 1.0f, true, rng), std::invalid_argument);
  CHECK_THROWS_AS(dropout(x, -0.1f, true, rng), std::invalid_argument);
}

TEST_CASE("dropout preserves mean under inverted scaling") {
  Rng rng(99);
  const std::int64_t n = 100000;
  Tensor x = Tensor::full({n}, 1.0f);
  Tensor y = dropout(x, 0.5f, true, rng);
  double mean = 0;
  for (float v : y.data()) mean += v;
  mean /= static_cast<double>(n);
  CHECK(mean > 0.98);
  CHECK(mean < 1.02);
}

TEST_CASE("dropout deterministic under fixed seed") {
  Tensor x = Tensor::full({64}, 1.0f);
  Rng r1 = Rng(123).child("dropout");
  Rng r2 = Rng(123).child("dropout");
  Tensor a = dropout(x, 0.3f, true, r1);
  Tensor b = dropout(x, 0.3f, true, r2);
  CHECK(a.data() == b.data());
}

TEST_CASE("backward of sum of squares") {
  Tensor x = leaf({2}, {1, 2});
  Tensor loss = sum(mul(x, x));
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(2.0f));
  CHECK(x.grad()[1] == doctest::Approx(4.0f));
}

TEST_CASE("backward requires scalar loss") {
  Tensor x = leaf({2}, {1, 2});
  CHECK_THROWS_AS(backward(mul(x, x)), std::invalid_argument);
}

TEST_CASE("detached tensor receives no grad") {
  Tensor x = leaf({2}, {1, 2});
  Tensor frozen = Tensor::from_data({2}, {3, 4}, false);
  Tensor loss = sum(mul(x, frozen));
  backward(loss);
  CHECK(x.has_grad());
  CHECK_FALSE(frozen.has_grad());
}

TEST_CASE("shared subexpression is visited once") {
  // loss = sum(u + 2u) with u = x*x; a double visit of the mul node would
  // produce 12x instead of 6x.
  Tensor x = leaf({1}, {3});
  Tensor u = mul(x, x);
  Tensor loss = sum(add(u, scale(u, 2.0f)));
  backward(loss);
  CHECK(loss.item() == doctest::Approx(27.0f));
  CHECK(x.grad()[0] == doctest::Approx(18.0f));
}

TEST_CASE("tape nodes are topologically ordered") {
  Tensor x = leaf({2}, {1, 2});
  Tensor u = mul(x, x);
  Tensor loss = sum(add(u, u));
  Tape tape = Tape::from(loss);
  // Every node's parents must appear earlier in the list.
  const auto& nodes = tape.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (const auto& parent : nodes[i].tensor->parents) {
      bool found_before = false;
      for (std::size_t j = 0; j < i; ++j) {
        if (nodes[j].tensor.get() == parent.get()) found_before = true;
      }
      if (parent->requires_grad) CHECK(found_before);
    }
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(31);
  Tensor a = random_leaf({3, 4}, rng);
  Tensor b = random_leaf({4, 2}, rng);
  expect_gradients_match({a, b}, [&] { return sum(matmul(a, b)); });
}

TEST_CASE("gradient oracle over every differentiable op") {
  Rng master(2024);
  const int kTrials = 20;

  struct Scenario {
    std::string name;
    std::function<void(Rng&)> run;
  };

  auto scenario = [&](Rng& rng, std::vector<Tensor> params,
                      const std::function<Tensor()>& build) {
    expect_gradients_match(std::move(params), build);
  };

  std::vector<Scenario> scenarios = {
      {"add",
       [&](Rng& rng) {
         Tensor a = random_leaf({2, 3}, rng), b = random_leaf({2, 3}, rng);
         auto w = random_weights(6, rng);
         scenario(rng, {a, b}, [=] { return weighted_sum(add(a, b), w); });
       }},
      {"sub",
       [&](Rng& rng) {
         Tensor a = random_leaf({5}, rng), b = random_leaf({5}, rng);
         auto w = random_weights(5, rng);
         scenario(rng, {a, b}, [=] { return weighted_sum(sub(a, b), w); });
       }},
      {"mul",
       [&](Rng& rng) {
         Tensor a = random_leaf({2, 4}, rng), b = random_leaf({2, 4}, rng);
         auto w = random_weights(8, rng);
         scenario(rng, {a, b}, [=] { return weighted_sum(mul(a, b), w); });
       }},
      {"scale",
       [&](Rng& rng) {
         Tensor a = random_leaf({7}, rng);
         auto w = random_weights(7, rng);
         scenario(rng, {a}, [=] { return weighted_sum(scale(a, -1.7f), w); });
       }},
      {"add_bias",
       [&](Rng& rng) {
         Tensor x = random_leaf({3, 4}, rng), b = random_leaf({4}, rng);
         auto w = random_weights(12, rng);
         scenario(rng, {x, b}, [=] { return weighted_sum(add_bias(x, b), w); });
       }},
      {"matmul",
       [&](Rng& rng) {
         Tensor a = random_leaf({3, 4}, rng), b = random_leaf({4, 2}, rng);
         auto w = random_weights(6, rng);
         scenario(rng, {a, b}, [=] { return weighted_sum(matmul(a, b), w); });
       }},
      {"bmm",
       [&](Rng& rng) {
         Tensor a = random_leaf({2, 3, 4}, rng), b = random_leaf({2, 4, 2}, rng);
         auto w = random_weights(12, rng);
         scenario(rng, {a, b}, [=] { return weighted_sum(bmm(a, b), w); });
       }},
      {"reshape_permute",
       [&](Rng& rng) {
         Tensor x = random_leaf({2, 3, 4}, rng);
         auto w = random_weights(24, rng);
         scenario(rng, {x}, [=] {
           return weighted_sum(permute(reshape(x, {3, 2, 4}), {2, 0, 1}), w);
         });
       }},
      {"gather_rows",
       [&](Rng& rng) {
         Tensor table = random_leaf({5, 3}, rng);
         Tensor ids = Tensor::from_data({2, 2}, {0, 3, 3, 1}, false);
         auto w = random_weights(12, rng);
         scenario(rng, {table},
                  [=] { return weighted_sum(gather_rows(table, ids), w); });
       }},
      {"softmax",
       [&](Rng& rng) {
         Tensor x = random_leaf({3, 5}, rng, 2.0f);
         auto w = random_weights(15, rng);
         scenario(rng, {x}, [=] { return weighted_sum(softmax(x, 1), w); });
       }},
      {"softmax_axis0",
       [&](Rng& rng) {
         Tensor x = random_leaf({3, 5}, rng, 2.0f);
         auto w = random_weights(15, rng);
         scenario(rng, {x}, [=] { return weighted_sum(softmax(x, 0), w); });
       }},
      {"add_key_mask_softmax",
       [&](Rng& rng) {
         Tensor scores = random_leaf({4, 3, 3}, rng);
         Tensor mask = Tensor::from_data({2, 3}, {1, 1, 0, 1, 0, 0}, false);
         auto w = random_weights(36, rng);
         scenario(rng, {scores}, [=] {
           return weighted_sum(softmax(add_key_mask(scores, mask, 2), -1), w);
         });
       }},
      {"layer_norm",
       [&](Rng& rng) {
         Tensor x = random_leaf({4, 6}, rng, 2.0f);
         Tensor g = random_leaf({6}, rng);
         Tensor b = random_leaf({6}, rng);
         auto w = random_weights(24, rng);
         scenario(rng, {x, g, b},
                  [=] { return weighted_sum(layer_norm(x, g, b, 1e-5f), w); });
       }},
      {"gelu",
       [&](Rng& rng) {
         Tensor x = random_leaf({3, 3}, rng);
         auto w = random_weights(9, rng);
         scenario(rng, {x}, [=] { return weighted_sum(gelu(x), w); });
       }},
      {"dropout",
       [&](Rng& rng) {
         Tensor x = random_leaf({4, 4}, rng);
         auto w = random_weights(16, rng);
         std::uint64_t seed = rng.next_u64();
         scenario(rng, {x}, [=] {
           Rng local(seed);
           return weighted_sum(dropout(x, 0.4f, true, local), w);
         });
       }},
      {"cross_entropy",
       [&](Rng& rng) {
         Tensor logits = random_leaf({4, 3}, rng, 2.0f);
         std::vector<int> labels = {0, 2, 1, 2};
         scenario(rng, {logits}, [=] { return cross_entropy(logits, labels); });
       }},
      {"conv1d",
       [&](Rng& rng) {
         Tensor x = random_leaf({2, 3, 8}, rng);
         Tensor k = random_leaf({4, 3, 3}, rng);
         auto w = random_weights(2 * 4 * 4, rng);
         scenario(rng, {x, k},
                  [=] { return weighted_sum(conv1d(x, k, 2, 1), w); });
       }},
      {"mean_pool",
       [&](Rng& rng) {
         Tensor hidden = random_leaf({2, 4, 3}, rng);
         Tensor mask = Tensor::from_data({2, 4}, {1, 1, 0, 0, 1, 1, 1, 0}, false);
         auto w = random_weights(6, rng);
         scenario(rng, {hidden},
                  [=] { return weighted_sum(mean_pool(hidden, mask), w); });
       }},
      {"global_avg_pool1d",
       [&](Rng& rng) {
         Tensor x = random_leaf({2, 3, 5}, rng);
         auto w = random_weights(6, rng);
         scenario(rng, {x},
                  [=] { return weighted_sum(global_avg_pool1d(x), w); });
       }},
  };

  for (const auto& s : scenarios) {
    INFO("op: ", s.name);
    Rng rng = master.child(s.name);
    for (int trial = 0; trial < kTrials; ++trial) {
      s.run(rng);
    }
  }
}

TEST_CASE("adam first step is approximately lr") {
  ParameterMap params;
  Tensor theta = Tensor::from_data({3}, {1.0f, -2.0f, 0.5f}, true);
  theta.impl()->grad.assign(3, 1.0f);
  params.push_back({"theta", theta});
  AdamState state;
  adam_step(params, state, 0.01f);
  CHECK(theta.data()[0] == doctest::Approx(1.0f - 0.01f).epsilon(1e-4));
  CHECK(theta.data()[1] == doctest::Approx(-2.0f - 0.01f).epsilon(1e-4));
  CHECK(state.t == 1);
}

TEST_CASE("adam zero gradient is identity on parameters") {
  ParameterMap params;
  Tensor theta = Tensor::from_data({4}, {1, 2, 3, 4}, true);
  theta.impl()->grad.assign(4, 0.0f);
  params.push_back({"theta", theta});
  AdamState state;
  adam_step(params, state, 0.1f, 0.0f);
  CHECK(theta.data() == std::vector<float>{1, 2, 3, 4});
  CHECK(state.t == 1);
  adam_step(params, state, 0.1f, 0.0f);
  CHECK(state.t == 2);
}

TEST_CASE("adam two constant-gradient steps") {
  ParameterMap params;
  Tensor theta = Tensor::from_data({1}, {5.0f}, true);
  theta.impl()->grad.assign(1, 1.0f);
  params.push_back({"theta", theta});
  AdamState state;
  adam_step(params, state, 0.1f);
  theta.impl()->grad.assign(1, 1.0f);
  adam_step(params, state, 0.1f);
  CHECK(theta.data()[0] == doctest::Approx(5.0f - 0.2f).epsilon(1e-3));
}

TEST_CASE("adam missing gradient names the parameter") {
  ParameterMap params;
  params.push_back({"layers.0.bias", Tensor::zeros({2}, true)});
  AdamState state;
  CHECK_THROWS_WITH_AS(adam_step(params, state, 0.1f),
                       doctest::Contains("layers.0.bias"),
                       std::invalid_argument);
}

TEST_CASE("adam decoupled weight decay shrinks before the delta") {
  ParameterMap params;
  Tensor theta = Tensor::from_data({1}, {2.0f}, true);
  theta.impl()->grad.assign(1, 0.0f);
  params.push_back({"theta", theta});
  AdamState state;
  adam_step(params, state, 0.5f, 0.1f);
  // Zero gradient, so the only movement is the decay: 2 * (1 - 0.5*0.1).
  CHECK(theta.data()[0] == doctest::Approx(1.9f).epsilon(1e-6));
}
