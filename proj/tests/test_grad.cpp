#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "saligraph/error.hpp"
#include "saligraph/grad.hpp"
#include "support.hpp"

using namespace saligraph;
using testing::random_tensor;

namespace {

// q-th nearest-rank percentile written from the definition: smallest value
// v such that at least q% of the entries are <= v.
double percentile_oracle(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  for (double x : v) {
    const auto below = std::count_if(v.begin(), v.end(), [&](double y) { return y <= x; });
    if (100.0 * double(below) >= q * double(v.size())) return x;
  }
  return v.back();
}

double sum_all(const std::vector<Tensor>& ts) {
  double s = 0.0;
  for (const auto& t : ts) s += t.empty() ? 0.0 : t.sum();
  return s;
}

// Chain of conv/ReLU/affine with positive weights only.
Model positive_model() {
  Model m;
  m.input_shape = {1, 4, 4};
  m.layers.emplace_back(Conv2d{random_tensor({3, 1, 3, 3}, 41, 0.05, 1.0),
                               random_tensor({3}, 42, 0.0, 0.2), 1, 1});
  m.layers.emplace_back(Relu{});
  m.layers.emplace_back(MaxPool{2, 2});
  m.layers.emplace_back(Flatten{});
  m.layers.emplace_back(Affine{random_tensor({2, 12}, 43, 0.05, 1.0), random_tensor({2}, 44, 0.0, 0.2)});
  m.blocks.emplace_back("B1", 0);
  m.class_count = 2;
  m.validate();
  return m;
}

}  // namespace

TEST_CASE("standard gradient of a linear map") {
  const Model m = testing::affine_model(Tensor::matrix({{3, -2}}), Tensor::vector({0}));
  const ForwardTrace t = forward(m, Tensor::vector({0.4, 7}));
  CHECK(backward(m, t, 0, rule::Standard{}).input == Tensor::vector({3, -2}));
}

TEST_CASE("relu backward rules at a single layer") {
  SUBCASE("guided blocks negative signal and inactive units") {
    const Tensor out =
        relu_backward(rule::Guided{}, Tensor::vector({1, 0}), Tensor::vector({-2, 3}));
    CHECK(out == Tensor::vector({0, 0}));
  }
  SUBCASE("standard keeps the signal where the unit is active") {
    const Tensor out =
        relu_backward(rule::Standard{}, Tensor::vector({1, 0}), Tensor::vector({-2, 3}));
    CHECK(out == Tensor::vector({-2, 0}));
  }
  SUBCASE("rectgrad at q=50") {
    const Tensor a = Tensor::vector({1, 2, 3, 4});
    const Tensor r = Tensor::vector({1, 1, 1, 1});
    const double tau = percentile_oracle({1, 2, 3, 4}, 50);
    REQUIRE(tau == 2.0);
    CHECK(nearest_rank_percentile({4, 1, 3, 2}, 50) == tau);
    CHECK(relu_backward(rule::RectGrad{50}, a, r) == Tensor::vector({0, 0, 1, 1}));
  }
  SUBCASE("rectgrad_mod thresholds the magnitude") {
    const Tensor a = Tensor::vector({1, 2, 3, 4});
    const Tensor r = Tensor::vector({-5, 1, 1, -0.1});
    // |a*R| = 5, 2, 3, 0.4 -> tau' = 3 at q=75
    CHECK(relu_backward(rule::RectGradMod{75}, a, r) == Tensor::vector({-5, 0, 0, 0}));
    // signed a*R = -5, 2, 3, -0.4 -> tau = 2
    CHECK(relu_backward(rule::RectGrad{75}, a, r) == Tensor::vector({0, 0, 1, 0}));
  }
  SUBCASE("percentile matches the oracle") {
    const Tensor v = random_tensor({37}, 5);
    for (double q : {1.0, 12.5, 50.0, 98.0, 99.9}) {
      CHECK(nearest_rank_percentile(v.raw(), q) == percentile_oracle(v.raw(), q));
    }
  }
  SUBCASE("invalid percentiles") {
    CHECK_THROWS_AS(validate_rule(ReluBackwardRule{rule::RectGrad{0}}), ValueError);
    CHECK_THROWS_AS(validate_rule(ReluBackwardRule{rule::RectGradMod{100}}), ValueError);
    CHECK_THROWS_AS(validate_rule(RelevanceRule{rule::LrpGamma{-1}}), ValueError);
  }
}

TEST_CASE("guided counterpart equals the standard backward bitwise") {
  for (std::uint64_t s = 0; s < 4; ++s) {
    const Model m = testing::small_convnet(s);
    const ForwardTrace t = forward(m, random_tensor(m.input_shape, 50 + s, 0, 1));
    for (std::size_t c = 0; c < m.class_count; ++c) {
      CHECK(guided_counterpart(m, t, c) == backward(m, t, c, rule::Standard{}));
    }
  }
  MiniVggConfig cfg;
  cfg.seed = 2;
  const Model vgg = build_minivgg(cfg);
  const Tensor x = random_tensor(vgg.input_shape, 3, 0, 1);
  const auto a = guided_counterpart(vgg, forward(vgg, x), 1);
  const auto b = backward(vgg, forward(vgg, x), 1, rule::Standard{});
  CHECK(max_abs_diff(a.input, b.input) == 0.0);
  CHECK(a == b);
  const Model rnd = randomize_cascading(vgg, 4, 11);
  CHECK(guided_counterpart(rnd, forward(rnd, x), 3) ==
        backward(rnd, forward(rnd, x), 3, rule::Standard{}));
}

TEST_CASE("backward argument checks") {
  const Model m = testing::small_convnet(1);
  const ForwardTrace t = forward(m, random_tensor(m.input_shape, 1));
  CHECK_THROWS_AS(backward(m, t, 3, rule::Standard{}), ValueError);
  const Model other = testing::small_convnet(1, 2);
  CHECK_THROWS_AS(backward(other, t, 0, rule::Standard{}), ValueError);
}

TEST_CASE("lrp on a single affine layer") {
  SUBCASE("lrp-0") {
    const Model m = testing::affine_model(Tensor::matrix({{1, -1}}), Tensor::vector({0}));
    const ForwardTrace t = forward(m, Tensor::vector({1, 2}));
    REQUIRE(t.logits()[0] == -1.0);
    const GradientBundle r = lrp(m, t, 0, rule::LrpGamma{0});
    CHECK(r.input[0] == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(r.input[1] == doctest::Approx(-2.0).epsilon(1e-8));
    CHECK(r.input.sum() + r.bias[0].sum() == doctest::Approx(-1.0).epsilon(1e-8));
  }
  SUBCASE("z+ with a nonnegative seed") {
    const Model m = testing::affine_model(Tensor::matrix({{1, -1}}), Tensor::vector({0}));
    const ForwardTrace t = forward(m, Tensor::vector({1, 2}));
    const GradientBundle r = propagate_relevance(m, t, Tensor::vector({2}), rule::LrpZPlus{});
    CHECK(r.input[0] == doctest::Approx(2.0).epsilon(1e-8));
    CHECK(r.input[1] == 0.0);
  }
  SUBCASE("bias relevance stays in the sink") {
    const Model m = testing::affine_model(Tensor::matrix({{1, 1}}), Tensor::vector({2}));
    const ForwardTrace t = forward(m, Tensor::vector({1, 1}));
    const GradientBundle r = lrp(m, t, 0, rule::LrpGamma{0});
    // z = [1, 1] plus bias 2, total 4 = logit
    CHECK(r.input[0] == doctest::Approx(1.0));
    CHECK(r.bias[0][0] == doctest::Approx(2.0));
  }
  SUBCASE("zero denominator is stabilized with the positive sign") {
    const Model m = testing::affine_model(Tensor::matrix({{1, -1}}), Tensor::vector({0}));
    const ForwardTrace t = forward(m, Tensor::vector({1, 1}));
    const GradientBundle r = propagate_relevance(m, t, Tensor::vector({1e-9}), rule::LrpGamma{0});
    CHECK(r.input[0] == doctest::Approx(1.0));
    CHECK(r.input[1] == doctest::Approx(-1.0));
  }
}

TEST_CASE("lrp-gamma approaches z+ on positive weights") {
  const Model m = positive_model();
  const ForwardTrace t = forward(m, random_tensor(m.input_shape, 8, 0, 1));
  const GradientBundle big = lrp(m, t, 1, rule::LrpGamma{1e6});
  const GradientBundle zp = lrp(m, t, 1, rule::LrpZPlus{});
  for (std::size_t i = 0; i < zp.input.size(); ++i) {
    CHECK(testing::rel_err(big.input[i], zp.input[i]) < 1e-4);
  }
}

TEST_CASE("lrp-0 conservation per layer and end to end") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Model m = testing::small_convnet(s);
    const ForwardTrace t = forward(m, random_tensor(m.input_shape, 70 + s, 0, 1));
    const std::size_t cls = argmax_class(t.logits());
    const GradientBundle r = lrp(m, t, cls, rule::LrpGamma{0});
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
      const double in = r.pre(i).sum() + (r.bias[i].empty() ? 0.0 : r.bias[i].sum());
      CHECK(testing::rel_err(in, r.post(i).sum()) < 1e-6);
    }
    const double total = r.input.sum() + sum_all(r.bias);
    CHECK(testing::rel_err(total, t.logits()[cls]) < 1e-6);
  }
}

TEST_CASE("z+ relevance is nonnegative for a nonnegative logit") {
  for (std::uint64_t s = 0; s < 6; ++s) {
    const Model m = testing::small_convnet(s);
    const ForwardTrace t = forward(m, random_tensor(m.input_shape, 90 + s, 0, 1));
    for (std::size_t c = 0; c < m.class_count; ++c) {
      if (t.logits()[c] < 0.0) continue;
      const GradientBundle r = lrp(m, t, c, rule::LrpZPlus{});
      CHECK(r.input.min() >= 0.0);
      for (const auto& o : r.outputs) CHECK(o.min() >= 0.0);
    }
  }
}

TEST_CASE("both passes are linear in the seed") {
  const Model m = testing::small_convnet(12);
  const ForwardTrace t = forward(m, random_tensor(m.input_shape, 13, 0, 1));
  const Tensor seed = random_tensor({3}, 14);
  const double c = -2.5;
  const auto g1 = backpropagate(m, t, seed, rule::Standard{});
  const auto g2 = backpropagate(m, t, c * seed, rule::Standard{});
  CHECK(max_abs_diff(g2.input, c * g1.input) < 1e-12);
  const auto r1 = propagate_relevance(m, t, seed, rule::LrpGamma{0.25});
  const auto r2 = propagate_relevance(m, t, c * seed, rule::LrpGamma{0.25});
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    CHECK(max_abs_diff(r2.outputs[i], c * r1.outputs[i]) < 1e-12);
  }
  CHECK(max_abs_diff(r2.input, c * r1.input) < 1e-12);
}

TEST_CASE("guided is a masked standard signal at every relu") {
  const Model m = testing::small_convnet(21);
  const ForwardTrace t = forward(m, random_tensor(m.input_shape, 22, 0, 1));
  const GradientBundle g = backward(m, t, 0, rule::Guided{});
  const GradientBundle s = backward(m, t, 0, rule::Standard{});
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    if (!std::holds_alternative<Relu>(m.layers[i])) continue;
    // Same incoming signal replayed through both rules at this one layer.
    const Tensor& incoming = g.post(i);
    const Tensor guided = relu_backward(rule::Guided{}, t.post(i), incoming);
    const Tensor standard = relu_backward(rule::Standard{}, t.post(i), incoming);
    CHECK(guided == g.pre(i));
    for (std::size_t k = 0; k < guided.size(); ++k) {
      if (guided[k] != 0.0) CHECK(guided[k] == incoming[k]);
      if (standard[k] == 0.0) CHECK(guided[k] == 0.0);
    }
  }
  CHECK(s.input.size() == g.input.size());
}

TEST_CASE("rectgrad with a tiny percentile keeps everything above the minimum") {
  const Tensor a = random_tensor({50}, 31, 0, 1);
  const Tensor r = random_tensor({50}, 32);
  const Tensor out = relu_backward(rule::RectGrad{1e-9}, a, r);
  const double lo = hadamard(a, r).min();
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k] * r[k] > lo) CHECK(out[k] == r[k]);
  }
}

TEST_CASE("gradient with respect to a block") {
  SUBCASE("shape follows the activation") {
    MiniVggConfig cfg;
    const Model m = build_minivgg(cfg);
    const ForwardTrace t = forward(m, random_tensor(m.input_shape, 4, 0, 1));
    const Tensor g = grad_wrt_layer(m, t, 2, std::string("B4"));
    CHECK(g.shape() == t.post(activation_layer(m, std::string("B4"))).shape());
    CHECK(g.shape() == Shape{32, 4, 4});
    CHECK_THROWS_AS(grad_wrt_layer(m, t, 2, std::size_t{m.layers.size() - 1}), ValueError);
    CHECK_THROWS_AS(grad_wrt_layer(m, t, 2, std::string("B7")), ValueError);
  }
  SUBCASE("chain rule by hand") {
    // 1x1 conv (w=2, b=-1) -> ReLU -> Flatten -> Affine [1 2 3 4].
    Model m;
    m.input_shape = {1, 2, 2};
    m.layers.emplace_back(Conv2d{Tensor({1, 1, 1, 1}, 2.0), Tensor({1}, -1.0), 1, 0});
    m.layers.emplace_back(Relu{});
    m.layers.emplace_back(Flatten{});
    m.layers.emplace_back(Affine{Tensor::matrix({{1, 2, 3, 4}}), Tensor::vector({0})});
    m.blocks.emplace_back("B1", 0);
    m.class_count = 1;
    const ForwardTrace t = forward(m, Tensor({1, 2, 2}, {1, 0, 2, 3}));
    // pre-activations 1, -1, 3, 5 -> logit 1 + 9 + 20
    CHECK(t.logits()[0] == 30.0);
    CHECK(grad_wrt_layer(m, t, 0, std::string("B1")) == Tensor({1, 2, 2}, {1, 2, 3, 4}));
    CHECK(backward(m, t, 0, rule::Standard{}).input == Tensor({1, 2, 2}, {2, 0, 6, 8}));
  }
}

TEST_CASE("standard gradients match central differences") {
  const double h = 1e-4;
  for (std::uint64_t s = 0; s < 3; ++s) {
    const Model m = testing::small_convnet(100 + s, 2);
    const Tensor x = random_tensor(m.input_shape, 200 + s, 0, 1);
    const ForwardTrace t = forward(m, x);
    const std::size_t cls = s % m.class_count;
    const Tensor g = backward(m, t, cls, rule::Standard{}).input;
    for (std::size_t k = 0; k < x.size(); k += 7) {
      Tensor xp = x, xm = x;
      xp[k] += h;
      xm[k] -= h;
      const double fd =
          (forward(m, xp).logits()[cls] - forward(m, xm).logits()[cls]) / (2.0 * h);
      const double denom = std::max(std::abs(fd), std::abs(g[k]));
      CHECK((denom == 0.0 ? 0.0 : std::abs(fd - g[k]) / denom) < 1e-5);
    }
  }
}
