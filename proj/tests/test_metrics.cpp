#include <cmath>
#include <map>

#include "doctest.h"
#include "saligraph/error.hpp"
#include "saligraph/metrics.hpp"
#include "support.hpp"

using namespace saligraph;
using testing::random_tensor;

namespace {

// Spearman for tie-free data: 1 - 6 sum d^2 / (n (n^2 - 1)).
double spearman_no_ties(const std::vector<double>& a, const std::vector<double>& b) {
  auto rank = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::size_t below = 0;
      for (double x : v) below += x < v[i] ? 1 : 0;
      r[i] = double(below + 1);
    }
    return r;
  };
  const auto ra = rank(a), rb = rank(b);
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
  const double n = double(a.size());
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

Tensor box_mask(std::size_t extent, std::size_t top, std::size_t left, std::size_t size) {
  Tensor m({extent, extent});
  for (std::size_t r = top; r < top + size; ++r)
    for (std::size_t c = left; c < left + size; ++c) m.at(r, c) = 1.0;
  return m;
}

Model model16(std::uint64_t seed) {
  MiniVggConfig cfg;
  cfg.seed = seed;
  cfg.channels = {4, 6};
  cfg.input_extent = 16;
  return build_minivgg(cfg);
}

// Two objects per image: class a in the top-left box, class b in the bottom-right box.
Sample two_object_sample(const std::string& id, std::uint64_t seed, std::size_t a, std::size_t b) {
  Sample s;
  s.id = id;
  s.image = random_tensor({1, 16, 16}, seed, 0, 1);
  s.objects.push_back({a, box_mask(16, 1, 1, 5)});
  s.objects.push_back({b, box_mask(16, 9, 9, 5)});
  return s;
}

Tensor spike(std::size_t r, std::size_t c) {
  Tensor m({16, 16});
  m.at(r, c) = 1.0;
  return m;
}

// Image as a map; ignores the class.
Method class_blind_stub() {
  return {"stub", "", [](const Model&, const ForwardTrace& t, std::size_t) {
            return t.input.reshaped({16, 16});
          }};
}

}  // namespace

TEST_CASE("hog descriptor") {
  SUBCASE("length on a 32x32 map") {
    CHECK(hog(random_tensor({32, 32}, 1)).size() == 3 * 3 * 4 * 9);
  }
  SUBCASE("constant map gives zeros") {
    for (double v : hog(Tensor({32, 32}, 0.7))) CHECK(v == 0.0);
  }
  SUBCASE("horizontal ramp lands in the first bin") {
    Tensor ramp({16, 16});
    for (std::size_t r = 0; r < 16; ++r)
      for (std::size_t c = 0; c < 16; ++c) ramp.at(r, c) = double(c);
    const auto d = hog(ramp);
    REQUIRE(d.size() == 36);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (i % 9 == 0) {
        CHECK(d[i] == doctest::Approx(0.5).epsilon(1e-12));
      } else {
        CHECK(d[i] == 0.0);
      }
    }
  }
  SUBCASE("vertical ramp splits between the bins around 90 degrees") {
    Tensor ramp({16, 16});
    for (std::size_t r = 0; r < 16; ++r)
      for (std::size_t c = 0; c < 16; ++c) ramp.at(r, c) = double(r);
    const auto d = hog(ramp);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (i % 9 == 4 || i % 9 == 5) {
        CHECK(d[i] == doctest::Approx(d[i - i % 9 + 4]).epsilon(1e-12));
        CHECK(d[i] > 0.0);
      } else {
        CHECK(d[i] == doctest::Approx(0.0).epsilon(1e-12));
      }
    }
  }
  SUBCASE("unnormalized scale does not matter") {
    const Tensor m = random_tensor({16, 16}, 4);
    const auto a = hog(m), b = hog(5.0 * m + Tensor({16, 16}, 2.0));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-12));
  }
  SUBCASE("too small") { CHECK_THROWS_AS(hog(Tensor({4, 4})), ValueError); }
}

TEST_CASE("spearman") {
  const std::vector<double> x{1, 2, 3}, y{3, 1, 2};
  REQUIRE(spearman_no_ties(x, y) == -0.5);
  CHECK(spearman(x, y) == doctest::Approx(-0.5).epsilon(1e-15));

  const Tensor r = random_tensor({50}, 7);
  const auto v = std::vector<double>(r.values().begin(), r.values().end());
  std::vector<double> neg, cube;
  for (double a : v) {
    neg.push_back(-a);
    cube.push_back(a * a * a + 2.0);
  }
  CHECK(spearman(v, v) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(spearman(v, neg) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(spearman(v, cube) == doctest::Approx(1.0).epsilon(1e-15));
  const Tensor r2 = random_tensor({50}, 8);
  const auto w = std::vector<double>(r2.values().begin(), r2.values().end());
  CHECK(spearman(v, w) == doctest::Approx(spearman_no_ties(v, w)).epsilon(1e-12));

  CHECK(average_ranks(std::vector<double>{10, 20, 20, 30}) == std::vector<double>{1, 2.5, 2.5, 4});
  CHECK(spearman(std::vector<double>{1, 1, 1}, x) == 0.0);
  CHECK_THROWS_AS(spearman(x, std::vector<double>{1, 2}), ValueError);
}

TEST_CASE("map similarity") {
  const Tensor m = random_tensor({16, 16}, 10);
  CHECK(map_similarity(m, m) == 1.0);
  CHECK(map_similarity(Tensor({16, 16}), Tensor({16, 16})) == 1.0);
  // unsigned orientation: a negated map has the same descriptor up to rounding
  const double neg = map_similarity(m, -1.0 * m);
  CHECK(neg == doctest::Approx(spearman(hog(m), hog(-1.0 * m))).epsilon(1e-15));
  CHECK(neg > 0.99);
}

TEST_CASE("argmax location") {
  CHECK(argmax_location(Tensor::matrix({{1, 3}, {3, 0}})) == GridPoint{0, 1});
  CHECK(argmax_location(Tensor({3, 3}, 2.0)) == GridPoint{0, 0});
  CHECK(argmax_location(spike(7, 12)) == GridPoint{7, 12});
}

TEST_CASE("point_hits tolerance radius") {
  const Tensor mask = box_mask(16, 4, 4, 1);
  CHECK(point_hits(mask, {4, 4}, 0));
  CHECK_FALSE(point_hits(mask, {4, 6}, 0));
  CHECK(point_hits(mask, {4, 6}, 2));
  CHECK_FALSE(point_hits(mask, {6, 6}, 2.5));
  CHECK(point_hits(mask, {6, 6}, 3));
}

TEST_CASE("pointing game") {
  const Model model = model16(3);
  const std::vector<Sample> samples{two_object_sample("a", 1, 0, 2), two_object_sample("b", 2, 1, 3)};

  SUBCASE("an oracle that always points inside the class mask") {
    const Method hit{"hit", "", [&](const Model&, const ForwardTrace& t, std::size_t cls) {
                       for (const auto& s : samples)
                         if (s.image == t.input)
                           for (const auto& o : s.objects)
                             if (o.class_index == cls) return o.mask;
                       return Tensor({16, 16});
                     }};
    const EvalRecord r = pointing_game(samples, hit, model);
    CHECK(r.value == 1.0);
    CHECK(r.trials == 4);
  }
  SUBCASE("three of four trials") {
    // class 3 is pointed at the wrong object
    const Method m{"m", "", [](const Model&, const ForwardTrace&, std::size_t cls) {
                     return cls == 2 ? spike(11, 11) : spike(2, 2);
                   }};
    const EvalRecord r = pointing_game(samples, m, model);
    CHECK(r.trials == 4);
    CHECK(r.value == 0.75);
    CHECK(r.detail == std::vector<double>{2.0, 1.0});
  }
  SUBCASE("restricted game with one shared map") {
    const Method m{"m", "", [](const Model&, const ForwardTrace&, std::size_t) { return spike(3, 3); }};
    const EvalRecord r = restricted_pointing(std::span(samples).first(1), m, model);
    CHECK(r.trials == 2);
    CHECK(r.value == 0.5);
  }
  SUBCASE("same-class objects form one trial") {
    Sample s = two_object_sample("c", 3, 1, 1);
    s.objects.push_back({2, box_mask(16, 1, 10, 4)});
    const Method m{"m", "", [](const Model&, const ForwardTrace&, std::size_t) { return spike(11, 11); }};
    const EvalRecord r = pointing_game(std::span(&s, 1), m, model);
    CHECK(r.trials == 2);
    CHECK(r.value == 0.5);
  }
  SUBCASE("samples are validated") {
    Sample bad = two_object_sample("bad", 4, 0, 7);
    CHECK_THROWS_AS(pointing_game(std::span(&bad, 1), class_blind_stub(), model), ValueError);
  }
}

TEST_CASE("a class-blind method is self-consistent across protocols") {
  const Model model = model16(5);
  std::vector<Sample> samples;
  for (std::uint64_t i = 0; i < 6; ++i) samples.push_back(two_object_sample("s", 30 + i, i % 4, (i + 1) % 4));
  const Method stub = class_blind_stub();
  CHECK(restricted_pointing(samples, stub, model).value == pointing_game(samples, stub, model).value);
  CHECK(class_sensitivity(samples, stub, model).value == 1.0);
}

TEST_CASE("class sensitivity of a negating method") {
  const Model model = model16(6);
  std::vector<Sample> samples;
  for (std::uint64_t i = 0; i < 3; ++i) samples.push_back(two_object_sample("s", 40 + i, 0, 1));
  const Method m{"neg", "", [](const Model&, const ForwardTrace& t, std::size_t cls) {
                   const Tensor base = t.input.reshaped({16, 16});
                   const std::size_t top = std::size_t(
                       std::max_element(t.logits().values().begin(), t.logits().values().end()) -
                       t.logits().values().begin());
                   return cls == top ? base : -1.0 * base;
                 }};
  double want = 0.0;
  for (const auto& s : samples) {
    const Tensor base = s.image.reshaped({16, 16});
    want += spearman(hog(base), hog(-1.0 * base));
  }
  want /= 3.0;
  CHECK(class_sensitivity(samples, m, model).value == doctest::Approx(want).epsilon(1e-15));
}

TEST_CASE("randomization curve") {
  const Model model = model16(7);
  std::vector<Sample> samples;
  for (std::uint64_t i = 0; i < 3; ++i) samples.push_back(two_object_sample("s", 50 + i, 0, 1));
  const Method grads = make_method(method::Gradients{});
  RandomizationOptions opt;
  opt.seed = 11;
  const auto curve = randomization_curve(samples, grads, model, opt);
  REQUIRE(curve.size() == model.parametric_layers().size() + 1);
  CHECK(curve[0].similarity == 1.0);

  // Compose the protocol from its parts.
  for (std::size_t s = 1; s < curve.size(); ++s) {
    const Model r = randomize_cascading(model, s, 11);
    double acc = 0.0;
    for (const auto& sample : samples) {
      const ForwardTrace t0 = forward(model, sample.image);
      const auto& lv = t0.logits().values();
      const std::size_t cls = std::size_t(std::max_element(lv.begin(), lv.end()) - lv.begin());
      acc += map_similarity(grads.fn(model, t0, cls), grads.fn(r, forward(r, sample.image), cls));
    }
    CHECK(curve[s].stage == s);
    CHECK(curve[s].similarity == doctest::Approx(acc / 3.0).epsilon(1e-15));
  }

  opt.stages = 2;
  CHECK(randomization_curve(samples, grads, model, opt).size() == 3);
  opt.stages = 99;
  CHECK_THROWS_AS(randomization_curve(samples, grads, model, opt), ValueError);
}
