#include "doctest.h"
#include "saligraph/error.hpp"
#include "saligraph/layers.hpp"
#include "saligraph/tensor.hpp"
#include "support.hpp"

using namespace saligraph;
using testing::random_tensor;

namespace {

// Independent corner-aligned bilinear formula evaluated per output pixel.
double bilinear_oracle(const Tensor& m, std::size_t oh, std::size_t ow, std::size_t r,
                       std::size_t c) {
  const double y = oh == 1 ? 0.0 : double(r) * double(m.dim(0) - 1) / double(oh - 1);
  const double x = ow == 1 ? 0.0 : double(c) * double(m.dim(1) - 1) / double(ow - 1);
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, m.dim(0) - 1);
  const std::size_t x1 = std::min(x0 + 1, m.dim(1) - 1);
  const double fy = y - double(y0), fx = x - double(x0);
  return (1 - fy) * ((1 - fx) * m.at(y0, x0) + fx * m.at(y0, x1)) +
         fy * ((1 - fx) * m.at(y1, x0) + fx * m.at(y1, x1));
}

}  // namespace

TEST_CASE("tensor construction checks length and finiteness") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor({2}, std::vector<double>{1, std::nan("")}), ValueError);
  CHECK_THROWS_AS(Tensor({1}, std::vector<double>{INFINITY}), ValueError);
  const Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.sum() == doctest::Approx(9.0));
}

TEST_CASE("1x1 identity convolution returns its input") {
  const Tensor x = random_tensor({1, 5, 4}, 3);
  const Conv2d conv{Tensor({1, 1, 1, 1}, 1.0), Tensor({1}), 1, 0};
  CHECK(apply_layer(x, conv) == x);
}

TEST_CASE("2x2 ones kernel over a 3x3 ramp") {
  const std::vector<std::vector<double>> x{{1, 2, 3}, {4, 5, 6}, {7, 8, 9}};
  const auto oracle = testing::naive_correlate(x, {{1, 1}, {1, 1}});
  REQUIRE(oracle == std::vector<std::vector<double>>{{12, 16}, {24, 28}});

  const Tensor input({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Conv2d conv{Tensor({1, 1, 2, 2}, 1.0), Tensor({1}), 1, 0};
  const Tensor out = apply_layer(input, conv);
  CHECK(out == Tensor({1, 2, 2}, {12, 16, 24, 28}));
}

TEST_CASE("conv matches the naive oracle with stride, padding and channels") {
  const Tensor x = random_tensor({2, 6, 7}, 11);
  const Tensor w = random_tensor({3, 2, 3, 3}, 12);
  const Tensor b = random_tensor({3}, 13);
  const Conv2d conv{w, b, 2, 1};
  const Tensor out = apply_layer(x, conv);
  REQUIRE(out.shape() == Shape{3, 3, 4});
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 4; ++c) {
        double acc = b[o];
        for (std::size_t i = 0; i < 2; ++i)
          for (std::size_t u = 0; u < 3; ++u)
            for (std::size_t v = 0; v < 3; ++v) {
              const long y = long(r * 2 + u) - 1, xx = long(c * 2 + v) - 1;
              if (y < 0 || xx < 0 || y >= 6 || xx >= 7) continue;
              acc += w[((o * 2 + i) * 3 + u) * 3 + v] * x.at(i, std::size_t(y), std::size_t(xx));
            }
        CHECK(out.at(o, r, c) == doctest::Approx(acc).epsilon(1e-13));
      }
}

TEST_CASE("relu, pooling, flatten and affine forward values") {
  CHECK(apply_layer(Tensor::vector({-1, 0, 2}), Relu{}) == Tensor::vector({0, 0, 2}));
  const Tensor x({1, 2, 4}, {1, 5, 2, 2, 3, 0, 7, 2});
  CHECK(apply_layer(x, MaxPool{2, 2}) == Tensor({1, 1, 2}, {5, 7}));
  CHECK(apply_layer(x, Flatten{}).shape() == Shape{8});
  const Affine fc{Tensor::matrix({{1, -1}}), Tensor::vector({0.5})};
  CHECK(apply_layer(Tensor::vector({2, 1}), fc) == Tensor::vector({1.5}));
}

TEST_CASE("shape mismatches name the layer and the dimensions") {
  const Conv2d conv{Tensor({2, 3, 3, 3}, 0.1), Tensor({2}), 1, 0};
  try {
    apply_layer(Tensor({1, 5, 5}), conv);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("Conv2d") != std::string::npos);
    CHECK(msg.find('3') != std::string::npos);
    CHECK(msg.find('1') != std::string::npos);
  }
  CHECK_THROWS_AS(apply_layer(Tensor({1, 2, 2}), Conv2d{Tensor({1, 1, 3, 3}), Tensor({1}), 1, 0}),
                  ShapeError);
  CHECK_THROWS_AS(apply_layer(Tensor::vector({1, 2, 3}), Affine{Tensor({1, 2}), Tensor({1})}),
                  ShapeError);
  CHECK_THROWS_AS(apply_layer(Tensor({1, 1, 1}), MaxPool{2, 2}), ShapeError);
}

TEST_CASE("bias-free convolution is linear in its input") {
  const Conv2d conv{random_tensor({3, 2, 3, 3}, 21), Tensor({3}), 1, 1};
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Tensor x = random_tensor({2, 6, 6}, 100 + s);
    const Tensor y = random_tensor({2, 6, 6}, 200 + s);
    const double alpha = 0.7 + double(s), beta = -1.3;
    const Tensor lhs = apply_layer(alpha * x + beta * y, conv);
    const Tensor rhs = alpha * apply_layer(x, conv) + beta * apply_layer(y, conv);
    for (std::size_t i = 0; i < lhs.size(); ++i) {
      CHECK(testing::rel_err(lhs[i], rhs[i], 1.0) < 1e-10);
    }
  }
}

TEST_CASE("bilinear upsample") {
  SUBCASE("same size is the identity") {
    const Tensor m = random_tensor({3, 4}, 5);
    CHECK(bilinear_upsample(m, 3, 4) == m);
  }
  SUBCASE("1x1 becomes a constant") {
    const Tensor up = bilinear_upsample(Tensor::matrix({{2.5}}), 5, 7);
    CHECK(up == Tensor({5, 7}, 2.5));
  }
  SUBCASE("2x2 to 3x3 corner aligned") {
    const Tensor m = Tensor::matrix({{0, 1}, {1, 2}});
    const Tensor up = bilinear_upsample(m, 3, 3);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 3; ++c) CHECK(up.at(r, c) == bilinear_oracle(m, 3, 3, r, c));
    CHECK(up == Tensor::matrix({{0, 0.5, 1}, {0.5, 1, 1.5}, {1, 1.5, 2}}));
  }
  SUBCASE("matches the oracle and stays in range") {
    const Tensor m = random_tensor({4, 3}, 8);
    const Tensor up = bilinear_upsample(m, 32, 17);
    for (std::size_t r = 0; r < 32; ++r)
      for (std::size_t c = 0; c < 17; ++c)
        CHECK(up.at(r, c) == doctest::Approx(bilinear_oracle(m, 32, 17, r, c)).epsilon(1e-14));
    CHECK(up.min() >= m.min());
    CHECK(up.max() <= m.max());
  }
  SUBCASE("constants are preserved exactly") {
    CHECK(bilinear_upsample(Tensor({4, 4}, 0.3), 32, 32) == Tensor({32, 32}, 0.3));
  }
  SUBCASE("downscaling is rejected") {
    CHECK_THROWS_AS(bilinear_upsample(Tensor({4, 4}), 3, 8), ValueError);
  }
}

TEST_CASE("minmax normalize") {
  CHECK(minmax_normalize(Tensor::matrix({{0, 2}, {4, 8}})) ==
        Tensor::matrix({{0, 0.25}, {0.5, 1.0}}));
  CHECK(minmax_normalize(Tensor({3, 3}, 7.0)) == Tensor({3, 3}));
  const Tensor unit = Tensor::matrix({{0, 0.3}, {1, 0.6}});
  CHECK(minmax_normalize(unit) == unit);
  const Tensor once = minmax_normalize(random_tensor({5, 6}, 4));
  CHECK(once.min() == 0.0);
  CHECK(once.max() == 1.0);
  CHECK(minmax_normalize(once) == once);
}

TEST_CASE("channel abs sum") {
  const Tensor t({2, 1, 2}, {1, -2, -3, 4});
  CHECK(channel_abs_sum(t) == Tensor::matrix({{4, 6}}));
}
