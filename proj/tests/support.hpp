#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "saligraph/model.hpp"
#include "saligraph/tensor.hpp"

namespace testing {

using namespace saligraph;

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

/// Input shaped (n) feeding one Affine layer.
inline Model affine_model(const Tensor& weights, const Tensor& bias) {
  Model m;
  m.input_shape = {weights.dim(1)};
  m.layers.emplace_back(Affine{weights, bias});
  m.class_count = weights.dim(0);
  m.validate();
  return m;
}

/// Small conv net with nonzero biases: two blocks of Conv-ReLU-MaxPool on an
/// 8x8 input, then Flatten-Affine.
inline Model small_convnet(std::uint64_t seed, std::size_t in_ch = 1, std::size_t classes = 3) {
  Model m;
  m.input_shape = {in_ch, 8, 8};
  m.layers.emplace_back(Conv2d{random_tensor({4, in_ch, 3, 3}, seed, -0.6, 0.6),
                               random_tensor({4}, seed + 1, -0.1, 0.1), 1, 1});
  m.layers.emplace_back(Relu{});
  m.layers.emplace_back(MaxPool{2, 2});
  m.blocks.emplace_back("B1", 0);
  m.layers.emplace_back(Conv2d{random_tensor({5, 4, 3, 3}, seed + 2, -0.5, 0.5),
                               random_tensor({5}, seed + 3, -0.1, 0.1), 1, 1});
  m.layers.emplace_back(Relu{});
  m.blocks.emplace_back("B2", 3);
  m.layers.emplace_back(MaxPool{2, 2});
  m.layers.emplace_back(Flatten{});
  m.layers.emplace_back(Affine{random_tensor({classes, 5 * 2 * 2}, seed + 4, -0.5, 0.5),
                               random_tensor({classes}, seed + 5, -0.1, 0.1)});
  m.class_count = classes;
  m.validate();
  return m;
}

/// Relative error with an absolute floor so values near zero compare sanely.
inline double rel_err(double got, double want, double floor = 1e-12) {
  return std::abs(got - want) / std::max(std::abs(want), floor);
}

/// Textbook 2-D cross-correlation of one channel, no padding, stride 1.
inline std::vector<std::vector<double>> naive_correlate(const std::vector<std::vector<double>>& x,
                                                        const std::vector<std::vector<double>>& k) {
  const std::size_t oh = x.size() - k.size() + 1;
  const std::size_t ow = x[0].size() - k[0].size() + 1;
  std::vector<std::vector<double>> out(oh, std::vector<double>(ow, 0.0));
  for (std::size_t r = 0; r < oh; ++r)
    for (std::size_t c = 0; c < ow; ++c)
      for (std::size_t i = 0; i < k.size(); ++i)
        for (std::size_t j = 0; j < k[0].size(); ++j) out[r][c] += x[r + i][c + j] * k[i][j];
  return out;
}

}  // namespace testing
