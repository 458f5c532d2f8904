#pragma once

#include <cstddef>
#include <string>
#include <variant>

#include "saligraph/tensor.hpp"

namespace saligraph {

/// 2-D convolution; weights are (out_ch x in_ch x kh x kw), bias is (out_ch).
struct Conv2d {
  Tensor weights;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_channels() const { return weights.dim(0); }
  std::size_t in_channels() const { return weights.dim(1); }
  friend bool operator==(const Conv2d&, const Conv2d&) = default;
};

struct Relu {
  friend bool operator==(const Relu&, const Relu&) = default;
};

struct MaxPool {
  std::size_t kernel = 2;
  std::size_t stride = 2;
  friend bool operator==(const MaxPool&, const MaxPool&) = default;
};

struct Flatten {
  friend bool operator==(const Flatten&, const Flatten&) = default;
};

/// Spatial mean per channel: (C x H x W) -> (C).
struct GlobalAvgPool {
  friend bool operator==(const GlobalAvgPool&, const GlobalAvgPool&) = default;
};

/// Fully connected layer; weights are (out x in), bias is (out).
struct Affine {
  Tensor weights;
  Tensor bias;
  friend bool operator==(const Affine&, const Affine&) = default;
};

using LayerSpec = std::variant<Conv2d, Relu, MaxPool, Flatten, GlobalAvgPool, Affine>;

std::string layer_kind(const LayerSpec& layer);
bool is_parametric(const LayerSpec& layer);

/// Output shape of `layer` for an input of `input_shape`; throws ShapeError
/// naming the layer and the offending extents when they do not compose.
Shape output_shape(const LayerSpec& layer, const Shape& input_shape);

Tensor apply_layer(const Tensor& input, const LayerSpec& layer);

// Exact adjoints used by the reverse pass and the trainer.

Tensor conv2d_input_adjoint(const Conv2d& conv, const Shape& input_shape, const Tensor& grad_out);
/// Accumulates weight and bias gradients into `grad_w` / `grad_b`.
void conv2d_param_adjoint(const Conv2d& conv, const Tensor& input, const Tensor& grad_out,
                          Tensor& grad_w, Tensor& grad_b);

Tensor affine_input_adjoint(const Affine& affine, const Tensor& grad_out);
void affine_param_adjoint(const Tensor& input, const Tensor& grad_out, Tensor& grad_w,
                          Tensor& grad_b);

/// Routes each output signal to the forward argmax of its window (first
/// index in row-major order on ties).
Tensor maxpool_route(const MaxPool& pool, const Tensor& input, const Tensor& grad_out);

Tensor global_avg_pool_adjoint(const Shape& input_shape, const Tensor& grad_out);

}  // namespace saligraph
