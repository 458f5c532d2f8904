#include "saligraph/layers.hpp"

#include <algorithm>

#include "saligraph/error.hpp"

namespace saligraph {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

[[noreturn]] void mismatch(const std::string& kind, const Shape& input, const std::string& why) {
  throw ShapeError(kind + ": input " + to_string(input) + " " + why);
}

// Range of output columns `o` with 0 <= o*stride + offset < extent.
struct Span1 {
  std::ptrdiff_t begin;
  std::ptrdiff_t end;
};

Span1 valid_range(std::ptrdiff_t offset, std::ptrdiff_t stride, std::ptrdiff_t extent,
                  std::ptrdiff_t out_extent) {
  std::ptrdiff_t lo = 0;
  if (offset < 0) lo = (-offset + stride - 1) / stride;
  std::ptrdiff_t hi = out_extent;
  const std::ptrdiff_t last = extent - 1 - offset;
  if (last < 0) return {0, 0};
  hi = std::min(hi, last / stride + 1);
  return {lo, std::max(lo, hi)};
}

}  // namespace

std::string layer_kind(const LayerSpec& layer) {
  return std::visit(overloaded{
                        [](const Conv2d&) { return std::string("Conv2d"); },
                        [](const Relu&) { return std::string("ReLU"); },
                        [](const MaxPool&) { return std::string("MaxPool"); },
                        [](const Flatten&) { return std::string("Flatten"); },
                        [](const GlobalAvgPool&) { return std::string("GlobalAvgPool"); },
                        [](const Affine&) { return std::string("Affine"); },
                    },
                    layer);
}

bool is_parametric(const LayerSpec& layer) {
  return std::holds_alternative<Conv2d>(layer) || std::holds_alternative<Affine>(layer);
}

Shape output_shape(const LayerSpec& layer, const Shape& in) {
  return std::visit(
      overloaded{
          [&](const Conv2d& conv) -> Shape {
            const auto& w = conv.weights.shape();
            if (w.size() != 4) mismatch("Conv2d", in, "weights must be 4-D, got " + to_string(w));
            if (conv.bias.shape() != Shape{w[0]}) {
              mismatch("Conv2d", in, "bias " + to_string(conv.bias.shape()) +
                                         " does not match out_ch " + std::to_string(w[0]));
            }
            if (conv.stride == 0) mismatch("Conv2d", in, "stride must be positive");
            if (in.size() != 3) mismatch("Conv2d", in, "expected (C x H x W)");
            if (in[0] != w[1]) {
              mismatch("Conv2d", in, "has " + std::to_string(in[0]) +
                                         " channels, weights expect " + std::to_string(w[1]));
            }
            const std::size_t ph = in[1] + 2 * conv.padding;
            const std::size_t pw = in[2] + 2 * conv.padding;
            if (ph < w[2] || pw < w[3]) {
              mismatch("Conv2d", in, "is smaller than kernel " + std::to_string(w[2]) + "x" +
                                         std::to_string(w[3]));
            }
            return {w[0], (ph - w[2]) / conv.stride + 1, (pw - w[3]) / conv.stride + 1};
          },
          [&](const Relu&) -> Shape { return in; },
          [&](const MaxPool& pool) -> Shape {
            if (in.size() != 3) mismatch("MaxPool", in, "expected (C x H x W)");
            if (pool.kernel == 0 || pool.stride == 0) {
              mismatch("MaxPool", in, "kernel and stride must be positive");
            }
            if (in[1] < pool.kernel || in[2] < pool.kernel) {
              mismatch("MaxPool", in, "is smaller than window " + std::to_string(pool.kernel));
            }
            return {in[0], (in[1] - pool.kernel) / pool.stride + 1,
                    (in[2] - pool.kernel) / pool.stride + 1};
          },
          [&](const Flatten&) -> Shape { return {shape_size(in)}; },
          [&](const GlobalAvgPool&) -> Shape {
            if (in.size() != 3) mismatch("GlobalAvgPool", in, "expected (C x H x W)");
            return {in[0]};
          },
          [&](const Affine& affine) -> Shape {
            const auto& w = affine.weights.shape();
            if (w.size() != 2) mismatch("Affine", in, "weights must be 2-D, got " + to_string(w));
            if (affine.bias.shape() != Shape{w[0]}) {
              mismatch("Affine", in, "bias " + to_string(affine.bias.shape()) +
                                         " does not match out " + std::to_string(w[0]));
            }
            if (in.size() != 1 || in[0] != w[1]) {
              mismatch("Affine", in, "does not match weights " + to_string(w));
            }
            return {w[0]};
          },
      },
      layer);
}

namespace {

// Patch matrix of the input: row (ic, ky, kx), column (oy, ox); zero where
// the kernel reads padding.
std::vector<double> im2col(const Tensor& x, const Conv2d& conv, std::size_t oh, std::size_t ow) {
  const auto& w = conv.weights.shape();
  const std::size_t ic_n = w[1], kh = w[2], kw = w[3];
  const auto ih = static_cast<std::ptrdiff_t>(x.dim(1));
  const auto iw = static_cast<std::ptrdiff_t>(x.dim(2));
  const auto s = static_cast<std::ptrdiff_t>(conv.stride);
  const auto p = static_cast<std::ptrdiff_t>(conv.padding);
  const std::size_t cols = oh * ow;
  std::vector<double> out(ic_n * kh * kw * cols, 0.0);
  const double* in = x.raw().data();
  for (std::size_t ic = 0; ic < ic_n; ++ic) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      const Span1 rows = valid_range(static_cast<std::ptrdiff_t>(ky) - p, s, ih,
                                     static_cast<std::ptrdiff_t>(oh));
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const std::ptrdiff_t xoff = static_cast<std::ptrdiff_t>(kx) - p;
        const Span1 span = valid_range(xoff, s, iw, static_cast<std::ptrdiff_t>(ow));
        double* row = out.data() + ((ic * kh + ky) * kw + kx) * cols;
        for (std::ptrdiff_t oy = rows.begin; oy < rows.end; ++oy) {
          const double* irow =
              in + (ic * ih + oy * s + static_cast<std::ptrdiff_t>(ky) - p) * iw;
          double* orow = row + oy * static_cast<std::ptrdiff_t>(ow);
          for (std::ptrdiff_t ox = span.begin; ox < span.end; ++ox) orow[ox] = irow[ox * s + xoff];
        }
      }
    }
  }
  return out;
}

// Adds a patch-matrix gradient back onto the input grid.
void col2im(const std::vector<double>& cols_buf, const Conv2d& conv, std::size_t oh,
            std::size_t ow, Tensor& grad_in) {
  const auto& w = conv.weights.shape();
  const std::size_t ic_n = w[1], kh = w[2], kw = w[3];
  const auto ih = static_cast<std::ptrdiff_t>(grad_in.dim(1));
  const auto iw = static_cast<std::ptrdiff_t>(grad_in.dim(2));
  const auto s = static_cast<std::ptrdiff_t>(conv.stride);
  const auto p = static_cast<std::ptrdiff_t>(conv.padding);
  const std::size_t cols = oh * ow;
  double* gi = grad_in.values().data();
  for (std::size_t ic = 0; ic < ic_n; ++ic) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      const Span1 rows = valid_range(static_cast<std::ptrdiff_t>(ky) - p, s, ih,
                                     static_cast<std::ptrdiff_t>(oh));
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const std::ptrdiff_t xoff = static_cast<std::ptrdiff_t>(kx) - p;
        const Span1 span = valid_range(xoff, s, iw, static_cast<std::ptrdiff_t>(ow));
        const double* row = cols_buf.data() + ((ic * kh + ky) * kw + kx) * cols;
        for (std::ptrdiff_t oy = rows.begin; oy < rows.end; ++oy) {
          double* irow = gi + (ic * ih + oy * s + static_cast<std::ptrdiff_t>(ky) - p) * iw;
          const double* crow = row + oy * static_cast<std::ptrdiff_t>(ow);
          for (std::ptrdiff_t ox = span.begin; ox < span.end; ++ox) irow[ox * s + xoff] += crow[ox];
        }
      }
    }
  }
}

Tensor conv_forward(const Tensor& x, const Conv2d& conv, const Shape& out_shape) {
  const std::size_t oc_n = out_shape[0], oh = out_shape[1], ow = out_shape[2];
  const std::size_t taps = conv.weights.size() / oc_n;
  const std::size_t cols = oh * ow;
  const std::vector<double> patches = im2col(x, conv, oh, ow);
  Tensor out(out_shape);
  double* o = out.values().data();
  const double* wt = conv.weights.raw().data();
  for (std::size_t oc = 0; oc < oc_n; ++oc) {
    double* orow = o + oc * cols;
    std::fill(orow, orow + cols, conv.bias[oc]);
    for (std::size_t k = 0; k < taps; ++k) {
      const double wv = wt[oc * taps + k];
      const double* prow = patches.data() + k * cols;
      for (std::size_t j = 0; j < cols; ++j) orow[j] += wv * prow[j];
    }
  }
  return out;
}

Tensor maxpool_forward(const Tensor& x, const MaxPool& pool, const Shape& out_shape) {
  Tensor out(out_shape);
  for (std::size_t c = 0; c < out_shape[0]; ++c) {
    for (std::size_t oy = 0; oy < out_shape[1]; ++oy) {
      for (std::size_t ox = 0; ox < out_shape[2]; ++ox) {
        double best = x.at(c, oy * pool.stride, ox * pool.stride);
        for (std::size_t ky = 0; ky < pool.kernel; ++ky) {
          for (std::size_t kx = 0; kx < pool.kernel; ++kx) {
            best = std::max(best, x.at(c, oy * pool.stride + ky, ox * pool.stride + kx));
          }
        }
        out.at(c, oy, ox) = best;
      }
    }
  }
  return out;
}

}  // namespace

Tensor apply_layer(const Tensor& input, const LayerSpec& layer) {
  const Shape out_shape = output_shape(layer, input.shape());
  return std::visit(
      overloaded{
          [&](const Conv2d& conv) { return conv_forward(input, conv, out_shape); },
          [&](const Relu&) { return relu(input); },
          [&](const MaxPool& pool) { return maxpool_forward(input, pool, out_shape); },
          [&](const Flatten&) { return input.reshaped(out_shape); },
          [&](const GlobalAvgPool&) {
            Tensor out(out_shape);
            const std::size_t area = input.dim(1) * input.dim(2);
            for (std::size_t c = 0; c < out_shape[0]; ++c) {
              double acc = 0.0;
              for (std::size_t i = 0; i < area; ++i) acc += input[c * area + i];
              out[c] = acc / static_cast<double>(area);
            }
            return out;
          },
          [&](const Affine& affine) {
            const std::size_t n_out = affine.weights.dim(0), n_in = affine.weights.dim(1);
            Tensor out(out_shape);
            const double* w = affine.weights.raw().data();
            for (std::size_t o = 0; o < n_out; ++o) {
              double acc = affine.bias[o];
              for (std::size_t i = 0; i < n_in; ++i) acc += w[o * n_in + i] * input[i];
              out[o] = acc;
            }
            return out;
          },
      },
      layer);
}

Tensor conv2d_input_adjoint(const Conv2d& conv, const Shape& input_shape, const Tensor& grad_out) {
  const std::size_t oc_n = grad_out.dim(0), oh = grad_out.dim(1), ow = grad_out.dim(2);
  const std::size_t taps = conv.weights.size() / oc_n;
  const std::size_t cols = oh * ow;
  std::vector<double> dpatches(taps * cols, 0.0);
  const double* wt = conv.weights.raw().data();
  const double* go = grad_out.raw().data();
  for (std::size_t oc = 0; oc < oc_n; ++oc) {
    const double* grow = go + oc * cols;
    for (std::size_t k = 0; k < taps; ++k) {
      const double wv = wt[oc * taps + k];
      if (wv == 0.0) continue;
      double* drow = dpatches.data() + k * cols;
      for (std::size_t j = 0; j < cols; ++j) drow[j] += wv * grow[j];
    }
  }
  Tensor grad_in(input_shape);
  col2im(dpatches, conv, oh, ow, grad_in);
  return grad_in;
}

void conv2d_param_adjoint(const Conv2d& conv, const Tensor& input, const Tensor& grad_out,
                          Tensor& grad_w, Tensor& grad_b) {
  const std::size_t oc_n = grad_out.dim(0), oh = grad_out.dim(1), ow = grad_out.dim(2);
  const std::size_t taps = conv.weights.size() / oc_n;
  const std::size_t cols = oh * ow;
  const std::vector<double> patches = im2col(input, conv, oh, ow);
  const double* go = grad_out.raw().data();
  double* gw = grad_w.values().data();
  for (std::size_t oc = 0; oc < oc_n; ++oc) {
    const double* grow = go + oc * cols;
    double bsum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) bsum += grow[j];
    grad_b[oc] += bsum;
    for (std::size_t k = 0; k < taps; ++k) {
      const double* prow = patches.data() + k * cols;
      // Four independent partial sums keep the reduction pipelined.
      double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
      std::size_t j = 0;
      for (; j + 4 <= cols; j += 4) {
        a0 += grow[j] * prow[j];
        a1 += grow[j + 1] * prow[j + 1];
        a2 += grow[j + 2] * prow[j + 2];
        a3 += grow[j + 3] * prow[j + 3];
      }
      for (; j < cols; ++j) a0 += grow[j] * prow[j];
      gw[oc * taps + k] += (a0 + a1) + (a2 + a3);
    }
  }
}

Tensor affine_input_adjoint(const Affine& affine, const Tensor& grad_out) {
  const std::size_t n_out = affine.weights.dim(0), n_in = affine.weights.dim(1);
  Tensor grad_in({n_in});
  const double* w = affine.weights.raw().data();
  for (std::size_t o = 0; o < n_out; ++o) {
    const double g = grad_out[o];
    if (g == 0.0) continue;
    for (std::size_t i = 0; i < n_in; ++i) grad_in[i] += w[o * n_in + i] * g;
  }
  return grad_in;
}

void affine_param_adjoint(const Tensor& input, const Tensor& grad_out, Tensor& grad_w,
                          Tensor& grad_b) {
  const std::size_t n_out = grad_out.size(), n_in = input.size();
  for (std::size_t o = 0; o < n_out; ++o) {
    grad_b[o] += grad_out[o];
    for (std::size_t i = 0; i < n_in; ++i) grad_w[o * n_in + i] += grad_out[o] * input[i];
  }
}

Tensor maxpool_route(const MaxPool& pool, const Tensor& input, const Tensor& grad_out) {
  Tensor grad_in(input.shape());
  for (std::size_t c = 0; c < grad_out.dim(0); ++c) {
    for (std::size_t oy = 0; oy < grad_out.dim(1); ++oy) {
      for (std::size_t ox = 0; ox < grad_out.dim(2); ++ox) {
        std::size_t by = oy * pool.stride, bx = ox * pool.stride;
        double best = input.at(c, by, bx);
        for (std::size_t ky = 0; ky < pool.kernel; ++ky) {
          for (std::size_t kx = 0; kx < pool.kernel; ++kx) {
            const std::size_t y = oy * pool.stride + ky, x = ox * pool.stride + kx;
            if (input.at(c, y, x) > best) {
              best = input.at(c, y, x);
              by = y;
              bx = x;
            }
          }
        }
        grad_in.at(c, by, bx) += grad_out.at(c, oy, ox);
      }
    }
  }
  return grad_in;
}

Tensor global_avg_pool_adjoint(const Shape& input_shape, const Tensor& grad_out) {
  Tensor grad_in(input_shape);
  const std::size_t area = input_shape[1] * input_shape[2];
  for (std::size_t c = 0; c < input_shape[0]; ++c) {
    const double g = grad_out[c] / static_cast<double>(area);
    for (std::size_t i = 0; i < area; ++i) grad_in[c * area + i] = g;
  }
  return grad_in;
}

}  // namespace saligraph
