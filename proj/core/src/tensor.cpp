#include "saligraph/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "saligraph/error.hpp"

namespace saligraph {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

namespace {

void check_extents(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-D map, got " + to_string(t.shape()));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + to_string(shape_) + " needs " +
                     std::to_string(shape_size(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
  if (!all_finite()) throw ValueError("tensor data contains non-finite values");
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t h = rows.size();
  const std::size_t w = h ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(h * w);
  for (const auto& row : rows) {
    if (row.size() != w) throw ShapeError("ragged rows in matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({h, w}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::min() const {
  if (data_.empty()) throw ValueError("min of empty tensor");
  return *std::min_element(data_.begin(), data_.end());
}

double Tensor::max() const {
  if (data_.empty()) throw ValueError("max of empty tensor");
  return *std::max_element(data_.begin(), data_.end());
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "subtract");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Tensor operator*(double s, const Tensor& a) {
  Tensor out = a;
  for (double& v : out.values()) v *= s;
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

Tensor abs(const Tensor& a) {
  Tensor out = a;
  for (double& v : out.values()) v = std::abs(v);
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = a;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor bilinear_upsample(const Tensor& map, std::size_t out_h, std::size_t out_w) {
  require_2d(map, "bilinear_upsample");
  const std::size_t h = map.dim(0);
  const std::size_t w = map.dim(1);
  if (out_h < h || out_w < w) {
    throw ValueError("bilinear_upsample: cannot downscale " + to_string(map.shape()) + " to (" +
                     std::to_string(out_h) + "x" + std::to_string(out_w) + ")");
  }
  if (out_h == h && out_w == w) return map;

  // Source coordinate of output index i along an axis (corner-aligned).
  auto source = [](std::size_t i, std::size_t in, std::size_t out, std::size_t& lo,
                   std::size_t& hi, double& frac) {
    if (in == 1 || out == 1) {
      lo = hi = 0;
      frac = 0.0;
      return;
    }
    const double pos = static_cast<double>(i) * static_cast<double>(in - 1) /
                       static_cast<double>(out - 1);
    lo = std::min(static_cast<std::size_t>(pos), in - 1);
    hi = std::min(lo + 1, in - 1);
    frac = pos - static_cast<double>(lo);
  };

  Tensor out({out_h, out_w});
  for (std::size_t r = 0; r < out_h; ++r) {
    std::size_t r0, r1;
    double fr;
    source(r, h, out_h, r0, r1, fr);
    for (std::size_t c = 0; c < out_w; ++c) {
      std::size_t c0, c1;
      double fc;
      source(c, w, out_w, c0, c1, fc);
      const double top = std::lerp(map.at(r0, c0), map.at(r0, c1), fc);
      const double bottom = std::lerp(map.at(r1, c0), map.at(r1, c1), fc);
      out.at(r, c) = std::lerp(top, bottom, fr);
    }
  }
  return out;
}

Tensor minmax_normalize(const Tensor& map) {
  require_2d(map, "minmax_normalize");
  const double lo = map.min();
  const double hi = map.max();
  Tensor out(map.shape());
  if (!(hi > lo)) return out;
  const double span = hi - lo;
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = (map[i] - lo) / span;
  return out;
}

Tensor channel_abs_sum(const Tensor& t) {
  if (t.rank() == 2) return abs(t);
  if (t.rank() != 3) {
    throw ShapeError("channel_abs_sum: expected (C x H x W), got " + to_string(t.shape()));
  }
  const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
  Tensor out({h, w});
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < h * w; ++i) out[i] += std::abs(t[k * h * w + i]);
  }
  return out;
}

}  // namespace saligraph
