#include "saligraph/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "saligraph/error.hpp"
#include "saligraph/parallel.hpp"

namespace saligraph {

namespace {

constexpr double kBlockNormFloor = 1e-12;

Tensor pad_to_multiple(const Tensor& map, std::size_t cell) {
  const std::size_t h = map.dim(0), w = map.dim(1);
  const std::size_t ph = (h + cell - 1) / cell * cell;
  const std::size_t pw = (w + cell - 1) / cell * cell;
  if (ph == h && pw == w) return map;
  Tensor out({ph, pw});
  for (std::size_t r = 0; r < ph; ++r) {
    for (std::size_t c = 0; c < pw; ++c) out.at(r, c) = map.at(std::min(r, h - 1), std::min(c, w - 1));
  }
  return out;
}

// Trials of a pointing-style protocol: one per distinct class of a sample,
// judged against the union of that class's masks.
std::vector<ObjectMask> class_masks(const Sample& sample) {
  std::vector<ObjectMask> out;
  for (const auto& obj : sample.objects) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const ObjectMask& m) { return m.class_index == obj.class_index; });
    if (it == out.end()) {
      out.push_back(obj);
    } else {
      for (std::size_t i = 0; i < obj.mask.size(); ++i) {
        it->mask[i] = std::max(it->mask[i], obj.mask[i]);
      }
    }
  }
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::string describe(const HogParams& p) {
  return "hog_cell=" + std::to_string(p.cell) + ";hog_bins=" + std::to_string(p.bins) +
         ";hog_block=" + std::to_string(p.block) + ";hog_orientation=unsigned";
}

std::vector<double> hog(const Tensor& input, const HogParams& params) {
  if (input.rank() != 2) throw ShapeError("hog expects a 2-D map, got " + to_string(input.shape()));
  if (params.cell == 0 || params.bins == 0 || params.block == 0) {
    throw ValueError("hog parameters must be positive");
  }
  if (input.dim(0) < params.cell || input.dim(1) < params.cell) {
    throw ValueError("hog: map " + to_string(input.shape()) + " is smaller than one " +
                     std::to_string(params.cell) + "px cell");
  }
  const Tensor map = minmax_normalize(pad_to_multiple(input, params.cell));
  const std::size_t h = map.dim(0), w = map.dim(1);
  const std::size_t cells_y = h / params.cell, cells_x = w / params.cell;
  const double bin_width = 180.0 / static_cast<double>(params.bins);

  std::vector<double> hist(cells_y * cells_x * params.bins, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double gx = map.at(y, std::min(x + 1, w - 1)) - map.at(y, x == 0 ? 0 : x - 1);
      const double gy = map.at(std::min(y + 1, h - 1), x) - map.at(y == 0 ? 0 : y - 1, x);
      const double mag = std::hypot(gx, gy);
      if (mag == 0.0) continue;
      double angle = std::atan2(gy, gx) * 180.0 / std::numbers::pi;
      if (angle < 0.0) angle += 180.0;
      if (angle >= 180.0) angle -= 180.0;
      const double pos = angle / bin_width;
      const auto lo_bin = static_cast<std::size_t>(std::floor(pos));
      const double frac = pos - std::floor(pos);
      const std::size_t lo = lo_bin % params.bins;
      const std::size_t hi = (lo + 1) % params.bins;
      double* cell = &hist[((y / params.cell) * cells_x + x / params.cell) * params.bins];
      cell[lo] += mag * (1.0 - frac);
      cell[hi] += mag * frac;
    }
  }

  std::vector<double> out;
  if (cells_y < params.block || cells_x < params.block) return out;
  const std::size_t blocks_y = cells_y - params.block + 1, blocks_x = cells_x - params.block + 1;
  const std::size_t block_len = params.block * params.block * params.bins;
  out.reserve(blocks_y * blocks_x * block_len);
  std::vector<double> v(block_len);
  for (std::size_t by = 0; by < blocks_y; ++by) {
    for (std::size_t bx = 0; bx < blocks_x; ++bx) {
      std::size_t k = 0;
      for (std::size_t cy = by; cy < by + params.block; ++cy) {
        for (std::size_t cx = bx; cx < bx + params.block; ++cx) {
          const double* cell = &hist[(cy * cells_x + cx) * params.bins];
          for (std::size_t b = 0; b < params.bins; ++b) v[k++] = cell[b];
        }
      }
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      for (double x : v) out.push_back(norm < kBlockNormFloor ? 0.0 : x / norm);
    }
  }
  return out;
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    // Positions i..j (0-based) share the mean of ranks i+1..j+1.
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ValueError("spearman: length mismatch " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  if (a.size() < 2) throw ValueError("spearman needs at least 2 observations");
  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    const double da = ra[i] - ma, db = rb[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double map_similarity(const Tensor& a, const Tensor& b, const HogParams& params) {
  const std::vector<double> ha = hog(a, params);
  const std::vector<double> hb = hog(b, params);
  if (ha == hb) return 1.0;
  return spearman(ha, hb);
}

GridPoint argmax_location(const Tensor& map) {
  if (map.rank() != 2) {
    throw ShapeError("argmax_location expects a 2-D map, got " + to_string(map.shape()));
  }
  const auto v = map.values();
  const auto idx = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  return {idx / map.dim(1), idx % map.dim(1)};
}

std::size_t Sample::distinct_classes() const {
  std::set<std::size_t> seen;
  for (const auto& o : objects) seen.insert(o.class_index);
  return seen.size();
}

void validate_sample(const Sample& sample, std::size_t class_count) {
  const std::string name = sample.id.empty() ? std::string("sample") : "sample '" + sample.id + "'";
  if (sample.image.rank() != 3) {
    throw ValueError(name + ": image must be (C x H x W), got " + to_string(sample.image.shape()));
  }
  if (sample.objects.empty()) throw ValueError(name + ": no objects");
  const Shape extent{sample.image.dim(1), sample.image.dim(2)};
  for (const auto& obj : sample.objects) {
    if (obj.mask.shape() != extent) {
      throw ValueError(name + ": mask " + to_string(obj.mask.shape()) +
                       " does not match image extent " + to_string(extent));
    }
    if (obj.class_index >= class_count) {
      throw ValueError(name + ": class index " + std::to_string(obj.class_index) +
                       " outside the " + std::to_string(class_count) + "-class vocabulary");
    }
  }
}

Method make_method(const MethodSpec& spec) {
  return Method{method_id(spec), method_layer(spec).value_or(""),
                [spec](const Model& model, const ForwardTrace& trace, std::size_t cls) {
                  return compute_saliency(model, trace, cls, spec).values;
                }};
}

bool point_hits(const Tensor& mask, GridPoint p, double tolerance) {
  if (mask.at(p.row, p.col) > 0.5) return true;
  if (tolerance <= 0.0) return false;
  const auto r = static_cast<std::ptrdiff_t>(std::ceil(tolerance));
  const auto h = static_cast<std::ptrdiff_t>(mask.dim(0));
  const auto w = static_cast<std::ptrdiff_t>(mask.dim(1));
  for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
    for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
      const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(p.row) + dy;
      const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(p.col) + dx;
      if (y < 0 || x < 0 || y >= h || x >= w) continue;
      if (static_cast<double>(dy * dy + dx * dx) > tolerance * tolerance) continue;
      if (mask.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) > 0.5) return true;
    }
  }
  return false;
}

namespace {

EvalRecord pointing_common(std::span<const Sample> samples, const Method& method,
                           const Model& model, const PointingOptions& options, bool restricted) {
  for (const auto& s : samples) validate_sample(s, model.class_count);
  std::vector<double> hits(samples.size(), 0.0);
  std::vector<std::size_t> trials(samples.size(), 0);
  parallel_for(samples.size(), worker_count(options.threads), [&](std::size_t i) {
    const Sample& sample = samples[i];
    const ForwardTrace trace = forward(model, sample.image);
    const std::vector<ObjectMask> targets = class_masks(sample);
    GridPoint shared{};
    if (restricted) {
      shared = argmax_location(method.fn(model, trace, argmax_class(trace.logits())));
    }
    for (const auto& target : targets) {
      const GridPoint p =
          restricted ? shared : argmax_location(method.fn(model, trace, target.class_index));
      hits[i] += point_hits(target.mask, p, options.tolerance) ? 1.0 : 0.0;
    }
    trials[i] = targets.size();
  });
  EvalRecord rec;
  rec.protocol = restricted ? "restricted_pointing" : "pointing";
  rec.method = method.id;
  rec.layer = method.layer;
  rec.params = "tolerance=" + format_double(options.tolerance);
  rec.trials = std::accumulate(trials.begin(), trials.end(), std::size_t{0});
  const double total = std::accumulate(hits.begin(), hits.end(), 0.0);
  rec.value = rec.trials ? total / static_cast<double>(rec.trials) : 0.0;
  rec.detail = std::move(hits);
  return rec;
}

}  // namespace

EvalRecord pointing_game(std::span<const Sample> samples, const Method& method, const Model& model,
                         const PointingOptions& options) {
  return pointing_common(samples, method, model, options, false);
}

EvalRecord restricted_pointing(std::span<const Sample> samples, const Method& method,
                               const Model& model, const PointingOptions& options) {
  return pointing_common(samples, method, model, options, true);
}

EvalRecord class_sensitivity(std::span<const Sample> samples, const Method& method,
                             const Model& model, const SimilarityOptions& options) {
  if (model.class_count < 2) throw ValueError("class sensitivity needs at least 2 classes");
  for (const auto& s : samples) validate_sample(s, model.class_count);
  std::vector<double> corr(samples.size(), 0.0);
  parallel_for(samples.size(), worker_count(options.threads), [&](std::size_t i) {
    const ForwardTrace trace = forward(model, samples[i].image);
    const Tensor top = method.fn(model, trace, argmax_class(trace.logits()));
    const Tensor bottom = method.fn(model, trace, argmin_class(trace.logits()));
    corr[i] = map_similarity(top, bottom, options.hog);
  });
  EvalRecord rec;
  rec.protocol = "class_sensitivity";
  rec.method = method.id;
  rec.layer = method.layer;
  rec.params = describe(options.hog);
  rec.trials = samples.size();
  rec.value = mean(corr);
  rec.detail = std::move(corr);
  return rec;
}

std::vector<CurvePoint> randomization_curve(std::span<const Sample> samples, const Method& method,
                                            const Model& model,
                                            const RandomizationOptions& options) {
  for (const auto& s : samples) validate_sample(s, model.class_count);
  const std::size_t max_stages = model.parametric_layers().size();
  const std::size_t stages = options.stages.value_or(max_stages);
  if (stages > max_stages) {
    throw ValueError("randomization stages " + std::to_string(stages) + " exceed " +
                     std::to_string(max_stages) + " parametric layers");
  }
  std::vector<Model> models;
  models.reserve(stages + 1);
  for (std::size_t s = 0; s <= stages; ++s) {
    models.push_back(randomize_cascading(model, s, options.seed, options.std));
  }
  // sims[sample][stage]
  std::vector<std::vector<double>> sims(samples.size(), std::vector<double>(stages + 1, 0.0));
  parallel_for(samples.size(), worker_count(options.threads), [&](std::size_t i) {
    const ForwardTrace base = forward(model, samples[i].image);
    const std::size_t cls = argmax_class(base.logits());
    const Tensor original = method.fn(model, base, cls);
    for (std::size_t s = 0; s <= stages; ++s) {
      const ForwardTrace trace = forward(models[s], samples[i].image);
      sims[i][s] = map_similarity(original, method.fn(models[s], trace, cls), options.hog);
    }
  });
  std::vector<CurvePoint> curve(stages + 1);
  for (std::size_t s = 0; s <= stages; ++s) {
    double acc = 0.0;
    for (const auto& row : sims) acc += row[s];
    curve[s] = {s, samples.empty() ? 0.0 : acc / static_cast<double>(samples.size())};
  }
  return curve;
}

}  // namespace saligraph
