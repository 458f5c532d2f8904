#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "saligraph/model.hpp"
#include "saligraph/saliency.hpp"
#include "saligraph/tensor.hpp"

namespace saligraph {

struct HogParams {
  std::size_t cell = 8;
  std::size_t bins = 9;
  std::size_t block = 2;
};

/// HOG descriptor of a 2-D map: min-max normalization, centered differences,
/// unsigned orientation histograms with linear bin interpolation (bin k is
/// centered at k * 180 / bins degrees), overlapping L2-normalized blocks.
/// Maps whose extents are not a multiple of the cell size are padded by edge
/// replication. Throws ValueError when the map is smaller than one cell.
std::vector<double> hog(const Tensor& map, const HogParams& params = {});

/// Ranks with ties sharing their mean (1-based).
std::vector<double> average_ranks(std::span<const double> values);

/// Pearson correlation of average ranks; 0 when either input is constant.
double spearman(std::span<const double> a, std::span<const double> b);

/// Spearman correlation of HOG descriptors. Bitwise-identical maps score 1.
double map_similarity(const Tensor& a, const Tensor& b, const HogParams& params = {});

struct GridPoint {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

/// First maximum in row-major order.
GridPoint argmax_location(const Tensor& map);

/// Binary mask of one object in a sample.
struct ObjectMask {
  std::size_t class_index = 0;
  Tensor mask;  // (H x W), entries 0 or 1
};

struct Sample {
  std::string id;
  Tensor image;
  std::vector<ObjectMask> objects;

  std::size_t distinct_classes() const;
};

/// Throws ValueError when masks do not match the image or a sample is empty.
void validate_sample(const Sample& sample, std::size_t class_count);

/// Saliency as a plain function of (model, trace, class); lets stubs stand in
/// for real methods.
struct Method {
  std::string id;
  std::string layer;
  std::function<Tensor(const Model&, const ForwardTrace&, std::size_t)> fn;
};

Method make_method(const MethodSpec& spec);

struct EvalRecord {
  std::string protocol;
  std::string method;
  std::string layer;
  std::string params;
  double value = 0.0;
  std::size_t trials = 0;
  std::uint64_t seed = 0;
  /// Per-sample values (hits per sample, or correlations).
  std::vector<double> detail;
};

struct PointingOptions {
  /// Hit radius in pixels around the map maximum; 0 demands the exact pixel.
  double tolerance = 0.0;
  /// Worker cap; 0 uses the SALIGRAPH_THREADS / hardware default.
  std::size_t threads = 0;
};

bool point_hits(const Tensor& mask, GridPoint p, double tolerance);

/// One trial per (sample, object class) with a map generated for that class.
EvalRecord pointing_game(std::span<const Sample> samples, const Method& method, const Model& model,
                         const PointingOptions& options = {});

/// One map per sample for the model's top class, judged against every object.
EvalRecord restricted_pointing(std::span<const Sample> samples, const Method& method,
                               const Model& model, const PointingOptions& options = {});

struct SimilarityOptions {
  HogParams hog;
  std::size_t threads = 0;
};

/// Mean HOG-Spearman similarity between maps for the top and bottom logit.
EvalRecord class_sensitivity(std::span<const Sample> samples, const Method& method,
                             const Model& model, const SimilarityOptions& options = {});

struct CurvePoint {
  std::size_t stage = 0;
  double similarity = 0.0;
};

struct RandomizationOptions {
  std::uint64_t seed = 0;
  /// Number of stages beyond 0; defaults to every parametric layer.
  std::optional<std::size_t> stages;
  double std = 0.01;
  HogParams hog;
  std::size_t threads = 0;
};

/// Similarity between the original map and the map under cascading
/// randomization, for stages 0..P. The explained class is the original
/// model's top class throughout.
std::vector<CurvePoint> randomization_curve(std::span<const Sample> samples, const Method& method,
                                            const Model& model,
                                            const RandomizationOptions& options = {});

std::string describe(const HogParams& params);

}  // namespace saligraph
