#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "saligraph/metrics.hpp"
#include "saligraph/model.hpp"

namespace saligraph {

enum class ShapeKind : std::size_t { kSquare = 0, kDisk = 1, kTriangle = 2, kCross = 3 };

inline constexpr std::array<const char*, 4> kShapeClassNames{"square", "disk", "triangle",
                                                             "cross"};

/// A shape occupying the square box [top, top+size) x [left, left+size).
struct PlacedShape {
  ShapeKind kind = ShapeKind::kSquare;
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t size = 0;
};

/// Pixel-center rasterization of `shape` on an (extent x extent) grid.
Tensor rasterize(const PlacedShape& shape, std::size_t extent);
/// Continuous area of the shape.
double shape_area(const PlacedShape& shape);

struct ShapesConfig {
  /// Number of two-object evaluation images.
  std::size_t count = 200;
  /// Number of single-object training images; 0 means `count`.
  std::size_t train_count = 0;
  std::size_t image_extent = 32;
  std::size_t min_size = 9;
  std::size_t max_size = 14;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;
};

struct ShapesData {
  std::vector<Sample> train;
  std::vector<Sample> eval;
  std::vector<std::vector<PlacedShape>> train_shapes;
  std::vector<std::vector<PlacedShape>> eval_shapes;
};

/// In-memory dataset; pixel values are already quantized to k/255 so the
/// result equals what load_manifest() reads back from disk.
ShapesData synthesize_shapes(const ShapesConfig& config);

/// Samples plus the class vocabulary of a manifest.
struct Dataset {
  std::vector<std::string> classes;
  bool multi_class = false;
  std::vector<Sample> samples;
};

struct GeneratedPaths {
  std::filesystem::path train_manifest;
  std::filesystem::path eval_manifest;
};

/// Writes PGM images, per-object PGM masks, `train.json` and `eval.json`.
GeneratedPaths generate_shapes_dataset(const std::filesystem::path& out_dir,
                                       const ShapesConfig& config);

/// Reads a manifest and every image and mask it references. All invalid
/// entries are reported together in one FormatError.
Dataset load_manifest(const std::filesystem::path& path);

std::vector<LabeledImage> training_examples(std::span<const Sample> samples);

}  // namespace saligraph
