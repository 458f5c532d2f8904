#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "saligraph/tensor.hpp"

namespace saligraph {

/// 8-bit grayscale raster.
struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
};

/// Binary PGM ("P5", maxval <= 255).
void write_pgm(const GrayImage& image, const std::filesystem::path& path);
GrayImage read_pgm(const std::filesystem::path& path);

void write_png(const GrayImage& image, const std::filesystem::path& path);

/// Writes PGM or PNG depending on the extension (".pgm" / ".png").
void write_image(const GrayImage& image, const std::filesystem::path& path);

/// Quantizes values in [0, 1] to bytes (round to nearest, clamped).
GrayImage to_gray(const Tensor& map);
/// (1 x H x W) tensor with values byte / 255.
Tensor to_tensor(const GrayImage& image);

}  // namespace saligraph
