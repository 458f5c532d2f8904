#pragma once

#include <filesystem>
#include <vector>

#include "saligraph/image_io.hpp"
#include "saligraph/saliency.hpp"
#include "saligraph/tensor.hpp"

namespace saligraph {

/// Min-max normalizes and quantizes a map to 8-bit grayscale. A constant map
/// renders as all zeros.
GrayImage quantize_map(const Tensor& map);

/// Writes the quantized map; the format follows the extension (.pgm / .png).
void render_map(const Tensor& map, const std::filesystem::path& path);
void render_map(const SaliencyMap& map, const std::filesystem::path& path);

/// Side-by-side composite: rows x columns of independently normalized maps
/// separated by `gap` black pixels. All maps must share one extent.
GrayImage compose_grid(const std::vector<std::vector<Tensor>>& rows, std::size_t gap = 1);
void render_grid(const std::vector<std::vector<Tensor>>& rows, const std::filesystem::path& path,
                 std::size_t gap = 1);

}  // namespace saligraph
