#include "saligraph/render.hpp"

#include "saligraph/error.hpp"

namespace saligraph {

GrayImage quantize_map(const Tensor& map) {
  if (map.rank() == 3 && map.dim(0) == 1) return quantize_map(map.reshaped({map.dim(1), map.dim(2)}));
  return to_gray(minmax_normalize(map));
}

void render_map(const Tensor& map, const std::filesystem::path& path) {
  write_image(quantize_map(map), path);
}

void render_map(const SaliencyMap& map, const std::filesystem::path& path) {
  render_map(map.values, path);
}

GrayImage compose_grid(const std::vector<std::vector<Tensor>>& rows, std::size_t gap) {
  if (rows.empty() || rows.front().empty()) throw ValueError("compose_grid needs at least one map");
  const Shape extent = rows.front().front().shape();
  if (extent.size() != 2) throw ShapeError("compose_grid expects 2-D maps");
  std::size_t cols = 0;
  for (const auto& row : rows) cols = std::max(cols, row.size());
  const std::size_t h = extent[0], w = extent[1];
  GrayImage out;
  out.height = rows.size() * h + (rows.size() - 1) * gap;
  out.width = cols * w + (cols - 1) * gap;
  out.pixels.assign(out.height * out.width, 0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      if (rows[r][c].shape() != extent) {
        throw ShapeError("compose_grid: map " + to_string(rows[r][c].shape()) +
                         " differs from " + to_string(extent));
      }
      const GrayImage tile = quantize_map(rows[r][c]);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          out.pixels[(r * (h + gap) + y) * out.width + c * (w + gap) + x] = tile.pixels[y * w + x];
        }
      }
    }
  }
  return out;
}

void render_grid(const std::vector<std::vector<Tensor>>& rows, const std::filesystem::path& path,
                 std::size_t gap) {
  write_image(compose_grid(rows, gap), path);
}

}  // namespace saligraph
