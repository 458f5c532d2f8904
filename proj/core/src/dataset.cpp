#include "saligraph/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "json.hpp"
#include "saligraph/error.hpp"
#include "saligraph/image_io.hpp"

namespace saligraph {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

bool inside(ShapeKind kind, double u, double v, double s) {
  if (u < 0.0 || v < 0.0 || u >= s || v >= s) return false;
  const double half = 0.5 * s;
  switch (kind) {
    case ShapeKind::kSquare:
      return true;
    case ShapeKind::kDisk:
      return (u - half) * (u - half) + (v - half) * (v - half) <= half * half;
    case ShapeKind::kTriangle:
      // Apex at the top center, base along the bottom edge.
      return std::abs(u - half) <= 0.5 * v;
    case ShapeKind::kCross: {
      const double arm = s / 6.0;
      return std::abs(u - half) <= arm || std::abs(v - half) <= arm;
    }
  }
  return false;
}

bool boxes_clear(const PlacedShape& a, const PlacedShape& b) {
  // One-pixel gap between bounding boxes.
  return a.left + a.size + 1 <= b.left || b.left + b.size + 1 <= a.left ||
         a.top + a.size + 1 <= b.top || b.top + b.size + 1 <= a.top;
}

PlacedShape random_shape(ShapeKind kind, const ShapesConfig& cfg, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> size_dist(cfg.min_size, cfg.max_size);
  PlacedShape s;
  s.kind = kind;
  s.size = size_dist(rng);
  std::uniform_int_distribution<std::size_t> pos(1, cfg.image_extent - s.size - 1);
  s.top = pos(rng);
  s.left = pos(rng);
  return s;
}

Tensor render_image(const std::vector<PlacedShape>& shapes, const ShapesConfig& cfg,
                    std::mt19937_64& rng) {
  const std::size_t n = cfg.image_extent;
  Tensor img({1, n, n});
  std::uniform_real_distribution<double> intensity(0.6, 1.0);
  for (const auto& shape : shapes) {
    const Tensor mask = rasterize(shape, n);
    const double value = intensity(rng);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i] > 0.0) img[i] = value;
    }
  }
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
  for (double& v : img.values()) {
    v = std::round(255.0 * std::clamp(v + noise(rng), 0.0, 1.0)) / 255.0;
  }
  return img;
}

Sample make_sample(std::string id, const std::vector<PlacedShape>& shapes, const ShapesConfig& cfg,
                   std::mt19937_64& rng) {
  Sample sample;
  sample.id = std::move(id);
  sample.image = render_image(shapes, cfg, rng);
  for (const auto& shape : shapes) {
    sample.objects.push_back({static_cast<std::size_t>(shape.kind), rasterize(shape, cfg.image_extent)});
  }
  return sample;
}

std::string numbered(const std::string& prefix, std::size_t i) {
  std::ostringstream os;
  os << prefix << std::setw(5) << std::setfill('0') << i;
  return os.str();
}

void write_split(const fs::path& root, const std::string& split, const std::vector<Sample>& samples,
                 bool multi_class, const fs::path& manifest_path) {
  std::error_code ec;
  fs::create_directories(root / split, ec);
  if (ec) throw IoError("cannot create " + (root / split).string() + ": " + ec.message());
  json entries = json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    const std::string stem = split + "/" + numbered("", i);
    write_pgm(to_gray(s.image), root / (stem + ".pgm"));
    json objects = json::array();
    for (std::size_t k = 0; k < s.objects.size(); ++k) {
      const auto& obj = s.objects[k];
      const std::string mask = stem + "_mask" + std::to_string(k) + ".pgm";
      write_pgm(to_gray(obj.mask), root / mask);
      objects.push_back({{"class", kShapeClassNames[obj.class_index]},
                         {"class_index", obj.class_index},
                         {"mask", mask}});
    }
    entries.push_back({{"id", s.id}, {"image", stem + ".pgm"}, {"objects", std::move(objects)}});
  }
  json manifest;
  manifest["classes"] = json(std::vector<std::string>(kShapeClassNames.begin(), kShapeClassNames.end()));
  manifest["split"] = split;
  manifest["multi_class"] = multi_class;
  manifest["entries"] = std::move(entries);
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + manifest_path.string());
  out << manifest.dump(2) << '\n';
}

}  // namespace

Tensor rasterize(const PlacedShape& shape, std::size_t extent) {
  Tensor mask({extent, extent});
  const auto s = static_cast<double>(shape.size);
  for (std::size_t r = 0; r < extent; ++r) {
    for (std::size_t c = 0; c < extent; ++c) {
      const double u = static_cast<double>(c) + 0.5 - static_cast<double>(shape.left);
      const double v = static_cast<double>(r) + 0.5 - static_cast<double>(shape.top);
      if (inside(shape.kind, u, v, s)) mask.at(r, c) = 1.0;
    }
  }
  return mask;
}

double shape_area(const PlacedShape& shape) {
  const auto s = static_cast<double>(shape.size);
  switch (shape.kind) {
    case ShapeKind::kSquare:
      return s * s;
    case ShapeKind::kDisk:
      return std::numbers::pi * s * s / 4.0;
    case ShapeKind::kTriangle:
      return s * s / 2.0;
    case ShapeKind::kCross: {
      const double arm = s / 3.0;
      return 2.0 * s * arm - arm * arm;
    }
  }
  return 0.0;
}

ShapesData synthesize_shapes(const ShapesConfig& cfg) {
  if (cfg.count == 0) throw ValueError("dataset count must be at least 1");
  if (cfg.min_size < 3 || cfg.max_size < cfg.min_size || 2 * cfg.max_size + 3 > cfg.image_extent) {
    throw ValueError("shape sizes do not fit two shapes in a " + std::to_string(cfg.image_extent) +
                     "px image");
  }
  std::mt19937_64 rng(cfg.seed);
  ShapesData data;
  const std::size_t train_count = cfg.train_count ? cfg.train_count : cfg.count;
  for (std::size_t i = 0; i < train_count; ++i) {
    const auto kind = static_cast<ShapeKind>(i % kShapeClassNames.size());
    std::vector<PlacedShape> shapes{random_shape(kind, cfg, rng)};
    data.train.push_back(make_sample(numbered("train_", i), shapes, cfg, rng));
    data.train_shapes.push_back(std::move(shapes));
  }
  std::uniform_int_distribution<std::size_t> class_dist(0, kShapeClassNames.size() - 1);
  for (std::size_t i = 0; i < cfg.count; ++i) {
    const std::size_t a = class_dist(rng);
    std::size_t b = class_dist(rng);
    while (b == a) b = class_dist(rng);
    std::vector<PlacedShape> shapes;
    for (;;) {
      PlacedShape first = random_shape(static_cast<ShapeKind>(a), cfg, rng);
      PlacedShape second = random_shape(static_cast<ShapeKind>(b), cfg, rng);
      if (boxes_clear(first, second)) {
        shapes = {first, second};
        break;
      }
    }
    data.eval.push_back(make_sample(numbered("eval_", i), shapes, cfg, rng));
    data.eval_shapes.push_back(std::move(shapes));
  }
  return data;
}

GeneratedPaths generate_shapes_dataset(const fs::path& out_dir, const ShapesConfig& config) {
  const ShapesData data = synthesize_shapes(config);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    throw IoError("cannot create output directory " + out_dir.string());
  }
  GeneratedPaths paths{out_dir / "train.json", out_dir / "eval.json"};
  write_split(out_dir, "train", data.train, false, paths.train_manifest);
  write_split(out_dir, "eval", data.eval, true, paths.eval_manifest);
  return paths;
}

Dataset load_manifest(const fs::path& path) {
  json manifest;
  {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    try {
      manifest = json::parse(in);
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  }
  Dataset ds;
  try {
    ds.classes = manifest.at("classes").get<std::vector<std::string>>();
    ds.multi_class = manifest.value("multi_class", false);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (!manifest.contains("entries") || !manifest["entries"].is_array()) {
    throw FormatError(path.string() + ": 'entries' must be an array");
  }
  const fs::path root = path.parent_path();
  std::vector<std::string> problems;
  for (std::size_t i = 0; i < manifest["entries"].size(); ++i) {
    const json& entry = manifest["entries"][i];
    const std::string name = entry.value("id", "entry " + std::to_string(i));
    try {
      Sample s;
      s.id = name;
      s.image = to_tensor(read_pgm(root / entry.at("image").get<std::string>()));
      for (const json& obj : entry.at("objects")) {
        const auto cls = obj.at("class_index").get<std::size_t>();
        if (cls >= ds.classes.size()) {
          throw ValueError("unknown class index " + std::to_string(cls));
        }
        if (obj.contains("class") && obj["class"].get<std::string>() != ds.classes[cls]) {
          throw ValueError("class name '" + obj["class"].get<std::string>() +
                           "' does not match index " + std::to_string(cls));
        }
        const GrayImage m = read_pgm(root / obj.at("mask").get<std::string>());
        Tensor mask({m.height, m.width});
        for (std::size_t k = 0; k < m.pixels.size(); ++k) mask[k] = m.pixels[k] > 127 ? 1.0 : 0.0;
        s.objects.push_back({cls, std::move(mask)});
      }
      validate_sample(s, ds.classes.size());
      if (ds.multi_class && s.distinct_classes() < 2) {
        throw ValueError("multi-class manifest entry has fewer than 2 distinct classes");
      }
      ds.samples.push_back(std::move(s));
    } catch (const json::exception& e) {
      problems.push_back(name + ": " + e.what());
    } catch (const Error& e) {
      problems.push_back(name + ": " + e.what());
    }
  }
  if (!problems.empty()) {
    std::string msg = path.string() + ": " + std::to_string(problems.size()) + " invalid entries";
    for (const auto& p : problems) msg += "\n  " + p;
    throw FormatError(msg);
  }
  return ds;
}

std::vector<LabeledImage> training_examples(std::span<const Sample> samples) {
  std::vector<LabeledImage> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.objects.empty()) throw ValueError("training sample '" + s.id + "' has no label");
    out.push_back({s.image, s.objects.front().class_index});
  }
  return out;
}

}  // namespace saligraph
