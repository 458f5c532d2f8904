#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "saligraph/error.hpp"
#include "saligraph/model.hpp"

namespace saligraph {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr const char* kFormat = "saligraph-weights";
constexpr int kVersion = 1;

void append_f32(std::string& blob, const Tensor& t) {
  for (double v : t.values()) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    char bytes[4];
    std::memcpy(bytes, &bits, 4);
    blob.append(bytes, 4);
  }
}

json tensor_entry(const Tensor& t, std::size_t& offset) {
  json j;
  j["shape"] = t.shape();
  j["offset"] = offset;
  j["bytes"] = t.size() * 4;
  offset += t.size() * 4;
  return j;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <class T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw FormatError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(where + ": bad field '" + key + "': " + e.what());
  }
}

Tensor read_tensor(const json& entry, const std::string& blob, std::size_t& expected_offset,
                   const std::string& where) {
  const auto shape = field<Shape>(entry, "shape", where);
  const auto offset = field<std::size_t>(entry, "offset", where);
  const auto bytes = field<std::size_t>(entry, "bytes", where);
  if (shape.empty() || std::find(shape.begin(), shape.end(), 0) != shape.end()) {
    throw FormatError(where + ": invalid shape " + to_string(shape));
  }
  const std::size_t count = shape_size(shape);
  if (bytes != count * 4) {
    throw FormatError(where + ": declared byte length " + std::to_string(bytes) +
                      " does not match shape " + to_string(shape) + " (" +
                      std::to_string(count * 4) + " bytes)");
  }
  if (offset != expected_offset) {
    throw FormatError(where + ": offset " + std::to_string(offset) + " breaks layer order (expected " +
                      std::to_string(expected_offset) + ")");
  }
  if (offset + bytes > blob.size()) {
    throw FormatError(where + ": weights.bin truncated (needs " + std::to_string(offset + bytes) +
                      " bytes, has " + std::to_string(blob.size()) + ")");
  }
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, blob.data() + offset + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    data[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  expected_offset += bytes;
  try {
    return Tensor(shape, std::move(data));
  } catch (const ValueError& e) {
    throw FormatError(where + ": " + e.what());
  }
}

}  // namespace

void save_model(const Model& model, const fs::path& dir) {
  model.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  json arch;
  arch["format"] = kFormat;
  arch["version"] = kVersion;
  arch["input_shape"] = model.input_shape;
  arch["class_count"] = model.class_count;
  json blocks = json::object();
  for (const auto& [label, index] : model.blocks) blocks[label] = index;
  arch["block_index"] = blocks;

  std::string blob;
  std::size_t offset = 0;
  json layers = json::array();
  for (const auto& layer : model.layers) {
    json j;
    j["kind"] = layer_kind(layer);
    if (const auto* c = std::get_if<Conv2d>(&layer)) {
      j["stride"] = c->stride;
      j["padding"] = c->padding;
      j["weights"] = tensor_entry(c->weights, offset);
      j["bias"] = tensor_entry(c->bias, offset);
      append_f32(blob, c->weights);
      append_f32(blob, c->bias);
    } else if (const auto* a = std::get_if<Affine>(&layer)) {
      j["weights"] = tensor_entry(a->weights, offset);
      j["bias"] = tensor_entry(a->bias, offset);
      append_f32(blob, a->weights);
      append_f32(blob, a->bias);
    } else if (const auto* p = std::get_if<MaxPool>(&layer)) {
      j["kernel"] = p->kernel;
      j["stride"] = p->stride;
    }
    layers.push_back(std::move(j));
  }
  arch["layers"] = std::move(layers);
  arch["weights_bytes"] = blob.size();

  std::ofstream a(dir / "arch.json", std::ios::binary | std::ios::trunc);
  std::ofstream w(dir / "weights.bin", std::ios::binary | std::ios::trunc);
  if (!a || !w) throw IoError("cannot write model files into " + dir.string());
  a << arch.dump(2) << '\n';
  w.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!a || !w) throw IoError("failed writing model files into " + dir.string());
}

Model load_model(const fs::path& dir) {
  json arch;
  try {
    arch = json::parse(read_file(dir / "arch.json"));
  } catch (const json::exception& e) {
    throw FormatError("arch.json: " + std::string(e.what()));
  }
  const std::string blob = read_file(dir / "weights.bin");
  const std::string where = (dir / "arch.json").string();
  if (field<std::string>(arch, "format", where) != kFormat) {
    throw FormatError(where + ": not a saligraph weights header");
  }
  if (field<int>(arch, "version", where) != kVersion) {
    throw FormatError(where + ": unsupported version");
  }

  Model model;
  model.input_shape = field<Shape>(arch, "input_shape", where);
  model.class_count = field<std::size_t>(arch, "class_count", where);
  const json blocks = field<json>(arch, "block_index", where);
  if (!blocks.is_object()) throw FormatError(where + ": block_index must be an object");
  for (const auto& [label, index] : blocks.items()) {
    model.blocks.emplace_back(label, index.get<std::size_t>());
  }

  std::size_t offset = 0;
  const json layers = field<json>(arch, "layers", where);
  if (!layers.is_array()) throw FormatError(where + ": layers must be an array");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const json& j = layers[i];
    const std::string at = where + " layer " + std::to_string(i);
    const auto kind = field<std::string>(j, "kind", at);
    if (kind == "Conv2d") {
      Conv2d c;
      c.stride = field<std::size_t>(j, "stride", at);
      c.padding = field<std::size_t>(j, "padding", at);
      c.weights = read_tensor(field<json>(j, "weights", at), blob, offset, at + " weights");
      c.bias = read_tensor(field<json>(j, "bias", at), blob, offset, at + " bias");
      model.layers.emplace_back(std::move(c));
    } else if (kind == "Affine") {
      Affine a;
      a.weights = read_tensor(field<json>(j, "weights", at), blob, offset, at + " weights");
      a.bias = read_tensor(field<json>(j, "bias", at), blob, offset, at + " bias");
      model.layers.emplace_back(std::move(a));
    } else if (kind == "ReLU") {
      model.layers.emplace_back(Relu{});
    } else if (kind == "MaxPool") {
      model.layers.emplace_back(
          MaxPool{field<std::size_t>(j, "kernel", at), field<std::size_t>(j, "stride", at)});
    } else if (kind == "Flatten") {
      model.layers.emplace_back(Flatten{});
    } else if (kind == "GlobalAvgPool") {
      model.layers.emplace_back(GlobalAvgPool{});
    } else {
      throw FormatError(at + ": unknown layer kind '" + kind + "'");
    }
  }
  if (offset != blob.size()) {
    throw FormatError(where + ": weights.bin has " + std::to_string(blob.size()) +
                      " bytes, header accounts for " + std::to_string(offset));
  }
  try {
    model.validate();
  } catch (const Error& e) {
    throw FormatError(where + ": inconsistent model: " + e.what());
  }
  return model;
}

}  // namespace saligraph
