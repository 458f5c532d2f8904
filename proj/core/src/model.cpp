#include "saligraph/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "saligraph/error.hpp"
#include "saligraph/grad.hpp"

namespace saligraph {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string layer_label(std::size_t i, const LayerSpec& layer) {
  return "layer " + std::to_string(i) + " (" + layer_kind(layer) + ")";
}

Tensor normal_tensor(Shape shape, std::mt19937_64& rng, double std) {
  std::normal_distribution<double> dist(0.0, std);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = static_cast<double>(static_cast<float>(dist(rng)));
  return t;
}

double init_std(const MiniVggConfig& config, std::size_t fan_in) {
  return config.init_std.value_or(std::sqrt(2.0 / static_cast<double>(fan_in)));
}

Conv2d conv3x3(std::size_t in, std::size_t out, std::mt19937_64& rng, const MiniVggConfig& config) {
  return Conv2d{normal_tensor({out, in, 3, 3}, rng, init_std(config, in * 9)), Tensor({out}), 1, 1};
}

// Conv blocks shared by both architectures; fills `model.blocks`.
Shape append_blocks(Model& model, const MiniVggConfig& config, std::mt19937_64& rng) {
  if (config.channels.size() < 2) throw ValueError("MiniVGG needs at least 2 blocks");
  if (config.input_channels == 0 || config.input_extent == 0 || config.class_count == 0) {
    throw ValueError("MiniVGG extents and class count must be positive");
  }
  model.input_shape = {config.input_channels, config.input_extent, config.input_extent};
  std::size_t in_ch = config.input_channels;
  std::size_t extent = config.input_extent;
  for (std::size_t b = 0; b < config.channels.size(); ++b) {
    const std::size_t ch = config.channels[b];
    if (ch == 0) throw ValueError("MiniVGG channel counts must be positive");
    if (extent < 2) {
      throw ShapeError("MiniVGG: spatial extent collapses below 1 at block B" +
                       std::to_string(b + 1) + " for input extent " +
                       std::to_string(config.input_extent));
    }
    model.layers.emplace_back(conv3x3(in_ch, ch, rng, config));
    model.layers.emplace_back(Relu{});
    model.layers.emplace_back(conv3x3(ch, ch, rng, config));
    model.blocks.emplace_back("B" + std::to_string(b + 1), model.layers.size() - 1);
    model.layers.emplace_back(Relu{});
    model.layers.emplace_back(MaxPool{2, 2});
    extent /= 2;
    in_ch = ch;
  }
  return {in_ch, extent, extent};
}

}  // namespace

void Model::validate() const {
  if (layers.empty()) throw ValueError("model has no layers");
  if (class_count == 0) throw ValueError("model class_count must be positive");
  Shape shape = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    try {
      shape = output_shape(layers[i], shape);
    } catch (const ShapeError& e) {
      throw ShapeError(layer_label(i, layers[i]) + ": " + e.what());
    }
  }
  if (!std::holds_alternative<Affine>(layers.back())) {
    throw ValueError("final layer must be Affine, got " + layer_kind(layers.back()));
  }
  if (shape != Shape{class_count}) {
    throw ShapeError("model output " + to_string(shape) + " does not match class_count " +
                     std::to_string(class_count));
  }
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& [label, index] = blocks[b];
    if (label != "B" + std::to_string(b + 1)) {
      throw ValueError("block labels must be B1..Bn in order, got " + label);
    }
    if (index >= layers.size() || !std::holds_alternative<Conv2d>(layers[index])) {
      throw ValueError("block " + label + " must point at a Conv2d layer");
    }
    if (b > 0 && index <= blocks[b - 1].second) {
      throw ValueError("block layer indices must be strictly increasing at " + label);
    }
  }
  for (const auto& layer : layers) {
    if (const auto* c = std::get_if<Conv2d>(&layer)) {
      if (!c->weights.all_finite() || !c->bias.all_finite()) throw ValueError("non-finite weights");
    } else if (const auto* a = std::get_if<Affine>(&layer)) {
      if (!a->weights.all_finite() || !a->bias.all_finite()) throw ValueError("non-finite weights");
    }
  }
}

std::size_t Model::block_layer(const std::string& label) const {
  for (const auto& [name, index] : blocks) {
    if (name == label) return index;
  }
  throw ValueError("unknown block label '" + label + "' (model has " +
                   std::to_string(blocks.size()) + " blocks)");
}

std::vector<std::size_t> Model::parametric_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (is_parametric(layers[i])) out.push_back(i);
  }
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers) {
    if (const auto* c = std::get_if<Conv2d>(&layer)) n += c->weights.size() + c->bias.size();
    if (const auto* a = std::get_if<Affine>(&layer)) n += a->weights.size() + a->bias.size();
  }
  return n;
}

ForwardTrace forward(const Model& model, const Tensor& input) {
  if (input.shape() != model.input_shape) {
    throw ShapeError("input " + to_string(input.shape()) + " does not match model input " +
                     to_string(model.input_shape));
  }
  ForwardTrace trace;
  trace.input = input;
  trace.outputs.reserve(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    try {
      trace.outputs.push_back(apply_layer(trace.pre(i), model.layers[i]));
    } catch (const ShapeError& e) {
      throw ShapeError(layer_label(i, model.layers[i]) + ": " + e.what());
    }
  }
  return trace;
}

void check_trace(const Model& model, const ForwardTrace& trace) {
  if (trace.outputs.size() != model.layers.size() || trace.input.shape() != model.input_shape) {
    throw ValueError("forward trace does not belong to this model");
  }
  if (trace.logits().shape() != Shape{model.class_count}) {
    throw ValueError("forward trace logits do not match the model's class count");
  }
}

std::size_t argmax_class(const Tensor& logits) {
  const auto v = logits.values();
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::size_t argmin_class(const Tensor& logits) {
  const auto v = logits.values();
  return static_cast<std::size_t>(std::min_element(v.begin(), v.end()) - v.begin());
}

std::string to_string(const LayerRef& ref) {
  return std::visit(overloaded{
                        [](const std::string& s) { return s; },
                        [](std::size_t i) { return "layer" + std::to_string(i); },
                    },
                    ref);
}

LayerRef parse_layer_ref(const std::string& text) {
  if (!text.empty() && std::all_of(text.begin(), text.end(), ::isdigit)) {
    return static_cast<std::size_t>(std::stoul(text));
  }
  if (text.rfind("layer", 0) == 0 && text.size() > 5) {
    return static_cast<std::size_t>(std::stoul(text.substr(5)));
  }
  return text;
}

std::size_t activation_layer(const Model& model, const LayerRef& ref) {
  std::size_t layer = 0;
  if (const auto* label = std::get_if<std::string>(&ref)) {
    layer = model.block_layer(*label);
    if (layer + 1 < model.layers.size() && std::holds_alternative<Relu>(model.layers[layer + 1])) {
      ++layer;
    }
  } else {
    layer = std::get<std::size_t>(ref);
    if (layer >= model.layers.size()) {
      throw ValueError("layer index " + std::to_string(layer) + " out of range");
    }
  }
  Shape shape = model.input_shape;
  for (std::size_t i = 0; i <= layer; ++i) shape = output_shape(model.layers[i], shape);
  if (shape.size() != 3) {
    throw ValueError(to_string(ref) + " has no spatial activation (output " + to_string(shape) +
                     ")");
  }
  return layer;
}

Model build_minivgg(const MiniVggConfig& config) {
  std::mt19937_64 rng(config.seed);
  Model model;
  model.class_count = config.class_count;
  const Shape feat = append_blocks(model, config, rng);
  if (feat[1] < 1) {
    throw ShapeError("MiniVGG: spatial extent collapses to 0 before the head for input extent " +
                     std::to_string(config.input_extent));
  }
  model.layers.emplace_back(Flatten{});
  model.layers.emplace_back(Affine{normal_tensor({config.class_count, shape_size(feat)}, rng,
                                                 init_std(config, shape_size(feat))),
                                   Tensor({config.class_count})});
  model.validate();
  return model;
}

Model build_gap_convnet(const MiniVggConfig& config) {
  std::mt19937_64 rng(config.seed);
  Model model;
  model.class_count = config.class_count;
  Shape feat = append_blocks(model, config, rng);
  if (feat[1] < 1) throw ShapeError("GAP convnet: spatial extent collapses to 0");
  // CAM reads the last block's ReLU output directly.
  model.layers.pop_back();
  model.layers.emplace_back(GlobalAvgPool{});
  model.layers.emplace_back(Affine{normal_tensor({config.class_count, feat[0]}, rng,
                                                 init_std(config, feat[0])),
                                   Tensor({config.class_count})});
  model.validate();
  return model;
}

Model randomize_cascading(const Model& model, std::size_t stages, std::uint64_t seed, double std) {
  const std::vector<std::size_t> params = model.parametric_layers();
  if (stages > params.size()) {
    throw ValueError("randomization stages " + std::to_string(stages) + " exceed the " +
                     std::to_string(params.size()) + " parametric layers");
  }
  Model out = model;
  for (std::size_t s = 0; s < stages; ++s) {
    const std::size_t layer = params[params.size() - 1 - s];
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(s), 0x5a11u};
    std::mt19937_64 rng(seq);
    std::visit(overloaded{
                   [&](Conv2d& c) {
                     c.weights = normal_tensor(c.weights.shape(), rng, std);
                     c.bias = normal_tensor(c.bias.shape(), rng, std);
                   },
                   [&](Affine& a) {
                     a.weights = normal_tensor(a.weights.shape(), rng, std);
                     a.bias = normal_tensor(a.bias.shape(), rng, std);
                   },
                   [](auto&) {},
               },
               out.layers[layer]);
  }
  return out;
}

Model round_to_float32(const Model& model) {
  Model out = model;
  auto round_all = [](Tensor& t) {
    for (double& v : t.values()) v = static_cast<double>(static_cast<float>(v));
  };
  for (auto& layer : out.layers) {
    std::visit(overloaded{
                   [&](Conv2d& c) {
                     round_all(c.weights);
                     round_all(c.bias);
                   },
                   [&](Affine& a) {
                     round_all(a.weights);
                     round_all(a.bias);
                   },
                   [](auto&) {},
               },
               layer);
  }
  return out;
}

namespace {

// Softmax cross-entropy loss and its gradient with respect to the logits.
double softmax_xent(const Tensor& logits, std::size_t label, Tensor* grad) {
  const double m = logits.max();
  double z = 0.0;
  for (double v : logits.values()) z += std::exp(v - m);
  const double log_z = std::log(z) + m;
  if (grad) {
    *grad = Tensor(logits.shape());
    for (std::size_t k = 0; k < logits.size(); ++k) (*grad)[k] = std::exp(logits[k] - log_z);
    (*grad)[label] -= 1.0;
  }
  return log_z - logits[label];
}

void check_labels(const Model& model, std::span<const LabeledImage> data) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].label >= model.class_count) {
      throw ValueError("training example " + std::to_string(i) + " has label " +
                       std::to_string(data[i].label) + " >= class count " +
                       std::to_string(model.class_count));
    }
  }
}

}  // namespace

double mean_loss(const Model& model, std::span<const LabeledImage> data) {
  check_labels(model, data);
  if (data.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : data) total += softmax_xent(forward(model, ex.image).logits(), ex.label, nullptr);
  return total / static_cast<double>(data.size());
}

double accuracy(const Model& model, std::span<const LabeledImage> data) {
  if (data.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& ex : data) hits += argmax_class(forward(model, ex.image).logits()) == ex.label;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

TrainResult train_toy(const Model& model, std::span<const LabeledImage> data,
                      const TrainConfig& config) {
  model.validate();
  check_labels(model, data);
  if (config.batch_size == 0) throw ValueError("batch size must be positive");
  if (!(config.learning_rate > 0.0)) throw ValueError("learning rate must be positive");

  TrainResult result{model, {}, 0.0};
  if (config.epochs == 0 || data.empty()) {
    result.train_accuracy = accuracy(model, data);
    return result;
  }
  Model& m = result.model;
  const std::vector<std::size_t> params = m.parametric_layers();
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<Tensor> acc_w(m.layers.size()), acc_b(m.layers.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      for (std::size_t p : params) {
        std::visit(overloaded{
                       [&](const Conv2d& c) {
                         acc_w[p] = Tensor(c.weights.shape());
                         acc_b[p] = Tensor(c.bias.shape());
                       },
                       [&](const Affine& a) {
                         acc_w[p] = Tensor(a.weights.shape());
                         acc_b[p] = Tensor(a.bias.shape());
                       },
                       [](const auto&) {},
                   },
                   m.layers[p]);
      }
      for (std::size_t k = start; k < end; ++k) {
        const LabeledImage& ex = data[order[k]];
        const ForwardTrace trace = forward(m, ex.image);
        Tensor seed;
        const double loss = softmax_xent(trace.logits(), ex.label, &seed);
        if (!std::isfinite(loss)) {
          throw Error("non-finite training loss at epoch " + std::to_string(epoch) +
                      ", example " + std::to_string(order[k]));
        }
        epoch_loss += loss;
        const GradientBundle g = backpropagate(m, trace, seed, rule::Standard{}, true);
        for (std::size_t p : params) {
          for (std::size_t i = 0; i < acc_w[p].size(); ++i) acc_w[p][i] += g.weights[p][i];
          for (std::size_t i = 0; i < acc_b[p].size(); ++i) acc_b[p][i] += g.bias[p][i];
        }
      }
      const double step = config.learning_rate / static_cast<double>(end - start);
      for (std::size_t p : params) {
        auto update = [&](Tensor& w, Tensor& b) {
          for (std::size_t i = 0; i < w.size(); ++i) w[i] -= step * acc_w[p][i];
          for (std::size_t i = 0; i < b.size(); ++i) b[i] -= step * acc_b[p][i];
        };
        std::visit(overloaded{
                       [&](Conv2d& c) { update(c.weights, c.bias); },
                       [&](Affine& a) { update(a.weights, a.bias); },
                       [](auto&) {},
                   },
                   m.layers[p]);
      }
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(data.size()));
  }
  m = round_to_float32(m);
  m.validate();
  result.train_accuracy = accuracy(m, data);
  return result;
}

}  // namespace saligraph
