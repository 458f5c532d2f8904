#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "saligraph/layers.hpp"
#include "saligraph/tensor.hpp"

namespace saligraph {

/// Ordered layer list plus the block labels B1..Bn used to address
/// intermediate feature maps.
struct Model {
  Shape input_shape;
  std::vector<LayerSpec> layers;
  /// (label, layer index of the block's final convolution), in label order.
  std::vector<std::pair<std::string, std::size_t>> blocks;
  std::size_t class_count = 0;

  /// Throws ShapeError / ValueError when the structure is inconsistent.
  void validate() const;

  std::size_t block_layer(const std::string& label) const;
  std::vector<std::size_t> parametric_layers() const;
  std::size_t parameter_count() const;

  friend bool operator==(const Model&, const Model&) = default;
};

/// Cached activations of one forward pass. Layer i reads pre(i) and
/// writes post(i).
struct ForwardTrace {
  Tensor input;
  std::vector<Tensor> outputs;

  const Tensor& pre(std::size_t layer) const { return layer == 0 ? input : outputs[layer - 1]; }
  const Tensor& post(std::size_t layer) const { return outputs[layer]; }
  const Tensor& logits() const { return outputs.back(); }
  std::size_t size() const { return outputs.size(); }
};

ForwardTrace forward(const Model& model, const Tensor& input);

/// Throws ValueError when `trace` was not produced by a model of this shape.
void check_trace(const Model& model, const ForwardTrace& trace);

std::size_t argmax_class(const Tensor& logits);
std::size_t argmin_class(const Tensor& logits);

/// A block label ("B2") or a raw layer index.
using LayerRef = std::variant<std::string, std::size_t>;

std::string to_string(const LayerRef& ref);
LayerRef parse_layer_ref(const std::string& text);

/// Index of the layer whose output is the feature map `ref` denotes. Block
/// labels resolve to the ReLU that follows the block's final convolution.
/// Throws ValueError when that output is not spatial (C x H x W).
std::size_t activation_layer(const Model& model, const LayerRef& ref);

struct MiniVggConfig {
  std::vector<std::size_t> channels{8, 16, 32, 32};
  std::size_t input_channels = 1;
  std::size_t input_extent = 32;
  std::size_t class_count = 4;
  std::uint64_t seed = 0;
  /// Fixed standard deviation for every weight; unset means fan-in scaled
  /// N(0, 2 / fan_in).
  std::optional<double> init_std;
};

/// Blocks of Conv3x3-ReLU-Conv3x3-ReLU-MaxPool2 followed by Flatten-Affine.
/// Weights are drawn from a seeded normal distribution, biases start at zero.
Model build_minivgg(const MiniVggConfig& config);

/// Same conv blocks but with a GlobalAvgPool-Affine head, the setting in
/// which GradCAM at the last block reduces to CAM.
Model build_gap_convnet(const MiniVggConfig& config);

/// Redraws weights and biases of the last `stages` parametric layers
/// (counted from the output) i.i.d. from N(0, std). Each layer's draw
/// depends only on (seed, its position from the output), so nested stage
/// counts agree on the layers they share.
Model randomize_cascading(const Model& model, std::size_t stages, std::uint64_t seed,
                          double std = 0.01);

struct LabeledImage {
  Tensor image;
  std::size_t label = 0;
};

struct TrainConfig {
  std::size_t epochs = 30;
  double learning_rate = 0.05;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
};

struct TrainResult {
  Model model;
  /// Running mean loss of each epoch.
  std::vector<double> epoch_loss;
  double train_accuracy = 0.0;
};

/// Minibatch SGD on softmax cross-entropy. The input model is not modified.
/// Trained parameters are rounded to float32 so they survive save/load.
TrainResult train_toy(const Model& model, std::span<const LabeledImage> data,
                      const TrainConfig& config);

double mean_loss(const Model& model, std::span<const LabeledImage> data);
double accuracy(const Model& model, std::span<const LabeledImage> data);

/// Rounds every parameter to the nearest float32.
Model round_to_float32(const Model& model);

/// Writes `arch.json` and `weights.bin` (float32, little-endian) into `dir`.
void save_model(const Model& model, const std::filesystem::path& dir);
Model load_model(const std::filesystem::path& dir);

}  // namespace saligraph
