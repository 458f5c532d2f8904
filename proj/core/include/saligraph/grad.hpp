#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "saligraph/model.hpp"
#include "saligraph/tensor.hpp"

namespace saligraph {

namespace rule {

/// Plain differentiation: I(a > 0) R.
struct Standard {};
/// Guided backpropagation: I(a R > 0) R.
struct Guided {};
/// I(a R > tau) R, tau the q-th nearest-rank percentile of a R at the layer.
struct RectGrad {
  double q = 98.0;
};
/// I(|a R| > tau') R, tau' the q-th percentile of |a R|.
struct RectGradMod {
  double q = 98.0;
};

/// LRP-gamma. gamma = 0 is LRP-0.
struct LrpGamma {
  double gamma = 0.0;
};
/// The gamma -> infinity limit (z+ rule).
struct LrpZPlus {};

}  // namespace rule

using ReluBackwardRule = std::variant<rule::Standard, rule::Guided, rule::RectGrad, rule::RectGradMod>;
using RelevanceRule = std::variant<rule::LrpGamma, rule::LrpZPlus>;

std::string rule_name(const ReluBackwardRule& r);
std::string rule_name(const RelevanceRule& r);

/// Throws ValueError when q is outside (0, 100) or gamma is negative.
void validate_rule(const ReluBackwardRule& r);
void validate_rule(const RelevanceRule& r);

/// Reverse-pass signal for every tensor of a ForwardTrace: gradients for
/// backward(), relevances for lrp().
struct GradientBundle {
  Tensor input;
  /// Signal at the output of each layer.
  std::vector<Tensor> outputs;
  /// Per-channel bias gradient (or bias relevance sink); empty for layers
  /// without parameters.
  std::vector<Tensor> bias;
  /// Weight gradients; only filled when requested by the trainer.
  std::vector<Tensor> weights;

  const Tensor& pre(std::size_t layer) const { return layer == 0 ? input : outputs[layer - 1]; }
  const Tensor& post(std::size_t layer) const { return outputs[layer]; }

  friend bool operator==(const GradientBundle&, const GradientBundle&) = default;
};

/// Nearest-rank percentile: the value at 1-based rank ceil(q/100 * n) of the
/// ascending sort.
double nearest_rank_percentile(std::vector<double> values, double q);

/// Applies the ReLU backward rule to the signal arriving at a ReLU output.
/// `activation` is the ReLU output a, `incoming` is R^{l+1}.
Tensor relu_backward(const ReluBackwardRule& r, const Tensor& activation, const Tensor& incoming);

/// Reverse pass seeded with an arbitrary output signal. Convolution, affine,
/// pooling and flatten layers use exact adjoints; ReLUs apply `rule`.
GradientBundle backpropagate(const Model& model, const ForwardTrace& trace, const Tensor& seed,
                             const ReluBackwardRule& r, bool weight_grads = false);

/// Reverse pass seeded with a one-hot on the class logit (pre-softmax).
GradientBundle backward(const Model& model, const ForwardTrace& trace, std::size_t class_index,
                        const ReluBackwardRule& r);

/// Backward pass with the ReLU rule R^l = I(a^l > 0) R^{l+1} evaluated on the
/// post-activation; equals backward(..., Standard) exactly.
GradientBundle guided_counterpart(const Model& model, const ForwardTrace& trace,
                                  std::size_t class_index);

/// Relevance pass seeded with the class logit. Relevance absorbed by biases
/// is kept in `bias` rather than redistributed.
GradientBundle lrp(const Model& model, const ForwardTrace& trace, std::size_t class_index,
                   const RelevanceRule& r);

/// Relevance pass from an arbitrary output relevance vector.
GradientBundle propagate_relevance(const Model& model, const ForwardTrace& trace,
                                   const Tensor& seed, const RelevanceRule& r);

/// Standard-rule gradient of the class logit with respect to the feature map
/// named by `ref`.
Tensor grad_wrt_layer(const Model& model, const ForwardTrace& trace, std::size_t class_index,
                      const LayerRef& ref);

}  // namespace saligraph
