#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <variant>

#include "saligraph/grad.hpp"
#include "saligraph/model.hpp"
#include "saligraph/tensor.hpp"

namespace saligraph {

/// Input-resolution saliency map with its provenance.
struct SaliencyMap {
  Tensor values;
  std::string method;
  std::optional<std::string> layer;
  std::size_t class_index = 0;
};

/// Where GradCAM_Pos applies the absolute value.
enum class PosPlacement {
  kChannelWeights,  // S = sum_k |w_k| A^k
  kGradients,       // w_k = mean_ij |g^k_ij|
};

/// Positive filter applied to gradients by GradMid.
enum class PositiveFilter { kAbs, kRelu };

namespace method {

struct GradCam {
  LayerRef layer;
};
struct GradCamPos {
  LayerRef layer;
  PosPlacement placement = PosPlacement::kChannelWeights;
};
struct GradCamPP {
  LayerRef layer;
};
struct GradMid {
  LayerRef layer;
  PositiveFilter filter = PositiveFilter::kAbs;
};
struct FullGrad {};
struct CumulativeGradCam {};
struct CumulativeGradMid {};
struct Gradients {};
struct GuidedBP {};
struct RectGrad {
  double q = 98.0;
};
struct RectGradMod {
  double q = 98.0;
};
struct Lrp {
  RelevanceRule rule = rule::LrpZPlus{};
};

}  // namespace method

using MethodSpec =
    std::variant<method::GradCam, method::GradCamPos, method::GradCamPP, method::GradMid,
                 method::FullGrad, method::CumulativeGradCam, method::CumulativeGradMid,
                 method::Gradients, method::GuidedBP, method::RectGrad, method::RectGradMod,
                 method::Lrp>;

/// Display id such as "GradCAM_Pos B1" or "RectGrad(q=98)".
std::string method_id(const MethodSpec& spec);
std::optional<std::string> method_layer(const MethodSpec& spec);

// Layer-resolution aggregation kernels. `act` and `grad` are (C x H x W).

/// Sum_k w_k A^k with w_k the spatial mean of the gradient (before ReLU).
Tensor gradcam_weighted_sum(const Tensor& act, const Tensor& grad);
Tensor gradcam_layer_map(const Tensor& act, const Tensor& grad);
Tensor gradcam_pos_layer_map(const Tensor& act, const Tensor& grad,
                             PosPlacement placement = PosPlacement::kChannelWeights);
/// GradCAM++ with the closed-form coefficients
/// alpha = g^2 / (2 g^2 + sum_ab A_ab g^3), zero where the denominator
/// vanishes.
Tensor gradcam_pp_layer_map(const Tensor& act, const Tensor& grad);
Tensor gradmid_layer_map(const Tensor& grad, PositiveFilter filter = PositiveFilter::kAbs);

/// FullGrad post-processing: |T| summed over channels, upsampled to
/// (h x w), then min-max normalized.
Tensor fullgrad_psi(const Tensor& t, std::size_t h, std::size_t w);

// Map constructions at input resolution.

SaliencyMap gradcam(const Model& model, const ForwardTrace& trace, std::size_t class_index,
                    const LayerRef& layer);
SaliencyMap gradcam_pos(const Model& model, const ForwardTrace& trace, std::size_t class_index,
                        const LayerRef& layer,
                        PosPlacement placement = PosPlacement::kChannelWeights);
SaliencyMap gradcam_pp(const Model& model, const ForwardTrace& trace, std::size_t class_index,
                       const LayerRef& layer);
SaliencyMap gradmid(const Model& model, const ForwardTrace& trace, std::size_t class_index,
                    const LayerRef& layer, PositiveFilter filter = PositiveFilter::kAbs);
SaliencyMap fullgrad(const Model& model, const ForwardTrace& trace, std::size_t class_index);

enum class CumulativeKind { kGradCamPos, kGradMid };
/// Sum over every block of the min-max normalized per-block map.
SaliencyMap cumulative(const Model& model, const ForwardTrace& trace, std::size_t class_index,
                       CumulativeKind kind);

/// Input-space map from a reverse pass: |signal| summed over input channels.
/// Accepts Gradients, GuidedBP, RectGrad, RectGradMod and Lrp specs.
SaliencyMap propagation_map(const Model& model, const ForwardTrace& trace,
                            std::size_t class_index, const MethodSpec& spec);

/// Dispatches any MethodSpec.
SaliencyMap compute_saliency(const Model& model, const ForwardTrace& trace,
                             std::size_t class_index, const MethodSpec& spec);

/// Throws ValueError when `spec` names a block the model lacks or carries an
/// invalid rule parameter.
void validate_method(const Model& model, const MethodSpec& spec);

}  // namespace saligraph
