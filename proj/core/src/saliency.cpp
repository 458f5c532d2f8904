#include "saligraph/saliency.hpp"

#include <cmath>
#include <sstream>

#include "saligraph/error.hpp"

namespace saligraph {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

constexpr double kAlphaDenominatorFloor = 1e-12;

void require_pair(const Tensor& act, const Tensor& grad, const char* op) {
  if (act.rank() != 3 || act.shape() != grad.shape()) {
    throw ShapeError(std::string(op) + ": activation " + to_string(act.shape()) +
                     " and gradient " + to_string(grad.shape()) + " must be matching (C x H x W)");
  }
}

// Sum_k weight[k] * A^k.
Tensor weighted_channel_sum(const Tensor& act, const std::vector<double>& weight) {
  const std::size_t c = act.dim(0), h = act.dim(1), w = act.dim(2);
  Tensor out({h, w});
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < h * w; ++i) out[i] += weight[k] * act[k * h * w + i];
  }
  return out;
}

std::vector<double> spatial_mean(const Tensor& grad, bool absolute) {
  const std::size_t c = grad.dim(0), area = grad.dim(1) * grad.dim(2);
  std::vector<double> w(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < area; ++i) {
      const double g = grad[k * area + i];
      acc += absolute ? std::abs(g) : g;
    }
    w[k] = acc / static_cast<double>(area);
  }
  return w;
}

Tensor to_input_size(const Model& model, const Tensor& layer_map) {
  return bilinear_upsample(layer_map, model.input_shape[1], model.input_shape[2]);
}

struct LayerSignals {
  Tensor act;
  Tensor grad;
};

LayerSignals layer_signals(const Model& model, const ForwardTrace& trace, std::size_t class_index,
                           const LayerRef& ref) {
  const std::size_t layer = activation_layer(model, ref);
  GradientBundle g = backward(model, trace, class_index, rule::Standard{});
  return {trace.post(layer), std::move(g.outputs[layer])};
}

SaliencyMap make_map(Tensor values, std::string method, std::optional<std::string> layer,
                     std::size_t class_index) {
  return SaliencyMap{std::move(values), std::move(method), std::move(layer), class_index};
}

std::string q_suffix(double q) {
  std::ostringstream os;
  os << "(q=" << q << ")";
  return os.str();
}

std::string lrp_id(const RelevanceRule& r) {
  return std::visit(overloaded{
                        [](const rule::LrpGamma& g) {
                          if (g.gamma == 0.0) return std::string("LRP-0");
                          std::ostringstream os;
                          os << "LRP-gamma(" << g.gamma << ")";
                          return os.str();
                        },
                        [](const rule::LrpZPlus&) { return std::string("LRP-zplus"); },
                    },
                    r);
}

}  // namespace

std::string method_id(const MethodSpec& spec) {
  auto with_layer = [](const char* name, const LayerRef& ref) {
    const std::string layer = to_string(ref);
    return layer.empty() ? std::string(name) : std::string(name) + " " + layer;
  };
  return std::visit(
      overloaded{
          [&](const method::GradCam& m) { return with_layer("GradCAM", m.layer); },
          [&](const method::GradCamPos& m) {
            return with_layer(m.placement == PosPlacement::kChannelWeights ? "GradCAM_Pos"
                                                                             : "GradCAM_PosGrad",
                              m.layer);
          },
          [&](const method::GradCamPP& m) { return with_layer("GradCAM++", m.layer); },
          [&](const method::GradMid& m) {
            return with_layer(m.filter == PositiveFilter::kAbs ? "GradMid" : "GradMidReLU",
                              m.layer);
          },
          [](const method::FullGrad&) { return std::string("FullGrad"); },
          [](const method::CumulativeGradCam&) { return std::string("CumulativeGradCAM"); },
          [](const method::CumulativeGradMid&) { return std::string("CumulativeGradMid"); },
          [](const method::Gradients&) { return std::string("Gradients"); },
          [](const method::GuidedBP&) { return std::string("GuidedBP"); },
          [](const method::RectGrad& m) { return "RectGrad" + q_suffix(m.q); },
          [](const method::RectGradMod& m) { return "RectGrad_Mod" + q_suffix(m.q); },
          [](const method::Lrp& m) { return lrp_id(m.rule); },
      },
      spec);
}

std::optional<std::string> method_layer(const MethodSpec& spec) {
  return std::visit(
      [](const auto& m) -> std::optional<std::string> {
        if constexpr (requires { m.layer; }) {
          return to_string(m.layer);
        } else {
          return std::nullopt;
        }
      },
      spec);
}

Tensor gradcam_weighted_sum(const Tensor& act, const Tensor& grad) {
  require_pair(act, grad, "gradcam");
  return weighted_channel_sum(act, spatial_mean(grad, false));
}

Tensor gradcam_layer_map(const Tensor& act, const Tensor& grad) {
  return relu(gradcam_weighted_sum(act, grad));
}

Tensor gradcam_pos_layer_map(const Tensor& act, const Tensor& grad, PosPlacement placement) {
  require_pair(act, grad, "gradcam_pos");
  if (placement == PosPlacement::kGradients) {
    return weighted_channel_sum(act, spatial_mean(grad, true));
  }
  std::vector<double> w = spatial_mean(grad, false);
  for (double& v : w) v = std::abs(v);
  return weighted_channel_sum(act, w);
}

Tensor gradcam_pp_layer_map(const Tensor& act, const Tensor& grad) {
  require_pair(act, grad, "gradcam_pp");
  const std::size_t c = act.dim(0), area = act.dim(1) * act.dim(2);
  std::vector<double> w(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    double act_sum = 0.0;
    for (std::size_t i = 0; i < area; ++i) act_sum += act[k * area + i];
    double acc = 0.0;
    for (std::size_t i = 0; i < area; ++i) {
      const double g = grad[k * area + i];
      const double g2 = g * g;
      const double denom = 2.0 * g2 + act_sum * g2 * g;
      const double alpha = std::abs(denom) < kAlphaDenominatorFloor ? 0.0 : g2 / denom;
      acc += alpha * std::max(g, 0.0);
    }
    w[k] = acc;
  }
  return relu(weighted_channel_sum(act, w));
}

Tensor gradmid_layer_map(const Tensor& grad, PositiveFilter filter) {
  if (grad.rank() != 3) {
    throw ShapeError("gradmid: expected (C x H x W) gradient, got " + to_string(grad.shape()));
  }
  if (filter == PositiveFilter::kAbs) return channel_abs_sum(grad);
  return channel_abs_sum(relu(grad));
}

Tensor fullgrad_psi(const Tensor& t, std::size_t h, std::size_t w) {
  return minmax_normalize(bilinear_upsample(channel_abs_sum(t), h, w));
}

SaliencyMap gradcam(const Model& model, const ForwardTrace& trace, std::size_t class_index,
                    const LayerRef& layer) {
  const LayerSignals s = layer_signals(model, trace, class_index, layer);
  return make_map(to_input_size(model, gradcam_layer_map(s.act, s.grad)),
                  method_id(method::GradCam{layer}), to_string(layer), class_index);
}

SaliencyMap gradcam_pos(const Model& model, const ForwardTrace& trace, std::size_t class_index,
                        const LayerRef& layer, PosPlacement placement) {
  const LayerSignals s = layer_signals(model, trace, class_index, layer);
  return make_map(to_input_size(model, gradcam_pos_layer_map(s.act, s.grad, placement)),
                  method_id(method::GradCamPos{layer, placement}), to_string(layer), class_index);
}

SaliencyMap gradcam_pp(const Model& model, const ForwardTrace& trace, std::size_t class_index,
                       const LayerRef& layer) {
  const LayerSignals s = layer_signals(model, trace, class_index, layer);
  return make_map(to_input_size(model, gradcam_pp_layer_map(s.act, s.grad)),
                  method_id(method::GradCamPP{layer}), to_string(layer), class_index);
}

SaliencyMap gradmid(const Model& model, const ForwardTrace& trace, std::size_t class_index,
                    const LayerRef& layer, PositiveFilter filter) {
  const LayerSignals s = layer_signals(model, trace, class_index, layer);
  return make_map(to_input_size(model, gradmid_layer_map(s.grad, filter)),
                  method_id(method::GradMid{layer, filter}), to_string(layer), class_index);
}

SaliencyMap fullgrad(const Model& model, const ForwardTrace& trace, std::size_t class_index) {
  const GradientBundle g = backward(model, trace, class_index, rule::Standard{});
  const std::size_t h = model.input_shape[1], w = model.input_shape[2];
  Tensor total = fullgrad_psi(hadamard(g.input, trace.input), h, w);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto* conv = std::get_if<Conv2d>(&model.layers[i]);
    if (!conv) continue;
    const Tensor& grad = g.post(i);
    Tensor term(grad.shape());
    const std::size_t area = grad.dim(1) * grad.dim(2);
    for (std::size_t k = 0; k < grad.dim(0); ++k) {
      for (std::size_t p = 0; p < area; ++p) term[k * area + p] = grad[k * area + p] * conv->bias[k];
    }
    total = total + fullgrad_psi(term, h, w);
  }
  return make_map(std::move(total), "FullGrad", std::nullopt, class_index);
}

SaliencyMap cumulative(const Model& model, const ForwardTrace& trace, std::size_t class_index,
                       CumulativeKind kind) {
  const GradientBundle g = backward(model, trace, class_index, rule::Standard{});
  Tensor total({model.input_shape[1], model.input_shape[2]});
  for (const auto& [label, index] : model.blocks) {
    const std::size_t layer = activation_layer(model, LayerRef{label});
    const Tensor& act = trace.post(layer);
    const Tensor& grad = g.post(layer);
    const Tensor layer_map = kind == CumulativeKind::kGradCamPos
                                 ? gradcam_pos_layer_map(act, grad)
                                 : gradmid_layer_map(grad);
    total = total + minmax_normalize(to_input_size(model, layer_map));
  }
  return make_map(std::move(total),
                  kind == CumulativeKind::kGradCamPos ? "CumulativeGradCAM" : "CumulativeGradMid",
                  std::nullopt, class_index);
}

SaliencyMap propagation_map(const Model& model, const ForwardTrace& trace,
                            std::size_t class_index, const MethodSpec& spec) {
  auto from_rule = [&](const ReluBackwardRule& r) {
    return backward(model, trace, class_index, r).input;
  };
  Tensor signal = std::visit(
      overloaded{
          [&](const method::Gradients&) { return from_rule(rule::Standard{}); },
          [&](const method::GuidedBP&) { return from_rule(rule::Guided{}); },
          [&](const method::RectGrad& m) { return from_rule(rule::RectGrad{m.q}); },
          [&](const method::RectGradMod& m) { return from_rule(rule::RectGradMod{m.q}); },
          [&](const method::Lrp& m) { return lrp(model, trace, class_index, m.rule).input; },
          [&](const auto&) -> Tensor {
            throw ValueError(method_id(spec) + " is not a propagation method");
          },
      },
      spec);
  return make_map(channel_abs_sum(signal), method_id(spec), std::nullopt, class_index);
}

SaliencyMap compute_saliency(const Model& model, const ForwardTrace& trace,
                             std::size_t class_index, const MethodSpec& spec) {
  return std::visit(
      overloaded{
          [&](const method::GradCam& m) { return gradcam(model, trace, class_index, m.layer); },
          [&](const method::GradCamPos& m) {
            return gradcam_pos(model, trace, class_index, m.layer, m.placement);
          },
          [&](const method::GradCamPP& m) {
            return gradcam_pp(model, trace, class_index, m.layer);
          },
          [&](const method::GradMid& m) {
            return gradmid(model, trace, class_index, m.layer, m.filter);
          },
          [&](const method::FullGrad&) { return fullgrad(model, trace, class_index); },
          [&](const method::CumulativeGradCam&) {
            return cumulative(model, trace, class_index, CumulativeKind::kGradCamPos);
          },
          [&](const method::CumulativeGradMid&) {
            return cumulative(model, trace, class_index, CumulativeKind::kGradMid);
          },
          [&](const auto&) { return propagation_map(model, trace, class_index, spec); },
      },
      spec);
}

void validate_method(const Model& model, const MethodSpec& spec) {
  std::visit(overloaded{
                 [&](const method::RectGrad& m) { validate_rule(rule::RectGrad{m.q}); },
                 [&](const method::RectGradMod& m) { validate_rule(rule::RectGradMod{m.q}); },
                 [&](const method::Lrp& m) { validate_rule(m.rule); },
                 [&](const auto& m) {
                   if constexpr (requires { m.layer; }) activation_layer(model, m.layer);
                 },
             },
             spec);
}

}  // namespace saligraph
