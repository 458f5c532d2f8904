#include "saligraph/grad.hpp"

#include <algorithm>
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

constexpr double kLrpEpsilon = 1e-9;

void check_q(double q) {
  if (!(q > 0.0 && q < 100.0)) {
    throw ValueError("RectGrad percentile q must lie strictly inside (0, 100), got " +
                     std::to_string(q));
  }
}

void check_class(const Model& model, std::size_t class_index) {
  if (class_index >= model.class_count) {
    throw ValueError("class index " + std::to_string(class_index) + " out of range for " +
                     std::to_string(model.class_count) + " classes");
  }
}

Tensor one_hot(const Tensor& logits, std::size_t index, double value) {
  Tensor seed(logits.shape());
  seed[index] = value;
  return seed;
}

// Signal arriving at the output of layer i, propagated to its input with
// exact adjoints. ReLUs are handled by the caller.
template <class ReluFn>
GradientBundle reverse_pass(const Model& model, const ForwardTrace& trace, const Tensor& seed,
                            ReluFn&& relu_fn, bool weight_grads) {
  check_trace(model, trace);
  if (seed.shape() != trace.logits().shape()) {
    throw ShapeError("backward seed " + to_string(seed.shape()) + " does not match logits " +
                     to_string(trace.logits().shape()));
  }
  const std::size_t n = model.layers.size();
  GradientBundle out;
  out.outputs.resize(n);
  out.bias.resize(n);
  if (weight_grads) out.weights.resize(n);
  out.outputs[n - 1] = seed;

  for (std::size_t i = n; i-- > 0;) {
    const Tensor& g = out.outputs[i];
    const Tensor& in = trace.pre(i);
    Tensor g_in = std::visit(
        overloaded{
            [&](const Conv2d& conv) {
              Tensor gb(conv.bias.shape());
              if (weight_grads) {
                Tensor gw(conv.weights.shape());
                conv2d_param_adjoint(conv, in, g, gw, gb);
                out.weights[i] = std::move(gw);
              } else {
                const std::size_t area = g.dim(1) * g.dim(2);
                for (std::size_t c = 0; c < g.dim(0); ++c) {
                  double acc = 0.0;
                  for (std::size_t k = 0; k < area; ++k) acc += g[c * area + k];
                  gb[c] = acc;
                }
              }
              out.bias[i] = std::move(gb);
              return conv2d_input_adjoint(conv, in.shape(), g);
            },
            [&](const Affine& affine) {
              if (weight_grads) {
                Tensor gw(affine.weights.shape());
                Tensor gb(affine.bias.shape());
                affine_param_adjoint(in, g, gw, gb);
                out.weights[i] = std::move(gw);
                out.bias[i] = std::move(gb);
              } else {
                out.bias[i] = g;
              }
              return affine_input_adjoint(affine, g);
            },
            [&](const Relu&) { return relu_fn(i, g); },
            [&](const MaxPool& pool) { return maxpool_route(pool, in, g); },
            [&](const Flatten&) { return g.reshaped(in.shape()); },
            [&](const GlobalAvgPool&) { return global_avg_pool_adjoint(in.shape(), g); },
        },
        model.layers[i]);
    if (i == 0) {
      out.input = std::move(g_in);
    } else {
      out.outputs[i - 1] = std::move(g_in);
    }
  }
  return out;
}

Tensor mask_where(const Tensor& incoming, auto&& keep) {
  Tensor out(incoming.shape());
  for (std::size_t k = 0; k < incoming.size(); ++k) out[k] = keep(k) ? incoming[k] : 0.0;
  return out;
}

// Relevance redistribution through a linear map with modified parameters.
// `forward_mod` evaluates z_k = sum_j a_j w'_jk + b'_k, `adjoint_mod` maps
// per-output scalings s_k back to c_j = sum_k w'_jk s_k.
struct LinearRelevance {
  Tensor relevance_in;
  Tensor bias_relevance;  // per output unit
};

LinearRelevance redistribute(const Tensor& activation, const Tensor& z, const Tensor& bias_mod,
                             const Tensor& relevance_out, auto&& adjoint_mod) {
  Tensor s(z.shape());
  Tensor bias_rel(z.shape());
  const std::size_t per_bias = z.size() / bias_mod.size();
  for (std::size_t k = 0; k < z.size(); ++k) {
    const double denom = z[k] + (z[k] >= 0.0 ? kLrpEpsilon : -kLrpEpsilon);
    s[k] = relevance_out[k] / denom;
    bias_rel[k] = bias_mod[k / per_bias] * s[k];
  }
  Tensor c = adjoint_mod(s);
  return {hadamard(activation, c), std::move(bias_rel)};
}

Tensor sum_per_channel(const Tensor& t, std::size_t channels) {
  Tensor out({channels});
  const std::size_t per = t.size() / channels;
  for (std::size_t c = 0; c < channels; ++c) {
    double acc = 0.0;
    for (std::size_t k = 0; k < per; ++k) acc += t[c * per + k];
    out[c] = acc;
  }
  return out;
}

struct ModifiedParams {
  Tensor weights;
  Tensor bias;
};

ModifiedParams modify(const Tensor& weights, const Tensor& bias, const RelevanceRule& r) {
  ModifiedParams m{weights, bias};
  std::visit(overloaded{
                 [&](const rule::LrpGamma& g) {
                   if (g.gamma == 0.0) return;
                   for (double& w : m.weights.values()) w += g.gamma * std::max(w, 0.0);
                   for (double& b : m.bias.values()) b += g.gamma * std::max(b, 0.0);
                 },
                 [&](const rule::LrpZPlus&) {
                   for (double& w : m.weights.values()) w = std::max(w, 0.0);
                   for (double& b : m.bias.values()) b = std::max(b, 0.0);
                 },
             },
             r);
  return m;
}

}  // namespace

std::string rule_name(const ReluBackwardRule& r) {
  return std::visit(overloaded{
                        [](const rule::Standard&) { return std::string("Standard"); },
                        [](const rule::Guided&) { return std::string("Guided"); },
                        [](const rule::RectGrad& x) {
                          std::ostringstream os;
                          os << "RectGrad(q=" << x.q << ")";
                          return os.str();
                        },
                        [](const rule::RectGradMod& x) {
                          std::ostringstream os;
                          os << "RectGradMod(q=" << x.q << ")";
                          return os.str();
                        },
                    },
                    r);
}

std::string rule_name(const RelevanceRule& r) {
  return std::visit(overloaded{
                        [](const rule::LrpGamma& g) {
                          std::ostringstream os;
                          os << "LrpGamma(gamma=" << g.gamma << ")";
                          return os.str();
                        },
                        [](const rule::LrpZPlus&) { return std::string("LrpZPlus"); },
                    },
                    r);
}

void validate_rule(const ReluBackwardRule& r) {
  std::visit(overloaded{
                 [](const rule::RectGrad& x) { check_q(x.q); },
                 [](const rule::RectGradMod& x) { check_q(x.q); },
                 [](const auto&) {},
             },
             r);
}

void validate_rule(const RelevanceRule& r) {
  if (const auto* g = std::get_if<rule::LrpGamma>(&r)) {
    if (!(g->gamma >= 0.0) || !std::isfinite(g->gamma)) {
      throw ValueError("LRP gamma must be a finite nonnegative number");
    }
  }
}

double nearest_rank_percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ValueError("percentile of an empty set");
  check_q(q);
  const auto n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1),
                   values.end());
  return values[rank - 1];
}

Tensor relu_backward(const ReluBackwardRule& r, const Tensor& a, const Tensor& incoming) {
  if (a.shape() != incoming.shape()) {
    throw ShapeError("relu_backward: activation " + to_string(a.shape()) + " vs signal " +
                     to_string(incoming.shape()));
  }
  return std::visit(
      overloaded{
          [&](const rule::Standard&) {
            return mask_where(incoming, [&](std::size_t k) { return a[k] > 0.0; });
          },
          [&](const rule::Guided&) {
            return mask_where(incoming, [&](std::size_t k) { return a[k] * incoming[k] > 0.0; });
          },
          [&](const rule::RectGrad& x) {
            check_q(x.q);
            std::vector<double> prod(a.size());
            for (std::size_t k = 0; k < a.size(); ++k) prod[k] = a[k] * incoming[k];
            const double tau = nearest_rank_percentile(prod, x.q);
            return mask_where(incoming, [&](std::size_t k) { return prod[k] > tau; });
          },
          [&](const rule::RectGradMod& x) {
            check_q(x.q);
            std::vector<double> prod(a.size());
            for (std::size_t k = 0; k < a.size(); ++k) prod[k] = std::abs(a[k] * incoming[k]);
            const double tau = nearest_rank_percentile(prod, x.q);
            return mask_where(incoming, [&](std::size_t k) { return prod[k] > tau; });
          },
      },
      r);
}

GradientBundle backpropagate(const Model& model, const ForwardTrace& trace, const Tensor& seed,
                             const ReluBackwardRule& r, bool weight_grads) {
  validate_rule(r);
  if (std::holds_alternative<rule::Standard>(r)) {
    // Derivative of max(0, z) taken from the pre-activation z.
    return reverse_pass(
        model, trace, seed,
        [&](std::size_t i, const Tensor& g) {
          const Tensor& z = trace.pre(i);
          return mask_where(g, [&](std::size_t k) { return z[k] > 0.0; });
        },
        weight_grads);
  }
  return reverse_pass(
      model, trace, seed,
      [&](std::size_t i, const Tensor& g) { return relu_backward(r, trace.post(i), g); },
      weight_grads);
}

GradientBundle backward(const Model& model, const ForwardTrace& trace, std::size_t class_index,
                        const ReluBackwardRule& r) {
  check_class(model, class_index);
  check_trace(model, trace);
  return backpropagate(model, trace, one_hot(trace.logits(), class_index, 1.0), r);
}

GradientBundle guided_counterpart(const Model& model, const ForwardTrace& trace,
                                  std::size_t class_index) {
  check_class(model, class_index);
  check_trace(model, trace);
  return reverse_pass(
      model, trace, one_hot(trace.logits(), class_index, 1.0),
      [&](std::size_t i, const Tensor& g) {
        const Tensor& a = trace.post(i);
        return mask_where(g, [&](std::size_t k) { return a[k] > 0.0; });
      },
      false);
}

GradientBundle lrp(const Model& model, const ForwardTrace& trace, std::size_t class_index,
                   const RelevanceRule& r) {
  check_class(model, class_index);
  check_trace(model, trace);
  const Tensor& logits = trace.logits();
  return propagate_relevance(model, trace, one_hot(logits, class_index, logits[class_index]), r);
}

GradientBundle propagate_relevance(const Model& model, const ForwardTrace& trace,
                                   const Tensor& seed, const RelevanceRule& r) {
  validate_rule(r);
  check_trace(model, trace);
  if (seed.shape() != trace.logits().shape()) {
    throw ShapeError("relevance seed " + to_string(seed.shape()) + " does not match logits " +
                     to_string(trace.logits().shape()));
  }
  const std::size_t n = model.layers.size();
  GradientBundle out;
  out.outputs.resize(n);
  out.bias.resize(n);
  out.outputs[n - 1] = seed;

  for (std::size_t i = n; i-- > 0;) {
    const Tensor& rel = out.outputs[i];
    const Tensor& a = trace.pre(i);
    Tensor r_in = std::visit(
        overloaded{
            [&](const Conv2d& conv) {
              const ModifiedParams m = modify(conv.weights, conv.bias, r);
              const Conv2d mod{m.weights, m.bias, conv.stride, conv.padding};
              const Tensor z = apply_layer(a, mod);
              LinearRelevance lr = redistribute(a, z, m.bias, rel, [&](const Tensor& s) {
                return conv2d_input_adjoint(mod, a.shape(), s);
              });
              out.bias[i] = sum_per_channel(lr.bias_relevance, conv.out_channels());
              return std::move(lr.relevance_in);
            },
            [&](const Affine& affine) {
              const ModifiedParams m = modify(affine.weights, affine.bias, r);
              const Affine mod{m.weights, m.bias};
              const Tensor z = apply_layer(a, mod);
              LinearRelevance lr = redistribute(a, z, m.bias, rel, [&](const Tensor& s) {
                return affine_input_adjoint(mod, s);
              });
              out.bias[i] = std::move(lr.bias_relevance);
              return std::move(lr.relevance_in);
            },
            [&](const GlobalAvgPool&) {
              // Positive uniform weights: every LRP-gamma variant reduces to LRP-0.
              const Tensor z = apply_layer(a, model.layers[i]);
              const Tensor no_bias(z.shape());
              LinearRelevance lr = redistribute(a, z, no_bias, rel, [&](const Tensor& s) {
                return global_avg_pool_adjoint(a.shape(), s);
              });
              return std::move(lr.relevance_in);
            },
            [&](const Relu&) { return rel; },
            [&](const MaxPool& pool) { return maxpool_route(pool, a, rel); },
            [&](const Flatten&) { return rel.reshaped(a.shape()); },
        },
        model.layers[i]);
    if (i == 0) {
      out.input = std::move(r_in);
    } else {
      out.outputs[i - 1] = std::move(r_in);
    }
  }
  return out;
}

Tensor grad_wrt_layer(const Model& model, const ForwardTrace& trace, std::size_t class_index,
                      const LayerRef& ref) {
  const std::size_t layer = activation_layer(model, ref);
  GradientBundle g = backward(model, trace, class_index, rule::Standard{});
  return std::move(g.outputs[layer]);
}

}  // namespace saligraph
