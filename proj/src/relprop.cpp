#include "fgcam/relprop.hpp"

#include "fgcam/denoise.hpp"

namespace fgcam {

InputDomain InputDomain::from_preprocessing(const Preprocessing& pre) {
  InputDomain domain;
  for (std::size_t c = 0; c < pre.mean.size(); ++c) {
    domain.lower.push_back((0.0f - pre.mean[c]) / pre.std[c]);
    domain.upper.push_back((1.0f - pre.mean[c]) / pre.std[c]);
  }
  return domain;
}

namespace {

enum class Sign { kPositive, kNegative, kAll };

TensorD split_weights(const Tensor& w, Sign sign) {
  TensorD out(w.shape());
  for (Index k = 0; k < w.size(); ++k) {
    const double v = w[k];
    out[k] = sign == Sign::kAll ? v : sign == Sign::kPositive ? std::max(v, 0.0) : std::min(v, 0.0);
  }
  return out;
}

// Forward (bias-free) and transpose of a weighted layer at double precision.
struct WeightedOp {
  const LayerSpec& layer;
  Shape input_shape;

  TensorD forward(const TensorD& x, const TensorD& w) const {
    if (layer.kind == LayerKind::kConv2d) return conv2d<double>(x, w, {}, layer.stride, layer.padding);
    return linear<double>(x, w, {});
  }
  TensorD transpose(const TensorD& s, const TensorD& w) const {
    if (layer.kind == LayerKind::kConv2d) {
      return conv2d_input_grad(s, w, input_shape, layer.stride, layer.padding);
    }
    return linear_input_grad(s, w, input_shape);
  }
};

void check_relevance_shape(const LayerSpec& layer, const Shape& expected, const Tensor& relevance) {
  if (relevance.shape() != expected && relevance.size() != shape_size(expected)) {
    fail(ErrorCode::kShapeMismatch, "layer '" + layer.name + "': relevance " +
                                        shape_string(relevance.shape()) + " does not match output " +
                                        shape_string(expected));
  }
}

// s_j = R_j / (z_j + eps) where z_j > 0, else 0.
TensorD zplus_ratio(const TensorD& z, const TensorD& relevance) {
  TensorD s(z.shape());
  for (Index j = 0; j < z.size(); ++j) {
    s[j] = z[j] > 0.0 ? relevance[j] / (z[j] + kRelpropEpsilon) : 0.0;
  }
  return s;
}

TensorD zplus_impl(const LayerSpec& layer, const TensorD& x, const TensorD& relevance) {
  switch (layer.kind) {
    case LayerKind::kRelu:
      return relevance.reshaped(x.shape());
    case LayerKind::kFlatten:
      return relevance.reshaped(x.shape());
    case LayerKind::kConv2d:
    case LayerKind::kLinear: {
      const WeightedOp op{layer, x.shape()};
      const TensorD wp = split_weights(layer.weight, Sign::kPositive);
      const TensorD z = op.forward(x, wp);
      const TensorD s = zplus_ratio(z, relevance.reshaped(z.shape()));
      TensorD out = op.transpose(s, wp);
      out.vec().array() *= x.vec().array();
      return out;
    }
    case LayerKind::kAvgPool2d: {
      const TensorD z = avgpool2d(x, layer.kernel, layer.stride);
      const TensorD s = zplus_ratio(z, relevance.reshaped(z.shape()));
      TensorD out = avgpool2d_spread(s, x.shape(), layer.kernel, layer.stride);
      out.vec().array() *= x.vec().array();
      return out;
    }
    case LayerKind::kMaxPool2d:
      fail(ErrorCode::kUnsupportedStructure,
           "maxpool2d '" + layer.name + "' propagates by argmax routing, not z+");
    case LayerKind::kBatchNorm2d:
      fail(ErrorCode::kUnsupportedStructure,
           "batchnorm2d '" + layer.name + "' must be folded before relevance propagation");
  }
  fail(ErrorCode::kUnsupportedStructure, "unknown layer kind");
}

TensorD zbeta_impl(const LayerSpec& layer, const TensorD& x, const TensorD& lower,
                   const TensorD& upper, const TensorD& relevance) {
  if (layer.kind != LayerKind::kConv2d && layer.kind != LayerKind::kLinear) {
    fail(ErrorCode::kUnsupportedStructure,
         "z-beta needs a conv2d or linear input layer, got '" + layer.name + "'");
  }
  const WeightedOp op{layer, x.shape()};
  const TensorD w = split_weights(layer.weight, Sign::kAll);
  const TensorD wp = split_weights(layer.weight, Sign::kPositive);
  const TensorD wn = split_weights(layer.weight, Sign::kNegative);

  TensorD z = op.forward(x, w);
  z.vec() -= op.forward(lower, wp).vec();
  z.vec() -= op.forward(upper, wn).vec();
  const TensorD r = relevance.reshaped(z.shape());
  TensorD s(z.shape());
  for (Index j = 0; j < z.size(); ++j) {
    if (z[j] == 0.0) continue;
    s[j] = r[j] / (z[j] + (z[j] > 0.0 ? kRelpropEpsilon : -kRelpropEpsilon));
  }
  TensorD out = op.transpose(s, w);
  out.vec().array() *= x.vec().array();
  out.vec().array() -= lower.vec().array() * op.transpose(s, wp).vec().array();
  out.vec().array() -= upper.vec().array() * op.transpose(s, wn).vec().array();
  return out;
}

// Domain bounds broadcast over a [C,H,W] input and reshaped to `shape`.
std::pair<TensorD, TensorD> domain_maps(const InputDomain& domain, const Shape& image_shape,
                                        const Shape& shape) {
  const Index c = image_shape.at(0);
  if (static_cast<Index>(domain.lower.size()) != c || static_cast<Index>(domain.upper.size()) != c) {
    fail(ErrorCode::kShapeMismatch, "input domain has " + std::to_string(domain.lower.size()) +
                                        " channels, input " + shape_string(image_shape));
  }
  for (Index ch = 0; ch < c; ++ch) {
    if (!(domain.lower[ch] < domain.upper[ch])) {
      fail(ErrorCode::kInvalidArgument,
           "input domain lower bound must be below upper bound on channel " + std::to_string(ch));
    }
  }
  const Index plane = shape_size(image_shape) / c;
  TensorD lower(image_shape), upper(image_shape);
  for (Index ch = 0; ch < c; ++ch) {
    for (Index k = 0; k < plane; ++k) {
      lower[ch * plane + k] = domain.lower[static_cast<std::size_t>(ch)];
      upper[ch * plane + k] = domain.upper[static_cast<std::size_t>(ch)];
    }
  }
  return {lower.reshaped(shape), upper.reshaped(shape)};
}

// True when layer i reads the network input, up to reshaping.
bool reads_network_input(const ModelGraph& model, std::size_t i) {
  const LayerKind kind = model.layers[i].kind;
  if (kind != LayerKind::kConv2d && kind != LayerKind::kLinear) return false;
  for (std::size_t k = 0; k < i; ++k) {
    if (model.layers[k].kind != LayerKind::kFlatten) return false;
  }
  return true;
}

// Propagates relevance sitting at the output of layer `from` down to the
// output of layer `stop` (nullopt: the network input).
TensorD propagate(const ModelGraph& model, const ActivationTrace& trace, std::size_t from,
                  TensorD relevance, std::optional<std::size_t> stop, const InputDomain& domain) {
  for (std::size_t i = from + 1; i-- > 0;) {
    if (stop && *stop == i) break;
    const LayerSpec& layer = model.layers[i];
    const Tensor& input = trace.input_of(i);
    if (!stop && reads_network_input(model, i)) {
      const auto [lower, upper] = domain_maps(domain, trace.input.shape(), input.shape());
      relevance = zbeta_impl(layer, input.cast<double>(), lower, upper, relevance);
    } else if (layer.kind == LayerKind::kMaxPool2d) {
      relevance = maxpool2d_scatter(relevance, std::span<const Index>(trace.argmax[i]), input.shape());
    } else {
      relevance = zplus_impl(layer, input.cast<double>(), relevance);
    }
  }
  return relevance;
}

}  // namespace

Tensor zplus_layer(const LayerSpec& layer, const Tensor& input_activation,
                   const Tensor& relevance_out) {
  if (layer.kind != LayerKind::kRelu && layer.kind != LayerKind::kFlatten) {
    const Tensor probe = apply_layer(layer, input_activation);
    check_relevance_shape(layer, probe.shape(), relevance_out);
  }
  return zplus_impl(layer, input_activation.cast<double>(), relevance_out.cast<double>())
      .cast<float>();
}

Tensor maxpool_route(std::span<const Index> argmax, const Tensor& relevance_out,
                     const Shape& input_shape) {
  return maxpool2d_scatter(relevance_out, argmax, input_shape);
}

Tensor zbeta_input(const LayerSpec& layer, const Tensor& input_image, const InputDomain& domain,
                   const Tensor& relevance_out) {
  const Shape in_shape = layer.kind == LayerKind::kLinear ? Shape{input_image.size()}
                                                          : input_image.shape();
  const auto [lower, upper] = domain_maps(domain, input_image.shape(), in_shape);
  const TensorD r = zbeta_impl(layer, input_image.cast<double>().reshaped(in_shape), lower, upper,
                               relevance_out.cast<double>());
  return r.reshaped(input_image.shape()).cast<float>();
}

RelevanceStack improve_resolution(const ModelGraph& model, const ActivationTrace& trace,
                                  const RelevanceStack& components,
                                  const std::string& target_layer, const InputDomain& domain) {
  const std::size_t from = model.index_of(components.layer);
  std::optional<std::size_t> stop;
  if (target_layer != kInputLayer) {
    stop = model.index_of(target_layer);
    if (*stop > from) {
      fail(ErrorCode::kInvalidArgument, "target layer '" + target_layer + "' lies after '" +
                                            components.layer + "'");
    }
  }
  if (components.values.shape() != trace.outputs[from].shape()) {
    fail(ErrorCode::kShapeMismatch, "components " + shape_string(components.values.shape()) +
                                        " do not match layer '" + components.layer + "' output " +
                                        shape_string(trace.outputs[from].shape()));
  }
  if (stop && *stop == from) return components;

  const TensorD r = propagate(model, trace, from, components.values.cast<double>(), stop, domain);
  const Shape& shape = stop ? trace.outputs[*stop].shape() : trace.input.shape();
  return {target_layer, r.reshaped(shape).cast<float>(), components.is_signed || !stop};
}

Explanation fg_cam_explain(const ModelGraph& model, const ActivationTrace& trace,
                           const Tensor& input_image, Index class_index,
                           const FgCamOptions& options) {
  const std::string anchor = feature_anchor(model);
  const CamWeights weights =
      options.backend == CamBackend::kGrad
          ? gradcam_weights(model, trace, class_index, anchor)
          : scorecam_weights(model, trace, input_image, class_index, anchor, options.workers);
  RelevanceStack components = explanation_components(weights, trace, anchor);
  if (options.denoise) components = denoise_components(components, options.keep_fraction);
  const RelevanceStack lifted = improve_resolution(
      model, trace, components, options.target_layer,
      InputDomain::from_preprocessing(model.preprocessing));

  Tensor map = channel_sum(lifted.values);
  if (!options.is_signed) map = relu(std::move(map));
  return {options.target_layer, std::move(map), options.is_signed};
}

Explanation lrp_explain(const ModelGraph& model, const ActivationTrace& trace, Index class_index,
                        bool is_signed) {
  const Tensor& logits = trace.logits();
  if (class_index < 0 || class_index >= logits.size()) {
    fail(ErrorCode::kInvalidArgument, "class index " + std::to_string(class_index) + " out of range");
  }
  TensorD relevance(logits.shape());
  relevance[class_index] = logits[class_index];
  const TensorD r = propagate(model, trace, model.layers.size() - 1, std::move(relevance),
                              std::nullopt, InputDomain::from_preprocessing(model.preprocessing));
  Tensor map = channel_sum(r.reshaped(trace.input.shape()).cast<float>());
  if (!is_signed) map = relu(std::move(map));
  return {kInputLayer, std::move(map), is_signed};
}

}  // namespace fgcam
