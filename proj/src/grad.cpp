#include "fgcam/grad.hpp"

#include <cmath>

namespace fgcam {

Tensor layer_input_grad(const ModelGraph& model, const ActivationTrace& trace, std::size_t i,
                        const Tensor& grad_out) {
  const LayerSpec& layer = model.layers[i];
  const Tensor& input = trace.input_of(i);
  switch (layer.kind) {
    case LayerKind::kConv2d:
      return conv2d_input_grad(grad_out, layer.weight, input.shape(), layer.stride, layer.padding);
    case LayerKind::kLinear:
      return linear_input_grad(grad_out, layer.weight, input.shape());
    case LayerKind::kRelu: {
      // Subgradient at exactly zero is zero.
      Tensor g = grad_out;
      const Tensor& out = trace.outputs[i];
      for (Index k = 0; k < g.size(); ++k) {
        if (!(out[k] > 0.0f)) g[k] = 0.0f;
      }
      return g;
    }
    case LayerKind::kMaxPool2d:
      return maxpool2d_scatter(grad_out, std::span<const Index>(trace.argmax[i]), input.shape());
    case LayerKind::kAvgPool2d:
      return avgpool2d_spread(grad_out, input.shape(), layer.kernel, layer.stride);
    case LayerKind::kFlatten:
      return grad_out.reshaped(input.shape());
    case LayerKind::kBatchNorm2d: {
      Tensor g = grad_out;
      const Index plane = g.dim(1) * g.dim(2);
      for (Index c = 0; c < g.dim(0); ++c) {
        const float scale = static_cast<float>(
            double(layer.gamma[c]) / std::sqrt(double(layer.running_var[c]) + layer.eps));
        for (Index k = 0; k < plane; ++k) g[c * plane + k] *= scale;
      }
      return g;
    }
  }
  fail(ErrorCode::kUnsupportedStructure, "unknown layer kind");
}

Tensor backward_from_logits(const ModelGraph& model, const ActivationTrace& trace,
                            const Tensor& grad_logits, std::optional<std::size_t> target,
                            std::vector<Tensor>* per_layer) {
  if (trace.outputs.size() != model.layers.size()) {
    fail(ErrorCode::kShapeMismatch, "trace does not belong to this model");
  }
  if (grad_logits.shape() != trace.logits().shape()) {
    fail(ErrorCode::kShapeMismatch, "logit gradient " + shape_string(grad_logits.shape()) +
                                        " does not match logits " +
                                        shape_string(trace.logits().shape()));
  }
  if (per_layer) per_layer->assign(model.layers.size(), Tensor());
  Tensor grad = grad_logits;
  std::size_t i = model.layers.size() - 1;
  while (true) {
    if (per_layer) (*per_layer)[i] = grad;
    if (target && *target == i) return grad;
    grad = layer_input_grad(model, trace, i, grad);
    if (i == 0) break;
    --i;
  }
  return grad;
}

Tensor backward_class_gradient(const ModelGraph& model, const GradientRequest& request) {
  if (!request.trace) fail(ErrorCode::kInvalidArgument, "gradient request has no trace");
  const ActivationTrace& trace = *request.trace;
  if (request.class_index < 0 || request.class_index >= trace.logits().size()) {
    fail(ErrorCode::kInvalidArgument, "class index " + std::to_string(request.class_index) +
                                          " out of range [0," +
                                          std::to_string(trace.logits().size()) + ")");
  }
  std::optional<std::size_t> target;
  if (request.target_layer != kInputLayer) target = model.index_of(request.target_layer);
  Tensor seed(trace.logits().shape());
  seed[request.class_index] = 1.0f;
  return backward_from_logits(model, trace, seed, target);
}

}  // namespace fgcam
