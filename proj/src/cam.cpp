#include "fgcam/cam.hpp"

#include "fgcam/parallel.hpp"

namespace fgcam {

namespace {

const Tensor& spatial_activation(const ActivationTrace& trace, const std::string& layer) {
  const Tensor& a = trace.output_of(layer);
  if (a.rank() != 3) {
    fail(ErrorCode::kInvalidArgument, "layer '" + layer + "' output " + shape_string(a.shape()) +
                                          " is not a [C,H,W] feature map");
  }
  return a;
}

}  // namespace

std::string feature_anchor(const ModelGraph& model) {
  return model.layers[feature_anchor_index(model)].name;
}

Tensor channel_sum(const Tensor& values) {
  const Index c = values.dim(0), plane = values.dim(1) * values.dim(2);
  Tensor out({values.dim(1), values.dim(2)});
  for (Index k = 0; k < plane; ++k) {
    double acc = 0.0;
    for (Index ch = 0; ch < c; ++ch) acc += values[ch * plane + k];
    out[k] = static_cast<float>(acc);
  }
  return out;
}

CamWeights gradcam_weights(const ModelGraph& model, const ActivationTrace& trace,
                           Index class_index, const std::string& layer) {
  spatial_activation(trace, layer);
  const Tensor grad = backward_class_gradient(model, {class_index, layer, &trace});
  const Index c = grad.dim(0), plane = grad.dim(1) * grad.dim(2);
  CamWeights w;
  w.global.resize(static_cast<std::size_t>(c));
  for (Index ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (Index k = 0; k < plane; ++k) acc += grad[ch * plane + k];
    w.global[static_cast<std::size_t>(ch)] = static_cast<float>(acc / static_cast<double>(plane));
  }
  return w;
}

CamWeights scorecam_weights(const ModelGraph& model, const ActivationTrace& trace,
                            const Tensor& input_image, Index class_index,
                            const std::string& layer, unsigned workers) {
  const Tensor& activation = spatial_activation(trace, layer);
  if (input_image.shape() != model.input_shape) {
    fail(ErrorCode::kShapeMismatch, "score-cam input " + shape_string(input_image.shape()) +
                                        " does not match model input " +
                                        shape_string(model.input_shape));
  }
  if (class_index < 0 || class_index >= model.class_count) {
    fail(ErrorCode::kInvalidArgument, "class index " + std::to_string(class_index) + " out of range");
  }
  const Index c = activation.dim(0), h = activation.dim(1), w = activation.dim(2);
  const Index in_c = input_image.dim(0), in_h = input_image.dim(1), in_w = input_image.dim(2);
  const Index in_plane = in_h * in_w;

  Tensor scores({c});
  parallel_for(
      static_cast<std::size_t>(c),
      [&](std::size_t k) {
        Tensor channel({1, h, w});
        std::copy_n(activation.data() + static_cast<Index>(k) * h * w, h * w, channel.data());
        const Tensor mask = minmax_normalize(bilinear_resize(channel, in_h, in_w));
        Tensor masked = input_image;
        for (Index ch = 0; ch < in_c; ++ch) {
          for (Index p = 0; p < in_plane; ++p) masked[ch * in_plane + p] *= mask[p];
        }
        scores[static_cast<Index>(k)] = forward_logits(model, masked)[class_index];
      },
      workers);

  const Tensor weights = softmax(scores);
  return {CamWeights::Kind::kGlobal, weights.values(), Tensor()};
}

Explanation layercam_explanation(const ModelGraph& model, const ActivationTrace& trace,
                                 Index class_index, const std::string& layer) {
  const Tensor& activation = spatial_activation(trace, layer);
  Tensor grad = backward_class_gradient(model, {class_index, layer, &trace});
  Tensor weighted = relu(std::move(grad));
  for (Index k = 0; k < weighted.size(); ++k) weighted[k] *= activation[k];
  return {layer, relu(channel_sum(weighted)), false};
}

RelevanceStack explanation_components(const CamWeights& weights, const ActivationTrace& trace,
                                      const std::string& layer) {
  if (weights.kind != CamWeights::Kind::kGlobal) {
    fail(ErrorCode::kInvalidArgument, "explanation components need global CAM weights");
  }
  const Tensor& activation = spatial_activation(trace, layer);
  const Index c = activation.dim(0), plane = activation.dim(1) * activation.dim(2);
  if (static_cast<Index>(weights.global.size()) != c) {
    fail(ErrorCode::kShapeMismatch, std::to_string(weights.global.size()) +
                                        " CAM weights for layer '" + layer + "' with " +
                                        std::to_string(c) + " channels");
  }
  RelevanceStack out{layer, activation, false};
  for (Index ch = 0; ch < c; ++ch) {
    const float wk = weights.global[static_cast<std::size_t>(ch)];
    out.is_signed = out.is_signed || wk < 0.0f;
    for (Index k = 0; k < plane; ++k) out.values[ch * plane + k] *= wk;
  }
  return out;
}

Explanation cam_explanation(const CamWeights& weights, const ActivationTrace& trace,
                            const std::string& layer) {
  const RelevanceStack components = explanation_components(weights, trace, layer);
  return {layer, relu(channel_sum(components.values)), false};
}

}  // namespace fgcam
