#pragma once

#include <string>
#include <vector>

#include "fgcam/grad.hpp"
#include "fgcam/model.hpp"

namespace fgcam {

struct CamWeights {
  enum class Kind { kGlobal, kPixelwise };
  Kind kind = Kind::kGlobal;
  // One weight per channel (kGlobal).
  std::vector<float> global;
  // Same shape as the layer's activation (kPixelwise).
  Tensor pixelwise;
};

/// Per-neuron relevance at the output of `layer`.
struct RelevanceStack {
  std::string layer;
  Tensor values;
  bool is_signed = false;
};

/// Single-channel importance map [h,w] at the resolution of `layer`.
struct Explanation {
  std::string layer;
  Tensor map;
  bool is_signed = false;
};

/// Name of the layer where CAM weights and explanation components live; see
/// feature_anchor_index.
std::string feature_anchor(const ModelGraph& model);

/// Grad-CAM: spatial mean of d logit[c] / dA per channel of `layer`.
CamWeights gradcam_weights(const ModelGraph& model, const ActivationTrace& trace,
                           Index class_index, const std::string& layer);

/// Score-CAM: each channel of `layer`, upsampled and min-max normalized, masks
/// `input_image`; the masked logits are softmaxed across channels.
CamWeights scorecam_weights(const ModelGraph& model, const ActivationTrace& trace,
                            const Tensor& input_image, Index class_index,
                            const std::string& layer, unsigned workers = 0);

/// Layer-CAM: ReLU(sum_k ReLU(dy/dA_k) * A_k) evaluated at `layer`.
Explanation layercam_explanation(const ModelGraph& model, const ActivationTrace& trace,
                                 Index class_index, const std::string& layer);

/// I_k = w_k * A_k for every channel of `layer`.
RelevanceStack explanation_components(const CamWeights& weights, const ActivationTrace& trace,
                                      const std::string& layer);

/// ReLU(sum_k w_k A_k).
Explanation cam_explanation(const CamWeights& weights, const ActivationTrace& trace,
                            const std::string& layer);

/// Sums a [C,H,W] tensor over channels into [H,W].
Tensor channel_sum(const Tensor& values);

}  // namespace fgcam
