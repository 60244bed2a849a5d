#pragma once

#include <span>
#include <string>
#include <vector>

#include "fgcam/cam.hpp"
#include "fgcam/model.hpp"

namespace fgcam {

/// Denominator stabilizer for both propagation rules.
inline constexpr double kRelpropEpsilon = 1e-9;

/// Per-channel value range [lower, upper] of the network input in normalized
/// units.
struct InputDomain {
  std::vector<float> lower;
  std::vector<float> upper;

  /// Range of a [0,1] image after (x - mean) / std.
  static InputDomain from_preprocessing(const Preprocessing& pre);
};

/// z+ rule. Redistributes `relevance_out` (shaped like the layer's output) onto
/// the layer input in proportion to w+ * x; outputs with z <= 0 donate nothing.
/// Handles conv2d, linear, avgpool2d (uniform positive weights), flatten and
/// relu (identity).
Tensor zplus_layer(const LayerSpec& layer, const Tensor& input_activation,
                   const Tensor& relevance_out);

/// Winner-take-all routing through max pooling.
Tensor maxpool_route(std::span<const Index> argmax, const Tensor& relevance_out,
                     const Shape& input_shape);

/// z-beta rule for the first weighted layer (conv2d or linear) given the
/// network input and its value domain. The result is signed.
Tensor zbeta_input(const LayerSpec& layer, const Tensor& input_image, const InputDomain& domain,
                   const Tensor& relevance_out);

/// Walks relevance from `components.layer` back to the output of
/// `target_layer` (or to the network input for "input"), applying z+ to hidden
/// layers, argmax routing to max pools and z-beta at the input layer.
RelevanceStack improve_resolution(const ModelGraph& model, const ActivationTrace& trace,
                                  const RelevanceStack& components,
                                  const std::string& target_layer, const InputDomain& domain);

enum class CamBackend { kGrad, kScore };

struct FgCamOptions {
  CamBackend backend = CamBackend::kGrad;
  std::string target_layer = "input";
  bool denoise = false;
  double keep_fraction = 0.10;
  // Skip the final ReLU and keep negative contributions.
  bool is_signed = false;
  unsigned workers = 0;
};

/// FG-CAM: global CAM weights and components at the feature anchor, optional
/// low-rank denoising, resolution improvement to the target layer, then a
/// channel sum (followed by ReLU unless signed).
Explanation fg_cam_explain(const ModelGraph& model, const ActivationTrace& trace,
                           const Tensor& input_image, Index class_index,
                           const FgCamOptions& options);

/// LRP baseline: the target logit is propagated from the output layer to the
/// input, summed over input channels.
Explanation lrp_explain(const ModelGraph& model, const ActivationTrace& trace, Index class_index,
                        bool is_signed);

}  // namespace fgcam
