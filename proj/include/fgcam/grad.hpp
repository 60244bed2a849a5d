#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fgcam/model.hpp"

namespace fgcam {

/// Name accepted wherever a layer name may also refer to the network input.
inline constexpr const char* kInputLayer = "input";

struct GradientRequest {
  Index class_index = 0;
  std::string target_layer;
  const ActivationTrace* trace = nullptr;
};

/// Vector-Jacobian product of layer `i`: maps a gradient at its output to a
/// gradient at its input, using the activations recorded in `trace`.
Tensor layer_input_grad(const ModelGraph& model, const ActivationTrace& trace, std::size_t i,
                        const Tensor& grad_out);

/// Pulls `grad_logits` back to the output of layer `target` (or to the network
/// input when `target` is nullopt). When `per_layer` is given it receives the
/// gradient at every visited layer output, indexed like model.layers.
Tensor backward_from_logits(const ModelGraph& model, const ActivationTrace& trace,
                            const Tensor& grad_logits, std::optional<std::size_t> target,
                            std::vector<Tensor>* per_layer = nullptr);

/// d logit[class] / d (output of request.target_layer). The gradient is of the
/// raw logit, not the softmax score.
Tensor backward_class_gradient(const ModelGraph& model, const GradientRequest& request);

}  // namespace fgcam
