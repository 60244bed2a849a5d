#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fgcam/metrics.hpp"
#include "fgcam/relprop.hpp"

namespace fgcam {

enum class Method { kGradCam, kScoreCam, kLayerCam, kFgGradCam, kFgScoreCam, kLrp };

const char* to_string(Method method);
std::optional<Method> parse_method(const std::string& text);

struct ExplainRequest {
  Method method = Method::kFgGradCam;
  // Empty selects the method's default: the feature anchor for plain CAM
  // methods, the network input for FG-CAM and LRP.
  std::string layer;
  bool denoise = false;
  bool is_signed = false;
  double keep_fraction = 0.10;
  unsigned workers = 0;
};

/// Layer the request resolves to for `model`.
std::string resolve_layer(const ModelGraph& model, const ExplainRequest& request);

/// Checks the method/layer combination. Returns advisory warnings; throws
/// kInvalidArgument for combinations that cannot run.
std::vector<std::string> check_request(const ModelGraph& model, const ExplainRequest& request);

Explanation explain(const ModelGraph& model, const ActivationTrace& trace, const Tensor& input,
                    Index class_index, const ExplainRequest& request);

Index argmax_class(const Tensor& logits);

/// Command-line entry point; returns the process exit code.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace fgcam
