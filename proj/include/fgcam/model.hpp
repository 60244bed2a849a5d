#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fgcam/kernels.hpp"
#include "fgcam/tensor.hpp"

namespace fgcam {

enum class LayerKind {
  kConv2d,
  kBatchNorm2d,
  kRelu,
  kMaxPool2d,
  kAvgPool2d,
  kFlatten,
  kLinear,
};

const char* to_string(LayerKind kind);
std::optional<LayerKind> parse_layer_kind(const std::string& text);

/// One layer of a sequential network. Only the fields relevant to `kind` are
/// populated; unused tensors stay empty.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::kRelu;

  // conv2d: weight [Cout,Cin,kH,kW]; linear: weight [out,in]. bias is [out].
  Tensor weight;
  Tensor bias;
  Pair stride{1, 1};
  Pair padding{0, 0};
  // Pooling window.
  Pair kernel{1, 1};

  // batchnorm2d, all [C].
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-5;

  std::span<const float> bias_span() const {
    return {bias.data(), static_cast<std::size_t>(bias.empty() ? 0 : bias.size())};
  }
};

struct Preprocessing {
  std::vector<float> mean;
  std::vector<float> std;
};

struct ModelGraph {
  std::vector<LayerSpec> layers;
  Shape input_shape;  // [C,H,W]
  Index class_count = 0;
  Preprocessing preprocessing;

  /// Position of the named layer, or nullopt.
  std::optional<std::size_t> find(const std::string& name) const;
  /// Position of the named layer; throws kUnknownLayer.
  std::size_t index_of(const std::string& name) const;
};

struct Finding {
  std::string layer;
  std::string rule;
};

/// Structural checks; an empty result means the graph is well formed.
std::vector<Finding> validate_model(const ModelGraph& model);

/// Output shape of every layer, in graph order. Throws kShapeMismatch on the
/// first layer whose input does not compose.
std::vector<Shape> infer_shapes(const ModelGraph& model);

/// Index of the deepest conv2d layer; throws kUnsupportedStructure if none.
std::size_t last_conv_index(const ModelGraph& model);

/// Index of the layer whose output closes the final convolutional stage: the
/// last conv2d extended through any directly following batchnorm, relu and
/// pooling layers. This is the layer at which CAM weights and explanation
/// components are formed.
std::size_t feature_anchor_index(const ModelGraph& model);

/// Folds every batchnorm2d into the conv2d directly before it.
ModelGraph fold_batchnorm(const ModelGraph& model);

enum class Validation { kStrict, kDeferred };

/// Reads an FGM file. Header, parameter-shape and checksum problems always
/// throw (kMalformedHeader, kShapeMismatch, kChecksumMismatch). With
/// kStrict, structural findings from validate_model also throw
/// (kUnsupportedStructure).
ModelGraph load_model(const std::filesystem::path& path,
                      Validation validation = Validation::kStrict);
ModelGraph parse_model(std::span<const std::uint8_t> bytes,
                       Validation validation = Validation::kStrict);

std::vector<std::uint8_t> serialize_model(const ModelGraph& model);
void save_model(const ModelGraph& model, const std::filesystem::path& path);

inline constexpr char kFgmMagic[8] = {'F', 'G', 'C', 'A', 'M', 'v', '0', '1'};

/// Recorded forward pass. outputs[i] is the output of layers[i].
struct ActivationTrace {
  std::vector<std::string> names;
  Tensor input;
  std::vector<Tensor> outputs;
  // Non-empty only for maxpool2d layers.
  std::vector<std::vector<Index>> argmax;

  const Tensor& logits() const { return outputs.back(); }
  std::size_t index_of(const std::string& name) const;
  const Tensor& output_of(const std::string& name) const;
  /// Input of layer i: the previous layer's output, or the network input.
  const Tensor& input_of(std::size_t i) const { return i == 0 ? input : outputs[i - 1]; }
};

/// Applies one layer. `argmax` receives pooling indices for maxpool2d.
template <typename Scalar>
BasicTensor<Scalar> apply_layer(const LayerSpec& layer, const BasicTensor<Scalar>& input,
                                std::vector<Index>* argmax = nullptr);

ActivationTrace forward_trace(const ModelGraph& model, const Tensor& input);

/// Runs layers [first, end) starting from `input` and returns the last output.
template <typename Scalar>
BasicTensor<Scalar> forward_from(const ModelGraph& model, std::size_t first,
                                 BasicTensor<Scalar> input);

/// Logits for one input without keeping intermediate activations.
Tensor forward_logits(const ModelGraph& model, const Tensor& input);

}  // namespace fgcam
