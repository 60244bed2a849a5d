#include "fgcam/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>
#include <zlib.h>

namespace fgcam {

using nlohmann::json;

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kMalformedHeader: return "malformed_header";
    case ErrorCode::kChecksumMismatch: return "checksum_mismatch";
    case ErrorCode::kUnsupportedStructure: return "unsupported_structure";
    case ErrorCode::kUnknownLayer: return "unknown_layer";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kNonFinite: return "non_finite";
  }
  return "unknown";
}

namespace {

constexpr std::pair<LayerKind, const char*> kKindNames[] = {
    {LayerKind::kConv2d, "conv2d"},     {LayerKind::kBatchNorm2d, "batchnorm2d"},
    {LayerKind::kRelu, "relu"},         {LayerKind::kMaxPool2d, "maxpool2d"},
    {LayerKind::kAvgPool2d, "avgpool2d"}, {LayerKind::kFlatten, "flatten"},
    {LayerKind::kLinear, "linear"},
};

}  // namespace

const char* to_string(LayerKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<LayerKind> parse_layer_kind(const std::string& text) {
  for (const auto& [k, name] : kKindNames) {
    if (text == name) return k;
  }
  return std::nullopt;
}

std::optional<std::size_t> ModelGraph::find(const std::string& name) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t ModelGraph::index_of(const std::string& name) const {
  if (auto i = find(name)) return *i;
  fail(ErrorCode::kUnknownLayer, "unknown layer '" + name + "'");
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace {

// Checks the parameters of one layer in isolation.
void check_parameters(const LayerSpec& layer, std::vector<Finding>& findings) {
  auto add = [&](std::string rule) { findings.push_back({layer.name, std::move(rule)}); };
  switch (layer.kind) {
    case LayerKind::kConv2d:
      if (layer.weight.rank() != 4) {
        add("conv2d weight must be rank 4, got " + shape_string(layer.weight.shape()));
        return;
      }
      if (!layer.bias.empty() && (layer.bias.rank() != 1 || layer.bias.size() != layer.weight.dim(0))) {
        add("conv2d bias " + shape_string(layer.bias.shape()) + " does not match " +
            std::to_string(layer.weight.dim(0)) + " output channels");
      }
      if (layer.stride[0] < 1 || layer.stride[1] < 1) add("stride must be >= 1");
      if (layer.padding[0] < 0 || layer.padding[1] < 0) add("padding must be >= 0");
      break;
    case LayerKind::kLinear:
      if (layer.weight.rank() != 2) {
        add("linear weight must be rank 2, got " + shape_string(layer.weight.shape()));
        return;
      }
      if (!layer.bias.empty() && (layer.bias.rank() != 1 || layer.bias.size() != layer.weight.dim(0))) {
        add("linear bias " + shape_string(layer.bias.shape()) + " does not match " +
            std::to_string(layer.weight.dim(0)) + " outputs");
      }
      break;
    case LayerKind::kBatchNorm2d: {
      const Tensor* vectors[] = {&layer.gamma, &layer.beta, &layer.running_mean,
                                 &layer.running_var};
      for (const Tensor* t : vectors) {
        if (t->rank() != 1 || t->size() != layer.gamma.size()) {
          add("batchnorm2d parameter vectors must all have length " +
              std::to_string(layer.gamma.size()));
          return;
        }
      }
      if (!(layer.eps >= 0.0)) add("batchnorm2d eps must be >= 0");
      break;
    }
    case LayerKind::kMaxPool2d:
    case LayerKind::kAvgPool2d:
      if (layer.kernel[0] < 1 || layer.kernel[1] < 1) add("pool kernel must be >= 1");
      if (layer.stride[0] < 1 || layer.stride[1] < 1) add("stride must be >= 1");
      break;
    case LayerKind::kRelu:
    case LayerKind::kFlatten:
      break;
  }
}

// Output shape of `layer` given `in`, or nullopt with a finding appended.
std::optional<Shape> output_shape(const LayerSpec& layer, const Shape& in,
                                  std::vector<Finding>& findings) {
  auto add = [&](std::string rule) {
    findings.push_back({layer.name, std::move(rule)});
    return std::nullopt;
  };
  const bool spatial = in.size() == 3;
  switch (layer.kind) {
    case LayerKind::kConv2d: {
      if (!spatial) return add("conv2d needs a [C,H,W] input, got " + shape_string(in));
      if (in[0] != layer.weight.dim(1)) {
        return add("conv2d weights " + shape_string(layer.weight.shape()) +
                   " do not match input " + shape_string(in));
      }
      const Index kh = layer.weight.dim(2), kw = layer.weight.dim(3);
      if (kh > in[1] + 2 * layer.padding[0] || kw > in[2] + 2 * layer.padding[1]) {
        return add("conv2d kernel does not fit input " + shape_string(in));
      }
      return Shape{layer.weight.dim(0),
                   conv_output_extent(in[1], kh, layer.stride[0], layer.padding[0]),
                   conv_output_extent(in[2], kw, layer.stride[1], layer.padding[1])};
    }
    case LayerKind::kBatchNorm2d:
      if (!spatial) return add("batchnorm2d needs a [C,H,W] input, got " + shape_string(in));
      if (in[0] != layer.gamma.size()) {
        return add("batchnorm2d has " + std::to_string(layer.gamma.size()) +
                   " channels, input " + shape_string(in));
      }
      return in;
    case LayerKind::kRelu:
      return in;
    case LayerKind::kMaxPool2d:
    case LayerKind::kAvgPool2d:
      if (!spatial) return add("pooling needs a [C,H,W] input, got " + shape_string(in));
      if (layer.kernel[0] > in[1] || layer.kernel[1] > in[2]) {
        return add("pool kernel larger than input " + shape_string(in));
      }
      return Shape{in[0], conv_output_extent(in[1], layer.kernel[0], layer.stride[0], 0),
                   conv_output_extent(in[2], layer.kernel[1], layer.stride[1], 0)};
    case LayerKind::kFlatten:
      return Shape{shape_size(in)};
    case LayerKind::kLinear:
      if (in.size() != 1) {
        return add("linear needs a flat input (missing flatten?), got " + shape_string(in));
      }
      if (in[0] != layer.weight.dim(1)) {
        return add("linear weights " + shape_string(layer.weight.shape()) +
                   " do not match input " + shape_string(in));
      }
      return Shape{layer.weight.dim(0)};
  }
  return std::nullopt;
}

// Walks the graph; returns shapes up to the first failure.
std::vector<Shape> walk_shapes(const ModelGraph& model, std::vector<Finding>& findings) {
  std::vector<Shape> shapes;
  Shape current = model.input_shape;
  for (const LayerSpec& layer : model.layers) {
    const std::size_t before = findings.size();
    check_parameters(layer, findings);
    if (findings.size() != before) break;
    auto next = output_shape(layer, current, findings);
    if (!next) break;
    current = *next;
    shapes.push_back(current);
  }
  return shapes;
}

}  // namespace

std::vector<Finding> validate_model(const ModelGraph& model) {
  std::vector<Finding> findings;
  const auto& in = model.input_shape;
  bool input_ok = in.size() == 3;
  for (Index d : in) input_ok = input_ok && d >= 1;
  if (!input_ok) {
    findings.push_back({"<model>", "input_shape must be [C,H,W] with positive dims, got " +
                                       shape_string(in)});
    return findings;
  }
  const auto& pre = model.preprocessing;
  if (static_cast<Index>(pre.mean.size()) != in[0] || static_cast<Index>(pre.std.size()) != in[0]) {
    findings.push_back({"<model>", "preprocessing mean/std must have one entry per input channel"});
  }
  for (float s : pre.std) {
    if (!(s > 0.0f)) {
      findings.push_back({"<model>", "preprocessing std entries must be positive"});
      break;
    }
  }

  std::set<std::string> seen;
  for (const LayerSpec& layer : model.layers) {
    if (layer.name.empty()) findings.push_back({"<unnamed>", "layer names must be non-empty"});
    if (!seen.insert(layer.name).second) {
      findings.push_back({layer.name, "duplicate layer name"});
    }
  }

  if (model.layers.empty()) {
    findings.push_back({"<model>", "model has no layers"});
    return findings;
  }

  const auto shapes = walk_shapes(model, findings);

  bool has_conv = false;
  for (const LayerSpec& layer : model.layers) has_conv = has_conv || layer.kind == LayerKind::kConv2d;
  if (!has_conv) findings.push_back({"<model>", "model has no conv2d layer"});

  const LayerSpec& last = model.layers.back();
  if (last.kind != LayerKind::kLinear) {
    findings.push_back({last.name, "final layer must be linear"});
  } else if (shapes.size() == model.layers.size() && shapes.back()[0] != model.class_count) {
    findings.push_back({last.name, "final linear produces " + std::to_string(shapes.back()[0]) +
                                       " outputs, class_count is " +
                                       std::to_string(model.class_count)});
  }
  return findings;
}

std::vector<Shape> infer_shapes(const ModelGraph& model) {
  std::vector<Finding> findings;
  auto shapes = walk_shapes(model, findings);
  if (!findings.empty()) {
    fail(ErrorCode::kShapeMismatch, "layer '" + findings.front().layer + "': " + findings.front().rule);
  }
  return shapes;
}

std::size_t last_conv_index(const ModelGraph& model) {
  for (std::size_t i = model.layers.size(); i-- > 0;) {
    if (model.layers[i].kind == LayerKind::kConv2d) return i;
  }
  fail(ErrorCode::kUnsupportedStructure, "model has no conv2d layer");
}

std::size_t feature_anchor_index(const ModelGraph& model) {
  std::size_t i = last_conv_index(model);
  while (i + 1 < model.layers.size()) {
    const LayerKind next = model.layers[i + 1].kind;
    if (next != LayerKind::kBatchNorm2d && next != LayerKind::kRelu &&
        next != LayerKind::kMaxPool2d && next != LayerKind::kAvgPool2d) {
      break;
    }
    ++i;
  }
  return i;
}

ModelGraph fold_batchnorm(const ModelGraph& model) {
  ModelGraph out = model;
  out.layers.clear();
  for (const LayerSpec& layer : model.layers) {
    if (layer.kind != LayerKind::kBatchNorm2d) {
      out.layers.push_back(layer);
      continue;
    }
    if (out.layers.empty() || out.layers.back().kind != LayerKind::kConv2d) {
      fail(ErrorCode::kUnsupportedStructure,
           "batchnorm2d '" + layer.name + "' is not directly preceded by a conv2d");
    }
    LayerSpec& conv = out.layers.back();
    const Index c_out = conv.weight.dim(0);
    if (layer.gamma.size() != c_out) {
      fail(ErrorCode::kShapeMismatch, "batchnorm2d '" + layer.name + "' has " +
                                          std::to_string(layer.gamma.size()) +
                                          " channels, conv has " + std::to_string(c_out));
    }
    const Index fan_in = conv.weight.size() / c_out;
    Tensor bias({c_out});
    for (Index o = 0; o < c_out; ++o) {
      const double scale = double(layer.gamma[o]) / std::sqrt(double(layer.running_var[o]) + layer.eps);
      for (Index k = 0; k < fan_in; ++k) {
        float& w = conv.weight[o * fan_in + k];
        w = static_cast<float>(double(w) * scale);
      }
      const double b = conv.bias.empty() ? 0.0 : double(conv.bias[o]);
      bias[o] = static_cast<float>((b - double(layer.running_mean[o])) * scale + double(layer.beta[o]));
    }
    conv.bias = std::move(bias);
  }
  return out;
}

// ---------------------------------------------------------------------------
// FGM serialization
// ---------------------------------------------------------------------------

namespace {

std::uint32_t crc_of(const std::uint8_t* bytes, std::size_t length) {
  return static_cast<std::uint32_t>(
      crc32(crc32(0L, Z_NULL, 0), bytes, static_cast<uInt>(length)));
}

void append_floats(std::vector<std::uint8_t>& out, const Tensor& t) {
  for (float v : t.values()) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
  }
}

std::vector<float> read_floats(const std::uint8_t* bytes, std::size_t count) {
  std::vector<float> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= std::uint32_t(bytes[4 * i + b]) << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

json pair_json(Pair p) { return json::array({p[0], p[1]}); }

std::vector<std::pair<const char*, const Tensor*>> blobs_of(const LayerSpec& layer) {
  switch (layer.kind) {
    case LayerKind::kConv2d:
    case LayerKind::kLinear:
      if (layer.bias.empty()) return {{"weight", &layer.weight}};
      return {{"weight", &layer.weight}, {"bias", &layer.bias}};
    case LayerKind::kBatchNorm2d:
      return {{"gamma", &layer.gamma},
              {"beta", &layer.beta},
              {"running_mean", &layer.running_mean},
              {"running_var", &layer.running_var}};
    default:
      return {};
  }
}

[[noreturn]] void header_error(const std::string& what) {
  fail(ErrorCode::kMalformedHeader, "FGM header: " + what);
}

template <typename T>
T field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) header_error(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    header_error(std::string("field '") + key + "': " + e.what());
  }
}

Pair pair_field(const json& j, const char* key, Pair fallback) {
  if (!j.contains(key)) return fallback;
  const auto v = field<std::vector<Index>>(j, key);
  if (v.size() != 2) header_error(std::string("field '") + key + "' must have two entries");
  return {v[0], v[1]};
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const ModelGraph& model) {
  std::vector<std::uint8_t> blobs;
  json layers = json::array();
  for (const LayerSpec& layer : model.layers) {
    json entry = {{"name", layer.name}, {"kind", to_string(layer.kind)}};
    switch (layer.kind) {
      case LayerKind::kConv2d:
        entry["stride"] = pair_json(layer.stride);
        entry["padding"] = pair_json(layer.padding);
        break;
      case LayerKind::kMaxPool2d:
      case LayerKind::kAvgPool2d:
        entry["kernel"] = pair_json(layer.kernel);
        entry["stride"] = pair_json(layer.stride);
        break;
      case LayerKind::kBatchNorm2d:
        entry["eps"] = layer.eps;
        break;
      default:
        break;
    }
    json blob_list = json::array();
    for (const auto& [role, tensor] : blobs_of(layer)) {
      const std::size_t offset = blobs.size();
      append_floats(blobs, *tensor);
      const std::size_t length = blobs.size() - offset;
      blob_list.push_back({{"role", role},
                           {"shape", tensor->shape()},
                           {"offset", offset},
                           {"length", length},
                           {"crc32", crc_of(blobs.data() + offset, length)}});
    }
    if (!blob_list.empty()) entry["blobs"] = std::move(blob_list);
    layers.push_back(std::move(entry));
  }
  const json header = {
      {"format", "FGM"},
      {"version", 1},
      {"input_shape", model.input_shape},
      {"class_count", model.class_count},
      {"preprocessing", {{"mean", model.preprocessing.mean}, {"std", model.preprocessing.std}}},
      {"layers", std::move(layers)},
  };
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(text.begin(), text.end());
  out.insert(out.end(), std::begin(kFgmMagic), std::end(kFgmMagic));
  out.insert(out.end(), blobs.begin(), blobs.end());
  return out;
}

void save_model(const ModelGraph& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::kIo, "cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) fail(ErrorCode::kIo, "failed writing " + path.string());
}

ModelGraph parse_model(std::span<const std::uint8_t> bytes, Validation validation) {
  // The header ends at the first magic occurrence whose prefix is a complete
  // JSON document; a magic sequence inside a JSON string leaves the prefix
  // unterminated.
  const std::string_view magic(kFgmMagic, sizeof kFgmMagic);
  const std::string_view view(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  json header;
  std::size_t blob_start = std::string_view::npos;
  for (std::size_t pos = view.find(magic); pos != std::string_view::npos;
       pos = view.find(magic, pos + 1)) {
    header = json::parse(view.substr(0, pos), nullptr, false);
    if (!header.is_discarded()) {
      blob_start = pos + magic.size();
      break;
    }
  }
  if (blob_start == std::string_view::npos) {
    header_error("no JSON header terminated by the FGCAMv01 magic");
  }
  if (!header.is_object()) header_error("header is not a JSON object");
  if (header.value("format", std::string()) != "FGM") header_error("format must be \"FGM\"");
  if (header.value("version", 0) != 1) header_error("unsupported version");

  const std::span<const std::uint8_t> blob_region = bytes.subspan(blob_start);

  ModelGraph model;
  model.input_shape = field<Shape>(header, "input_shape");
  model.class_count = field<Index>(header, "class_count");
  const json pre = field<json>(header, "preprocessing");
  model.preprocessing.mean = field<std::vector<float>>(pre, "mean");
  model.preprocessing.std = field<std::vector<float>>(pre, "std");

  const json layers = field<json>(header, "layers");
  if (!layers.is_array()) header_error("'layers' must be an array");
  for (const json& entry : layers) {
    LayerSpec layer;
    layer.name = field<std::string>(entry, "name");
    const auto kind = parse_layer_kind(field<std::string>(entry, "kind"));
    if (!kind) header_error("layer '" + layer.name + "' has unknown kind");
    layer.kind = *kind;
    layer.stride = pair_field(entry, "stride", {1, 1});
    layer.padding = pair_field(entry, "padding", {0, 0});
    layer.kernel = pair_field(entry, "kernel", {1, 1});
    if ((layer.kind == LayerKind::kMaxPool2d || layer.kind == LayerKind::kAvgPool2d) &&
        !entry.contains("stride")) {
      layer.stride = layer.kernel;
    }
    if (entry.contains("eps")) layer.eps = field<double>(entry, "eps");

    if (entry.contains("blobs")) {
      const json blobs = field<json>(entry, "blobs");
      if (!blobs.is_array()) header_error("layer '" + layer.name + "': 'blobs' must be an array");
      for (const json& blob : blobs) {
        const auto role = field<std::string>(blob, "role");
        const auto shape = field<Shape>(blob, "shape");
        const auto offset = field<std::uint64_t>(blob, "offset");
        const auto length = field<std::uint64_t>(blob, "length");
        const auto crc = field<std::uint32_t>(blob, "crc32");
        for (Index d : shape) {
          if (d < 1) {
            fail(ErrorCode::kShapeMismatch, "layer '" + layer.name + "' blob '" + role +
                                                "' has non-positive dimension " + shape_string(shape));
          }
        }
        if (length != static_cast<std::uint64_t>(4 * shape_size(shape))) {
          fail(ErrorCode::kShapeMismatch, "layer '" + layer.name + "' blob '" + role + "' shape " +
                                              shape_string(shape) + " disagrees with length " +
                                              std::to_string(length));
        }
        if (offset > blob_region.size() || length > blob_region.size() - offset) {
          fail(ErrorCode::kChecksumMismatch, "layer '" + layer.name + "' blob '" + role +
                                                 "' extends past end of file (truncated?)");
        }
        const std::uint8_t* data = blob_region.data() + offset;
        if (crc_of(data, length) != crc) {
          fail(ErrorCode::kChecksumMismatch,
               "layer '" + layer.name + "' blob '" + role + "' CRC-32 mismatch");
        }
        Tensor tensor(shape, read_floats(data, length / 4));
        Tensor* slot = nullptr;
        if (role == "weight") slot = &layer.weight;
        else if (role == "bias") slot = &layer.bias;
        else if (role == "gamma") slot = &layer.gamma;
        else if (role == "beta") slot = &layer.beta;
        else if (role == "running_mean") slot = &layer.running_mean;
        else if (role == "running_var") slot = &layer.running_var;
        else header_error("layer '" + layer.name + "' has unknown blob role '" + role + "'");
        *slot = std::move(tensor);
      }
    }
    std::vector<Finding> findings;
    check_parameters(layer, findings);
    if (!findings.empty()) {
      fail(ErrorCode::kShapeMismatch, "layer '" + layer.name + "': " + findings.front().rule);
    }
    model.layers.push_back(std::move(layer));
  }

  if (validation == Validation::kStrict) {
    const auto findings = validate_model(model);
    if (!findings.empty()) {
      std::string text = "model failed validation:";
      for (const auto& f : findings) text += "\n  " + f.layer + ": " + f.rule;
      fail(ErrorCode::kUnsupportedStructure, text);
    }
  }
  return model;
}

ModelGraph load_model(const std::filesystem::path& path, Validation validation) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::kIo, "cannot open model file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  return parse_model(bytes, validation);
}

// ---------------------------------------------------------------------------
// Forward execution
// ---------------------------------------------------------------------------

namespace {

template <typename Scalar>
BasicTensor<Scalar> as_scalar(const Tensor& t) {
  if constexpr (std::is_same_v<Scalar, float>) {
    return t;
  } else {
    return t.cast<Scalar>();
  }
}

}  // namespace

template <typename Scalar>
BasicTensor<Scalar> apply_layer(const LayerSpec& layer, const BasicTensor<Scalar>& input,
                                std::vector<Index>* argmax) {
  switch (layer.kind) {
    case LayerKind::kConv2d:
    case LayerKind::kLinear: {
      // Float weights are used in place; other scalars take a converted copy.
      if constexpr (std::is_same_v<Scalar, float>) {
        return layer.kind == LayerKind::kConv2d
                   ? conv2d(input, layer.weight, layer.bias_span(), layer.stride, layer.padding)
                   : linear(input, layer.weight, layer.bias_span());
      } else {
        const auto w = as_scalar<Scalar>(layer.weight);
        const auto b = layer.bias.empty() ? BasicTensor<Scalar>() : as_scalar<Scalar>(layer.bias);
        const std::span<const Scalar> bias(b.data(), static_cast<std::size_t>(b.empty() ? 0 : b.size()));
        return layer.kind == LayerKind::kConv2d
                   ? conv2d(input, w, bias, layer.stride, layer.padding)
                   : linear(input, w, bias);
      }
    }
    case LayerKind::kBatchNorm2d: {
      if (input.rank() != 3 || input.dim(0) != layer.gamma.size()) {
        fail(ErrorCode::kShapeMismatch, "batchnorm2d '" + layer.name + "': input " +
                                            shape_string(input.shape()));
      }
      BasicTensor<Scalar> out = input;
      const Index plane = input.dim(1) * input.dim(2);
      for (Index c = 0; c < input.dim(0); ++c) {
        const double scale = double(layer.gamma[c]) / std::sqrt(double(layer.running_var[c]) + layer.eps);
        const double shift = double(layer.beta[c]) - double(layer.running_mean[c]) * scale;
        for (Index k = 0; k < plane; ++k) {
          Scalar& v = out[c * plane + k];
          v = static_cast<Scalar>(double(v) * scale + shift);
        }
      }
      return out;
    }
    case LayerKind::kRelu:
      return relu(input);
    case LayerKind::kMaxPool2d: {
      auto pooled = maxpool2d(input, layer.kernel, layer.stride);
      if (argmax) *argmax = std::move(pooled.argmax);
      return std::move(pooled.values);
    }
    case LayerKind::kAvgPool2d:
      return avgpool2d(input, layer.kernel, layer.stride);
    case LayerKind::kFlatten:
      return input.reshaped({input.size()});
  }
  fail(ErrorCode::kUnsupportedStructure, "unknown layer kind");
}

template BasicTensor<float> apply_layer(const LayerSpec&, const BasicTensor<float>&, std::vector<Index>*);
template BasicTensor<double> apply_layer(const LayerSpec&, const BasicTensor<double>&, std::vector<Index>*);

std::size_t ActivationTrace::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  fail(ErrorCode::kUnknownLayer, "unknown layer '" + name + "'");
}

const Tensor& ActivationTrace::output_of(const std::string& name) const {
  return outputs[index_of(name)];
}

namespace {

void check_input(const ModelGraph& model, const Tensor& input) {
  if (input.shape() != model.input_shape) {
    fail(ErrorCode::kShapeMismatch, "input " + shape_string(input.shape()) +
                                        " does not match model input " +
                                        shape_string(model.input_shape));
  }
}

}  // namespace

ActivationTrace forward_trace(const ModelGraph& model, const Tensor& input) {
  check_input(model, input);
  ActivationTrace trace;
  trace.input = input;
  trace.names.reserve(model.layers.size());
  trace.outputs.reserve(model.layers.size());
  trace.argmax.resize(model.layers.size());
  const Tensor* current = &trace.input;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    trace.names.push_back(model.layers[i].name);
    trace.outputs.push_back(apply_layer(model.layers[i], *current, &trace.argmax[i]));
    current = &trace.outputs.back();
  }
  return trace;
}

template <typename Scalar>
BasicTensor<Scalar> forward_from(const ModelGraph& model, std::size_t first,
                                 BasicTensor<Scalar> input) {
  for (std::size_t i = first; i < model.layers.size(); ++i) {
    input = apply_layer(model.layers[i], input);
  }
  return input;
}

template BasicTensor<float> forward_from(const ModelGraph&, std::size_t, BasicTensor<float>);
template BasicTensor<double> forward_from(const ModelGraph&, std::size_t, BasicTensor<double>);

Tensor forward_logits(const ModelGraph& model, const Tensor& input) {
  check_input(model, input);
  return forward_from(model, 0, input);
}

}  // namespace fgcam
