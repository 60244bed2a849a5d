#include "fgcam/app.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fgcam/image_io.hpp"
#include "fgcam/parallel.hpp"

namespace fgcam {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::pair<Method, const char*> kMethodNames[] = {
    {Method::kGradCam, "grad-cam"},      {Method::kScoreCam, "score-cam"},
    {Method::kLayerCam, "layer-cam"},    {Method::kFgGradCam, "fg-grad-cam"},
    {Method::kFgScoreCam, "fg-score-cam"}, {Method::kLrp, "lrp"},
};

bool is_fg(Method m) { return m == Method::kFgGradCam || m == Method::kFgScoreCam; }

}  // namespace

const char* to_string(Method method) {
  for (const auto& [m, name] : kMethodNames) {
    if (m == method) return name;
  }
  return "unknown";
}

std::optional<Method> parse_method(const std::string& text) {
  for (const auto& [m, name] : kMethodNames) {
    if (text == name) return m;
  }
  return std::nullopt;
}

std::string resolve_layer(const ModelGraph& model, const ExplainRequest& request) {
  if (!request.layer.empty()) return request.layer;
  if (is_fg(request.method) || request.method == Method::kLrp) return kInputLayer;
  return feature_anchor(model);
}

std::vector<std::string> check_request(const ModelGraph& model, const ExplainRequest& request) {
  std::vector<std::string> warnings;
  const std::string layer = resolve_layer(model, request);
  const std::string anchor = feature_anchor(model);
  if (layer != kInputLayer) model.index_of(layer);

  switch (request.method) {
    case Method::kLrp:
      if (layer != kInputLayer) {
        fail(ErrorCode::kInvalidArgument, "lrp explains the input layer only");
      }
      break;
    case Method::kGradCam:
    case Method::kScoreCam:
    case Method::kLayerCam:
      if (layer == kInputLayer) {
        fail(ErrorCode::kInvalidArgument,
             std::string(to_string(request.method)) + " needs a feature-map layer, not the input");
      }
      if (request.method != Method::kLayerCam && layer != anchor) {
        warnings.push_back(std::string(to_string(request.method)) + " at '" + layer +
                           "' instead of the last convolutional stage '" + anchor +
                           "': explanation accuracy degrades at shallower layers");
      }
      break;
    case Method::kFgGradCam:
    case Method::kFgScoreCam:
      if (layer != kInputLayer && model.index_of(layer) > model.index_of(anchor)) {
        fail(ErrorCode::kInvalidArgument,
             "target layer '" + layer + "' lies after the feature anchor '" + anchor + "'");
      }
      break;
  }
  if (request.denoise && !is_fg(request.method)) {
    warnings.push_back("--denoise only applies to fg-grad-cam and fg-score-cam; ignored");
  }
  return warnings;
}

Explanation explain(const ModelGraph& model, const ActivationTrace& trace, const Tensor& input,
                    Index class_index, const ExplainRequest& request) {
  const std::string layer = resolve_layer(model, request);
  switch (request.method) {
    case Method::kGradCam:
      return cam_explanation(gradcam_weights(model, trace, class_index, layer), trace, layer);
    case Method::kScoreCam:
      return cam_explanation(
          scorecam_weights(model, trace, input, class_index, layer, request.workers), trace, layer);
    case Method::kLayerCam:
      return layercam_explanation(model, trace, class_index, layer);
    case Method::kFgGradCam:
    case Method::kFgScoreCam: {
      FgCamOptions options;
      options.backend = request.method == Method::kFgGradCam ? CamBackend::kGrad : CamBackend::kScore;
      options.target_layer = layer;
      options.denoise = request.denoise;
      options.keep_fraction = request.keep_fraction;
      options.is_signed = request.is_signed;
      options.workers = request.workers;
      return fg_cam_explain(model, trace, input, class_index, options);
    }
    case Method::kLrp:
      return lrp_explain(model, trace, class_index, request.is_signed);
  }
  fail(ErrorCode::kInvalidArgument, "unknown method");
}

Index argmax_class(const Tensor& logits) {
  return static_cast<Index>(std::max_element(logits.values().begin(), logits.values().end()) -
                            logits.values().begin());
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

namespace {

struct RunConfig {
  std::string model_path;
  std::string method = "fg-grad-cam";
  std::string layer;
  bool denoise = false;
  bool is_signed = false;
  std::uint64_t seed = 0;
  std::size_t sample = 0;
  std::string out_map, out_png, out_json;
  Index step_pixels = 448;
  Index blur_ksize = 51;
  double blur_sigma = 50.0;
  double retain = 0.5;
  unsigned workers = 0;
};

ModelGraph load_ready_model(const std::string& path) {
  return fold_batchnorm(load_model(path));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

Method require_method(const std::string& text) {
  auto m = parse_method(text);
  if (!m) {
    fail(ErrorCode::kInvalidArgument,
         "unknown method '" + text +
             "' (expected grad-cam, score-cam, layer-cam, fg-grad-cam, fg-score-cam or lrp)");
  }
  return *m;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::kIo, "cannot write " + path.string());
  os << text;
}

int cmd_explain(const RunConfig& config, const std::string& image_path,
                std::optional<Index> class_override, std::ostream& out, std::ostream& err) {
  const ModelGraph model = load_ready_model(config.model_path);
  ExplainRequest request;
  request.method = require_method(config.method);
  request.layer = config.layer;
  request.denoise = config.denoise;
  request.is_signed = config.is_signed;
  request.workers = config.workers;
  for (const auto& w : check_request(model, request)) err << "warning: " << w << '\n';

  const Tensor input = preprocess(read_image(image_path), model);
  const ActivationTrace trace = forward_trace(model, input);
  const Index predicted = argmax_class(trace.logits());
  const Index class_index = class_override.value_or(predicted);
  if (class_index < 0 || class_index >= model.class_count) {
    fail(ErrorCode::kInvalidArgument, "class " + std::to_string(class_index) + " out of range");
  }
  const Explanation e = explain(model, trace, input, class_index, request);

  const std::string stem = fs::path(image_path).stem().string() + "." + config.method;
  const fs::path map_path = config.out_map.empty() ? stem + ".fgmap" : config.out_map;
  const fs::path png_path = config.out_png.empty() ? stem + ".png" : config.out_png;
  const fs::path json_path = config.out_json.empty() ? stem + ".json" : config.out_json;

  write_raw_map(map_path, e.map);
  write_png(png_path, render_heatmap(e.map, e.is_signed, model.input_shape[1], model.input_shape[2]));
  const json sidecar = {
      {"model", config.model_path},
      {"image", image_path},
      {"method", config.method},
      {"layer", e.layer},
      {"denoise", config.denoise},
      {"signed", e.is_signed},
      {"seed", config.seed},
      {"class", class_index},
      {"predicted_class", predicted},
      {"logits", trace.logits().values()},
      {"map_shape", e.map.shape()},
      {"map", map_path.string()},
      {"png", png_path.string()},
  };
  write_text(json_path, sidecar.dump(2) + "\n");
  out << "class " << class_index << " (predicted " << predicted << "), map "
      << shape_string(e.map.shape()) << " -> " << map_path.string() << '\n';
  return 0;
}

struct ListEntry {
  std::string path;
  Index class_index = 0;
  std::optional<std::array<double, 4>> bbox;
};

std::vector<ListEntry> read_listfile(const fs::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::kIo, "cannot open listfile " + path.string());
  std::vector<ListEntry> entries;
  std::size_t line_no = 0;
  for (std::string line; std::getline(is, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("path") || !j.contains("class")) {
      fail(ErrorCode::kInvalidArgument, path.string() + ":" + std::to_string(line_no) +
                                            ": expected {\"path\": ..., \"class\": ...}");
    }
    ListEntry e;
    e.path = j.at("path").get<std::string>();
    if (fs::path(e.path).is_relative()) e.path = (path.parent_path() / e.path).string();
    e.class_index = j.at("class").get<Index>();
    if (j.contains("bbox") && !j.at("bbox").is_null()) {
      const auto b = j.at("bbox").get<std::vector<double>>();
      if (b.size() != 4) {
        fail(ErrorCode::kInvalidArgument,
             path.string() + ":" + std::to_string(line_no) + ": bbox needs 4 numbers");
      }
      e.bbox = std::array<double, 4>{b[0], b[1], b[2], b[3]};
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

// Scales a box from original-image pixels to the model input frame.
BBox scale_box(const std::array<double, 4>& b, const Image& image, Index height, Index width) {
  const double sx = static_cast<double>(width) / static_cast<double>(image.width);
  const double sy = static_cast<double>(height) / static_cast<double>(image.height);
  BBox box;
  box.x1 = std::clamp<Index>(static_cast<Index>(std::floor(b[0] * sx)), 0, width - 1);
  box.y1 = std::clamp<Index>(static_cast<Index>(std::floor(b[1] * sy)), 0, height - 1);
  box.x2 = std::clamp<Index>(static_cast<Index>(std::ceil(b[2] * sx)), box.x1 + 1, width);
  box.y2 = std::clamp<Index>(static_cast<Index>(std::ceil(b[3] * sy)), box.y1 + 1, height);
  return box;
}

struct ImageResult {
  // One slot per (method, layer) pair.
  std::vector<EvalRecord> records;
  std::vector<double> insertion, deletion;
  std::vector<double> proportions;
  bool has_box = false;
};

int cmd_eval(const RunConfig& config, const std::string& listfile, const std::string& metric,
             std::ostream& out, std::ostream& err) {
  if (metric != "ad-ai" && metric != "insdel" && metric != "loc") {
    fail(ErrorCode::kInvalidArgument, "unknown metric '" + metric + "' (expected ad-ai, insdel or loc)");
  }
  const ModelGraph model = load_ready_model(config.model_path);
  std::vector<ListEntry> entries = read_listfile(listfile);
  if (entries.empty()) fail(ErrorCode::kInvalidArgument, "listfile " + listfile + " has no entries");
  if (metric == "loc" &&
      std::none_of(entries.begin(), entries.end(), [](const ListEntry& e) { return e.bbox.has_value(); })) {
    fail(ErrorCode::kInvalidArgument, "listfile " + listfile + " has no bbox entries for the loc metric");
  }

  std::vector<std::size_t> selected(entries.size());
  std::iota(selected.begin(), selected.end(), std::size_t{0});
  if (config.sample > 0 && config.sample < entries.size()) {
    std::mt19937_64 rng(config.seed);
    std::shuffle(selected.begin(), selected.end(), rng);
    selected.resize(config.sample);
    std::sort(selected.begin(), selected.end());
  }

  struct Job {
    ExplainRequest request;
    std::string layer;
  };
  std::vector<Job> jobs;
  const auto methods = split_list(config.method);
  const auto layers = config.layer.empty() ? std::vector<std::string>{""} : split_list(config.layer);
  for (const auto& m : methods) {
    for (const auto& l : layers) {
      ExplainRequest r;
      r.method = require_method(m);
      r.layer = l;
      r.denoise = config.denoise;
      r.is_signed = config.is_signed;
      r.workers = 1;
      for (const auto& w : check_request(model, r)) err << "warning: " << w << '\n';
      jobs.push_back({r, resolve_layer(model, r)});
    }
  }
  if (jobs.empty()) fail(ErrorCode::kInvalidArgument, "no methods given");

  const Index h = model.input_shape[1], w = model.input_shape[2];
  std::vector<ImageResult> results(selected.size());
  parallel_for(
      selected.size(),
      [&](std::size_t s) {
        const ListEntry& entry = entries[selected[s]];
        ImageResult& result = results[s];
        result.has_box = entry.bbox.has_value();
        if (metric == "loc" && !result.has_box) return;
        const Image image = read_image(entry.path);
        const Tensor input = preprocess(image, model);
        const ActivationTrace trace = forward_trace(model, input);
        const Tensor blurred = gaussian_blur(input, config.blur_ksize, config.blur_sigma);
        const double y = softmax(trace.logits())[entry.class_index];
        for (const Job& job : jobs) {
          const Explanation e = explain(model, trace, input, entry.class_index, job.request);
          if (metric == "ad-ai") {
            const Tensor kept = retain_top_half(input, e, blurred, config.retain);
            result.records.push_back({y, class_score(model, kept, entry.class_index), entry.class_index});
          } else if (metric == "insdel") {
            result.deletion.push_back(auc(perturbation_curve(model, input, blurred, e, entry.class_index,
                                                             Perturbation::kDeletion, config.step_pixels)));
            result.insertion.push_back(auc(perturbation_curve(model, input, blurred, e, entry.class_index,
                                                              Perturbation::kInsertion, config.step_pixels)));
          } else {
            result.proportions.push_back(proportion(e, scale_box(*entry.bbox, image, h, w), h, w));
          }
        }
      },
      config.workers);

  json rows = json::array();
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    json row = {{"method", to_string(jobs[j].request.method)}, {"layer", jobs[j].layer}};
    if (metric == "ad-ai") {
      std::vector<EvalRecord> records;
      for (const auto& r : results) records.push_back(r.records[j]);
      const DropIncrease di = average_drop_increase(records);
      row["average_drop"] = di.average_drop;
      row["average_increase"] = di.average_increase;
      row["count"] = di.used;
      row["excluded_zero_score"] = di.excluded;
    } else if (metric == "insdel") {
      double ins = 0.0, del = 0.0;
      for (const auto& r : results) {
        ins += r.insertion[j];
        del += r.deletion[j];
      }
      const double n = static_cast<double>(results.size());
      row["insertion_auc"] = ins / n;
      row["deletion_auc"] = del / n;
      row["overall"] = overall_score(ins / n, del / n);
      row["count"] = results.size();
    } else {
      double total = 0.0;
      std::size_t count = 0;
      for (const auto& r : results) {
        if (!r.has_box) continue;
        total += r.proportions[j];
        ++count;
      }
      row["proportion"] = count ? total / static_cast<double>(count) : 0.0;
      row["count"] = count;
      row["skipped_no_bbox"] = results.size() - count;
    }
    rows.push_back(std::move(row));
  }
  const json report = {
      {"model", config.model_path},
      {"listfile", listfile},
      {"metric", metric},
      {"seed", config.seed},
      {"sample", config.sample},
      {"images", selected.size()},
      {"step_pixels", config.step_pixels},
      {"blur_ksize", config.blur_ksize},
      {"blur_sigma", config.blur_sigma},
      {"retain", config.retain},
      {"signed", config.is_signed},
      {"denoise", config.denoise},
      {"results", std::move(rows)},
  };
  const std::string text = report.dump(2) + "\n";
  if (config.out_json.empty()) {
    out << text;
  } else {
    write_text(config.out_json, text);
  }
  return 0;
}

int cmd_inspect(const std::string& model_path, std::ostream& out, std::ostream& err) {
  const ModelGraph model = load_model(model_path, Validation::kDeferred);
  const auto findings = validate_model(model);
  std::optional<std::size_t> last_conv, anchor;
  bool has_conv = std::any_of(model.layers.begin(), model.layers.end(),
                              [](const LayerSpec& l) { return l.kind == LayerKind::kConv2d; });
  if (has_conv) {
    last_conv = last_conv_index(model);
    anchor = feature_anchor_index(model);
  }
  std::vector<Shape> shapes;
  try {
    shapes = infer_shapes(model);
  } catch (const Error&) {
  }

  out << "model " << model_path << ": input " << shape_string(model.input_shape) << ", "
      << model.class_count << " classes, " << model.layers.size() << " layers\n";
  out << std::left << std::setw(4) << "#" << std::setw(16) << "name" << std::setw(13) << "kind"
      << std::setw(18) << "input" << std::setw(18) << "output" << "notes\n";
  Shape current = model.input_shape;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& layer = model.layers[i];
    const std::string output = i < shapes.size() ? shape_string(shapes[i]) : "?";
    std::string notes;
    if (layer.kind == LayerKind::kConv2d) {
      notes = "w" + shape_string(layer.weight.shape()) + " s" + shape_string({layer.stride[0], layer.stride[1]}) +
              " p" + shape_string({layer.padding[0], layer.padding[1]});
    } else if (layer.kind == LayerKind::kLinear) {
      notes = "w" + shape_string(layer.weight.shape());
    } else if (layer.kind == LayerKind::kMaxPool2d || layer.kind == LayerKind::kAvgPool2d) {
      notes = "k" + shape_string({layer.kernel[0], layer.kernel[1]}) + " s" +
              shape_string({layer.stride[0], layer.stride[1]});
    }
    if (last_conv && *last_conv == i) notes += " [L: last conv]";
    if (anchor && *anchor == i) notes += " [CAM anchor]";
    out << std::left << std::setw(4) << i << std::setw(16) << layer.name << std::setw(13)
        << to_string(layer.kind) << std::setw(18) << (i == 0 || i - 1 < shapes.size() ? shape_string(current) : "?")
        << std::setw(18) << output << notes << '\n';
    if (i < shapes.size()) current = shapes[i];
  }
  out << "checksums: ok\n";
  if (findings.empty()) {
    out << "validation: ok\n";
    return 0;
  }
  for (const auto& f : findings) err << "finding: " << f.layer << ": " << f.rule << '\n';
  return 1;
}

int cmd_render(const std::string& map_path, const std::string& png_path, bool is_signed,
               Index height, Index width, std::ostream& out) {
  Tensor map = read_raw_map(map_path);
  if (map.rank() == 3 && map.dim(0) == 1) map = map.reshaped({map.dim(1), map.dim(2)});
  if (map.rank() != 2) fail(ErrorCode::kShapeMismatch, "render expects an [h,w] map");
  write_png(png_path, render_heatmap(map, is_signed, height > 0 ? height : map.dim(0),
                                     width > 0 ? width : map.dim(1)));
  out << "wrote " << png_path << '\n';
  return 0;
}

void add_common(CLI::App* cmd, RunConfig& config) {
  cmd->add_option("--model", config.model_path, "FGM model file")->required();
  cmd->add_option("--method", config.method,
                  "grad-cam | score-cam | layer-cam | fg-grad-cam | fg-score-cam | lrp");
  cmd->add_option("--layer", config.layer, "target layer name or 'input'");
  cmd->add_flag("--denoise", config.denoise, "low-rank denoising of FG-CAM components");
  cmd->add_flag("--signed", config.is_signed, "keep negative contributions");
  cmd->add_option("--seed", config.seed, "random seed");
  cmd->add_option("--out-json", config.out_json, "JSON output path");
  cmd->add_option("--workers", config.workers, "worker threads (0 = all cores)");
}

}  // namespace

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"FG-CAM explanation engine for sequential CNNs"};
  app.require_subcommand(1);
  RunConfig config;

  auto* explain_cmd = app.add_subcommand("explain", "explain one image");
  add_common(explain_cmd, config);
  std::string image_path;
  std::optional<Index> class_override;
  explain_cmd->add_option("image", image_path, "input image (PNG, PGM or PPM)")->required();
  explain_cmd->add_option("--class", class_override, "class to explain (default: predicted)");
  explain_cmd->add_option("--out-map", config.out_map, "raw map output path");
  explain_cmd->add_option("--out-png", config.out_png, "heatmap PNG output path");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate explanations over a listfile");
  add_common(eval_cmd, config);
  std::string listfile, metric = "ad-ai";
  eval_cmd->add_option("listfile", listfile, "JSON-lines image list")->required();
  eval_cmd->add_option("--metric", metric, "ad-ai | insdel | loc");
  eval_cmd->add_option("--sample", config.sample, "evaluate a seeded random subset of N images");
  eval_cmd->add_option("--step-pixels", config.step_pixels, "pixels per insertion/deletion step")
      ->check(CLI::PositiveNumber);
  eval_cmd->add_option("--blur-ksize", config.blur_ksize, "Gaussian blur kernel size (odd)");
  eval_cmd->add_option("--blur-sigma", config.blur_sigma, "Gaussian blur sigma");
  eval_cmd->add_option("--retain", config.retain, "fraction of pixels kept for ad-ai");

  auto* inspect_cmd = app.add_subcommand("inspect", "print the layer table of a model");
  std::string inspect_path;
  inspect_cmd->add_option("model", inspect_path, "FGM model file")->required();

  auto* render_cmd = app.add_subcommand("render", "render a raw map as a PNG heatmap");
  std::string render_map, render_png;
  bool render_signed = false;
  Index render_h = 0, render_w = 0;
  render_cmd->add_option("map", render_map, "raw map file")->required();
  render_cmd->add_option("--out-png", render_png, "PNG output path")->required();
  render_cmd->add_flag("--signed", render_signed, "diverging colormap");
  render_cmd->add_option("--height", render_h, "output height (default: map height)");
  render_cmd->add_option("--width", render_w, "output width (default: map width)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*explain_cmd) {
      require_method(config.method);
      return cmd_explain(config, image_path, class_override, out, err);
    }
    if (*eval_cmd) return cmd_eval(config, listfile, metric, out, err);
    if (*inspect_cmd) return cmd_inspect(inspect_path, out, err);
    if (*render_cmd) return cmd_render(render_map, render_png, render_signed, render_h, render_w, out);
  } catch (const Error& e) {
    err << "error (" << to_string(e.code()) << "): " << e.what() << '\n';
    return e.code() == ErrorCode::kInvalidArgument ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace fgcam
