#include "fgcam/metrics.hpp"

#include <cmath>
#include <numeric>

namespace fgcam {

DropIncrease average_drop_increase(const std::vector<EvalRecord>& records) {
  DropIncrease out;
  double drop = 0.0;
  std::size_t increases = 0;
  for (const EvalRecord& r : records) {
    if (!(r.y > 0.0)) {
      ++out.excluded;
      continue;
    }
    ++out.used;
    drop += std::max(0.0, r.y - r.o) / r.y;
    if (r.y < r.o) ++increases;
  }
  if (out.used == 0) return out;
  const double n = static_cast<double>(out.used);
  out.average_drop = drop * 100.0 / n;
  out.average_increase = static_cast<double>(increases) * 100.0 / n;
  return out;
}

Tensor map_at_resolution(const Explanation& explanation, Index height, Index width) {
  const Tensor& map = explanation.map;
  if (map.size() == 0) fail(ErrorCode::kShapeMismatch, "empty explanation map");
  Tensor planar;
  if (map.rank() == 2) {
    planar = map.reshaped({1, map.dim(0), map.dim(1)});
  } else if (map.rank() == 3 && map.dim(0) == 1) {
    planar = map;
  } else {
    fail(ErrorCode::kShapeMismatch, "explanation map must be [h,w] or [1,h,w], got " +
                                        shape_string(map.shape()));
  }
  if (planar.dim(1) != height || planar.dim(2) != width) {
    planar = bilinear_resize(planar, height, width);
  }
  return planar.reshaped({height, width});
}

std::vector<Index> rank_pixels(const Tensor& map) {
  std::vector<Index> order(static_cast<std::size_t>(map.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return map[a] > map[b]; });
  return order;
}

namespace {

void check_pair(const Tensor& image, const Tensor& blurred) {
  if (image.rank() != 3 || image.shape() != blurred.shape()) {
    fail(ErrorCode::kShapeMismatch, "image " + shape_string(image.shape()) + " and blurred image " +
                                        shape_string(blurred.shape()) + " must be matching [C,H,W]");
  }
}

void copy_site(Tensor& dst, const Tensor& src, Index site) {
  const Index c = dst.dim(0), plane = dst.dim(1) * dst.dim(2);
  for (Index ch = 0; ch < c; ++ch) dst[ch * plane + site] = src[ch * plane + site];
}

}  // namespace

Tensor retain_top_half(const Tensor& image, const Explanation& explanation,
                       const Tensor& blurred, double fraction, std::vector<bool>* kept) {
  check_pair(image, blurred);
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, "retain fraction must lie in (0, 1]");
  }
  const Index h = image.dim(1), w = image.dim(2), sites = h * w;
  const Tensor map = map_at_resolution(explanation, h, w);
  const auto order = rank_pixels(map);

  Index keep = static_cast<Index>(std::ceil(static_cast<double>(sites) * fraction - 1e-9));
  if (explanation.is_signed) {
    const Index positive = std::count_if(map.values().begin(), map.values().end(),
                                         [](float v) { return v > 0.0f; });
    keep = std::min(keep, positive);
  }

  Tensor out = blurred;
  std::vector<bool> mask(static_cast<std::size_t>(sites), false);
  for (Index r = 0; r < keep; ++r) {
    const Index site = order[static_cast<std::size_t>(r)];
    copy_site(out, image, site);
    mask[static_cast<std::size_t>(site)] = true;
  }
  if (kept) *kept = std::move(mask);
  return out;
}

double class_score(const ModelGraph& model, const Tensor& input, Index class_index) {
  const Tensor probs = softmax(forward_logits(model, input));
  return probs[class_index];
}

Curve perturbation_curve(const ModelGraph& model, const Tensor& image, const Tensor& blurred,
                         const Explanation& explanation, Index class_index,
                         Perturbation direction, Index step_pixels) {
  check_pair(image, blurred);
  if (step_pixels < 1) fail(ErrorCode::kInvalidArgument, "step_pixels must be >= 1");
  const Index h = image.dim(1), w = image.dim(2), sites = h * w;
  const auto order = rank_pixels(map_at_resolution(explanation, h, w));

  const bool deleting = direction == Perturbation::kDeletion;
  Tensor current = deleting ? image : blurred;
  const Tensor& source = deleting ? blurred : image;

  Curve curve;
  curve.xs.push_back(0.0);
  curve.ys.push_back(class_score(model, current, class_index));
  for (Index done = 0; done < sites;) {
    const Index next = std::min(sites, done + step_pixels);
    for (Index r = done; r < next; ++r) copy_site(current, source, order[static_cast<std::size_t>(r)]);
    done = next;
    curve.xs.push_back(static_cast<double>(done) / static_cast<double>(sites));
    curve.ys.push_back(class_score(model, current, class_index));
  }
  return curve;
}

double auc(const Curve& curve) {
  if (curve.xs.size() != curve.ys.size()) {
    fail(ErrorCode::kShapeMismatch, "curve xs and ys differ in length");
  }
  double area = 0.0;
  for (std::size_t i = 1; i < curve.xs.size(); ++i) {
    area += 0.5 * (curve.xs[i] - curve.xs[i - 1]) * (curve.ys[i] + curve.ys[i - 1]);
  }
  return area;
}

double proportion(const Explanation& explanation, const BBox& box, Index height, Index width) {
  if (!(box.x1 >= 0 && box.y1 >= 0 && box.x1 < box.x2 && box.y1 < box.y2 && box.x2 <= width &&
        box.y2 <= height)) {
    fail(ErrorCode::kInvalidArgument, "bounding box outside the " + std::to_string(width) + "x" +
                                          std::to_string(height) + " frame");
  }
  const Tensor map = map_at_resolution(explanation, height, width);
  double inside = 0.0, total = 0.0;
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      const double v = std::max(0.0f, map[y * width + x]);
      total += v;
      if (x >= box.x1 && x < box.x2 && y >= box.y1 && y < box.y2) inside += v;
    }
  }
  return total > 0.0 ? inside / total : 0.0;
}

}  // namespace fgcam
