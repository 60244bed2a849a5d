#pragma once

#include <vector>

#include "fgcam/cam.hpp"
#include "fgcam/model.hpp"

namespace fgcam {

struct EvalRecord {
  double y = 0.0;  // softmax score of the class on the original image
  double o = 0.0;  // softmax score on the perturbed image
  Index class_index = 0;
};

struct DropIncrease {
  double average_drop = 0.0;      // percent
  double average_increase = 0.0;  // percent
  std::size_t used = 0;
  // Records with y == 0 cannot be normalized and are left out.
  std::size_t excluded = 0;
};

DropIncrease average_drop_increase(const std::vector<EvalRecord>& records);

struct Curve {
  std::vector<double> xs;  // fraction of perturbed pixel sites, 0 -> 1
  std::vector<double> ys;  // softmax score of the class
};

enum class Perturbation { kDeletion, kInsertion };

/// Half-open pixel box [x1, x2) x [y1, y2) in model-input coordinates.
struct BBox {
  Index x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  Index area() const { return (x2 - x1) * (y2 - y1); }
};

/// Explanation map resized (bilinearly, when needed) to height x width.
Tensor map_at_resolution(const Explanation& explanation, Index height, Index width);

/// Pixel sites ordered by descending explanation value; ties keep the lowest
/// flat index first.
std::vector<Index> rank_pixels(const Tensor& map);

/// Keeps the most important `fraction` of pixel sites (ceil(P * fraction)) from
/// `image` and takes the rest from `blurred`. For signed explanations with
/// fewer positive sites than that, exactly the positive sites are kept.
/// Returns the composed image; `kept` (optional) receives the retained mask.
Tensor retain_top_half(const Tensor& image, const Explanation& explanation,
                       const Tensor& blurred, double fraction = 0.5,
                       std::vector<bool>* kept = nullptr);

/// Deletion starts at `image` and swaps in `blurred` pixels in explanation
/// order; insertion starts at `blurred` and restores `image` pixels. One point
/// per step plus the start point.
Curve perturbation_curve(const ModelGraph& model, const Tensor& image, const Tensor& blurred,
                         const Explanation& explanation, Index class_index,
                         Perturbation direction, Index step_pixels = 448);

/// Trapezoidal area under the curve.
double auc(const Curve& curve);

inline double overall_score(double insertion_auc, double deletion_auc) {
  return insertion_auc - deletion_auc;
}

/// Share of (negative-clamped) explanation mass inside the box; 0 when the map
/// carries no mass.
double proportion(const Explanation& explanation, const BBox& box, Index height, Index width);

/// Softmax score of `class_index` for one input.
double class_score(const ModelGraph& model, const Tensor& input, Index class_index);

}  // namespace fgcam
