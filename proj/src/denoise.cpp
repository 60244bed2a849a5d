#include "fgcam/denoise.hpp"

namespace fgcam {

RelevanceStack denoise_components(const RelevanceStack& components, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, "keep_fraction must lie in (0, 1]");
  }
  const Tensor& values = components.values;
  if (values.rank() != 3) {
    fail(ErrorCode::kShapeMismatch, "denoise expects [C,H,W] components, got " +
                                        shape_string(values.shape()));
  }
  const Index c = values.dim(0), k = values.dim(1) * values.dim(2);
  Eigen::MatrixXd m = values.matrix(c, k).cast<double>();
  const Eigen::VectorXd means = m.rowwise().mean();
  m.colwise() -= means;

  const auto svd = svd_small(m);
  Eigen::MatrixXd rebuilt = svd.reconstruct(denoise_rank(c, k, keep_fraction));
  rebuilt.colwise() += means;

  RelevanceStack out = components;
  out.values.matrix(c, k) = rebuilt.cast<float>();
  return out;
}

}  // namespace fgcam
