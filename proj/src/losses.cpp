#include "pff/losses.hpp"

#include <algorithm>
#include <cmath>

namespace pff {

using ad::Mat;
using ad::Var;

void LossWeights::validate() const {
  for (double v : {query, neighbors, weight}) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError("loss weights must be finite and non-negative");
  }
}

Var normal_loss(const Var& n, const Mat& truth) {
  const Var t = ad::constant(truth);
  const Var d_sin = ad::row_norm(ad::cross_rows(n, truth));
  const Var d_euc = ad::minimum(ad::row_sqnorm(ad::sub(n, t)), ad::row_sqnorm(ad::add(n, t)));
  return ad::add(d_sin, d_euc);
}

double normal_loss(const Vec3& n, const Vec3& truth) {
  return normal_loss(ad::constant(Mat(n.transpose())), Mat(truth.transpose())).scalar();
}

double coplanarity_epsilon(const Mat& points, const Vec3& truth_normal) {
  if (points.rows() == 0) throw std::invalid_argument("coplanarity_epsilon: no points");
  const Eigen::VectorXd d = points * truth_normal;
  return std::max(0.0025, 0.3 * d.squaredNorm() / static_cast<double>(points.rows()));
}

Mat coplanarity_targets(const Mat& points, const Vec3& truth_normal) {
  const double eps = coplanarity_epsilon(points, truth_normal);
  const Eigen::VectorXd d = points * truth_normal;
  Mat t(points.rows(), 1);
  t.col(0) = (-(d.array().square()) / (eps * eps)).exp().matrix();
  return t;
}

Var weight_loss(const Var& tau, const Mat& points, const Vec3& truth_normal) {
  if (tau.rows() != points.rows() || tau.cols() != 1) {
    throw ShapeError("weight_loss: tau must be [m x 1] matching the points");
  }
  return ad::mean_all(ad::square(ad::sub(tau, ad::constant(coplanarity_targets(points, truth_normal)))));
}

LossTerms total_loss(const Prediction& pred, const Patch& patch, std::span<const Vec3> truth_normals,
                     const LossWeights& weights) {
  weights.validate();
  const Eigen::Index rows = pred.neighbor_normals.rows();
  if (truth_normals.empty()) throw std::invalid_argument("total_loss: ground-truth normals missing");
  if (rows > static_cast<Eigen::Index>(patch.size())) throw ShapeError("total_loss: prediction exceeds patch");
  auto truth_at = [&](std::size_t cloud_index) -> const Vec3& {
    if (cloud_index >= truth_normals.size()) {
      throw std::invalid_argument("total_loss: no ground-truth normal for point " + std::to_string(cloud_index));
    }
    return truth_normals[cloud_index];
  };

  const Vec3& gt_q = truth_at(patch.query_index);
  Mat gt_rows(rows, 3);
  Mat points(rows, 3);
  for (Eigen::Index i = 0; i < rows; ++i) {
    gt_rows.row(i) = truth_at(patch.source_indices[static_cast<std::size_t>(i)]).transpose();
    points.row(i) = patch.local_points[static_cast<std::size_t>(i)].transpose();
  }

  const Var lq = normal_loss(pred.query_normal, Mat(gt_q.transpose()));
  const Var lp = ad::mean_all(normal_loss(pred.neighbor_normals, gt_rows));
  const Var lt = weight_loss(pred.tau, points, gt_q);

  LossTerms terms;
  terms.query = lq.scalar();
  terms.neighbors = lp.scalar();
  terms.weight = lt.scalar();
  terms.total = ad::add(ad::add(ad::scale(lq, weights.query), ad::scale(lp, weights.neighbors)),
                        ad::scale(lt, weights.weight));
  return terms;
}

}  // namespace pff
