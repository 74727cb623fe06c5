#pragma once

#include <span>

#include "pff/autodiff.hpp"
#include "pff/model.hpp"

namespace pff {

struct LossWeights {
  double query = 0.1;      ///< lambda_1
  double neighbors = 0.4;  ///< lambda_2
  double weight = 1.0;     ///< lambda_3

  void validate() const;
};

/// Per-row ||n x g|| + min(||n - g||^2, ||n + g||^2). n: [m x 3] Var, g: [m x 3].
ad::Var normal_loss(const ad::Var& n, const ad::Mat& truth);
double normal_loss(const Vec3& n, const Vec3& truth);

/// max(0.0025, 0.3 * mean((p_i . n)^2)) over the given points.
double coplanarity_epsilon(const ad::Mat& points, const Vec3& truth_normal);
/// exp(-(p_i . n)^2 / eps^2), [m x 1].
ad::Mat coplanarity_targets(const ad::Mat& points, const Vec3& truth_normal);
/// mean((tau_i - target_i)^2); the targets carry no gradient.
ad::Var weight_loss(const ad::Var& tau, const ad::Mat& points, const Vec3& truth_normal);

struct LossTerms {
  ad::Var total;
  double query = 0.0;      ///< L_n at the query
  double neighbors = 0.0;  ///< mean L_n over retained neighbours
  double weight = 0.0;     ///< L_tau
};

/// lambda_1 L_n(q) + lambda_2 mean_i L_n(i) + lambda_3 L_tau. Ground truth for
/// the retained rows is looked up through patch.source_indices.
LossTerms total_loss(const Prediction& pred, const Patch& patch, std::span<const Vec3> truth_normals,
                     const LossWeights& weights);

}  // namespace pff
