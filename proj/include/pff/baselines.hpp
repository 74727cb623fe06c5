#pragma once

#include <array>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "pff/geometry.hpp"

namespace pff {

/// Six unique entries of a symmetric 3x3 matrix.
struct Sym3 {
  double xx = 0, xy = 0, xz = 0, yy = 0, yz = 0, zz = 0;

  static Sym3 from_matrix(const Eigen::Matrix3d& m);
  Eigen::Matrix3d matrix() const;
  double frobenius_norm() const;
};

struct SymEigen {
  Eigen::Vector3d values;   ///< ascending
  Eigen::Matrix3d vectors;  ///< column i pairs with values[i]
};

/// Cyclic Jacobi eigen-decomposition (<= 30 sweeps, off-diagonal tolerance 1e-13).
SymEigen eigh3(const Sym3& m);

/// Flips `n` so z > 0, or y > 0 when z == 0, or x > 0 when both are zero.
Vec3 canonical_sign(const Vec3& n);

/// Centred covariance of a point set.
Sym3 covariance(std::span<const Vec3> points);

/// Direction of least variance, unit length, canonical sign. Throws
/// DegenerateGeometryError for fewer than 3 points or collinear/coincident input.
Vec3 pca_normal(std::span<const Vec3> points);
Vec3 pca_normal(const Patch& patch);

/// Order-2 height-function fit h(u,v) = c0 + c1 u + c2 v + c3 u^2 + c4 uv + c5 v^2
/// in a frame whose columns are (t1, t2, n); u, v, h are coordinates along them.
struct JetFit {
  std::array<double, 6> coeffs{};
  Eigen::Matrix3d frame = Eigen::Matrix3d::Identity();
  bool damped = false;

  /// Normal of the fitted surface at u = v = 0, in world coordinates.
  Vec3 normal() const;
};

JetFit jet_fit_in_frame(std::span<const Vec3> points, const Eigen::Matrix3d& frame);
/// Jet fit in the PCA tangent frame of the points.
JetFit jet_fit(std::span<const Vec3> points);
Vec3 jet_normal(std::span<const Vec3> points);
Vec3 jet_normal(const Patch& patch);

enum class Estimator { pca, jet };

struct StudyRow {
  std::size_t k = 0;
  double rmse_deg = 0.0;
  double seconds = 0.0;
};

/// Runs `estimator` with each neighbourhood size over every point (or the
/// given query subset) and reports RMSE against the cloud's normals plus
/// wall-clock time for patch extraction and fitting.
std::vector<StudyRow> patch_size_study(const PointCloud& cloud, Estimator estimator,
                                       std::span<const std::size_t> ks,
                                       std::span<const std::size_t> queries = {});

/// Normal of one query with a classical estimator and neighbourhood size k.
Vec3 classical_normal(const PointCloud& cloud, const KdTree& index, std::size_t query,
                      Estimator estimator, std::size_t k);

}  // namespace pff
