#include "pff/baselines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <Eigen/Cholesky>

#include "pff/metrics.hpp"

namespace pff {

Sym3 Sym3::from_matrix(const Eigen::Matrix3d& m) {
  return Sym3{m(0, 0), 0.5 * (m(0, 1) + m(1, 0)), 0.5 * (m(0, 2) + m(2, 0)),
              m(1, 1), 0.5 * (m(1, 2) + m(2, 1)), m(2, 2)};
}

Eigen::Matrix3d Sym3::matrix() const {
  Eigen::Matrix3d m;
  m << xx, xy, xz, xy, yy, yz, xz, yz, zz;
  return m;
}

double Sym3::frobenius_norm() const { return matrix().norm(); }

SymEigen eigh3(const Sym3& s) {
  Eigen::Matrix3d a = s.matrix();
  Eigen::Matrix3d v = Eigen::Matrix3d::Identity();
  const double scale = a.norm();
  const double tol = 1e-13 * (scale > 0.0 ? scale : 1.0);

  for (int sweep = 0; sweep < 30; ++sweep) {
    const double off = std::sqrt(2.0 * (a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2)));
    if (off <= tol) break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        // Rotation angle chosen so the smaller root is taken (stable form).
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
        rot(p, p) = c;
        rot(q, q) = c;
        rot(p, q) = sn;
        rot(q, p) = -sn;
        a = rot.transpose() * a * rot;
        a(p, q) = a(q, p) = 0.0;
        v = v * rot;
      }
    }
  }

  std::array<int, 3> idx = {0, 1, 2};
  std::sort(idx.begin(), idx.end(), [&](int i, int j) { return a(i, i) < a(j, j); });
  SymEigen out;
  for (int k = 0; k < 3; ++k) {
    out.values[k] = a(idx[k], idx[k]);
    out.vectors.col(k) = v.col(idx[k]);
  }
  return out;
}

Vec3 canonical_sign(const Vec3& n) {
  for (int axis = 2; axis >= 0; --axis) {
    if (n[axis] > 0.0) return n;
    if (n[axis] < 0.0) return -n;
  }
  return n;
}

Sym3 covariance(std::span<const Vec3> points) {
  if (points.empty()) throw DegenerateGeometryError("covariance of an empty point set");
  Vec3 mean = Vec3::Zero();
  for (const auto& p : points) mean += p;
  mean /= static_cast<double>(points.size());
  Eigen::Matrix3d c = Eigen::Matrix3d::Zero();
  for (const auto& p : points) {
    const Vec3 d = p - mean;
    c.noalias() += d * d.transpose();
  }
  c /= static_cast<double>(points.size());
  return Sym3::from_matrix(c);
}

namespace {

SymEigen checked_pca(std::span<const Vec3> points) {
  if (points.size() < 3) throw DegenerateGeometryError("PCA needs at least 3 points");
  const SymEigen e = eigh3(covariance(points));
  const double largest = e.values[2];
  if (!(largest > 0.0) || e.values[1] <= 1e-12 * largest) {
    throw DegenerateGeometryError("PCA: collinear or coincident neighbourhood");
  }
  return e;
}

}  // namespace

Vec3 pca_normal(std::span<const Vec3> points) {
  return canonical_sign(checked_pca(points).vectors.col(0).normalized());
}

Vec3 pca_normal(const Patch& patch) {
  if (patch.degenerate) throw DegenerateGeometryError("PCA: all patch points coincide");
  return pca_normal(std::span<const Vec3>(patch.local_points));
}

Vec3 JetFit::normal() const {
  const Vec3 local(-coeffs[1], -coeffs[2], 1.0);
  return canonical_sign((frame * local).normalized());
}

JetFit jet_fit_in_frame(std::span<const Vec3> points, const Eigen::Matrix3d& frame) {
  if (points.size() < 6) throw DegenerateGeometryError("order-2 jet needs at least 6 points");
  using Mat6 = Eigen::Matrix<double, 6, 6>;
  using Vec6 = Eigen::Matrix<double, 6, 1>;
  Mat6 ata = Mat6::Zero();
  Vec6 atb = Vec6::Zero();
  for (const auto& p : points) {
    const Vec3 local = frame.transpose() * p;
    const double u = local[0], v = local[1];
    Vec6 row;
    row << 1.0, u, v, u * u, u * v, v * v;
    ata.noalias() += row * row.transpose();
    atb += row * local[2];
  }

  JetFit fit;
  fit.frame = frame;
  auto solve = [&](const Mat6& m, Vec6& x) {
    Eigen::LLT<Mat6> llt(m);
    if (llt.info() != Eigen::Success) return false;
    const auto d = llt.matrixLLT().diagonal();
    if (d.minCoeff() <= 1e-7 * d.maxCoeff()) return false;  // numerically singular
    x = llt.solve(atb);
    return x.allFinite();
  };
  Vec6 x;
  if (!solve(ata, x)) {
    fit.damped = true;
    const Mat6 damped = ata + 1e-12 * Mat6::Identity();
    Eigen::LLT<Mat6> llt(damped);
    if (llt.info() != Eigen::Success) throw DegenerateGeometryError("jet: singular normal equations");
    x = llt.solve(atb);
    if (!x.allFinite()) throw DegenerateGeometryError("jet: singular normal equations");
  }
  for (int i = 0; i < 6; ++i) fit.coeffs[i] = x[i];
  return fit;
}

JetFit jet_fit(std::span<const Vec3> points) {
  const SymEigen e = checked_pca(points);
  Eigen::Matrix3d frame;
  const Vec3 n = e.vectors.col(0).normalized();
  const Vec3 t1 = e.vectors.col(2).normalized();
  frame.col(0) = t1;
  frame.col(1) = n.cross(t1);
  frame.col(2) = n;
  return jet_fit_in_frame(points, frame);
}

Vec3 jet_normal(std::span<const Vec3> points) { return jet_fit(points).normal(); }

Vec3 jet_normal(const Patch& patch) {
  if (patch.degenerate) throw DegenerateGeometryError("jet: all patch points coincide");
  return jet_normal(std::span<const Vec3>(patch.local_points));
}

Vec3 classical_normal(const PointCloud& cloud, const KdTree& index, std::size_t query,
                      Estimator estimator, std::size_t k) {
  const Patch patch = extract_patch(cloud, index, query, k);
  return estimator == Estimator::pca ? pca_normal(patch) : jet_normal(patch);
}

std::vector<StudyRow> patch_size_study(const PointCloud& cloud, Estimator estimator,
                                       std::span<const std::size_t> ks,
                                       std::span<const std::size_t> queries) {
  if (!cloud.normals) throw std::invalid_argument("patch_size_study: cloud has no normals");
  const KdTree index(cloud);
  std::vector<std::size_t> all;
  if (queries.empty()) {
    all.resize(cloud.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    queries = all;
  }

  std::vector<StudyRow> rows;
  std::vector<double> errors(queries.size());
  for (std::size_t k : ks) {
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < queries.size(); ++i) {
      const Vec3 n = classical_normal(cloud, index, queries[i], estimator, k);
      errors[i] = angle_error_deg(n, (*cloud.normals)[queries[i]]);
    }
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
    rows.push_back(StudyRow{k, rmse(errors), dt.count()});
  }
  return rows;
}

}  // namespace pff
