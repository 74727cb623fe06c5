#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pff/baselines.hpp"
#include "pff/data.hpp"
#include "pff/errors.hpp"
#include "pff/metrics.hpp"
#include "pff/rng.hpp"

using pff::Vec3;

namespace {

// Closed-form roots of the characteristic polynomial of a symmetric 3x3
// matrix (trigonometric solution of the depressed cubic), ascending.
Eigen::Vector3d cubic_eigenvalues(const Eigen::Matrix3d& a) {
  const double p1 = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
  const double q = a.trace() / 3.0;
  const double p2 = (a(0, 0) - q) * (a(0, 0) - q) + (a(1, 1) - q) * (a(1, 1) - q) + (a(2, 2) - q) * (a(2, 2) - q) +
                    2.0 * p1;
  const double p = std::sqrt(p2 / 6.0);
  if (p == 0.0) return Eigen::Vector3d::Constant(q);
  const Eigen::Matrix3d b = (a - q * Eigen::Matrix3d::Identity()) / p;
  const double r = std::clamp(b.determinant() / 2.0, -1.0, 1.0);
  const double phi = std::acos(r) / 3.0;
  const double e1 = q + 2.0 * p * std::cos(phi);
  const double e3 = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
  return {e3, 3.0 * q - e1 - e3, e1};
}

Eigen::Matrix3d random_symmetric(pff::CounterRng& r) {
  Eigen::Matrix3d m;
  for (int i = 0; i < 3; ++i)
    for (int j = i; j < 3; ++j) m(i, j) = m(j, i) = r.uniform(-1, 1);
  return m;
}

}  // namespace

TEST(eigh3, matches_characteristic_polynomial_roots) {
  pff::CounterRng r(11);
  for (int t = 0; t < 1000; ++t) {
    const Eigen::Matrix3d m = random_symmetric(r);
    const auto e = pff::eigh3(pff::Sym3::from_matrix(m));
    const Eigen::Vector3d oracle = cubic_eigenvalues(m);
    for (int i = 0; i < 3; ++i) ASSERT_NEAR(e.values[i], oracle[i], 1e-8) << "trial " << t;
    for (int i = 0; i < 3; ++i) {
      ASSERT_LT((m * e.vectors.col(i) - e.values[i] * e.vectors.col(i)).norm(), 1e-10);
    }
    ASSERT_LT((e.vectors.transpose() * e.vectors - Eigen::Matrix3d::Identity()).norm(), 1e-12);
  }
}

TEST(eigh3, diagonal_and_zero_input) {
  pff::Sym3 d;
  d.xx = 3;
  d.yy = 1;
  d.zz = 2;
  const auto e = pff::eigh3(d);
  EXPECT_EQ(e.values, Eigen::Vector3d(1, 2, 3));
  const auto z = pff::eigh3(pff::Sym3{});
  EXPECT_EQ(z.values, Eigen::Vector3d::Zero());
}

TEST(canonical_sign, orders_z_then_y_then_x) {
  EXPECT_EQ(pff::canonical_sign(Vec3(0, 0, -1)), Vec3(0, 0, 1));
  EXPECT_EQ(pff::canonical_sign(Vec3(1, -1, 0)), Vec3(-1, 1, 0));
  EXPECT_EQ(pff::canonical_sign(Vec3(-1, 0, 0)), Vec3(1, 0, 0));
}

TEST(pca_normal, exact_plane) {
  pff::CounterRng r(1);
  const Vec3 n = Vec3(1, 2, 2).normalized();
  const Vec3 t1 = n.cross(Vec3(0, 0, 1)).normalized(), t2 = n.cross(t1);
  std::vector<Vec3> pts;
  for (int i = 0; i < 50; ++i) pts.push_back(r.uniform(-1, 1) * t1 + r.uniform(-1, 1) * t2);
  EXPECT_LT(pff::angle_error_deg(pff::pca_normal(pts), n), 1e-6);
}

TEST(pca_normal, clean_sphere_k16_mean_error) {
  pff::ShapeSpec s;
  s.kind = pff::ShapeKind::sphere;
  s.count = 5000;
  s.seed = 2;
  const auto cloud = pff::synth_shape(s);
  const auto index = pff::build_index(cloud);
  double sum = 0.0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    sum += pff::angle_error_deg(pff::classical_normal(cloud, *index, i, pff::Estimator::pca, 16), cloud.points[i]);
  }
  EXPECT_LT(sum / cloud.size(), 3.0);
}

TEST(pca_normal, degenerate_inputs_throw) {
  const std::vector<Vec3> line = {Vec3(0, 0, 0), Vec3(1, 1, 1), Vec3(2, 2, 2), Vec3(3, 3, 3)};
  EXPECT_THROW(pff::pca_normal(line), pff::DegenerateGeometryError);
  const std::vector<Vec3> two = {Vec3(0, 0, 0), Vec3(1, 0, 0)};
  EXPECT_THROW(pff::pca_normal(two), pff::DegenerateGeometryError);
  const std::vector<Vec3> same(5, Vec3(1, 1, 1));
  EXPECT_THROW(pff::pca_normal(same), pff::DegenerateGeometryError);
}

TEST(jet_normal, paraboloid_at_origin) {
  std::vector<Vec3> pts = {Vec3::Zero()};
  for (int i = -3; i <= 3; ++i)
    for (int j = -3; j <= 3; ++j) {
      if (i == 0 && j == 0) continue;
      const double x = 0.05 * i, y = 0.05 * j;
      pts.emplace_back(x, y, x * x + y * y);
    }
  EXPECT_LT(pff::angle_error_deg(pff::jet_normal(pts), Vec3(0, 0, 1)), 1e-6);
}

TEST(jet_normal, exact_on_tilted_quadric) {
  // z = 0.3x - 0.2y + 0.5x^2 + 0.1xy - 0.4y^2 has gradient (0.3, -0.2) at the origin.
  std::vector<Vec3> pts = {Vec3::Zero()};
  pff::CounterRng r(4);
  for (int i = 0; i < 40; ++i) {
    const double x = r.uniform(-0.1, 0.1), y = r.uniform(-0.1, 0.1);
    pts.emplace_back(x, y, 0.3 * x - 0.2 * y + 0.5 * x * x + 0.1 * x * y - 0.4 * y * y);
  }
  const Vec3 truth = Vec3(-0.3, 0.2, 1.0).normalized();
  // In the tilted PCA frame the surface is no longer an exact quadric in (u, v),
  // so the world-frame fit is the exact one.
  const auto fit = pff::jet_fit_in_frame(pts, Eigen::Matrix3d::Identity());
  EXPECT_LT(pff::angle_error_deg(fit.normal(), truth), 1e-6);
  EXPECT_LT(pff::angle_error_deg(pff::jet_normal(pts), truth), 0.5);
}

TEST(jet_normal, too_few_points) {
  const std::vector<Vec3> pts = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(1, 1, 0.1)};
  EXPECT_THROW(pff::jet_normal(pts), pff::DegenerateGeometryError);
}

TEST(patch_size_study, noisy_plane_prefers_larger_k) {
  pff::ShapeSpec s;
  s.kind = pff::ShapeKind::plane;
  s.count = 5000;
  s.seed = 5;
  const auto cloud = pff::add_noise(pff::synth_shape(s), pff::kNoiseMedium, 6);
  const std::vector<std::size_t> ks = {8, 16};
  const auto rows = pff::patch_size_study(cloud, pff::Estimator::pca, ks);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_LT(rows[1].rmse_deg, rows[0].rmse_deg);
}
