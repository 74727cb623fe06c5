#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include "pff/data.hpp"
#include "pff/errors.hpp"
#include "pff/losses.hpp"
#include "pff/metrics.hpp"
#include "pff/rng.hpp"

namespace ad = pff::ad;
using ad::Mat;
using pff::Vec3;

namespace {

Vec3 random_unit(pff::CounterRng& r) {
  Vec3 v(r.normal(), r.normal(), r.normal());
  return v.normalized();
}

}  // namespace

TEST(normal_loss, zero_for_either_sign) {
  const Vec3 n = Vec3(1, 2, 3).normalized();
  EXPECT_DOUBLE_EQ(pff::normal_loss(n, n), 0.0);
  EXPECT_DOUBLE_EQ(pff::normal_loss(n, -n), 0.0);
}

TEST(normal_loss, orthogonal_is_three) {
  EXPECT_EQ(pff::normal_loss(Vec3(1, 0, 0), Vec3(0, 1, 0)), 3.0);
  EXPECT_EQ(pff::normal_loss(Vec3(0, 0, 1), Vec3(0, -1, 0)), 3.0);
}

TEST(normal_loss, sign_invariance_is_bitwise) {
  pff::CounterRng r(1);
  for (int i = 0; i < 10000; ++i) {
    const Vec3 n = random_unit(r), g = random_unit(r);
    const double a = pff::normal_loss(n, g), b = pff::normal_loss(n, -g);
    ASSERT_EQ(0, std::memcmp(&a, &b, sizeof(double))) << i;
  }
}

TEST(normal_loss, graph_matches_scalar_form) {
  pff::CounterRng r(2);
  Mat n(4, 3), g(4, 3);
  for (int i = 0; i < 4; ++i) {
    n.row(i) = random_unit(r).transpose();
    g.row(i) = random_unit(r).transpose();
  }
  const Mat l = pff::normal_loss(ad::constant(n), g).value();
  for (int i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(l(i, 0), pff::normal_loss(Vec3(n.row(i).transpose()), Vec3(g.row(i).transpose())));
  }
}

TEST(coplanarity, epsilon_floor_and_targets) {
  Mat flat(3, 3);
  flat << 0, 0, 0, 1, 0, 0, 0, 1, 0;
  EXPECT_DOUBLE_EQ(pff::coplanarity_epsilon(flat, Vec3(0, 0, 1)), 0.0025);
  const Mat t = pff::coplanarity_targets(flat, Vec3(0, 0, 1));
  EXPECT_EQ(t, Mat::Ones(3, 1));

  Mat off(2, 3);
  off << 0, 0, 0.5, 0, 0, -0.5;
  // eps = 0.3 * mean(0.25) = 0.075; target = exp(-0.25 / 0.075^2).
  EXPECT_DOUBLE_EQ(pff::coplanarity_epsilon(off, Vec3(0, 0, 1)), 0.3 * 0.25);
  const Mat u = pff::coplanarity_targets(off, Vec3(0, 0, 1));
  EXPECT_NEAR(u(0, 0), std::exp(-0.25 / (0.075 * 0.075)), 1e-15);
}

TEST(weight_loss, zero_when_tau_matches_targets) {
  Mat pts(3, 3);
  pts << 0, 0, 0, 0.1, 0, 0.05, 0, 0.2, -0.1;
  const Vec3 n(0, 0, 1);
  const Mat target = pff::coplanarity_targets(pts, n);
  EXPECT_DOUBLE_EQ(pff::weight_loss(ad::constant(target), pts, n).scalar(), 0.0);
  EXPECT_NEAR(pff::weight_loss(ad::constant(target.array() + 0.5), pts, n).scalar(), 0.25, 1e-15);
}

TEST(total_loss, reduces_to_query_term) {
  pff::ModelConfig c;
  c.patch_size = 64;
  c.channels = 8;
  c.knn = 8;
  pff::ShapeSpec s;
  s.kind = pff::ShapeKind::sphere;
  s.count = 500;
  s.seed = 3;
  const auto cloud = pff::synth_shape(s);
  const auto index = pff::build_index(cloud);
  const auto patch = pff::extract_patch(cloud, *index, 0, 64);
  const auto pred = pff::model_forward(patch, pff::init_params(c, 1), c);
  const auto terms = pff::total_loss(pred, patch, *cloud.normals, {1.0, 0.0, 0.0});
  EXPECT_DOUBLE_EQ(terms.total.scalar(), terms.query);
  EXPECT_DOUBLE_EQ(terms.query, pff::normal_loss(pred.normal(), (*cloud.normals)[0]));
  const auto full = pff::total_loss(pred, patch, *cloud.normals, {});
  EXPECT_NEAR(full.total.scalar(), 0.1 * full.query + 0.4 * full.neighbors + 1.0 * full.weight, 1e-15);
  EXPECT_THROW(pff::total_loss(pred, patch, {}, {}), std::invalid_argument);
  EXPECT_THROW(pff::total_loss(pred, patch, *cloud.normals, {-1.0, 0.4, 1.0}), pff::ConfigError);
}

TEST(metrics, angle_error_is_unoriented) {
  EXPECT_DOUBLE_EQ(pff::angle_error_deg(Vec3(0, 0, 1), Vec3(0, 0, -1)), 0.0);
  EXPECT_NEAR(pff::angle_error_deg(Vec3(1, 0, 0), Vec3(0, 1, 0)), 90.0, 1e-12);
  EXPECT_NEAR(pff::angle_error_deg(Vec3(1, 1, 0), Vec3(-1, 0, 0)), 45.0, 1e-12);
  EXPECT_THROW(pff::angle_error_deg(Vec3::Zero(), Vec3(0, 0, 1)), std::invalid_argument);
}

TEST(metrics, rmse_worked_example) {
  const std::vector<double> e = {30.0, 0.0};
  EXPECT_NEAR(pff::rmse(e), 21.2132, 1e-4);
  EXPECT_THROW(pff::rmse(std::vector<double>{}), std::invalid_argument);
}

TEST(metrics, pgp_matches_exhaustive_count) {
  const std::vector<double> errors = {0.0, 3.0, 10.0, 19.999, 20.0, 20.001, 45.0, 89.0, 90.0, 12.5};
  std::size_t below20 = 0;
  for (double e : errors) below20 += e < 20.0;
  const std::vector<double> thr = {20.0};
  EXPECT_DOUBLE_EQ(pff::pgp_curve(errors, thr)[0].fraction, static_cast<double>(below20) / errors.size());
  EXPECT_DOUBLE_EQ(pff::pgp_curve(errors, thr)[0].fraction, 0.5);
}

TEST(metrics, pgp_curve_monotone_and_complete_at_ninety) {
  pff::CounterRng r(4);
  std::vector<double> errors(500);
  for (auto& e : errors) e = r.uniform(0.0, 90.0);
  errors.push_back(90.0);
  const auto curve = pff::pgp_curve(errors, pff::default_pgp_thresholds());
  ASSERT_EQ(curve.size(), 91u);
  for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_GE(curve[i].fraction, curve[i - 1].fraction);
  EXPECT_DOUBLE_EQ(curve.back().fraction, 1.0);
  const std::vector<double> bad = {10.0, 5.0};
  EXPECT_THROW(pff::pgp_curve(errors, bad), std::invalid_argument);
}

TEST(metrics, perfect_and_flipped_predictions) {
  const std::vector<Vec3> gt = {Vec3(0, 0, 1), Vec3(1, 0, 0), Vec3(0, 1, 1).normalized()};
  std::vector<Vec3> flipped;
  for (const auto& g : gt) flipped.push_back(-g);
  for (const std::vector<Vec3>* pred : {&gt, static_cast<const std::vector<Vec3>*>(&flipped)}) {
    const auto rep = pff::make_report(*pred, gt, pff::default_pgp_thresholds());
    EXPECT_DOUBLE_EQ(rep.rmse_deg, 0.0);
    for (std::size_t i = 1; i < rep.pgp.size(); ++i) EXPECT_DOUBLE_EQ(rep.pgp[i].fraction, 1.0);
  }
}

TEST(metrics, csv_layout) {
  pff::EvalReport rep;
  rep.rmse_deg = 1.5;
  rep.pgp = {{0.0, 0.0}, {10.0, 0.75}};
  std::ostringstream out;
  pff::write_pgp_csv(out, rep);
  EXPECT_EQ(out.str(), "threshold_deg,pgp\n0,0\n10,0.75\nrmse_deg,1.5\n");
}
