#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include "pff/errors.hpp"
#include "pff/optim.hpp"
#include "pff/params.hpp"

namespace ad = pff::ad;
using ad::Mat;

TEST(adamw, first_step_moves_by_lr_times_sign) {
  pff::ModelParams p;
  p.add("w", Mat::Constant(1, 1, 1.0));
  pff::AdamW opt({0.1, 0.9, 0.999, 1e-8, 0.0});
  ad::backward(ad::sum_all(p.at("w")));  // gradient 1
  opt.step(p);
  // m_hat = 1, v_hat = 1, update = lr * 1 / (1 + eps).
  EXPECT_NEAR(p.at("w").value()(0, 0), 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(adamw, decoupled_decay_scales_parameter_only) {
  pff::ModelParams p;
  p.add("w", Mat::Constant(1, 1, 2.0));
  pff::AdamW opt({0.1, 0.9, 0.999, 1e-8, 0.5});
  p.zero_grad();
  opt.step(p);  // zero gradient: only the decay acts
  EXPECT_NEAR(p.at("w").value()(0, 0), 2.0 * (1.0 - 0.1 * 0.5), 1e-15);
  EXPECT_EQ(opt.first_moment("w"), Mat::Zero(1, 1));
  EXPECT_EQ(opt.second_moment("w"), Mat::Zero(1, 1));
}

TEST(adamw, zero_gradient_and_zero_decay_leave_parameters) {
  pff::ModelParams p;
  p.add("w", Mat::Constant(2, 2, 0.3));
  pff::AdamW opt({0.1, 0.9, 0.999, 1e-8, 0.0});
  opt.step(p);
  EXPECT_EQ(p.at("w").value(), Mat::Constant(2, 2, 0.3));
}

TEST(adamw, non_finite_gradient_aborts_without_change) {
  pff::ModelParams p;
  p.add("a", Mat::Constant(1, 1, 1.0));
  p.add("b", Mat::Constant(1, 1, 1.0));
  p.at("a").node().ensure_grad()(0, 0) = 1.0;
  p.at("b").node().ensure_grad()(0, 0) = std::nan("");
  pff::AdamW opt;
  EXPECT_THROW(opt.step(p), pff::NumericError);
  EXPECT_EQ(p.at("a").value()(0, 0), 1.0);
  EXPECT_EQ(opt.steps(), 0);
}

TEST(adamw, converges_on_quadratic) {
  pff::ModelParams p;
  p.add("x", (Mat(1, 3) << 3.0, -2.0, 0.5).finished());
  const Mat target = (Mat(1, 3) << 1.0, 1.0, -1.0).finished();
  pff::AdamW opt({0.05, 0.9, 0.999, 1e-8, 0.0});
  for (int i = 0; i < 500; ++i) {
    p.zero_grad();
    ad::backward(ad::sum_all(ad::square(ad::sub(p.at("x"), ad::constant(target)))));
    opt.step(p);
  }
  EXPECT_LT((p.at("x").value() - target).norm(), 1e-3);
}

TEST(lr_schedule, step_decay_at_milestones) {
  const pff::LrSchedule s{0.001, 0.2, {400, 600}};
  EXPECT_DOUBLE_EQ(s.at(0), 0.001);
  EXPECT_DOUBLE_EQ(s.at(399), 0.001);
  EXPECT_NEAR(s.at(400), 0.0002, 1e-18);
  EXPECT_NEAR(s.at(599), 0.0002, 1e-18);
  EXPECT_NEAR(s.at(600), 0.00004, 1e-18);
  EXPECT_NEAR(s.at(799), 0.00004, 1e-18);
}

TEST(checkpoint, bit_exact_round_trip) {
  pff::ModelParams p;
  p.add("b.weight", Mat::Random(3, 4));
  p.add("a.bias", (Mat(1, 2) << 1.0 / 3.0, -0.0).finished());
  std::stringstream buf;
  pff::write_checkpoint(buf, p);
  const auto q = pff::read_checkpoint(buf);
  ASSERT_EQ(q.size(), 2u);
  for (const auto& [name, var] : p) {
    const Mat& a = var.value();
    const Mat& b = q.at(name).value();
    ASSERT_EQ(a.rows(), b.rows());
    EXPECT_EQ(0, std::memcmp(a.data(), b.data(), sizeof(double) * a.size())) << name;
  }
}

TEST(checkpoint, rejects_bad_magic_and_truncation) {
  std::stringstream bad("NOTACKPT");
  EXPECT_THROW(pff::read_checkpoint(bad), std::exception);
  pff::ModelParams p;
  p.add("w", Mat::Ones(4, 4));
  std::stringstream buf;
  pff::write_checkpoint(buf, p);
  std::string bytes = buf.str();
  bytes.resize(bytes.size() - 5);
  std::stringstream cut(bytes);
  EXPECT_THROW(pff::read_checkpoint(cut), std::exception);
}

TEST(params, duplicate_names_rejected_and_glorot_deterministic) {
  pff::ModelParams p;
  p.add("w", Mat::Ones(1, 1));
  EXPECT_THROW(p.add("w", Mat::Ones(1, 1)), std::invalid_argument);
  const Mat a = pff::glorot_uniform(8, 4, 7, "layer");
  EXPECT_EQ(a, pff::glorot_uniform(8, 4, 7, "layer"));
  EXPECT_NE(a, pff::glorot_uniform(8, 4, 7, "other"));
  const double bound = std::sqrt(6.0 / 12.0);
  EXPECT_LE(a.cwiseAbs().maxCoeff(), bound);
}
