#include <gtest/gtest.h>

#include "pff/autodiff.hpp"
#include "pff/errors.hpp"
#include "pff/gradcheck.hpp"
#include "pff/harness.hpp"

namespace ad = pff::ad;
using ad::Mat;

TEST(autodiff, every_primitive_passes_gradcheck) {
  for (const auto& c : pff::gradcheck_ops(20, 1e-5)) {
    EXPECT_TRUE(c.passed) << c.name << " max_rel_error=" << c.max_rel_error;
    EXPECT_LT(c.max_rel_error, 1e-5) << c.name;
  }
}

TEST(autodiff, sign_flipped_backward_is_caught) {
  const auto c = pff::gradcheck_broken_op(3);
  EXPECT_FALSE(c.passed);
  EXPECT_GT(c.max_rel_error, 1.0);
}

TEST(autodiff, matmul_forward_and_backward) {
  Mat a(2, 2), b(2, 1);
  a << 1, 2, 3, 4;
  b << 5, 6;
  auto A = ad::parameter(a);
  auto B = ad::parameter(b);
  auto y = ad::matmul(A, B);
  EXPECT_EQ(y.value(), (Mat(2, 1) << 17, 39).finished());
  ad::backward(ad::sum_all(y));
  // d sum(AB)/dA = 1 b^T ; d/dB = A^T 1.
  EXPECT_EQ(A.grad(), (Mat(2, 2) << 5, 6, 5, 6).finished());
  EXPECT_EQ(B.grad(), (Mat(2, 1) << 4, 6).finished());
}

TEST(autodiff, leaf_gradients_accumulate_across_backward_calls) {
  auto x = ad::parameter(Mat::Constant(1, 1, 3.0));
  ad::backward(ad::square(x));
  ad::backward(ad::square(x));
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 12.0);
}

TEST(autodiff, shared_subexpression_sums_both_paths) {
  auto x = ad::parameter(Mat::Constant(1, 1, 2.0));
  auto y = ad::mul(x, x);
  ad::backward(ad::add(y, y));
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 8.0);
}

TEST(autodiff, backward_requires_scalar_root) {
  auto x = ad::parameter(Mat::Ones(2, 2));
  EXPECT_THROW(ad::backward(x), pff::ShapeError);
}

TEST(autodiff, shape_mismatch_throws) {
  auto a = ad::parameter(Mat::Ones(2, 3));
  auto b = ad::parameter(Mat::Ones(2, 2));
  EXPECT_THROW(ad::add(a, b), pff::ShapeError);
  EXPECT_THROW(ad::matmul(a, a), pff::ShapeError);
}

TEST(autodiff, max_rows_routes_to_first_maximum) {
  Mat v(3, 2);
  v << 1, 5, 4, 5, 4, 2;
  auto x = ad::parameter(v);
  auto pool = ad::max_rows(x);
  EXPECT_EQ(pool.out.value(), (Mat(1, 2) << 4, 5).finished());
  EXPECT_EQ(pool.argmax, (std::vector<ad::Index>{1, 0}));
  ad::backward(ad::sum_all(pool.out));
  EXPECT_EQ(x.grad(), (Mat(3, 2) << 0, 1, 1, 0, 0, 0).finished());
}

TEST(autodiff, group_max_rows_pools_each_group) {
  Mat v(4, 1);
  v << 1, 3, 7, 2;
  auto y = ad::group_max_rows(ad::constant(v), 2);
  EXPECT_EQ(y.value(), (Mat(2, 1) << 3, 7).finished());
  EXPECT_THROW(ad::group_max_rows(ad::constant(v), 3), pff::ShapeError);
}

TEST(autodiff, softmax_normalises_the_right_axis) {
  Mat v = Mat::Random(3, 4);
  const Mat r = ad::softmax_rows(ad::constant(v)).value();
  const Mat c = ad::softmax_cols(ad::constant(v)).value();
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(r.row(i).sum(), 1.0, 1e-15);
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(c.col(j).sum(), 1.0, 1e-15);
}

TEST(autodiff, normalize_rows_rejects_zero_vector) {
  EXPECT_THROW(ad::normalize_rows(ad::constant(Mat::Zero(1, 3))), pff::NumericError);
  const Mat n = ad::normalize_rows(ad::constant((Mat(1, 3) << 3, 0, 4).finished())).value();
  EXPECT_NEAR(n.norm(), 1.0, 1e-15);
}

TEST(autodiff, row_norm_at_zero_has_zero_subgradient) {
  auto x = ad::parameter(Mat::Zero(1, 3));
  ad::backward(ad::sum_all(ad::row_norm(x)));
  EXPECT_EQ(x.grad(), Mat::Zero(1, 3));
}

TEST(autodiff, minimum_tie_goes_to_first_argument) {
  auto a = ad::parameter(Mat::Constant(1, 1, 2.0));
  auto b = ad::parameter(Mat::Constant(1, 1, 2.0));
  ad::backward(ad::minimum(a, b));
  EXPECT_DOUBLE_EQ(a.grad()(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(b.grad()(0, 0), 0.0);
}

TEST(autodiff, constants_collect_no_gradient) {
  auto c = ad::constant(Mat::Ones(2, 2));
  auto p = ad::parameter(Mat::Ones(2, 2));
  ad::backward(ad::sum_all(ad::mul(c, p)));
  EXPECT_FALSE(c.requires_grad());
  EXPECT_EQ(p.grad(), Mat::Ones(2, 2));
}

TEST(gradcheck, reports_per_tensor_errors) {
  pff::ModelParams params;
  params.add("x", Mat::Constant(2, 2, 0.5));
  auto rep = pff::grad_check([](const pff::ModelParams& p) { return ad::sum_all(ad::exp(p.at("x"))); }, params,
                             1e-6);
  ASSERT_EQ(rep.entries.size(), 1u);
  EXPECT_EQ(rep.entries[0].name, "x");
  EXPECT_TRUE(rep.passed);
  EXPECT_EQ(params.at("x").value(), Mat::Constant(2, 2, 0.5));
}
