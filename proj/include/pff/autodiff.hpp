#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major f64
// matrices. Every tensor is 2-D (rows = points, cols = channels); scalars are
// 1x1. Graphs are built eagerly by the op functions below and freed when the
// last Var referencing them goes away.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pff/errors.hpp"

namespace pff::ad {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Mat value;
  Mat grad;  ///< empty until something flows into it
  std::vector<NodePtr> parents;
  /// Reads `grad` of this node and accumulates into the parents.
  std::function<void(Node&)> backward;
  const char* op = "leaf";
  bool requires_grad = false;

  Mat& ensure_grad();
  void accumulate(const Mat& g);
  template <typename Expr>
  void accumulate_expr(const Expr& g) {
    ensure_grad() += g;
  }
};

/// Handle to a graph node. Cheap to copy.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  const Mat& value() const { return node_->value; }
  Mat& mutable_value() { return node_->value; }
  /// Gradient, or a zero matrix of the value's shape when nothing flowed in.
  Mat grad() const;
  bool requires_grad() const { return node_->requires_grad; }
  double scalar() const;
  const char* op() const { return node_->op; }

  Node& node() const { return *node_; }
  const NodePtr& ptr() const { return node_; }

 private:
  NodePtr node_;
};

/// Leaf without gradient.
Var constant(Mat value);
/// Leaf that collects gradients (a learnable parameter).
Var parameter(Mat value);
Var scalar_constant(double v);

/// Builds a custom node. `backward` receives the new node; it must read
/// `self.grad` and accumulate into `self.parents[i]` for those that require
/// gradients.
Var make_op(const char* op, Mat value, std::vector<Var> parents,
            std::function<void(Node&)> backward);

// ---- linear algebra -------------------------------------------------------

Var matmul(const Var& a, const Var& b);
/// x[n x in] * W[in x out] + b[1 x out] (bias broadcast over rows).
Var affine(const Var& x, const Var& w, const Var& b);
/// affine(concat_cols(parts), w, b) without materialising the concatenation.
Var affine_concat(std::span<const Var> parts, const Var& w, const Var& b);

// ---- element-wise ---------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double s);
Var square(const Var& x);
Var leaky_relu(const Var& x, double slope = 0.01);
Var sigmoid(const Var& x);
Var exp(const Var& x);
/// Element-wise minimum; ties route the gradient to `a`.
Var minimum(const Var& a, const Var& b);

// ---- row / column structure -------------------------------------------------

struct MaxPool {
  Var out;
  std::vector<Index> argmax;  ///< per channel, first row attaining the max
};
/// Channel-wise max over all rows: [n x c] -> [1 x c].
MaxPool max_rows(const Var& x);
/// Channel-wise max over consecutive row groups: [g*m x c] -> [m x c].
Var group_max_rows(const Var& x, Index group);

Var concat_cols(std::span<const Var> parts);
Var concat_cols(const Var& a, const Var& b);
Var slice_cols(const Var& x, Index start, Index count);
Var prefix_rows(const Var& x, Index m);
/// Multiply each row i by w[i]: x[n x c], w[n x 1].
Var rowscale(const Var& x, const Var& w);
/// Repeat a [1 x c] row n times.
Var broadcast_row(const Var& r, Index n);
Var sum_all(const Var& x);
Var mean_all(const Var& x);

Var softmax_rows(const Var& x);  ///< normalise across channels, per row
Var softmax_cols(const Var& x);  ///< normalise across rows, per channel

/// Per-row L2 norm [n x c] -> [n x 1]; the derivative at a zero row is 0.
Var row_norm(const Var& x);
Var row_sqnorm(const Var& x);
/// Rows scaled to unit length; throws NumericError if a norm is below `min_norm`.
Var normalize_rows(const Var& x, double min_norm = 1e-12);
/// Row-wise cross product a[i] x b[i], b held constant. Both [n x 3].
Var cross_rows(const Var& a, const Mat& b);
/// Row-wise dot products against a constant [n x c] -> [n x 1].
Var dot_rows(const Var& a, const Mat& b);
/// Per-channel zero-mean / unit-variance across rows (no learned affine).
Var standardize_cols(const Var& x, double eps = 1e-5);

// ---- backward ---------------------------------------------------------------

/// Accumulates d(root)/d(leaf) into every reachable leaf with requires_grad.
/// Intermediate gradients are reset first, so calling it twice on the same
/// graph adds the leaf gradients twice. Throws ShapeError for a non-scalar root.
void backward(const Var& root);

}  // namespace pff::ad
