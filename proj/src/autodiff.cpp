#include "pff/autodiff.hpp"

#include <cmath>
#include <unordered_set>

namespace pff::ad {

namespace {

std::string shape_str(const Mat& m) {
  return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.value()) + " vs " +
                     shape_str(b.value()));
  }
}

inline bool wants(const NodePtr& p) { return p->requires_grad; }

}  // namespace

Mat& Node::ensure_grad() {
  if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
    grad = Mat::Zero(value.rows(), value.cols());
  }
  return grad;
}

void Node::accumulate(const Mat& g) { ensure_grad() += g; }

Mat Var::grad() const {
  const Node& n = *node_;
  if (n.grad.rows() == n.value.rows() && n.grad.cols() == n.value.cols()) return n.grad;
  return Mat::Zero(n.value.rows(), n.value.cols());
}

double Var::scalar() const {
  if (rows() != 1 || cols() != 1) {
    throw ShapeError("scalar(): tensor is " + shape_str(value()));
  }
  return value()(0, 0);
}

Var constant(Mat value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = "constant";
  return Var(std::move(n));
}

Var parameter(Mat value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = "parameter";
  n->requires_grad = true;
  return Var(std::move(n));
}

Var scalar_constant(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

Var make_op(const char* op, Mat value, std::vector<Var> parents,
            std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p.requires_grad();
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.ptr());
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

// ---- linear algebra -------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_str(a.value()) + " x " + shape_str(b.value()));
  }
  Mat out = a.value() * b.value();
  return make_op("matmul", std::move(out), {a, b}, [](Node& self) {
    const auto& A = self.parents[0];
    const auto& B = self.parents[1];
    if (wants(A)) A->ensure_grad().noalias() += self.grad * B->value.transpose();
    if (wants(B)) B->ensure_grad().noalias() += A->value.transpose() * self.grad;
  });
}

Var affine(const Var& x, const Var& w, const Var& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw ShapeError("affine: x" + shape_str(x.value()) + " W" + shape_str(w.value()) + " b" +
                     shape_str(b.value()));
  }
  Mat out(x.rows(), w.cols());
  out.noalias() = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return make_op("affine", std::move(out), {x, w, b}, [](Node& self) {
    const auto& X = self.parents[0];
    const auto& W = self.parents[1];
    const auto& B = self.parents[2];
    if (wants(X)) X->ensure_grad().noalias() += self.grad * W->value.transpose();
    if (wants(W)) W->ensure_grad().noalias() += X->value.transpose() * self.grad;
    if (wants(B)) B->ensure_grad() += self.grad.colwise().sum();
  });
}

Var affine_concat(std::span<const Var> parts, const Var& w, const Var& b) {
  if (parts.empty()) throw ShapeError("affine_concat: no inputs");
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts[0].rows()) throw ShapeError("affine_concat: row counts differ");
    total += p.cols();
  }
  if (total != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw ShapeError("affine_concat: " + std::to_string(total) + " input columns, W" + shape_str(w.value()) +
                     " b" + shape_str(b.value()));
  }
  Mat out(parts[0].rows(), w.cols());
  out.rowwise() = b.value().row(0);
  std::vector<Index> offsets;
  Index off = 0;
  for (const auto& p : parts) {
    out.noalias() += p.value() * w.value().middleRows(off, p.cols());
    offsets.push_back(off);
    off += p.cols();
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  parents.push_back(w);
  parents.push_back(b);
  return make_op("affine_concat", std::move(out), std::move(parents), [offsets = std::move(offsets)](Node& self) {
    const std::size_t n = offsets.size();
    const auto& W = self.parents[n];
    const auto& B = self.parents[n + 1];
    for (std::size_t i = 0; i < n; ++i) {
      const auto& X = self.parents[i];
      const Index cols = X->value.cols();
      if (wants(X)) X->ensure_grad().noalias() += self.grad * W->value.middleRows(offsets[i], cols).transpose();
      if (wants(W)) W->ensure_grad().middleRows(offsets[i], cols).noalias() += X->value.transpose() * self.grad;
    }
    if (wants(B)) B->ensure_grad() += self.grad.colwise().sum();
  });
}

// ---- element-wise ---------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  Mat out = a.value() + b.value();
  return make_op("add", std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents)
      if (wants(p)) p->ensure_grad() += self.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  Mat out = a.value() - b.value();
  return make_op("sub", std::move(out), {a, b}, [](Node& self) {
    if (wants(self.parents[0])) self.parents[0]->ensure_grad() += self.grad;
    if (wants(self.parents[1])) self.parents[1]->ensure_grad() -= self.grad;
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  Mat out = a.value().cwiseProduct(b.value());
  return make_op("mul", std::move(out), {a, b}, [](Node& self) {
    const auto& A = self.parents[0];
    const auto& B = self.parents[1];
    if (wants(A)) A->ensure_grad() += self.grad.cwiseProduct(B->value);
    if (wants(B)) B->ensure_grad() += self.grad.cwiseProduct(A->value);
  });
}

Var scale(const Var& x, double s) {
  Mat out = x.value() * s;
  return make_op("scale", std::move(out), {x}, [s](Node& self) {
    self.parents[0]->ensure_grad() += self.grad * s;
  });
}

Var square(const Var& x) {
  Mat out = x.value().cwiseAbs2();
  return make_op("square", std::move(out), {x}, [](Node& self) {
    const auto& X = self.parents[0];
    X->ensure_grad() += 2.0 * self.grad.cwiseProduct(X->value);
  });
}

Var leaky_relu(const Var& x, double slope) {
  const auto v = x.value().array();
  Mat out = (v > 0.0).select(v, slope * v);
  return make_op("leaky_relu", std::move(out), {x}, [slope](Node& self) {
    const auto& X = self.parents[0];
    const auto g = self.grad.array();
    X->ensure_grad().array() += (X->value.array() > 0.0).select(g, slope * g);
  });
}

Var sigmoid(const Var& x) {
  Mat out = x.value().unaryExpr([](double v) {
    // Branches keep exp() from overflowing for large |v|.
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  return make_op("sigmoid", std::move(out), {x}, [](Node& self) {
    const auto s = self.value.array();
    self.parents[0]->ensure_grad().array() += self.grad.array() * s * (1.0 - s);
  });
}

Var exp(const Var& x) {
  Mat out = x.value().array().exp().matrix();
  return make_op("exp", std::move(out), {x}, [](Node& self) {
    self.parents[0]->ensure_grad().array() += self.grad.array() * self.value.array();
  });
}

Var minimum(const Var& a, const Var& b) {
  require_same_shape("minimum", a, b);
  Mat out = a.value().cwiseMin(b.value());
  return make_op("minimum", std::move(out), {a, b}, [](Node& self) {
    const auto& A = self.parents[0];
    const auto& B = self.parents[1];
    for (Index i = 0; i < self.value.rows(); ++i) {
      for (Index j = 0; j < self.value.cols(); ++j) {
        const bool pick_a = A->value(i, j) <= B->value(i, j);
        const auto& target = pick_a ? A : B;
        if (wants(target)) target->ensure_grad()(i, j) += self.grad(i, j);
      }
    }
  });
}

// ---- row / column structure -------------------------------------------------

MaxPool max_rows(const Var& x) {
  if (x.rows() < 1) throw ShapeError("max_rows: no rows to pool");
  const Mat& v = x.value();
  Mat out(1, v.cols());
  std::vector<Index> argmax(static_cast<std::size_t>(v.cols()), 0);
  out.row(0) = v.row(0);
  for (Index i = 1; i < v.rows(); ++i) {
    for (Index c = 0; c < v.cols(); ++c) {
      if (v(i, c) > out(0, c)) {
        out(0, c) = v(i, c);
        argmax[c] = i;
      }
    }
  }
  Var y = make_op("max_rows", std::move(out), {x}, [argmax](Node& self) {
    Mat& g = self.parents[0]->ensure_grad();
    for (std::size_t c = 0; c < argmax.size(); ++c) g(argmax[c], c) += self.grad(0, c);
  });
  return MaxPool{std::move(y), std::move(argmax)};
}

Var group_max_rows(const Var& x, Index group) {
  if (group < 1 || x.rows() % group != 0 || x.rows() == 0) {
    throw ShapeError("group_max_rows: " + std::to_string(x.rows()) +
                     " rows not divisible into groups of " + std::to_string(group));
  }
  const Mat& v = x.value();
  const Index m = v.rows() / group, c = v.cols();
  Mat out(m, c);
  std::vector<Index> arg(static_cast<std::size_t>(m * c));
  for (Index g = 0; g < m; ++g) {
    const Index base = g * group;
    out.row(g) = v.row(base);
    for (Index k = 0; k < c; ++k) arg[g * c + k] = base;
    for (Index r = base + 1; r < base + group; ++r) {
      for (Index k = 0; k < c; ++k) {
        if (v(r, k) > out(g, k)) {
          out(g, k) = v(r, k);
          arg[g * c + k] = r;
        }
      }
    }
  }
  return make_op("group_max_rows", std::move(out), {x}, [arg = std::move(arg)](Node& self) {
    Mat& g = self.parents[0]->ensure_grad();
    const Index c = self.value.cols();
    for (Index r = 0; r < self.value.rows(); ++r)
      for (Index k = 0; k < c; ++k) g(arg[r * c + k], k) += self.grad(r, k);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  const Index n = parts[0].rows();
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != n) throw ShapeError("concat_cols: row counts differ");
    total += p.cols();
  }
  Mat out(n, total);
  std::vector<Index> offsets;
  Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    offsets.push_back(off);
    off += p.cols();
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return make_op("concat_cols", std::move(out), std::move(parents),
                 [offsets = std::move(offsets)](Node& self) {
                   for (std::size_t i = 0; i < self.parents.size(); ++i) {
                     auto& p = self.parents[i];
                     if (wants(p)) p->ensure_grad() += self.grad.middleCols(offsets[i], p->value.cols());
                   }
                 });
}

Var concat_cols(const Var& a, const Var& b) {
  const Var parts[] = {a, b};
  return concat_cols(std::span<const Var>(parts));
}

Var slice_cols(const Var& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) {
    throw ShapeError("slice_cols: range outside " + shape_str(x.value()));
  }
  Mat out = x.value().middleCols(start, count);
  return make_op("slice_cols", std::move(out), {x}, [start, count](Node& self) {
    self.parents[0]->ensure_grad().middleCols(start, count) += self.grad;
  });
}

Var prefix_rows(const Var& x, Index m) {
  if (m < 0 || m > x.rows()) {
    throw ShapeError("prefix_rows: m=" + std::to_string(m) + " exceeds " + shape_str(x.value()));
  }
  if (m == x.rows()) return x;
  Mat out = x.value().topRows(m);
  return make_op("prefix_rows", std::move(out), {x}, [m](Node& self) {
    self.parents[0]->ensure_grad().topRows(m) += self.grad;
  });
}

Var rowscale(const Var& x, const Var& w) {
  if (w.cols() != 1 || w.rows() != x.rows()) {
    throw ShapeError("rowscale: x" + shape_str(x.value()) + " w" + shape_str(w.value()));
  }
  Mat out = w.value().col(0).asDiagonal() * x.value();
  return make_op("rowscale", std::move(out), {x, w}, [](Node& self) {
    const auto& X = self.parents[0];
    const auto& W = self.parents[1];
    if (wants(X)) X->ensure_grad() += W->value.col(0).asDiagonal() * self.grad;
    if (wants(W)) W->ensure_grad().col(0) += self.grad.cwiseProduct(X->value).rowwise().sum();
  });
}

Var broadcast_row(const Var& r, Index n) {
  if (r.rows() != 1 || n < 1) throw ShapeError("broadcast_row: needs a single row and n >= 1");
  Mat out = r.value().replicate(n, 1);
  return make_op("broadcast_row", std::move(out), {r}, [](Node& self) {
    self.parents[0]->ensure_grad() += self.grad.colwise().sum();
  });
}

Var sum_all(const Var& x) {
  Mat out(1, 1);
  out(0, 0) = x.value().sum();
  return make_op("sum_all", std::move(out), {x}, [](Node& self) {
    self.parents[0]->ensure_grad().array() += self.grad(0, 0);
  });
}

Var mean_all(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  if (n == 0) throw ShapeError("mean_all: empty tensor");
  Mat out(1, 1);
  out(0, 0) = x.value().sum() / n;
  return make_op("mean_all", std::move(out), {x}, [n](Node& self) {
    self.parents[0]->ensure_grad().array() += self.grad(0, 0) / n;
  });
}

namespace {

// y = softmax(x) along a vector; dx = y * (g - <g, y>).
template <typename In, typename Out>
void softmax_vec(const In& x, Out&& y) {
  const double m = x.maxCoeff();
  y = (x.array() - m).exp().matrix();
  y /= y.sum();
}

}  // namespace

Var softmax_rows(const Var& x) {
  Mat out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) softmax_vec(x.value().row(i), out.row(i));
  return make_op("softmax_rows", std::move(out), {x}, [](Node& self) {
    Mat& g = self.parents[0]->ensure_grad();
    for (Index i = 0; i < self.value.rows(); ++i) {
      const double dot = self.grad.row(i).dot(self.value.row(i));
      g.row(i).array() += self.value.row(i).array() * (self.grad.row(i).array() - dot);
    }
  });
}

Var softmax_cols(const Var& x) {
  Mat out(x.rows(), x.cols());
  for (Index j = 0; j < x.cols(); ++j) softmax_vec(x.value().col(j), out.col(j));
  return make_op("softmax_cols", std::move(out), {x}, [](Node& self) {
    Mat& g = self.parents[0]->ensure_grad();
    for (Index j = 0; j < self.value.cols(); ++j) {
      const double dot = self.grad.col(j).dot(self.value.col(j));
      g.col(j).array() += self.value.col(j).array() * (self.grad.col(j).array() - dot);
    }
  });
}

Var row_norm(const Var& x) {
  Mat out = x.value().rowwise().norm();
  return make_op("row_norm", std::move(out), {x}, [](Node& self) {
    const auto& X = self.parents[0];
    Mat& g = X->ensure_grad();
    for (Index i = 0; i < self.value.rows(); ++i) {
      const double n = self.value(i, 0);
      if (n > 0.0) g.row(i) += (self.grad(i, 0) / n) * X->value.row(i);
    }
  });
}

Var row_sqnorm(const Var& x) {
  Mat out = x.value().rowwise().squaredNorm();
  return make_op("row_sqnorm", std::move(out), {x}, [](Node& self) {
    const auto& X = self.parents[0];
    X->ensure_grad() += 2.0 * self.grad.col(0).asDiagonal() * X->value;
  });
}

Var normalize_rows(const Var& x, double min_norm) {
  Eigen::VectorXd norms = x.value().rowwise().norm();
  for (Index i = 0; i < norms.size(); ++i) {
    if (!(norms[i] >= min_norm)) {
      throw NumericError("normalize_rows: row " + std::to_string(i) + " has norm " +
                         std::to_string(norms[i]));
    }
  }
  Mat out = norms.cwiseInverse().asDiagonal() * x.value();
  return make_op("normalize_rows", std::move(out), {x}, [norms](Node& self) {
    // d(x/|x|) = (g - y <g, y>) / |x|
    Mat& g = self.parents[0]->ensure_grad();
    for (Index i = 0; i < self.value.rows(); ++i) {
      const double dot = self.grad.row(i).dot(self.value.row(i));
      g.row(i) += (self.grad.row(i) - dot * self.value.row(i)) / norms[i];
    }
  });
}

Var cross_rows(const Var& a, const Mat& b) {
  if (a.cols() != 3 || b.cols() != 3 || a.rows() != b.rows()) {
    throw ShapeError("cross_rows: needs matching [n x 3] operands");
  }
  const Mat& v = a.value();
  Mat out(v.rows(), 3);
  for (Index i = 0; i < v.rows(); ++i) {
    out(i, 0) = v(i, 1) * b(i, 2) - v(i, 2) * b(i, 1);
    out(i, 1) = v(i, 2) * b(i, 0) - v(i, 0) * b(i, 2);
    out(i, 2) = v(i, 0) * b(i, 1) - v(i, 1) * b(i, 0);
  }
  return make_op("cross_rows", std::move(out), {a}, [b](Node& self) {
    // (a x b) . g = a . (b x g)
    Mat& ga = self.parents[0]->ensure_grad();
    for (Index i = 0; i < self.value.rows(); ++i) {
      const auto& g = self.grad;
      ga(i, 0) += b(i, 1) * g(i, 2) - b(i, 2) * g(i, 1);
      ga(i, 1) += b(i, 2) * g(i, 0) - b(i, 0) * g(i, 2);
      ga(i, 2) += b(i, 0) * g(i, 1) - b(i, 1) * g(i, 0);
    }
  });
}

Var dot_rows(const Var& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("dot_rows: shape mismatch");
  Mat out = a.value().cwiseProduct(b).rowwise().sum();
  return make_op("dot_rows", std::move(out), {a}, [b](Node& self) {
    self.parents[0]->ensure_grad() += self.grad.col(0).asDiagonal() * b;
  });
}

Var standardize_cols(const Var& x, double eps) {
  const Index n = x.rows();
  if (n < 1) throw ShapeError("standardize_cols: no rows");
  const Eigen::RowVectorXd mean = x.value().colwise().mean();
  Mat centered = x.value().rowwise() - mean;
  const Eigen::RowVectorXd inv_std =
      ((centered.cwiseAbs2().colwise().sum() / static_cast<double>(n)).array() + eps).rsqrt().matrix();
  Mat out = centered * inv_std.asDiagonal();
  return make_op("standardize_cols", std::move(out), {x}, [inv_std, n](Node& self) {
    // dx = inv_std * (g - mean(g) - y * mean(g * y))
    const double dn = static_cast<double>(n);
    const Eigen::RowVectorXd gm = self.grad.colwise().sum() / dn;
    const Eigen::RowVectorXd gym = self.grad.cwiseProduct(self.value).colwise().sum() / dn;
    Mat dx = self.grad.rowwise() - gm;
    dx -= self.value * gym.asDiagonal();
    self.parents[0]->ensure_grad() += dx * inv_std.asDiagonal();
  });
}

// ---- backward ---------------------------------------------------------------

void backward(const Var& root) {
  if (!root.defined() || root.rows() != 1 || root.cols() != 1) {
    throw ShapeError("backward: root must be a 1x1 scalar");
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(&root.node(), 0);
  seen.insert(&root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* child = node->parents[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order)
    if (!n->parents.empty()) n->grad.resize(0, 0);
  root.node().ensure_grad()(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

}  // namespace pff::ad
