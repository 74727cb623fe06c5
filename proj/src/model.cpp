#include "pff/model.hpp"

#include <cmath>
#include <optional>

#include "pff/baselines.hpp"

namespace pff {

using ad::Mat;
using ad::Var;

std::string to_string(Compensation c) {
  switch (c) {
    case Compensation::attention: return "attention";
    case Compensation::softmax1: return "softmax1";
    case Compensation::softmax2: return "softmax2";
    case Compensation::concat: return "concat";
    case Compensation::add: return "add";
    case Compensation::none: return "none";
  }
  return "?";
}

std::string to_string(WeightVariant w) { return w == WeightVariant::sigmoid ? "sigmoid" : "gaussian"; }

Compensation parse_compensation(const std::string& s) {
  for (auto c : {Compensation::attention, Compensation::softmax1, Compensation::softmax2,
                 Compensation::concat, Compensation::add, Compensation::none}) {
    if (to_string(c) == s) return c;
  }
  throw ConfigError("unknown compensation variant: " + s);
}

WeightVariant parse_weight_variant(const std::string& s) {
  if (s == "sigmoid") return WeightVariant::sigmoid;
  if (s == "gaussian") return WeightVariant::gaussian;
  throw ConfigError("unknown weight variant: " + s);
}

// ---- config -----------------------------------------------------------------

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.patch_size = 256;
  c.channels = 64;
  return c;
}

namespace {

int refine_divisions(const ModelConfig& c) { return c.f2_as_f1 ? 2 : 0; }

}  // namespace

void ModelConfig::validate() const {
  if (channels < 2 || channels % 2 != 0) throw ConfigError("channels must be a positive even number");
  if (scales < 1) throw ConfigError("scales must be >= 1");
  if (divisor < 2) throw ConfigError("divisor must be >= 2");
  if (dense_layers < 0) throw ConfigError("dense_layers must be >= 0");
  if (knn < 1 || knn >= patch_size) {
    throw ConfigError("knn=" + std::to_string(knn) + " must lie in [1, N)");
  }
  long long denom = 1;
  for (int s = 0; s < scales + refine_divisions(*this); ++s) denom *= divisor;
  if (patch_size < 1 || patch_size % denom != 0) {
    throw ConfigError("patch size " + std::to_string(patch_size) + " is not divisible by " +
                      std::to_string(denom));
  }
}

ScaleSchedule ModelConfig::schedule() const {
  ScaleSchedule s;
  int n = patch_size;
  s.sizes.push_back(n);
  for (int i = 0; i < scales; ++i) {
    n /= divisor;
    s.sizes.push_back(n);
  }
  return s;
}

int ModelConfig::output_rows() const {
  int n = schedule().sizes.back();
  for (int i = 0; i < refine_divisions(*this); ++i) n /= divisor;
  return n;
}

KeyValueConfig ModelConfig::to_kv() const {
  KeyValueConfig kv;
  kv.set("model.patch_size", std::to_string(patch_size));
  kv.set("model.scales", std::to_string(scales));
  kv.set("model.divisor", std::to_string(divisor));
  kv.set("model.knn", std::to_string(knn));
  kv.set("model.channels", std::to_string(channels));
  kv.set("model.dense_layers", std::to_string(dense_layers));
  kv.set("model.use_weight_w", use_weight_w ? "true" : "false");
  kv.set("model.weight_variant", to_string(weight_variant));
  kv.set("model.use_f1", use_f1 ? "true" : "false");
  kv.set("model.use_f2", use_f2 ? "true" : "false");
  kv.set("model.f2_as_f1", f2_as_f1 ? "true" : "false");
  kv.set("model.compensation", to_string(compensation));
  kv.set("model.feature_standardization", feature_standardization ? "true" : "false");
  kv.set("model.align_frame", align_frame ? "true" : "false");
  return kv;
}

ModelConfig ModelConfig::from_kv(const KeyValueConfig& kv) { return from_kv(kv, ModelConfig{}); }

ModelConfig ModelConfig::from_kv(const KeyValueConfig& kv, ModelConfig c) {
  c.patch_size = static_cast<int>(kv.get_int("model.patch_size", c.patch_size));
  c.scales = static_cast<int>(kv.get_int("model.scales", c.scales));
  c.divisor = static_cast<int>(kv.get_int("model.divisor", c.divisor));
  c.knn = static_cast<int>(kv.get_int("model.knn", c.knn));
  c.channels = static_cast<int>(kv.get_int("model.channels", c.channels));
  c.dense_layers = static_cast<int>(kv.get_int("model.dense_layers", c.dense_layers));
  c.use_weight_w = kv.get_bool("model.use_weight_w", c.use_weight_w);
  if (kv.contains("model.weight_variant")) c.weight_variant = parse_weight_variant(kv.get("model.weight_variant"));
  c.use_f1 = kv.get_bool("model.use_f1", c.use_f1);
  c.use_f2 = kv.get_bool("model.use_f2", c.use_f2);
  c.f2_as_f1 = kv.get_bool("model.f2_as_f1", c.f2_as_f1);
  if (kv.contains("model.compensation")) c.compensation = parse_compensation(kv.get("model.compensation"));
  c.feature_standardization = kv.get_bool("model.feature_standardization", c.feature_standardization);
  c.align_frame = kv.get_bool("model.align_frame", c.align_frame);
  return c;
}

// ---- parameters ---------------------------------------------------------------

namespace {

std::string layer_name(const std::string& prefix, int l, const char* what) {
  return prefix + "." + std::to_string(l) + "." + what;
}

void add_mlp(std::vector<ParamShape>& out, const std::string& prefix, std::initializer_list<int> widths) {
  const std::vector<int> w(widths);
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    out.push_back({layer_name(prefix, static_cast<int>(l), "weight"), w[l], w[l + 1], ParamShape::Init::glorot});
    out.push_back({layer_name(prefix, static_cast<int>(l), "bias"), 1, w[l + 1], ParamShape::Init::zero});
  }
}

void add_weight_params(std::vector<ParamShape>& out, const std::string& prefix, const ModelConfig& cfg) {
  if (!cfg.use_weight_w) return;
  out.push_back({prefix + ".weight_a", 1, 1, ParamShape::Init::one});
  out.push_back({prefix + ".weight_b", 1, 1, ParamShape::Init::one});
}

void add_layer(std::vector<ParamShape>& out, const std::string& prefix, const ModelConfig& cfg, bool as_mlp) {
  const int c = cfg.channels;
  if (as_mlp) {
    add_mlp(out, prefix + ".mlp", {c, c, c});
    return;
  }
  add_mlp(out, prefix + ".gamma", {c, c, c});
  add_mlp(out, prefix + ".beta", {c, c, c});
  add_mlp(out, prefix + ".alpha", {2 * c, c, c});
  add_weight_params(out, prefix, cfg);
}

std::string stage_prefix(int s) { return "stage" + std::to_string(s); }
std::string refine_prefix(int r) { return "refine" + std::to_string(r); }

}  // namespace

std::vector<ParamShape> describe_parameters(const ModelConfig& cfg) {
  cfg.validate();
  const int c = cfg.channels, h = c / 2;
  std::vector<ParamShape> out;

  add_mlp(out, "features.phi", {3, h, h});
  const int edge = 6;
  for (int l = 0; l < cfg.dense_layers; ++l) {
    add_mlp(out, "features.dense" + std::to_string(l), {edge + l * h, h});
  }
  if (cfg.dense_layers > 0) add_mlp(out, "features.fuse", {edge + cfg.dense_layers * h, h});
  add_mlp(out, "features.psi", {cfg.dense_layers > 0 ? c : h, c, c});

  for (int s = 0; s < cfg.scales; ++s) {
    const std::string p = stage_prefix(s);
    add_layer(out, p + ".f1.p1", cfg, !cfg.use_f1);
    add_layer(out, p + ".f1.p2", cfg, !cfg.use_f1);
    const std::string cp = p + ".comp";
    switch (cfg.compensation) {
      case Compensation::attention:
      case Compensation::softmax1:
      case Compensation::softmax2:
        for (const char* m : {"q", "k", "v", "delta", "mu"}) add_mlp(out, cp + "." + m, {c, c});
        add_mlp(out, cp + ".eta", {2 * c, c, c});
        add_weight_params(out, cp, cfg);
        break;
      case Compensation::concat:
        add_mlp(out, cp + ".eta", {2 * c, c, c});
        break;
      case Compensation::add:
      case Compensation::none:
        break;
    }
  }

  for (int r = 0; r < 2; ++r) {
    const std::string p = refine_prefix(r);
    if (cfg.f2_as_f1) {
      add_layer(out, p + ".f1.p1", cfg, !cfg.use_f1);
      add_layer(out, p + ".f1.p2", cfg, !cfg.use_f1);
    } else {
      add_layer(out, p + ".f2.p1a", cfg, !cfg.use_f2);
      add_layer(out, p + ".f2.p1b", cfg, !cfg.use_f2);
    }
  }

  add_mlp(out, "head.xi", {c, h, 1});
  add_mlp(out, "head.delta", {c, c, 3});
  add_mlp(out, "head.neighbor", {c, h, 3});
  add_weight_params(out, "head", cfg);
  return out;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams params;
  for (const auto& p : describe_parameters(cfg)) {
    switch (p.init) {
      case ParamShape::Init::glorot:
        params.add(p.name, glorot_uniform(p.rows, p.cols, seed, p.name));
        break;
      case ParamShape::Init::zero:
        params.add(p.name, Mat::Zero(p.rows, p.cols));
        break;
      case ParamShape::Init::one:
        params.add(p.name, Mat::Ones(p.rows, p.cols));
        break;
    }
  }
  return params;
}

void check_params(const ModelConfig& cfg, const ModelParams& params) {
  const auto shapes = describe_parameters(cfg);
  if (shapes.size() != params.size()) {
    throw ConfigError("checkpoint has " + std::to_string(params.size()) + " parameters, config expects " +
                      std::to_string(shapes.size()));
  }
  for (const auto& s : shapes) {
    if (!params.contains(s.name)) throw ConfigError("checkpoint lacks parameter " + s.name);
    const Var& v = params.at(s.name);
    if (v.rows() != s.rows || v.cols() != s.cols) {
      throw ConfigError("parameter " + s.name + " has shape " + std::to_string(v.rows()) + "x" +
                        std::to_string(v.cols()) + ", config expects " + std::to_string(s.rows) + "x" +
                        std::to_string(s.cols));
    }
  }
}

// ---- inputs -------------------------------------------------------------------

PatchInput prepare_patch(const Patch& patch, const ModelConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<int>(patch.size());
  if (n != cfg.patch_size) {
    throw std::invalid_argument("patch has " + std::to_string(n) + " points, model expects " +
                                std::to_string(cfg.patch_size));
  }
  if (!is_distance_sorted(patch)) {
    throw std::invalid_argument("patch rows are not sorted by distance to the query");
  }
  PatchInput in;
  in.knn = cfg.knn;
  in.points.resize(n, 3);
  in.radii.resize(n);
  for (int i = 0; i < n; ++i) {
    in.points.row(i) = patch.local_points[i].transpose();
    in.radii[i] = patch.local_points[i].norm();
  }
  if (cfg.align_frame) {
    // Columns: largest, middle, smallest spread; right-handed.
    const SymEigen eig = eigh3(covariance(patch.local_points));
    Eigen::Matrix3d r;
    r.col(0) = canonical_sign(eig.vectors.col(2));
    r.col(2) = canonical_sign(eig.vectors.col(0));
    r.col(1) = r.col(2).cross(r.col(0));
    in.rotation = r;
    in.points = (in.points * r).eval();
  }
  const KdTree tree(patch.local_points);
  in.neighbors.reserve(static_cast<std::size_t>(n) * cfg.knn);
  for (int i = 0; i < n; ++i) {
    const Neighbors nb = tree.knn(patch.local_points[i], static_cast<std::size_t>(cfg.knn));
    // Self first, even among coincident duplicates.
    in.neighbors.push_back(i);
    for (std::size_t idx : nb.indices) {
      if (static_cast<int>(idx) != i && static_cast<int>(in.neighbors.size()) < (i + 1) * cfg.knn) {
        in.neighbors.push_back(static_cast<int>(idx));
      }
    }
  }
  return in;
}

Vec3 Prediction::normal() const {
  const Mat& v = query_normal.value();
  return Vec3(v(0, 0), v(0, 1), v(0, 2));
}

// ---- stages -------------------------------------------------------------------

namespace {

Var mlp_from(Var x, const ModelParams& params, const std::string& prefix, const ModelConfig& cfg, int first) {
  for (int l = first;; ++l) {
    const std::string w = layer_name(prefix, l, "weight");
    if (!params.contains(w)) {
      if (l == 0) throw std::out_of_range("unknown MLP " + prefix);
      return x;
    }
    x = ad::affine(x, params.at(w), params.at(layer_name(prefix, l, "bias")));
    if (params.contains(layer_name(prefix, l + 1, "weight"))) {
      if (cfg.feature_standardization && x.rows() > 1) x = ad::standardize_cols(x);
      x = ad::leaky_relu(x);
    }
  }
}

Var mlp(Var x, const ModelParams& params, const std::string& prefix, const ModelConfig& cfg) {
  return mlp_from(std::move(x), params, prefix, cfg, 0);
}

// mlp(concat_cols(parts)) with the first layer split across the parts.
Var mlp_concat(std::span<const Var> parts, const ModelParams& params, const std::string& prefix,
               const ModelConfig& cfg) {
  Var x = ad::affine_concat(parts, params.at(layer_name(prefix, 0, "weight")), params.at(layer_name(prefix, 0, "bias")));
  if (!params.contains(layer_name(prefix, 1, "weight"))) return x;
  if (cfg.feature_standardization && x.rows() > 1) x = ad::standardize_cols(x);
  return mlp_from(ad::leaky_relu(x), params, prefix, cfg, 1);
}

std::optional<Var> point_weights(const PatchInput& in, int rows, const ModelParams& params,
                                 const std::string& prefix, const ModelConfig& cfg) {
  if (!cfg.use_weight_w) return std::nullopt;
  return distance_weights(in.radii.head(rows), params.at(prefix + ".weight_a"),
                          params.at(prefix + ".weight_b"), cfg.weight_variant);
}

Var apply_weights(const Var& x, const std::optional<Var>& w) { return w ? ad::rowscale(x, *w) : x; }

bool layer_is_mlp(const ModelParams& params, const std::string& prefix) {
  return params.contains(layer_name(prefix + ".mlp", 0, "weight"));
}

}  // namespace

Var take_nearest_prefix(const Var& features, int m) {
  if (m < 0 || m > features.rows()) {
    throw std::invalid_argument("take_nearest_prefix: m=" + std::to_string(m) + " exceeds " +
                                std::to_string(features.rows()) + " rows");
  }
  return ad::prefix_rows(features, m);
}

Var per_point_features(const PatchInput& in, const ModelParams& params, const ModelConfig& cfg) {
  const Var points = ad::constant(in.points);
  Var pointwise = mlp(points, params, "features.phi", cfg);
  if (cfg.dense_layers == 0) return mlp(pointwise, params, "features.psi", cfg);

  const Eigen::Index n = in.points.rows(), k = in.knn;
  if (static_cast<Eigen::Index>(in.neighbors.size()) != n * k) {
    throw std::invalid_argument("per_point_features: neighbour table does not match the patch");
  }
  Mat edges(n * k, 6);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      const auto r = i * k + j;
      const int nb = in.neighbors[static_cast<std::size_t>(r)];
      edges.block<1, 3>(r, 0) = in.points.row(i);
      edges.block<1, 3>(r, 3) = in.points.row(nb) - in.points.row(i);
    }
  }
  std::vector<Var> dense = {ad::constant(std::move(edges))};
  for (int l = 0; l < cfg.dense_layers; ++l) {
    Var h = mlp_concat(dense, params, "features.dense" + std::to_string(l), cfg);
    dense.push_back(ad::leaky_relu(h));
  }
  const Var fused = mlp_concat(dense, params, "features.fuse", cfg);
  const Var local = ad::group_max_rows(fused, k);
  return mlp(ad::concat_cols(pointwise, local), params, "features.psi", cfg);
}

Var distance_weights(const Eigen::VectorXd& radii, const Var& a, const Var& b, WeightVariant variant) {
  if (radii.size() < 1) throw std::invalid_argument("distance_weights: empty patch");
  const double av = a.scalar(), bv = b.scalar();
  const Eigen::Index n = radii.size();
  Eigen::VectorXd d(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (variant == WeightVariant::sigmoid) {
      const double z = av - bv * radii[i];
      d[i] = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    } else {
      d[i] = std::exp(-bv * radii[i] * radii[i]);
    }
  }
  const double total = d.sum();
  if (!(total > 0.0) || !std::isfinite(total)) throw NumericError("distance_weights: weights vanish");
  Mat w = d / total;
  return ad::make_op("distance_weights", std::move(w), {a, b}, [d, radii, total, variant](ad::Node& self) {
    // dL/dd_i = (g_i - <g, w>) / S
    const Eigen::VectorXd g = self.grad.col(0);
    const double gw = g.dot(self.value.col(0));
    const Eigen::VectorXd gd = (g.array() - gw) / total;
    double ga = 0.0, gb = 0.0;
    if (variant == WeightVariant::sigmoid) {
      const Eigen::ArrayXd ds = d.array() * (1.0 - d.array());
      ga = (gd.array() * ds).sum();
      gb = -(gd.array() * ds * radii.array()).sum();
    } else {
      gb = -(gd.array() * d.array() * radii.array().square()).sum();
    }
    auto& A = self.parents[0];
    auto& B = self.parents[1];
    if (A->requires_grad) A->ensure_grad()(0, 0) += ga;
    if (B->requires_grad) B->ensure_grad()(0, 0) += gb;
  });
}

Var layer_p(const Var& x, const PatchInput& in, const ModelParams& params, const ModelConfig& cfg,
            const std::string& prefix, int out_rows) {
  if (out_rows < 1 || out_rows > x.rows() || x.rows() > in.radii.size()) {
    throw ShapeError("layer " + prefix + ": cannot map " + std::to_string(x.rows()) + " rows to " +
                     std::to_string(out_rows));
  }
  if (layer_is_mlp(params, prefix)) {
    return mlp(take_nearest_prefix(x, out_rows), params, prefix + ".mlp", cfg);
  }
  const auto rows = static_cast<int>(x.rows());
  const auto w = point_weights(in, rows, params, prefix, cfg);
  const Var gathered = mlp(apply_weights(x, w), params, prefix + ".gamma", cfg);
  const Var summary = mlp(ad::max_rows(gathered).out, params, prefix + ".beta", cfg);
  const Var joined = ad::concat_cols(ad::broadcast_row(summary, out_rows), take_nearest_prefix(x, out_rows));
  return mlp(joined, params, prefix + ".alpha", cfg);
}

Var block_f1(const Var& x, const PatchInput& in, const ModelParams& params, const ModelConfig& cfg,
             const std::string& prefix, int out_rows) {
  if (x.rows() % cfg.divisor != 0 || x.rows() / cfg.divisor != out_rows) {
    throw ConfigError("F1 block " + prefix + ": " + std::to_string(x.rows()) +
                      " rows cannot be reduced to " + std::to_string(out_rows) + " by b=" +
                      std::to_string(cfg.divisor));
  }
  const Var kept = layer_p(x, in, params, cfg, prefix + ".p1", static_cast<int>(x.rows()));
  const Var reduced = layer_p(kept, in, params, cfg, prefix + ".p2", out_rows);
  return ad::add(take_nearest_prefix(kept, out_rows), reduced);
}

Var block_f2(const Var& x, const PatchInput& in, const ModelParams& params, const ModelConfig& cfg,
             const std::string& prefix) {
  const auto rows = static_cast<int>(x.rows());
  const Var first = layer_p(x, in, params, cfg, prefix + ".p1a", rows);
  return ad::add(first, layer_p(first, in, params, cfg, prefix + ".p1b", rows));
}

Var cross_scale_compensation(const Var& x_pre, const Var& y, const PatchInput& in, const ModelParams& params,
                             const ModelConfig& cfg, const std::string& prefix) {
  if (x_pre.rows() < y.rows() || x_pre.cols() != y.cols()) {
    throw ShapeError("compensation " + prefix + ": pre-block features do not cover the retained rows");
  }
  const auto rows = static_cast<int>(y.rows());
  const Var x = take_nearest_prefix(x_pre, rows);
  switch (cfg.compensation) {
    case Compensation::none:
      return y;
    case Compensation::add:
      return ad::add(x, y);
    case Compensation::concat:
      return mlp(ad::concat_cols(x, y), params, prefix + ".eta", cfg);
    case Compensation::attention:
    case Compensation::softmax1:
    case Compensation::softmax2:
      break;
  }
  const Var q = mlp(y, params, prefix + ".q", cfg);
  const Var k = mlp(x, params, prefix + ".k", cfg);
  const Var v = mlp(x, params, prefix + ".v", cfg);
  const Var delta = mlp(ad::add(q, k), params, prefix + ".delta", cfg);
  Var gate = mlp(delta, params, prefix + ".mu", cfg);
  if (cfg.compensation == Compensation::softmax1) gate = ad::softmax_rows(gate);
  if (cfg.compensation == Compensation::softmax2) gate = ad::softmax_cols(gate);
  const Var modulated = apply_weights(ad::mul(v, gate), point_weights(in, rows, params, prefix, cfg));
  return mlp(ad::concat_cols(modulated, y), params, prefix + ".eta", cfg);
}

Prediction predict_normal(const Var& x_o, const PatchInput& in, const ModelParams& params, const ModelConfig& cfg) {
  if (x_o.rows() < 1) throw ShapeError("predict_normal: no rows");
  const auto rows = static_cast<int>(x_o.rows());
  Prediction p;
  p.tau = ad::sigmoid(mlp(x_o, params, "head.xi", cfg));
  const auto w = point_weights(in, rows, params, "head", cfg);
  const Var focus = w ? ad::mul(*w, p.tau) : p.tau;
  const Var pooled = ad::max_rows(ad::rowscale(x_o, focus)).out;
  const Var raw = mlp(pooled, params, "head.delta", cfg);
  p.query_normal = ad::normalize_rows(raw);
  p.neighbor_normals = ad::normalize_rows(mlp(x_o, params, "head.neighbor", cfg));
  return p;
}

Prediction model_forward(const PatchInput& in, const ModelParams& params, const ModelConfig& cfg) {
  const ScaleSchedule sched = cfg.schedule();
  if (in.points.rows() != sched.sizes.front()) {
    throw std::invalid_argument("model_forward: patch does not match the configured size");
  }
  std::vector<int> stage_rows;
  Var x = per_point_features(in, params, cfg);
  stage_rows.push_back(static_cast<int>(x.rows()));

  for (int s = 0; s < cfg.scales; ++s) {
    const std::string p = stage_prefix(s);
    const Var pre = x;
    const Var y = block_f1(x, in, params, cfg, p + ".f1", sched.sizes[s + 1]);
    x = cross_scale_compensation(pre, y, in, params, cfg, p + ".comp");
    stage_rows.push_back(static_cast<int>(x.rows()));
  }
  for (int r = 0; r < 2; ++r) {
    const std::string p = refine_prefix(r);
    if (cfg.f2_as_f1) {
      x = block_f1(x, in, params, cfg, p + ".f1", static_cast<int>(x.rows()) / cfg.divisor);
    } else {
      x = block_f2(x, in, params, cfg, p + ".f2");
    }
    stage_rows.push_back(static_cast<int>(x.rows()));
  }
  Prediction pred = predict_normal(x, in, params, cfg);
  if (cfg.align_frame) {
    const Var back = ad::constant(in.rotation.transpose());
    pred.query_normal = ad::matmul(pred.query_normal, back);
    pred.neighbor_normals = ad::matmul(pred.neighbor_normals, back);
  }
  pred.stage_rows = std::move(stage_rows);
  return pred;
}

Prediction model_forward(const Patch& patch, const ModelParams& params, const ModelConfig& cfg) {
  return model_forward(prepare_patch(patch, cfg), params, cfg);
}

}  // namespace pff
