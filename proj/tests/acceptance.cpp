// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "pff/baselines.hpp"
#include "pff/data.hpp"
#include "pff/harness.hpp"
#include "pff/losses.hpp"
#include "pff/metrics.hpp"
#include "pff/model.hpp"
#include "pff/optim.hpp"
#include "pff/rng.hpp"

namespace fs = std::filesystem;
using pff::Vec3;
namespace ad = pff::ad;
using ad::Mat;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what;
    if (!ok) {
      pass = false;
      detail += " [x]";
    }
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

bool bit_equal(const Mat& a, const Mat& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto d = fs::temp_directory_path() / ("pff_acceptance_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

Vec3 random_unit(pff::CounterRng& r) { return Vec3(r.normal(), r.normal(), r.normal()).normalized(); }

pff::PointCloud make_shape(pff::ShapeKind kind, std::uint64_t seed, double noise, std::size_t count = 10000) {
  pff::ShapeSpec s;
  s.kind = kind;
  s.seed = seed;
  s.count = count;
  auto c = pff::corrupt(pff::synth_shape(s), {noise, pff::DensityPattern::uniform, seed + 100});
  c.name = pff::to_string(kind) + "-" + std::to_string(seed);
  return c;
}

// Trigonometric roots of the characteristic cubic of a symmetric 3x3 matrix, ascending.
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

// Silences a layer's final affine map so the layer contributes exactly zero.
void silence_layer(pff::ModelParams& params, const std::string& prefix) {
  for (auto& [name, var] : params) {
    if (name.rfind(prefix + ".alpha.1.", 0) == 0) var.mutable_value().setZero();
  }
}

// Training shapes of the desk recipe: plane, sphere, cylinder, each clean and at 0.6% noise.
std::vector<pff::PointCloud> desk_training_set() {
  std::vector<pff::PointCloud> out;
  std::uint64_t seed = 1;
  for (auto kind : {pff::ShapeKind::plane, pff::ShapeKind::sphere, pff::ShapeKind::cylinder}) {
    for (double noise : {0.0, pff::kNoiseMedium}) out.push_back(make_shape(kind, seed++, noise));
  }
  return out;
}

// Held-out shapes: fresh seeds and different dimensions, all at 0.6% noise.
std::vector<pff::PointCloud> held_out_set() {
  std::vector<pff::PointCloud> out;
  pff::ShapeSpec plane;
  plane.kind = pff::ShapeKind::plane;
  plane.seed = 501;
  plane.half_extent = 1.5;
  pff::ShapeSpec sphere;
  sphere.kind = pff::ShapeKind::sphere;
  sphere.seed = 502;
  sphere.radius = 1.3;
  pff::ShapeSpec cyl;
  cyl.kind = pff::ShapeKind::cylinder;
  cyl.seed = 503;
  cyl.radius = 0.8;
  cyl.height = 2.5;
  for (const auto& s : {plane, sphere, cyl}) {
    auto c = pff::corrupt(pff::synth_shape(s), {pff::kNoiseMedium, pff::DensityPattern::uniform, s.seed + 7});
    c.name = pff::to_string(s.kind) + "-test";
    out.push_back(std::move(c));
  }
  return out;
}

// ---- criteria ---------------------------------------------------------------------------

Outcome gradient_fidelity() {
  Outcome o;
  const auto ops = pff::gradcheck_ops(20, 1e-5);
  double worst = 0.0;
  bool all = true;
  for (const auto& c : ops) {
    worst = std::max(worst, c.max_rel_error);
    all = all && c.passed;
  }
  o.check(all && worst < 1e-5, std::to_string(ops.size()) + " ops x 20 seeds max rel " + fmt("%.2e", worst) + " < 1e-5");
  const auto model = pff::gradcheck_model(pff::gradcheck_model_config(), 1, 1e-3);
  o.check(model.passed && model.max_rel_error < 1e-3, model.name + " max rel " + fmt("%.2e", model.max_rel_error) + " < 1e-3");
  return o;
}

Outcome loss_contracts() {
  Outcome o;
  pff::CounterRng r(2024);
  bool zero = true;
  for (int i = 0; i < 1000; ++i) {
    const Vec3 n = random_unit(r);
    zero = zero && pff::normal_loss(n, n) == 0.0 && pff::normal_loss(n, -n) == 0.0;
  }
  o.check(zero, "loss(n, +-n) == 0 over 1e3 normals");
  bool three = true;
  int pairs = 0;
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) {
      if (i % 3 == j % 3) continue;
      const Vec3 a = (i < 3 ? 1.0 : -1.0) * Vec3::Unit(i % 3), b = (j < 3 ? 1.0 : -1.0) * Vec3::Unit(j % 3);
      three = three && pff::normal_loss(a, b) == 3.0;
      ++pairs;
    }
  }
  o.check(three, std::to_string(pairs) + " signed axis pairs == 3 exactly");
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Vec3 n = random_unit(r);
    worst = std::max(worst, std::abs(pff::normal_loss(n, n.unitOrthogonal()) - 3.0));
  }
  o.check(worst < 1e-14, "random orthogonal pairs |loss - 3| max " + fmt("%.1e", worst));
  bool bitwise = true;
  for (int i = 0; i < 10000; ++i) {
    const Vec3 n = random_unit(r), g = random_unit(r);
    const double a = pff::normal_loss(n, g), b = pff::normal_loss(n, -g);
    bitwise = bitwise && std::memcmp(&a, &b, sizeof a) == 0;
  }
  o.check(bitwise, "sign invariance bitwise over 1e4 pairs");
  return o;
}

Outcome weight_simplex() {
  Outcome o;
  pff::CounterRng r(77);
  double worst_sum = 0.0;
  bool positive = true, monotone = true;
  for (int t = 0; t < 1000; ++t) {
    const int n = 2 + static_cast<int>(r.below(300));
    Eigen::VectorXd radii(n);
    for (int i = 0; i < n; ++i) radii[i] = r.uniform();
    std::sort(radii.data(), radii.data() + n);
    radii[n - 1] = 1.0;
    radii[0] = 0.0;
    const auto a = ad::constant(Mat::Constant(1, 1, r.uniform(-5, 5)));
    const auto b = ad::constant(Mat::Constant(1, 1, r.uniform(0.01, 10)));
    const Mat w = pff::distance_weights(radii, a, b).value();
    worst_sum = std::max(worst_sum, std::abs(w.sum() - 1.0));
    for (int i = 0; i < n; ++i) {
      positive = positive && w(i, 0) > 0.0;
      if (i > 0) monotone = monotone && w(i, 0) <= w(i - 1, 0);
    }
  }
  o.check(worst_sum < 1e-12, "|sum w - 1| max " + fmt("%.1e", worst_sum) + " < 1e-12");
  o.check(positive, "w > 0");
  o.check(monotone, "non-increasing in r for b > 0 over 1e3 draws");
  return o;
}

Outcome scale_schedule() {
  Outcome o;
  pff::ModelConfig cfg = pff::RunConfig::paper().model;
  cfg.channels = 16;  // row counts do not depend on width
  const auto sizes = cfg.schedule().sizes;
  o.check(sizes == std::vector<int>{800, 400, 200}, "schedule {800,400,200}");

  const auto cloud = make_shape(pff::ShapeKind::torus, 9, pff::kNoiseLow, 4000);
  const auto index = pff::build_index(cloud);
  const auto patch = pff::extract_patch(cloud, *index, 17, 800);
  auto params = pff::init_params(cfg, 3);
  const auto pred = pff::model_forward(patch, params, cfg);
  std::vector<int> distinct;
  for (int rows : pred.stage_rows) {
    if (std::find(distinct.begin(), distinct.end(), rows) == distinct.end()) distinct.push_back(rows);
  }
  o.check(distinct == std::vector<int>{800, 400, 200} && pred.neighbor_normals.rows() == 200,
          "pipeline rows {800,400,200}");

  const auto in = pff::prepare_patch(patch, cfg);
  silence_layer(params, "stage0.f1.p2");
  const auto x = pff::per_point_features(in, params, cfg);
  const Mat kept = pff::layer_p(x, in, params, cfg, "stage0.f1.p1", 800).value();
  const Mat f1 = pff::block_f1(x, in, params, cfg, "stage0.f1", 400).value();
  o.check(bit_equal(f1, kept.topRows(400)), "F1 residual probe bit-exact");

  silence_layer(params, "refine0.f2.p1b");
  const auto y = pff::take_nearest_prefix(x, 200);
  const Mat first = pff::layer_p(y, in, params, cfg, "refine0.f2.p1a", 200).value();
  const Mat f2 = pff::block_f2(y, in, params, cfg, "refine0.f2").value();
  o.check(bit_equal(f2, first), "F2 residual probe bit-exact");

  const Mat prefix = pff::take_nearest_prefix(x, 400).value();
  o.check(bit_equal(prefix, x.value().topRows(400)), "prefix rule bit-exact");
  return o;
}

Outcome classical_oracles() {
  Outcome o;
  pff::CounterRng r(5);
  const Vec3 n = Vec3(2, -1, 3).normalized();
  const Vec3 t1 = n.unitOrthogonal(), t2 = n.cross(t1);
  std::vector<Vec3> plane;
  for (int i = 0; i < 200; ++i) plane.push_back(r.uniform(-1, 1) * t1 + r.uniform(-1, 1) * t2);
  const double plane_err = pff::angle_error_deg(pff::pca_normal(plane), n);
  o.check(plane_err < 1e-6, "PCA plane " + fmt("%.1e", plane_err) + " deg < 1e-6");

  pff::ShapeSpec s;
  s.kind = pff::ShapeKind::sphere;
  s.count = 5000;
  s.seed = 11;
  const auto sphere = pff::synth_shape(s);
  const auto index = pff::build_index(sphere);
  double sum = 0.0;
  for (std::size_t i = 0; i < sphere.size(); ++i) {
    sum += pff::angle_error_deg(pff::classical_normal(sphere, *index, i, pff::Estimator::pca, 16), (*sphere.normals)[i]);
  }
  const double sphere_mean = sum / static_cast<double>(sphere.size());
  o.check(sphere_mean < 3.0, "PCA sphere k16 mean " + fmt("%.3f", sphere_mean) + " deg < 3");

  std::vector<Vec3> bowl = {Vec3::Zero()};
  for (int i = -4; i <= 4; ++i)
    for (int j = -4; j <= 4; ++j) {
      if (i == 0 && j == 0) continue;
      const double x = 0.04 * i, y = 0.04 * j;
      bowl.emplace_back(x, y, x * x + y * y);
    }
  const double jet_err = pff::angle_error_deg(pff::jet_normal(bowl), Vec3(0, 0, 1));
  o.check(jet_err < 1e-6, "jet z=x^2+y^2 " + fmt("%.1e", jet_err) + " deg < 1e-6");

  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    Eigen::Matrix3d m;
    for (int i = 0; i < 3; ++i)
      for (int j = i; j < 3; ++j) m(i, j) = m(j, i) = r.uniform(-1, 1);
    const Eigen::Vector3d got = pff::eigh3(pff::Sym3::from_matrix(m)).values;
    worst = std::max(worst, (got - cubic_eigenvalues(m)).cwiseAbs().maxCoeff());
  }
  o.check(worst < 1e-8, "eigh3 vs cubic roots max " + fmt("%.1e", worst) + " < 1e-8");
  return o;
}

Outcome patch_size_study() {
  Outcome o;
  const std::vector<std::size_t> ks = {8, 16};
  pff::ShapeSpec plane;
  plane.kind = pff::ShapeKind::plane;
  plane.count = 10000;
  plane.seed = 21;
  const auto noisy = pff::add_noise(pff::synth_shape(plane), pff::kNoiseMedium, 22);
  const auto a = pff::patch_size_study(noisy, pff::Estimator::pca, ks);
  o.check(a[1].rmse_deg < a[0].rmse_deg,
          "(a) noisy plane k16 " + fmt("%.2f", a[1].rmse_deg) + " < k8 " + fmt("%.2f", a[0].rmse_deg));

  pff::ShapeSpec thin;
  thin.kind = pff::ShapeKind::cylinder;
  thin.radius = 0.005;
  thin.height = 2.0;
  thin.count = 2000;
  thin.seed = 23;
  const auto b = pff::patch_size_study(pff::synth_shape(thin), pff::Estimator::pca, ks);
  o.check(b[0].rmse_deg < b[1].rmse_deg,
          "(b) thin cylinder k8 " + fmt("%.2f", b[0].rmse_deg) + " < k16 " + fmt("%.2f", b[1].rmse_deg));

  pff::ShapeSpec big;
  big.kind = pff::ShapeKind::sphere;
  big.count = 100000;
  big.seed = 24;
  const auto c = pff::patch_size_study(pff::synth_shape(big), pff::Estimator::pca, ks);
  o.check(c[0].seconds < c[1].seconds,
          "(c) 100k points k8 " + fmt("%.2f", c[0].seconds) + " s < k16 " + fmt("%.2f", c[1].seconds) + " s");
  return o;
}

double mean_angle(const std::vector<pff::Patch>& patches, const pff::ModelParams& params,
                  const pff::ModelConfig& cfg, const pff::PointCloud& cloud) {
  double sum = 0.0;
  for (const auto& p : patches) {
    sum += pff::angle_error_deg(pff::model_forward(p, params, cfg).normal(), (*cloud.normals)[p.source_indices[0]]);
  }
  return sum / static_cast<double>(patches.size());
}

Outcome learning_sanity() {
  Outcome o;
  // Overfit: 50 fixed clean-sphere patches, one patch per optimizer step.
  {
    pff::ModelConfig cfg = pff::ModelConfig::desk();
    cfg.patch_size = 64;
    cfg.channels = 32;
    cfg.knn = 8;
    const auto sphere = make_shape(pff::ShapeKind::sphere, 31, 0.0, 5000);
    const auto index = pff::build_index(sphere);
    std::vector<pff::Patch> patches;
    for (std::size_t q : pff::sample_queries(sphere.size(), 50, 32)) {
      patches.push_back(pff::extract_patch(sphere, *index, q, 64));
    }
    auto params = pff::init_params(cfg, 33);
    const double before = mean_angle(patches, params, cfg, sphere);
    pff::AdamW opt(pff::AdamWHyper{});
    const int steps = 500;
    for (int step = 0; step < steps; ++step) {
      const auto& p = patches[static_cast<std::size_t>(step) % patches.size()];
      const auto loss = pff::total_loss(pff::model_forward(p, params, cfg), p, *sphere.normals, pff::LossWeights{});
      ad::backward(loss.total);
      opt.step(params);
      params.zero_grad();
    }
    const double after = mean_angle(patches, params, cfg, sphere);
    o.check(after < 10.0, "overfit 50 patches " + fmt("%.2f", before) + " -> " + fmt("%.2f", after) +
                              " deg in " + std::to_string(steps) + " steps < 10");
  }
  // Desk-default training versus PCA k=16 on held-out noisy shapes.
  {
    const pff::RunConfig cfg = pff::RunConfig::desk();
    const auto train = desk_training_set();
    const auto result = pff::train_model(cfg, train);
    const pff::LoadedModel model{cfg.model, std::move(result.params)};
    std::vector<double> model_err, pca_err;
    pff::EstimateOptions learned, pca;
    pca.kind = pff::EstimatorKind::pca;
    pca.k = 16;
    for (const auto& shape : held_out_set()) {
      const auto q = pff::sample_queries(shape.size(), 1000, 41);
      const auto a = pff::estimate_normals(shape, learned, &model, q);
      const auto b = pff::estimate_normals(shape, pca, nullptr, q);
      for (std::size_t i = 0; i < q.size(); ++i) {
        model_err.push_back(pff::angle_error_deg(a[i], (*shape.normals)[q[i]]));
        pca_err.push_back(pff::angle_error_deg(b[i], (*shape.normals)[q[i]]));
      }
    }
    const double m = pff::rmse(model_err), p = pff::rmse(pca_err);
    o.check(m < p, "desk training (" + std::to_string(cfg.epochs) + " epochs, final loss " +
                       fmt("%.4f", result.log.back().mean_loss) + ") held-out RMSE " + fmt("%.2f", m) +
                       " < PCA-k16 " + fmt("%.2f", p));
  }
  return o;
}

Outcome metric_contracts() {
  Outcome o;
  pff::CounterRng r(8);
  std::vector<double> errors;
  for (int i = 0; i < 500; ++i) errors.push_back(r.uniform(0, 90));
  errors.push_back(90.0);
  const auto curve = pff::pgp_curve(errors, pff::default_pgp_thresholds());
  bool monotone = true;
  for (std::size_t i = 1; i < curve.size(); ++i) monotone = monotone && curve[i].fraction >= curve[i - 1].fraction;
  o.check(monotone, "PGP monotone");
  std::vector<Vec3> pred, truth;
  for (int i = 0; i < 500; ++i) {
    pred.push_back(random_unit(r));
    truth.push_back(random_unit(r));
  }
  pred.push_back(Vec3(1, 0, 0));
  truth.push_back(Vec3(0, 1, 0));
  const auto rep = pff::make_report(pred, truth, pff::default_pgp_thresholds());
  o.check(rep.pgp.back().threshold_deg == 90.0 && rep.pgp.back().fraction == 1.0, "PGP(90) = 1");

  // Hand-counted fixture: 0, 3, 10, 12.5 and 19.999 are below 20 degrees, 20 and above are not.
  const std::vector<double> fixture = {0.0, 3.0, 10.0, 19.999, 20.0, 20.001, 45.0, 89.0, 90.0, 12.5};
  std::size_t count = 0;
  for (double e : fixture) count += e < 20.0;
  const std::vector<double> t20 = {20.0};
  const double pgp20 = pff::pgp_curve(fixture, t20)[0].fraction;
  o.check(pgp20 == static_cast<double>(count) / fixture.size() && pgp20 == 0.5, "PGP-20 fixture " + fmt("%.2f", pgp20));

  const double rm = pff::rmse(std::vector<double>{30.0, 0.0});
  o.check(std::abs(rm - 21.2132) < 1e-4, "RMSE{30,0} " + fmt("%.6f", rm));
  return o;
}

Outcome determinism() {
  Outcome o;
  const auto dirs = std::array{scratch("det_a"), scratch("det_b")};
  std::array<std::string, 2> ckpt, preds, synth;
  for (int run = 0; run < 2; ++run) {
    const fs::path& d = dirs[static_cast<std::size_t>(run)];
    pff::ShapeSpec s;
    s.kind = pff::ShapeKind::torus;
    s.count = 3000;
    s.seed = 61;
    pff::synth_to_files(s, {pff::kNoiseMedium, pff::DensityPattern::stripe, 62}, d, "ring");
    s.kind = pff::ShapeKind::sphere;
    pff::synth_to_files(s, {0.0, pff::DensityPattern::gradient, 63}, d, "ball");
    synth[run] = slurp(d / "ring.xyz") + slurp(d / "ring.normals") + slurp(d / "ring.manifest") +
                 slurp(d / "ball.xyz") + slurp(d / "ball.normals") + slurp(d / "ball.manifest");

    pff::RunConfig cfg = pff::RunConfig::desk();
    cfg.epochs = 2;
    cfg.queries_per_shape = 8;
    cfg.batch_size = 4;
    cfg.milestones = {1};
    cfg.seed = 64;
    cfg.train_manifests = {d / "ring.manifest", d / "ball.manifest"};
    cfg.out_dir = d / "out";
    pff::run_train(cfg);
    ckpt[run] = slurp(cfg.out_dir / "model.ckpt");

    const auto model = pff::load_model(cfg.out_dir / "model.ckpt");
    const auto cloud = pff::load_manifest(d / "ring.manifest");
    pff::EstimateOptions opt;
    opt.workers = run + 1;
    const auto normals = pff::estimate_normals(cloud, opt, &model, pff::sample_queries(cloud.size(), 40, 65));
    pff::write_normals(d / "pred.normals", normals);
    preds[run] = slurp(d / "pred.normals");
  }
  o.check(!synth[0].empty() && synth[0] == synth[1], "synthetic files identical");
  o.check(!ckpt[0].empty() && ckpt[0] == ckpt[1], "checkpoints identical");
  o.check(!preds[0].empty() && preds[0] == preds[1], "predictions identical (1 vs 2 workers)");

  const auto cloud = make_shape(pff::ShapeKind::quadric, 66, pff::kNoiseHigh, 5000);
  pff::write_xyz(dirs[0] / "rt.xyz", cloud);
  pff::write_normals(dirs[0] / "rt.normals", *cloud.normals);
  const auto back = pff::load_cloud(dirs[0] / "rt.xyz", dirs[0] / "rt.normals");
  double worst = back.size() == cloud.size() ? 0.0 : 1.0;
  for (std::size_t i = 0; i < std::min(back.size(), cloud.size()); ++i) {
    worst = std::max(worst, (back.points[i] - cloud.points[i]).cwiseAbs().maxCoeff());
    worst = std::max(worst, ((*back.normals)[i] - (*cloud.normals)[i]).cwiseAbs().maxCoeff());
  }
  o.check(worst < 1e-9, "xyz/normals round trip max " + fmt("%.1e", worst) + " < 1e-9");
  return o;
}

Outcome ablation_harness() {
  Outcome o;
  const auto train = desk_training_set();
  const auto test = held_out_set()[1];
  const auto queries = pff::sample_queries(test.size(), 50, 71);
  auto run = [&](const pff::ModelConfig& m) {
    pff::RunConfig cfg = pff::RunConfig::desk();
    cfg.model = m;
    cfg.epochs = 1;
    cfg.queries_per_shape = 16;
    cfg.milestones = {};
    auto result = pff::train_model(cfg, train);
    const pff::LoadedModel model{m, std::move(result.params)};
    return pff::estimate_normals(test, {}, &model, queries);
  };
  const pff::ModelConfig base = pff::ModelConfig::desk();
  const auto reference = run(base);

  std::vector<std::pair<std::string, pff::ModelConfig>> variants;
  auto add = [&](const std::string& name, auto&& edit) {
    pff::ModelConfig c = base;
    edit(c);
    variants.emplace_back(name, c);
  };
  add("w/o w", [](pff::ModelConfig& c) { c.use_weight_w = false; });
  add("w/o F1", [](pff::ModelConfig& c) { c.use_f1 = false; });
  add("w/o F2", [](pff::ModelConfig& c) { c.use_f2 = false; });
  add("softmax1", [](pff::ModelConfig& c) { c.compensation = pff::Compensation::softmax1; });
  add("softmax2", [](pff::ModelConfig& c) { c.compensation = pff::Compensation::softmax2; });
  add("concat", [](pff::ModelConfig& c) { c.compensation = pff::Compensation::concat; });
  add("add", [](pff::ModelConfig& c) { c.compensation = pff::Compensation::add; });

  for (const auto& [name, cfg] : variants) {
    try {
      const auto out = run(cfg);
      double diff = 0.0;
      bool unit = out.size() == reference.size();
      for (std::size_t i = 0; i < out.size() && unit; ++i) {
        unit = std::abs(out[i].norm() - 1.0) < 1e-9;
        diff = std::max(diff, (out[i] - reference[i]).norm());
      }
      o.check(unit && diff > 1e-9, name + " " + fmt("%.1e", diff));
    } catch (const std::exception& e) {
      o.check(false, name + " threw: " + e.what());
    }
  }
  return o;
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "gradient-fidelity", 120, gradient_fidelity},
      {2, "loss-contracts", 60, loss_contracts},
      {3, "weight-simplex", 60, weight_simplex},
      {4, "scale-schedule", 60, scale_schedule},
      {5, "classical-oracles", 60, classical_oracles},
      {6, "patch-size-study", 300, patch_size_study},
      {7, "learning-sanity", 1800, learning_sanity},
      {8, "metric-contracts", 60, metric_contracts},
      {9, "determinism-io", 120, determinism},
      {10, "ablation-harness", 600, ablation_harness},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    o.check(secs < c.budget_seconds, fmt("%.1f", secs) + " s < " + fmt("%.0f", c.budget_seconds) + " s");
    failed += !o.pass;
    std::printf("%s %2d %-18s %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
