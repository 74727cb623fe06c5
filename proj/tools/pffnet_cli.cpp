// pffnet: synthesise shapes, train, estimate, evaluate, benchmark.
//
// Settings resolve in this order (later wins): built-in defaults, --config
// file, PFF_SEED environment variable, command-line flags.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "pff/errors.hpp"
#include "pff/harness.hpp"
#include "pff/rng.hpp"

namespace fs = std::filesystem;
using namespace pff;

namespace {

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("PFF_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used == std::string(s).size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(std::string("PFF_SEED is not an unsigned integer: ") + s);
}

KeyValueConfig load_overrides(const std::string& config_path, const std::vector<std::string>& sets) {
  KeyValueConfig kv;
  if (!config_path.empty()) kv = KeyValueConfig::load(config_path);
  if (auto seed = env_seed()) kv.set("train.seed", std::to_string(*seed));
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got: " + s);
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  return kv;
}

std::array<double, 5> parse_coeffs(const std::string& s) {
  std::array<double, 5> c{};
  std::stringstream ss(s);
  std::string item;
  int i = 0;
  while (std::getline(ss, item, ',')) {
    if (i == 5) throw ConfigError("--coeffs takes five comma-separated values");
    c[i++] = std::stod(item);
  }
  if (i != 5) throw ConfigError("--coeffs takes five comma-separated values");
  return c;
}

// ---- synth ----------------------------------------------------------------------

struct SynthArgs {
  std::string manifest;
  std::string kind = "sphere";
  std::size_t count = 10000;
  std::optional<std::uint64_t> seed;
  double noise = 0.0;
  std::string density = "uniform";
  std::optional<double> radius, height, major_radius, minor_radius, half_extent;
  std::string coeffs;
  std::string name;
  std::string out_dir = "out";
};

int run_synth(const SynthArgs& a) {
  ShapeSpec shape;
  CorruptionSpec corruption;
  std::string name = a.name;
  if (!a.manifest.empty()) {
    const auto kv = KeyValueConfig::load(a.manifest);
    shape = ShapeSpec::from_kv(kv);
    corruption = CorruptionSpec::from_kv(kv);
    if (name.empty()) name = kv.get_or("name", fs::path(a.manifest).stem().string());
  } else {
    shape.kind = parse_shape_kind(a.kind);
    shape.count = a.count;
    if (a.radius) shape.radius = *a.radius;
    if (a.height) shape.height = *a.height;
    if (a.major_radius) shape.major_radius = *a.major_radius;
    if (a.minor_radius) shape.minor_radius = *a.minor_radius;
    if (a.half_extent) shape.half_extent = *a.half_extent;
    if (!a.coeffs.empty()) shape.coeffs = parse_coeffs(a.coeffs);
    corruption.noise_sigma_frac = a.noise;
    corruption.density = parse_density(a.density);
  }
  std::optional<std::uint64_t> seed = env_seed();
  if (a.seed) seed = a.seed;
  if (seed) {
    shape.seed = *seed;
    corruption.seed = derive_seed(*seed, "corruption");
  }
  if (name.empty()) name = to_string(shape.kind);
  shape.validate();
  corruption.validate();
  synth_to_files(shape, corruption, a.out_dir, name);
  std::cout << "wrote " << (fs::path(a.out_dir) / (name + ".xyz")).string() << '\n';
  return 0;
}

// ---- train ----------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::vector<std::string> sets;
  std::vector<std::string> train;
  bool paper = false;
  std::optional<int> epochs, queries, batch_size, checkpoint_every;
  std::optional<double> lr;
  std::optional<std::string> milestones;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};

int run_train_cmd(const TrainArgs& a) {
  KeyValueConfig kv = load_overrides(a.config, a.sets);
  if (a.seed) kv.set("train.seed", std::to_string(*a.seed));
  if (a.epochs) kv.set("train.epochs", std::to_string(*a.epochs));
  if (a.queries) kv.set("train.queries_per_shape", std::to_string(*a.queries));
  if (a.batch_size) kv.set("train.batch_size", std::to_string(*a.batch_size));
  if (a.checkpoint_every) kv.set("train.checkpoint_every", std::to_string(*a.checkpoint_every));
  if (a.lr) kv.set("optim.lr", format_double(*a.lr));
  if (a.milestones) kv.set("optim.milestones", *a.milestones);
  if (a.out_dir) kv.set("out_dir", *a.out_dir);
  if (!a.train.empty()) {
    std::string joined;
    for (std::size_t i = 0; i < a.train.size(); ++i) joined += (i ? "," : "") + a.train[i];
    kv.set("data.train", joined);
  }
  const RunConfig cfg = RunConfig::from_kv(kv, a.paper ? RunConfig::paper() : RunConfig::desk());
  cfg.validate();
  if (cfg.train_manifests.empty() && cfg.epochs > 0) throw ConfigError("no training manifests (--train)");

  run_train(cfg, [](const EpochLog& e, const ModelParams&) {
    std::cout << "epoch " << e.epoch << " loss " << e.mean_loss << " lr " << e.lr << std::endl;
  });
  const fs::path ckpt = cfg.out_dir / "model.ckpt";
  std::cout << "wrote " << ckpt.string() << '\n';
  return 0;
}

// ---- estimate -------------------------------------------------------------------

struct EstimateArgs {
  std::string input;  // .xyz or a shape manifest
  std::string checkpoint, model_cfg;
  std::string estimator = "model";
  int k = 16;
  int workers = 1;
  std::string output;
  std::string out_dir = "out";
};

PointCloud load_input(const std::string& input) {
  const fs::path p(input);
  if (p.extension() == ".xyz") return load_cloud(p);
  return load_manifest(p);
}

int run_estimate(const EstimateArgs& a) {
  EstimateOptions opt;
  opt.kind = parse_estimator(a.estimator);
  opt.k = a.k;
  opt.workers = a.workers;
  std::optional<LoadedModel> model;
  if (opt.kind == EstimatorKind::model) {
    if (a.checkpoint.empty()) throw ConfigError("--checkpoint is required for the model estimator");
    model = load_model(a.checkpoint, a.model_cfg);
  }
  const PointCloud cloud = load_input(a.input);
  const auto normals = estimate_normals(cloud, opt, model ? &*model : nullptr);
  fs::path out = a.output;
  if (out.empty()) {
    fs::create_directories(a.out_dir);
    out = fs::path(a.out_dir) / (fs::path(a.input).stem().string() + ".normals");
  } else if (out.has_parent_path()) {
    fs::create_directories(out.parent_path());
  }
  write_normals(out, normals);
  std::cout << "wrote " << out.string() << '\n';
  return 0;
}

// ---- eval / pgp -----------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> pred, gt;
  std::string agg = "pooled";
  bool svg = false;
  std::string out_dir = "out";
};

Evaluation evaluate_args(const EvalArgs& a) {
  if (a.pred.size() != a.gt.size()) throw std::invalid_argument("--pred and --gt must be given the same number of times");
  std::vector<std::pair<fs::path, fs::path>> pairs;
  for (std::size_t i = 0; i < a.pred.size(); ++i) pairs.emplace_back(a.pred[i], a.gt[i]);
  return evaluate_files(pairs, default_pgp_thresholds());
}

int run_eval(const EvalArgs& a) {
  const Evaluation ev = evaluate_args(a);
  const Aggregation agg = parse_aggregation(a.agg);
  write_evaluation(a.out_dir, ev, agg, a.svg);
  std::cout << "rmse_deg " << (agg == Aggregation::pooled ? ev.pooled.rmse_deg : ev.mean_shape_rmse) << '\n';
  return 0;
}

int run_pgp(const EvalArgs& a) {
  const Evaluation ev = evaluate_args(a);
  fs::create_directories(a.out_dir);
  write_pgp_csv(fs::path(a.out_dir) / "pgp.csv", ev.pooled);
  write_pgp_svg(fs::path(a.out_dir) / "pgp.svg", ev.pooled.pgp);
  std::cout << "wrote " << (fs::path(a.out_dir) / "pgp.csv").string() << '\n';
  return 0;
}

// ---- bench ----------------------------------------------------------------------

struct BenchArgs {
  std::string estimator = "pca";
  int k = 16;
  std::string checkpoint, model_cfg;
  std::size_t size = 100000;
  int reps = 3;
  std::size_t queries = 0;
  int workers = 0;
  std::string out_dir = "out";
};

int run_bench(const BenchArgs& a) {
  EstimateOptions opt;
  opt.kind = parse_estimator(a.estimator);
  opt.k = a.k;
  std::optional<LoadedModel> model;
  if (opt.kind == EstimatorKind::model) {
    if (a.checkpoint.empty()) throw ConfigError("--checkpoint is required for the model estimator");
    model = load_model(a.checkpoint, a.model_cfg);
  }
  const int workers = a.workers > 0 ? a.workers : std::max(1u, std::thread::hardware_concurrency());
  const BenchReport r = bench(opt, model ? &*model : nullptr, a.size, a.reps, a.queries, workers);
  fs::create_directories(a.out_dir);
  write_bench_report(fs::path(a.out_dir) / "report.txt", r);
  std::cout << r.target << ": " << r.single_seconds_per_100k << " s/100k points (1 worker), "
            << r.multi_seconds_per_100k << " s/100k points (" << r.workers << " workers)\n"
            << r.machine << '\n';
  return 0;
}

// ---- gradcheck ------------------------------------------------------------------

int run_gradcheck(const std::string& scale, int seeds) {
  bool ok = true;
  auto show = [&](const GradCheckCase& c) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " max_rel_error=" << c.max_rel_error << '\n';
    ok = ok && c.passed;
  };
  if (scale == "ops" || scale == "all") {
    for (const auto& c : gradcheck_ops(seeds)) show(c);
  }
  if (scale == "model" || scale == "all") show(gradcheck_model(gradcheck_model_config(), 1));
  if (scale == "broken") {
    const GradCheckCase c = gradcheck_broken_op(1);
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " max_rel_error=" << c.max_rel_error
              << " (negative control: expected to fail)\n";
    ok = c.passed;
  }
  if (scale != "ops" && scale != "model" && scale != "all" && scale != "broken") {
    throw std::invalid_argument("unknown gradcheck scale: " + scale);
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patch feature fitting normal estimation"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write a synthetic shape as .xyz/.normals/.manifest");
  s->add_option("--manifest", synth.manifest, "Shape manifest (key=value) instead of the flags below");
  s->add_option("--kind", synth.kind, "plane, sphere, cylinder, torus, box-edges or quadric");
  s->add_option("--count", synth.count, "Point count");
  s->add_option("--seed", synth.seed, "Root seed");
  s->add_option("--noise", synth.noise, "Noise sigma as a fraction of the bbox diagonal");
  s->add_option("--density", synth.density, "uniform, stripe or gradient");
  s->add_option("--radius", synth.radius);
  s->add_option("--height", synth.height);
  s->add_option("--major-radius", synth.major_radius);
  s->add_option("--minor-radius", synth.minor_radius);
  s->add_option("--half-extent", synth.half_extent);
  s->add_option("--coeffs", synth.coeffs, "Quadric c1,c2,c3,c4,c5");
  s->add_option("--name", synth.name, "Output file stem");
  s->add_option("--out-dir", synth.out_dir);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train the network on shape manifests");
  t->add_option("--config", train.config, "key=value run configuration");
  t->add_option("--set", train.sets, "Override one configuration key (key=value), repeatable");
  t->add_option("--train", train.train, "Training shape manifest, repeatable");
  t->add_flag("--paper", train.paper, "Start from the full-size defaults instead of the desk defaults");
  t->add_option("--epochs", train.epochs);
  t->add_option("--queries", train.queries, "Queries per shape per epoch");
  t->add_option("--batch-size", train.batch_size);
  t->add_option("--checkpoint-every", train.checkpoint_every, "Epochs between checkpoints (0 = end only)");
  t->add_option("--lr", train.lr);
  t->add_option("--milestones", train.milestones, "Comma-separated decay epochs, or none");
  t->add_option("--seed", train.seed);
  t->add_option("--out-dir", train.out_dir);

  EstimateArgs est;
  auto* e = app.add_subcommand("estimate", "Estimate a normal for every point of a cloud");
  e->add_option("--input", est.input, ".xyz file or shape manifest")->required();
  e->add_option("--checkpoint", est.checkpoint);
  e->add_option("--model-cfg", est.model_cfg, "Defaults to model.cfg beside the checkpoint");
  e->add_option("--estimator", est.estimator, "model, pca or jet");
  e->add_option("--k", est.k, "Neighbourhood size for pca/jet");
  e->add_option("--workers", est.workers);
  e->add_option("--output", est.output, "Normals file (default <out-dir>/<input stem>.normals)");
  e->add_option("--out-dir", est.out_dir);

  EvalArgs ev;
  auto* v = app.add_subcommand("eval", "RMSE and PGP of predicted against ground-truth normals");
  v->add_option("--pred", ev.pred, "Predicted normals, repeatable")->required();
  v->add_option("--gt", ev.gt, "Ground-truth normals, repeatable")->required();
  v->add_option("--agg", ev.agg, "pooled or per-shape");
  v->add_flag("--svg", ev.svg, "Also write pgp.svg");
  v->add_option("--out-dir", ev.out_dir);

  EvalArgs pgp;
  auto* p = app.add_subcommand("pgp", "PGP curve (pgp.csv and pgp.svg)");
  p->add_option("--pred", pgp.pred, "Predicted normals, repeatable")->required();
  p->add_option("--gt", pgp.gt, "Ground-truth normals, repeatable")->required();
  p->add_option("--out-dir", pgp.out_dir);

  BenchArgs bn;
  auto* b = app.add_subcommand("bench", "Time normal estimation (seconds per 100k points)");
  b->add_option("--estimator", bn.estimator, "model, pca or jet");
  b->add_option("--k", bn.k);
  b->add_option("--checkpoint", bn.checkpoint);
  b->add_option("--model-cfg", bn.model_cfg);
  b->add_option("--size", bn.size, "Cloud size");
  b->add_option("--reps", bn.reps, "Repetitions (median reported)");
  b->add_option("--queries", bn.queries, "Timed subset of points (0 = all)");
  b->add_option("--workers", bn.workers, "Threads for the multi-worker timing (0 = all cores)");
  b->add_option("--out-dir", bn.out_dir);

  std::string gc_scale = "all";
  int gc_seeds = 20;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  g->add_option("--scale", gc_scale, "ops, model, all, or broken (negative control)");
  g->add_option("--seeds", gc_seeds, "Random draws per primitive");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*s) return run_synth(synth);
    if (*t) return run_train_cmd(train);
    if (*e) return run_estimate(est);
    if (*v) return run_eval(ev);
    if (*p) return run_pgp(pgp);
    if (*b) return run_bench(bn);
    if (*g) return run_gradcheck(gc_scale, gc_seeds);
  } catch (const ParseError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
