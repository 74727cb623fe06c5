#include "pff/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "pff/errors.hpp"
#include "pff/gradcheck.hpp"
#include "pff/rng.hpp"

namespace pff {

namespace fs = std::filesystem;
using ad::Mat;
using ad::Var;

// ---- shapes ---------------------------------------------------------------------

PointCloud load_manifest(const KeyValueConfig& kv, const fs::path& base_dir) {
  auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  if (kv.contains("xyz")) {
    PointCloud cloud = load_cloud(resolve(kv.get("xyz")), kv.contains("normals") ? resolve(kv.get("normals")) : fs::path{});
    if (kv.contains("name")) cloud.name = kv.get("name");
    return cloud;
  }
  const ShapeSpec shape = ShapeSpec::from_kv(kv);
  const CorruptionSpec corruption = CorruptionSpec::from_kv(kv);
  PointCloud cloud = corrupt(synth_shape(shape), corruption);
  cloud.name = kv.get_or("name", to_string(shape.kind));
  return cloud;
}

PointCloud load_manifest(const fs::path& path) {
  return load_manifest(KeyValueConfig::load(path), path.parent_path());
}

std::string synth_to_files(const ShapeSpec& shape, const CorruptionSpec& corruption, const fs::path& out_dir,
                           const std::string& name) {
  const PointCloud cloud = corrupt(synth_shape(shape), corruption);
  fs::create_directories(out_dir);
  write_xyz(out_dir / (name + ".xyz"), cloud);
  write_normals(out_dir / (name + ".normals"), *cloud.normals);

  KeyValueConfig manifest = shape.to_kv();
  manifest.merge(corruption.to_kv());
  manifest.set("name", name);
  manifest.set("rng", std::string(CounterRng::kName));
  manifest.set("points_written", std::to_string(cloud.size()));
  manifest.save(out_dir / (name + ".manifest"));
  return name;
}

// ---- run config -------------------------------------------------------------------

RunConfig RunConfig::paper() {
  RunConfig c;
  c.model = ModelConfig{};
  c.epochs = 800;
  c.queries_per_shape = 1000;
  return c;
}

RunConfig RunConfig::desk() {
  RunConfig c;
  c.model = ModelConfig::desk();
  c.epochs = 50;
  c.queries_per_shape = 200;
  // Same relative position as 400/600 of 800.
  c.milestones = {25, 37};
  return c;
}

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  if (!(optimizer.lr > 0.0) || !std::isfinite(optimizer.lr)) throw ConfigError("learning rate must be > 0");
  if (!(lr_decay > 0.0) || lr_decay > 1.0) throw ConfigError("lr decay factor must lie in (0, 1]");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (queries_per_shape < 1) throw ConfigError("queries per shape must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint interval must be >= 0");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] < 1) throw ConfigError("milestones must be positive");
    if (i > 0 && milestones[i] <= milestones[i - 1]) throw ConfigError("milestones must ascend");
    if (epochs > 0 && milestones[i] >= epochs) {
      throw ConfigError("milestone " + std::to_string(milestones[i]) + " is not below epochs=" +
                        std::to_string(epochs) + " (use milestones=none to disable decay)");
    }
  }
}

namespace {

std::string join_ints(const std::vector<int>& v) {
  if (v.empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(item.substr(b, item.find_last_not_of(" \t") - b + 1));
  }
  return out;
}

std::vector<int> parse_ints(const std::string& s) {
  if (s == "none" || s.empty()) return {};
  std::vector<int> out;
  for (const auto& item : split_list(s)) {
    std::size_t used = 0;
    const int v = std::stoi(item, &used);
    if (used != item.size()) throw ConfigError("not an integer: " + item);
    out.push_back(v);
  }
  return out;
}

std::string join_paths(const std::vector<fs::path>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i].string();
  return s;
}

std::vector<fs::path> parse_paths(const std::string& s) {
  std::vector<fs::path> out;
  for (const auto& item : split_list(s)) out.emplace_back(item);
  return out;
}

}  // namespace

KeyValueConfig RunConfig::to_kv() const {
  KeyValueConfig kv = model.to_kv();
  kv.set("loss.lambda_query", format_double(loss.query));
  kv.set("loss.lambda_neighbors", format_double(loss.neighbors));
  kv.set("loss.lambda_weight", format_double(loss.weight));
  kv.set("optim.lr", format_double(optimizer.lr));
  kv.set("optim.beta1", format_double(optimizer.beta1));
  kv.set("optim.beta2", format_double(optimizer.beta2));
  kv.set("optim.eps", format_double(optimizer.eps));
  kv.set("optim.weight_decay", format_double(optimizer.weight_decay));
  kv.set("optim.lr_decay", format_double(lr_decay));
  kv.set("optim.milestones", join_ints(milestones));
  kv.set("train.epochs", std::to_string(epochs));
  kv.set("train.queries_per_shape", std::to_string(queries_per_shape));
  kv.set("train.batch_size", std::to_string(batch_size));
  kv.set("train.checkpoint_every", std::to_string(checkpoint_every));
  kv.set("train.seed", std::to_string(seed));
  kv.set("train.workers", std::to_string(workers));
  kv.set("data.train", join_paths(train_manifests));
  kv.set("data.test", join_paths(test_manifests));
  kv.set("out_dir", out_dir.string());
  return kv;
}

RunConfig RunConfig::from_kv(const KeyValueConfig& kv, RunConfig c) {
  const RunConfig defaults = c;
  const KeyValueConfig known = defaults.to_kv();
  for (const auto& [key, value] : kv.entries()) {
    if (!known.contains(key)) throw ConfigError("unknown configuration key: " + key);
  }
  c.model = ModelConfig::from_kv(kv, c.model);
  c.loss.query = kv.get_double("loss.lambda_query", c.loss.query);
  c.loss.neighbors = kv.get_double("loss.lambda_neighbors", c.loss.neighbors);
  c.loss.weight = kv.get_double("loss.lambda_weight", c.loss.weight);
  c.optimizer.lr = kv.get_double("optim.lr", c.optimizer.lr);
  c.optimizer.beta1 = kv.get_double("optim.beta1", c.optimizer.beta1);
  c.optimizer.beta2 = kv.get_double("optim.beta2", c.optimizer.beta2);
  c.optimizer.eps = kv.get_double("optim.eps", c.optimizer.eps);
  c.optimizer.weight_decay = kv.get_double("optim.weight_decay", c.optimizer.weight_decay);
  c.lr_decay = kv.get_double("optim.lr_decay", c.lr_decay);
  if (kv.contains("optim.milestones")) c.milestones = parse_ints(kv.get("optim.milestones"));
  c.epochs = static_cast<int>(kv.get_int("train.epochs", c.epochs));
  c.queries_per_shape = static_cast<int>(kv.get_int("train.queries_per_shape", c.queries_per_shape));
  c.batch_size = static_cast<int>(kv.get_int("train.batch_size", c.batch_size));
  c.checkpoint_every = static_cast<int>(kv.get_int("train.checkpoint_every", c.checkpoint_every));
  c.seed = kv.get_u64("train.seed", c.seed);
  c.workers = static_cast<int>(kv.get_int("train.workers", c.workers));
  if (kv.contains("data.train")) c.train_manifests = parse_paths(kv.get("data.train"));
  if (kv.contains("data.test")) c.test_manifests = parse_paths(kv.get("data.test"));
  if (kv.contains("out_dir")) c.out_dir = kv.get("out_dir");
  return c;
}

// ---- training ---------------------------------------------------------------------

namespace {

// Keeps freed multi-megabyte graph buffers in the heap instead of returning them to the OS.
void retain_heap_memory() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
  });
#endif
}

}  // namespace

TrainResult train_model(const RunConfig& cfg, const std::vector<PointCloud>& shapes, const EpochHook& hook) {
  cfg.validate();
  if (shapes.empty() && cfg.epochs > 0) throw ConfigError("no training shapes");
  retain_heap_memory();
  std::vector<std::unique_ptr<KdTree>> indices;
  for (const auto& s : shapes) {
    if (!s.normals) throw ConfigError("training shape '" + s.name + "' has no ground-truth normals");
    indices.push_back(build_index(s));
  }

  TrainResult result{init_params(cfg.model, derive_seed(cfg.seed, "init")), {}};
  ModelParams& params = result.params;
  AdamW opt(cfg.optimizer);
  const LrSchedule sched = cfg.schedule();
  const auto n = static_cast<std::size_t>(cfg.model.patch_size);

  struct Item {
    std::size_t shape, query;
  };
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = sched.at(epoch);
    opt.set_lr(lr);
    const std::uint64_t epoch_seed = derive_seed(cfg.seed, "epoch", static_cast<std::uint64_t>(epoch));

    std::vector<Item> items;
    for (std::size_t s = 0; s < shapes.size(); ++s) {
      for (std::size_t q : sample_queries(shapes[s].size(), static_cast<std::size_t>(cfg.queries_per_shape),
                                          derive_seed(epoch_seed, "queries", s))) {
        items.push_back({s, q});
      }
    }
    CounterRng shuffle(epoch_seed, fnv1a64("shuffle"));
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[shuffle.below(i)]);

    auto where = [&](std::size_t i) {
      const Item& it = items[i];
      return "epoch " + std::to_string(epoch) + ", shape '" + shapes[it.shape].name + "' query " +
             std::to_string(it.query) + " (patch seed " + std::to_string(epoch_seed) + ":" + std::to_string(i) + ")";
    };

    double loss_sum = 0.0;
    params.zero_grad();
    const auto batch = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t begin = 0; begin < items.size(); begin += batch) {
      const std::size_t end = std::min(items.size(), begin + batch);
      const double inv = 1.0 / static_cast<double>(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        const PointCloud& cloud = shapes[items[i].shape];
        const Patch patch = extract_patch(cloud, *indices[items[i].shape], items[i].query, n);
        const Prediction pred = model_forward(patch, params, cfg.model);
        const LossTerms loss = total_loss(pred, patch, *cloud.normals, cfg.loss);
        const double value = loss.total.scalar();
        if (!std::isfinite(value)) throw NumericError("non-finite loss at " + where(i));
        ad::backward(ad::scale(loss.total, inv));
        loss_sum += value;
      }
      try {
        opt.step(params);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " in the batch ending at " + where(end - 1));
      }
      params.zero_grad();
    }
    EpochLog log{epoch, items.empty() ? 0.0 : loss_sum / static_cast<double>(items.size()), lr};
    result.log.push_back(log);
    if (hook) hook(log, params);
  }
  return result;
}

void write_loss_csv(const fs::path& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,mean_loss,lr\n";
  for (const auto& e : log) out << e.epoch << ',' << format_double(e.mean_loss) << ',' << format_double(e.lr) << '\n';
}

TrainResult run_train(const RunConfig& cfg, const EpochHook& on_epoch) {
  cfg.validate();
  std::vector<PointCloud> shapes;
  for (const auto& m : cfg.train_manifests) shapes.push_back(load_manifest(m));
  fs::create_directories(cfg.out_dir);
  cfg.to_kv().save(cfg.out_dir / "model.cfg");

  std::vector<EpochLog> log;
  const fs::path ckpt = cfg.out_dir / "model.ckpt";
  TrainResult result = train_model(cfg, shapes, [&](const EpochLog& e, const ModelParams& params) {
    log.push_back(e);
    write_loss_csv(cfg.out_dir / "loss.csv", log);
    if (cfg.checkpoint_every > 0 && (e.epoch + 1) % cfg.checkpoint_every == 0) save_checkpoint(ckpt, params);
    if (on_epoch) on_epoch(e, params);
  });
  write_loss_csv(cfg.out_dir / "loss.csv", result.log);
  save_checkpoint(ckpt, result.params);
  return result;
}

LoadedModel load_model(const fs::path& checkpoint, const fs::path& cfg_path) {
  const fs::path cfg_file = cfg_path.empty() ? checkpoint.parent_path() / "model.cfg" : cfg_path;
  if (!fs::exists(cfg_file)) throw ConfigError("model config not found: " + cfg_file.string());
  LoadedModel m;
  m.config = ModelConfig::from_kv(KeyValueConfig::load(cfg_file), ModelConfig::desk());
  m.config.validate();
  m.params = load_checkpoint(checkpoint);
  check_params(m.config, m.params);
  return m;
}

// ---- inference --------------------------------------------------------------------

EstimatorKind parse_estimator(const std::string& s) {
  if (s == "model") return EstimatorKind::model;
  if (s == "pca") return EstimatorKind::pca;
  if (s == "jet") return EstimatorKind::jet;
  throw std::invalid_argument("unknown estimator: " + s + " (expected model, pca or jet)");
}

namespace {

template <typename Fn>
void parallel_for(std::size_t count, int workers, Fn&& fn) {
  const auto w = static_cast<std::size_t>(std::max(1, workers));
  if (w == 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(w);
  for (std::size_t t = 0; t < w; ++t) {
    threads.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < count; i += w) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : threads) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

std::vector<Vec3> estimate_normals(const PointCloud& cloud, const EstimateOptions& opt, const LoadedModel* model,
                                   const std::vector<std::size_t>& queries) {
  if (cloud.points.empty()) throw std::invalid_argument("estimate_normals: empty cloud");
  if (opt.kind == EstimatorKind::model && model == nullptr) throw ConfigError("model estimator needs a checkpoint");
  retain_heap_memory();
  const auto index = build_index(cloud);
  std::vector<std::size_t> q = queries;
  if (q.empty()) {
    q.resize(cloud.size());
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = i;
  }
  std::vector<Vec3> out(q.size());
  parallel_for(q.size(), opt.workers, [&](std::size_t i) {
    switch (opt.kind) {
      case EstimatorKind::model: {
        const Patch patch = extract_patch(cloud, *index, q[i], static_cast<std::size_t>(model->config.patch_size));
        out[i] = model_forward(patch, model->params, model->config).normal();
        break;
      }
      case EstimatorKind::pca:
        out[i] = classical_normal(cloud, *index, q[i], Estimator::pca, static_cast<std::size_t>(opt.k));
        break;
      case EstimatorKind::jet:
        out[i] = classical_normal(cloud, *index, q[i], Estimator::jet, static_cast<std::size_t>(opt.k));
        break;
    }
  });
  return out;
}

// ---- evaluation -------------------------------------------------------------------

Aggregation parse_aggregation(const std::string& s) {
  if (s == "pooled") return Aggregation::pooled;
  if (s == "per-shape") return Aggregation::per_shape;
  throw std::invalid_argument("unknown aggregation: " + s + " (expected pooled or per-shape)");
}

Evaluation evaluate_files(const std::vector<std::pair<fs::path, fs::path>>& pairs,
                          std::span<const double> thresholds_deg) {
  if (pairs.empty()) throw std::invalid_argument("evaluate: no prediction files");
  Evaluation ev;
  std::vector<double> all;
  for (const auto& [pred_path, gt_path] : pairs) {
    const auto pred = read_normals(pred_path);
    const auto gt = read_normals(gt_path);
    if (pred.size() != gt.size()) {
      throw std::invalid_argument("length mismatch: " + pred_path.string() + " has " + std::to_string(pred.size()) +
                                  " normals, " + gt_path.string() + " has " + std::to_string(gt.size()));
    }
    ShapeScore score{pred_path.stem().string(), make_report(pred, gt, thresholds_deg)};
    all.insert(all.end(), score.report.errors_deg.begin(), score.report.errors_deg.end());
    ev.mean_shape_rmse += score.report.rmse_deg;
    ev.shapes.push_back(std::move(score));
  }
  ev.mean_shape_rmse /= static_cast<double>(ev.shapes.size());
  ev.pooled.errors_deg = all;
  ev.pooled.rmse_deg = rmse(all);
  ev.pooled.pgp = pgp_curve(all, thresholds_deg);
  return ev;
}

void write_evaluation(const fs::path& out_dir, const Evaluation& ev, Aggregation agg, bool svg) {
  fs::create_directories(out_dir);
  EvalReport summary;
  if (agg == Aggregation::pooled) {
    summary = ev.pooled;
  } else {
    summary.rmse_deg = ev.mean_shape_rmse;
    summary.pgp = ev.shapes.front().report.pgp;
    for (auto& p : summary.pgp) p.fraction = 0.0;
    for (const auto& s : ev.shapes) {
      for (std::size_t i = 0; i < summary.pgp.size(); ++i) summary.pgp[i].fraction += s.report.pgp[i].fraction;
    }
    for (auto& p : summary.pgp) p.fraction /= static_cast<double>(ev.shapes.size());
  }
  write_pgp_csv(out_dir / "pgp.csv", summary);
  if (svg) write_pgp_svg(out_dir / "pgp.svg", summary.pgp);

  KeyValueConfig report;
  report.set("aggregation", agg == Aggregation::pooled ? "pooled" : "per-shape");
  report.set("shapes", std::to_string(ev.shapes.size()));
  report.set("points", std::to_string(ev.pooled.errors_deg.size()));
  report.set("rmse_deg", format_double(summary.rmse_deg));
  report.set("pooled_rmse_deg", format_double(ev.pooled.rmse_deg));
  report.set("mean_shape_rmse_deg", format_double(ev.mean_shape_rmse));
  for (const auto& p : summary.pgp) {
    const double t = p.threshold_deg;
    if (t == std::floor(t) && (t == 5 || t == 10 || t == 20 || t == 30)) {
      report.set("pgp" + std::to_string(static_cast<int>(t)), format_double(p.fraction));
    }
  }
  for (const auto& s : ev.shapes) report.set("shape." + s.name + ".rmse_deg", format_double(s.report.rmse_deg));
  report.save(out_dir / "report.txt");
}

// ---- benchmark --------------------------------------------------------------------

std::string machine_descriptor() {
  std::string cpu = "unknown cpu";
  std::ifstream info("/proc/cpuinfo");
  std::string line;
  while (std::getline(info, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) cpu = line.substr(line.find_first_not_of(' ', colon + 1));
      break;
    }
  }
  std::string desc = cpu + "; hardware threads " + std::to_string(std::thread::hardware_concurrency());
#ifdef __VERSION__
  desc += "; compiler " + std::string(__VERSION__);
#endif
  return desc;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

BenchReport bench(const EstimateOptions& opt, const LoadedModel* model, std::size_t cloud_size, int repetitions,
                  std::size_t queries, int workers) {
  if (repetitions < 1) throw std::invalid_argument("bench: repetitions must be >= 1");
  if (cloud_size < 1) throw std::invalid_argument("bench: cloud size must be >= 1");
  ShapeSpec spec;
  spec.kind = ShapeKind::sphere;
  spec.count = cloud_size;
  spec.seed = 1;
  const PointCloud cloud = synth_shape(spec);
  std::vector<std::size_t> q;
  if (queries > 0 && queries < cloud_size) q = sample_queries(cloud_size, queries, 2);
  const double work = static_cast<double>(q.empty() ? cloud_size : q.size());

  auto time_with = [&](int w) {
    EstimateOptions o = opt;
    o.workers = w;
    std::vector<double> secs;
    for (int r = 0; r < repetitions; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto normals = estimate_normals(cloud, o, model, q);
      secs.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return median(secs) * 100000.0 / work;
  };

  BenchReport r;
  r.target = opt.kind == EstimatorKind::model ? "model" : (opt.kind == EstimatorKind::pca ? "pca" : "jet");
  if (opt.kind != EstimatorKind::model) r.target += "-k" + std::to_string(opt.k);
  r.cloud_size = cloud_size;
  r.queries = static_cast<std::size_t>(work);
  r.repetitions = repetitions;
  r.workers = workers;
  r.single_seconds_per_100k = time_with(1);
  r.multi_seconds_per_100k = workers > 1 ? time_with(workers) : r.single_seconds_per_100k;
  r.machine = machine_descriptor();
  return r;
}

void write_bench_report(const fs::path& path, const BenchReport& r) {
  KeyValueConfig kv;
  kv.set("target", r.target);
  kv.set("cloud_size", std::to_string(r.cloud_size));
  kv.set("timed_queries", std::to_string(r.queries));
  kv.set("repetitions", std::to_string(r.repetitions));
  kv.set("workers", std::to_string(r.workers));
  kv.set("single_seconds_per_100k", format_double(r.single_seconds_per_100k));
  kv.set("multi_seconds_per_100k", format_double(r.multi_seconds_per_100k));
  kv.set("machine", r.machine);
  kv.save(path);
}

// ---- gradient checks ----------------------------------------------------------------

namespace {

struct OpCase {
  const char* name;
  std::vector<std::pair<int, int>> inputs;  // shapes of the learnable inputs
  std::function<Var(const std::vector<Var>&, CounterRng&)> build;
};

Mat random_mat(int r, int c, CounterRng& rng, double lo = -1.0, double hi = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

std::vector<OpCase> op_cases() {
  using V = std::vector<Var>;
  auto cst = [](int r, int c, CounterRng& rng) { return random_mat(r, c, rng); };
  return {
      {"matmul", {{3, 4}, {4, 2}}, [](const V& v, CounterRng&) { return ad::matmul(v[0], v[1]); }},
      {"affine", {{5, 3}, {3, 4}, {1, 4}}, [](const V& v, CounterRng&) { return ad::affine(v[0], v[1], v[2]); }},
      {"affine_concat", {{5, 2}, {5, 3}, {5, 1}, {6, 4}, {1, 4}},
       [](const V& v, CounterRng&) {
         const Var parts[] = {v[0], v[1], v[2]};
         return ad::affine_concat(parts, v[3], v[4]);
       }},
      {"add", {{3, 3}, {3, 3}}, [](const V& v, CounterRng&) { return ad::add(v[0], v[1]); }},
      {"sub", {{3, 3}, {3, 3}}, [](const V& v, CounterRng&) { return ad::sub(v[0], v[1]); }},
      {"mul", {{3, 4}, {3, 4}}, [](const V& v, CounterRng&) { return ad::mul(v[0], v[1]); }},
      {"scale", {{3, 2}}, [](const V& v, CounterRng&) { return ad::scale(v[0], -1.7); }},
      {"square", {{4, 2}}, [](const V& v, CounterRng&) { return ad::square(v[0]); }},
      {"leaky_relu", {{6, 3}}, [](const V& v, CounterRng&) { return ad::leaky_relu(v[0]); }},
      {"sigmoid", {{4, 3}}, [](const V& v, CounterRng&) { return ad::sigmoid(v[0]); }},
      {"exp", {{4, 3}}, [](const V& v, CounterRng&) { return ad::exp(v[0]); }},
      {"minimum", {{4, 3}, {4, 3}}, [](const V& v, CounterRng&) { return ad::minimum(v[0], v[1]); }},
      {"max_rows", {{7, 3}}, [](const V& v, CounterRng&) { return ad::max_rows(v[0]).out; }},
      {"group_max_rows", {{8, 3}}, [](const V& v, CounterRng&) { return ad::group_max_rows(v[0], 4); }},
      {"concat_cols", {{3, 2}, {3, 4}}, [](const V& v, CounterRng&) { return ad::concat_cols(v[0], v[1]); }},
      {"slice_cols", {{3, 5}}, [](const V& v, CounterRng&) { return ad::slice_cols(v[0], 1, 3); }},
      {"prefix_rows", {{6, 3}}, [](const V& v, CounterRng&) { return ad::prefix_rows(v[0], 4); }},
      {"rowscale", {{5, 3}, {5, 1}}, [](const V& v, CounterRng&) { return ad::rowscale(v[0], v[1]); }},
      {"broadcast_row", {{1, 3}}, [](const V& v, CounterRng&) { return ad::broadcast_row(v[0], 4); }},
      {"sum_all", {{3, 4}}, [](const V& v, CounterRng&) { return ad::sum_all(v[0]); }},
      {"mean_all", {{3, 4}}, [](const V& v, CounterRng&) { return ad::mean_all(v[0]); }},
      {"softmax_rows", {{4, 5}}, [](const V& v, CounterRng&) { return ad::softmax_rows(v[0]); }},
      {"softmax_cols", {{4, 5}}, [](const V& v, CounterRng&) { return ad::softmax_cols(v[0]); }},
      {"row_norm", {{5, 3}}, [](const V& v, CounterRng&) { return ad::row_norm(v[0]); }},
      {"row_sqnorm", {{5, 3}}, [](const V& v, CounterRng&) { return ad::row_sqnorm(v[0]); }},
      {"normalize_rows", {{5, 3}}, [](const V& v, CounterRng&) { return ad::normalize_rows(v[0]); }},
      {"cross_rows", {{5, 3}}, [cst](const V& v, CounterRng& r) { return ad::cross_rows(v[0], cst(5, 3, r)); }},
      {"dot_rows", {{5, 3}}, [cst](const V& v, CounterRng& r) { return ad::dot_rows(v[0], cst(5, 3, r)); }},
      {"standardize_cols", {{6, 3}}, [](const V& v, CounterRng&) { return ad::standardize_cols(v[0]); }},
      {"distance_weights", {{1, 1}, {1, 1}},
       [](const V& v, CounterRng& r) {
         Eigen::VectorXd radii(6);
         for (int i = 0; i < 6; ++i) radii[i] = r.uniform(0.0, 1.0);
         return distance_weights(radii, v[0], v[1], WeightVariant::sigmoid);
       }},
      {"distance_weights_gaussian", {{1, 1}, {1, 1}},
       [](const V& v, CounterRng& r) {
         Eigen::VectorXd radii(6);
         for (int i = 0; i < 6; ++i) radii[i] = r.uniform(0.0, 1.0);
         return distance_weights(radii, v[0], v[1], WeightVariant::gaussian);
       }},
  };
}

// sum(out * R) with a fixed random R gives every output entry its own weight.
GradCheckCase check_case(const std::string& name, const std::vector<std::pair<int, int>>& shapes,
                         const std::function<Var(const std::vector<Var>&, CounterRng&)>& build, std::uint64_t seed,
                         double tolerance) {
  CounterRng init(seed, fnv1a64("gradcheck/" + name));
  ModelParams params;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    params.add("in" + std::to_string(i), random_mat(shapes[i].first, shapes[i].second, init));
  }
  const std::uint64_t graph_seed = derive_seed(seed, name);
  auto graph = [&](const ModelParams& p) {
    std::vector<Var> inputs;
    for (std::size_t i = 0; i < shapes.size(); ++i) inputs.push_back(p.at("in" + std::to_string(i)));
    CounterRng rng(graph_seed, 1);
    const Var out = build(inputs, rng);
    const Var w = ad::constant(random_mat(static_cast<int>(out.rows()), static_cast<int>(out.cols()), rng));
    return ad::sum_all(ad::mul(out, w));
  };
  const GradCheckReport rep = grad_check(graph, params, tolerance, 1e-6);
  return {name, rep.max_rel_error, rep.passed};
}

}  // namespace

std::vector<GradCheckCase> gradcheck_ops(int seeds, double tolerance) {
  std::vector<GradCheckCase> out;
  for (const auto& c : op_cases()) {
    GradCheckCase agg{c.name, 0.0, true};
    for (int s = 0; s < seeds; ++s) {
      const GradCheckCase r = check_case(c.name, c.inputs, c.build, static_cast<std::uint64_t>(s), tolerance);
      agg.max_rel_error = std::max(agg.max_rel_error, r.max_rel_error);
      agg.passed = agg.passed && r.passed;
    }
    out.push_back(agg);
  }
  return out;
}

GradCheckCase gradcheck_broken_op(std::uint64_t seed, double tolerance) {
  auto broken_square = [](const std::vector<Var>& v, CounterRng&) {
    const Mat x = v[0].value();
    return ad::make_op("broken_square", x.array().square().matrix(), {v[0]}, [](ad::Node& self) {
      const auto& p = self.parents[0];
      if (p->requires_grad) p->ensure_grad() += (-2.0 * p->value.array() * self.grad.array()).matrix();
    });
  };
  return check_case("broken_square", {{4, 3}}, broken_square, seed, tolerance);
}

ModelConfig gradcheck_model_config() {
  ModelConfig cfg;
  cfg.patch_size = 64;
  cfg.channels = 16;
  return cfg;
}

GradCheckCase gradcheck_model(const ModelConfig& cfg, std::uint64_t seed, double tolerance) {
  ShapeSpec shape;
  shape.kind = ShapeKind::torus;
  shape.count = static_cast<std::size_t>(cfg.patch_size) * 8;
  shape.seed = seed;
  const PointCloud cloud = corrupt(synth_shape(shape), CorruptionSpec{kNoiseMedium, DensityPattern::uniform, seed});
  const auto index = build_index(cloud);
  const Patch patch = extract_patch(cloud, *index, seed % cloud.size(), static_cast<std::size_t>(cfg.patch_size));

  ModelParams params = init_params(cfg, seed);
  // Zero biases leave the query row (the local origin) on activation kinks.
  CounterRng rng(seed, fnv1a64("gradcheck/bias"));
  for (auto& [name, var] : params) {
    if (name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0) {
      Mat& v = var.mutable_value();
      for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = rng.uniform(-0.1, 0.1);
    }
  }
  const LossWeights weights;
  auto graph = [&](const ModelParams& p) {
    return total_loss(model_forward(patch, p, cfg), patch, *cloud.normals, weights).total;
  };
  const GradCheckReport rep = grad_check(graph, params, tolerance, 1e-6);
  return {"model N=" + std::to_string(cfg.patch_size) + " c=" + std::to_string(cfg.channels), rep.max_rel_error,
          rep.passed};
}

}  // namespace pff
