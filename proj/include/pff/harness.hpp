#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "pff/baselines.hpp"
#include "pff/data.hpp"
#include "pff/kv_config.hpp"
#include "pff/losses.hpp"
#include "pff/metrics.hpp"
#include "pff/model.hpp"
#include "pff/optim.hpp"
#include "pff/params.hpp"

namespace pff {

// ---- shapes ---------------------------------------------------------------------

/// A shape manifest is key=value text. Either it names files
/// (`xyz=...`, optional `normals=...`, relative to the manifest) or it
/// describes a synthetic shape plus corruption (ShapeSpec and CorruptionSpec keys).
PointCloud load_manifest(const std::filesystem::path& path);
PointCloud load_manifest(const KeyValueConfig& kv, const std::filesystem::path& base_dir);

/// Synthesises the described cloud into `<out_dir>/<name>.xyz`, `.normals` and
/// `.manifest`; returns the stem used.
std::string synth_to_files(const ShapeSpec& shape, const CorruptionSpec& corruption,
                           const std::filesystem::path& out_dir, const std::string& name);

// ---- training -------------------------------------------------------------------

struct RunConfig {
  ModelConfig model = ModelConfig::desk();
  LossWeights loss;
  AdamWHyper optimizer;
  double lr_decay = 0.2;
  std::vector<int> milestones = {400, 600};
  int epochs = 50;
  int queries_per_shape = 200;
  int batch_size = 32;        ///< patches per optimizer step (sequential accumulation)
  int checkpoint_every = 0;   ///< epochs; 0 writes only the final checkpoint
  std::uint64_t seed = 0;
  int workers = 1;
  std::vector<std::filesystem::path> train_manifests;
  std::vector<std::filesystem::path> test_manifests;
  std::filesystem::path out_dir = "out";

  /// 800 epochs, 1000 queries per shape, N=800, c=128.
  static RunConfig paper();
  /// 50 epochs, 200 queries per shape, N=256, c=64.
  static RunConfig desk();

  /// Throws ConfigError.
  void validate() const;
  LrSchedule schedule() const { return {optimizer.lr, lr_decay, milestones}; }

  KeyValueConfig to_kv() const;
  /// Applies the recognised keys of `kv` over `base`; unknown keys raise ConfigError.
  static RunConfig from_kv(const KeyValueConfig& kv, RunConfig base);
};

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochLog> log;
};

/// Called after each epoch with the current parameters.
using EpochHook = std::function<void(const EpochLog&, const ModelParams&)>;

/// Trains on in-memory clouds (each needs ground-truth normals). Every random
/// choice derives from cfg.seed. Throws NumericError on a non-finite loss or
/// gradient, naming the epoch, shape, query index and the epoch's patch seed.
TrainResult train_model(const RunConfig& cfg, const std::vector<PointCloud>& shapes,
                        const EpochHook& hook = {});

/// Loads cfg.train_manifests, trains and writes `loss.csv`, `model.ckpt` and
/// `model.cfg` (plus `model.epoch<k>.ckpt` every cfg.checkpoint_every epochs).
TrainResult run_train(const RunConfig& cfg, const EpochHook& on_epoch = {});

void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochLog>& log);

/// Reads `model.cfg` beside the checkpoint (or `cfg_path` when given) and
/// validates the checkpoint against it.
struct LoadedModel {
  ModelConfig config;
  ModelParams params;
};
LoadedModel load_model(const std::filesystem::path& checkpoint, const std::filesystem::path& cfg_path = {});

// ---- inference --------------------------------------------------------------------

enum class EstimatorKind { model, pca, jet };
EstimatorKind parse_estimator(const std::string& s);

struct EstimateOptions {
  EstimatorKind kind = EstimatorKind::model;
  int k = 16;  ///< classical estimators
  int workers = 1;
};

/// Unit normals at `queries` (every point when empty). Deterministic for any
/// worker count. `model` is required for EstimatorKind::model.
std::vector<Vec3> estimate_normals(const PointCloud& cloud, const EstimateOptions& opt,
                                   const LoadedModel* model = nullptr,
                                   const std::vector<std::size_t>& queries = {});

// ---- evaluation -------------------------------------------------------------------

enum class Aggregation { pooled, per_shape };
Aggregation parse_aggregation(const std::string& s);

struct ShapeScore {
  std::string name;
  EvalReport report;
};

struct Evaluation {
  std::vector<ShapeScore> shapes;
  EvalReport pooled;        ///< every error in one list
  double mean_shape_rmse = 0.0;
};

/// Each pair: (predicted normals file, ground-truth normals file).
Evaluation evaluate_files(const std::vector<std::pair<std::filesystem::path, std::filesystem::path>>& pairs,
                          std::span<const double> thresholds_deg);

/// `report.txt`, `pgp.csv` and optionally `pgp.svg`. With per-shape
/// aggregation the curve is the mean of the per-shape curves.
void write_evaluation(const std::filesystem::path& out_dir, const Evaluation& ev, Aggregation agg, bool svg);

// ---- benchmark --------------------------------------------------------------------

struct BenchReport {
  std::string target;
  std::size_t cloud_size = 0;
  std::size_t queries = 0;
  int repetitions = 0;
  int workers = 1;
  double single_seconds_per_100k = 0.0;  ///< median
  double multi_seconds_per_100k = 0.0;   ///< median, `workers` threads
  std::string machine;
};

std::string machine_descriptor();

/// Times normal estimation on a synthetic sphere of `cloud_size` points.
/// `queries` (0 = all points) bounds the work for slow targets; times are
/// scaled to seconds per 100k points.
BenchReport bench(const EstimateOptions& opt, const LoadedModel* model, std::size_t cloud_size,
                  int repetitions, std::size_t queries, int workers);
void write_bench_report(const std::filesystem::path& path, const BenchReport& r);

// ---- gradient checks ----------------------------------------------------------------

struct GradCheckCase {
  std::string name;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Every autodiff primitive on random inputs over `seeds` seeds.
std::vector<GradCheckCase> gradcheck_ops(int seeds = 20, double tolerance = 1e-5);
/// The downsized network with the total loss (N=64, c=16 by default).
GradCheckCase gradcheck_model(const ModelConfig& cfg, std::uint64_t seed, double tolerance = 1e-3);
/// A custom op whose backward has the wrong sign; must be reported as a failure.
GradCheckCase gradcheck_broken_op(std::uint64_t seed, double tolerance = 1e-5);

/// Downsized configuration for model-level checks.
ModelConfig gradcheck_model_config();

}  // namespace pff
