#pragma once

// Patch feature fitting network: per-point features, multi-scale aggregation
// blocks over a distance-sorted patch, cross-scale compensation and the
// weighted-maxpool normal head. All stages read their weights from a
// ModelParams by stable path names (see describe_parameters).

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pff/autodiff.hpp"
#include "pff/geometry.hpp"
#include "pff/kv_config.hpp"
#include "pff/params.hpp"

namespace pff {

enum class Compensation { attention, softmax1, softmax2, concat, add, none };
enum class WeightVariant { sigmoid, gaussian };

std::string to_string(Compensation c);
std::string to_string(WeightVariant w);
Compensation parse_compensation(const std::string& s);
WeightVariant parse_weight_variant(const std::string& s);

/// Retained row counts N_0 > N_1 > ... > N_L with N_s = N / b^s.
struct ScaleSchedule {
  std::vector<int> sizes;
};

struct ModelConfig {
  int patch_size = 800;  ///< N
  int scales = 2;        ///< L
  int divisor = 2;       ///< b
  int knn = 16;          ///< n_k, graph-conv fan-in
  int channels = 128;    ///< c
  int dense_layers = 3;  ///< 0 selects the PointNet-like per-point branch

  bool use_weight_w = true;
  WeightVariant weight_variant = WeightVariant::sigmoid;
  bool use_f1 = true;
  bool use_f2 = true;
  bool f2_as_f1 = false;  ///< refinement stage built from F1 blocks
  Compensation compensation = Compensation::attention;
  bool feature_standardization = false;
  /// Rotate each patch into its principal-axis frame before the network and
  /// rotate the predicted normals back.
  bool align_frame = true;

  /// Desk-scale defaults: N=256, c=64.
  static ModelConfig desk();

  /// Throws ConfigError.
  void validate() const;
  ScaleSchedule schedule() const;
  /// Row count reaching the normal head.
  int output_rows() const;

  KeyValueConfig to_kv() const;
  /// Reads the `model.*` keys of `kv` over `base`.
  static ModelConfig from_kv(const KeyValueConfig& kv);
  static ModelConfig from_kv(const KeyValueConfig& kv, ModelConfig base);
};

/// Network inputs derived from one patch.
struct PatchInput {
  ad::Mat points;          ///< N x 3, patch-local coordinates
  Eigen::VectorXd radii;   ///< N distances to the query (non-decreasing)
  std::vector<int> neighbors;  ///< N * knn patch rows; row-major per point, self first
  int knn = 0;
  /// Network frame -> patch frame; identity unless the config aligns frames.
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
};

/// Throws std::invalid_argument when the patch size differs from the config or
/// the rows are not sorted by distance.
PatchInput prepare_patch(const Patch& patch, const ModelConfig& cfg);

struct Prediction {
  ad::Var query_normal;      ///< 1 x 3, unit, patch frame
  ad::Var neighbor_normals;  ///< N_o x 3, unit rows, patch frame
  ad::Var tau;               ///< N_o x 1, in (0, 1)
  std::vector<int> stage_rows;  ///< rows after features, each F1/compensation step, each refinement

  Vec3 normal() const;
};

struct ParamShape {
  enum class Init { glorot, zero, one };
  std::string name;
  int rows = 0;
  int cols = 0;
  Init init = Init::glorot;
};

/// Every learnable array the configured network reads.
std::vector<ParamShape> describe_parameters(const ModelConfig& cfg);
/// Fresh parameters: Glorot weights, zero biases, a = b = 1.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);
/// Throws ConfigError unless `params` holds exactly the configured names and shapes.
void check_params(const ModelConfig& cfg, const ModelParams& params);

// ---- stages -----------------------------------------------------------------

/// Point-wise MLP embedding fused with a max-pooled dense graph convolution
/// over each point's n_k nearest patch neighbours. [N x c], patch row order.
ad::Var per_point_features(const PatchInput& in, const ModelParams& params, const ModelConfig& cfg);

/// w_j = d_j / sum(d), d_i = sigmoid(a - b * r_i) (or exp(-b r_i^2) for the
/// gaussian variant). [n x 1] summing to one.
ad::Var distance_weights(const Eigen::VectorXd& radii, const ad::Var& a, const ad::Var& b,
                         WeightVariant variant = WeightVariant::sigmoid);

/// y_i = alpha(beta(MAX_j gamma(w_j x_j)), x_i) for the first `out_rows` rows.
/// out_rows == rows gives the size-preserving variant, fewer the reducing one.
ad::Var layer_p(const ad::Var& x, const PatchInput& in, const ModelParams& params,
                const ModelConfig& cfg, const std::string& prefix, int out_rows);

/// [P1(x)]_{out_rows} + P2(P1(x)).
ad::Var block_f1(const ad::Var& x, const PatchInput& in, const ModelParams& params,
                 const ModelConfig& cfg, const std::string& prefix, int out_rows);

/// P1(x) + P1'(P1(x)), row count preserved.
ad::Var block_f2(const ad::Var& x, const PatchInput& in, const ModelParams& params,
                 const ModelConfig& cfg, const std::string& prefix);

/// Fuses pre-block features `x_pre` (first rows of y's count are used) into
/// post-block features `y`.
ad::Var cross_scale_compensation(const ad::Var& x_pre, const ad::Var& y, const PatchInput& in,
                                 const ModelParams& params, const ModelConfig& cfg,
                                 const std::string& prefix);

Prediction predict_normal(const ad::Var& x_o, const PatchInput& in, const ModelParams& params,
                          const ModelConfig& cfg);

Prediction model_forward(const PatchInput& in, const ModelParams& params, const ModelConfig& cfg);
Prediction model_forward(const Patch& patch, const ModelParams& params, const ModelConfig& cfg);

/// Autodiff counterpart of take_nearest_prefix.
ad::Var take_nearest_prefix(const ad::Var& features, int m);

}  // namespace pff
