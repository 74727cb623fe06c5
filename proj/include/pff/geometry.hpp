#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "pff/errors.hpp"

namespace pff {

using Vec3 = Eigen::Vector3d;

/// A whole shape: positions plus optional ground-truth normals.
struct PointCloud {
  std::vector<Vec3> points;
  std::optional<std::vector<Vec3>> normals;
  std::string name;

  std::size_t size() const { return points.size(); }
  bool has_normals() const { return normals.has_value(); }

  /// Throws std::invalid_argument when empty, non-finite, normals of the wrong
  /// count, or normals farther than 1e-6 from unit length.
  void validate() const;
};

struct Neighbors {
  std::vector<std::size_t> indices;
  std::vector<double> distances;
};

/// Balanced kd-tree over a point set. Immutable after construction, so
/// concurrent queries are safe. The tree copies the points it indexes.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points, std::size_t leaf_size = 8);
  explicit KdTree(const PointCloud& cloud) : KdTree(std::span<const Vec3>(cloud.points)) {}

  std::size_t size() const { return points_.size(); }
  const Vec3& point(std::size_t i) const { return points_[i]; }

  /// k nearest points, ascending by distance; equal distances ordered by
  /// lower index. Requires 1 <= k <= size().
  Neighbors knn(const Vec3& query, std::size_t k) const;

 private:
  struct Node {
    std::uint32_t begin = 0, end = 0;  // range in order_
    std::int32_t left = -1, right = -1;
    int axis = -1;
    double split = 0.0;
  };
  struct Candidate {
    double dist2;
    std::size_t index;
    bool operator<(const Candidate& o) const {
      return dist2 < o.dist2 || (dist2 == o.dist2 && index < o.index);
    }
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end, std::size_t leaf_size);
  void search(std::int32_t node, const Vec3& q, std::size_t k, std::vector<Candidate>& heap) const;

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

/// Builds the spatial index for a cloud; throws std::invalid_argument on an
/// empty cloud or non-finite coordinates.
std::unique_ptr<KdTree> build_index(const PointCloud& cloud);

/// Distance-sorted, query-centred neighbourhood scaled into the unit ball.
struct Patch {
  std::vector<Vec3> local_points;
  std::vector<std::size_t> source_indices;
  double scale = 1.0;
  std::size_t query_index = 0;
  Vec3 query = Vec3::Zero();
  std::size_t pad_count = 0;  ///< trailing copies of the farthest point
  bool degenerate = false;    ///< every point coincides with the query

  std::size_t size() const { return local_points.size(); }
  /// Maps a local point back to cloud coordinates.
  Vec3 to_world(std::size_t i) const { return local_points[i] * scale + query; }
};

inline constexpr double kMinPatchScale = 1e-12;

/// Takes the N nearest points of cloud[query_index] (the query first), centres
/// them on the query and divides by the largest distance. A cloud smaller than
/// N is padded by repeating its farthest point.
Patch extract_patch(const PointCloud& cloud, const KdTree& index, std::size_t query_index,
                    std::size_t n);

/// True when ‖local_points[i]‖ never decreases.
bool is_distance_sorted(const Patch& patch);

/// Rows 0..m of a patch-ordered feature matrix.
template <typename Derived>
auto take_nearest_prefix(const Eigen::MatrixBase<Derived>& features, Eigen::Index m) {
  if (m < 0 || m > features.rows()) {
    throw std::invalid_argument("take_nearest_prefix: m=" + std::to_string(m) +
                                " exceeds row count " + std::to_string(features.rows()));
  }
  return features.topRows(m).eval();
}

/// Length of the axis-aligned bounding-box diagonal.
double bbox_diagonal(const PointCloud& cloud);
double bbox_diagonal(std::span<const Vec3> points);

}  // namespace pff
