#include "pff/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pff {

void PointCloud::validate() const {
  if (points.empty()) throw std::invalid_argument("point cloud '" + name + "' is empty");
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!points[i].allFinite()) {
      throw std::invalid_argument("point " + std::to_string(i) + " has a non-finite coordinate");
    }
  }
  if (normals) {
    if (normals->size() != points.size()) {
      throw std::invalid_argument("normal count " + std::to_string(normals->size()) +
                                  " does not match point count " + std::to_string(points.size()));
    }
    for (std::size_t i = 0; i < normals->size(); ++i) {
      const double len = (*normals)[i].norm();
      if (!std::isfinite(len) || std::abs(len - 1.0) > 1e-6) {
        throw std::invalid_argument("normal " + std::to_string(i) + " is not unit length");
      }
    }
  }
}

KdTree::KdTree(std::span<const Vec3> points, std::size_t leaf_size)
    : points_(points.begin(), points.end()) {
  if (points_.empty()) throw std::invalid_argument("cannot index an empty point set");
  for (const auto& p : points_) {
    if (!p.allFinite()) throw std::invalid_argument("cannot index non-finite coordinates");
  }
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * points_.size() / std::max<std::size_t>(leaf_size, 1) + 1);
  build(0, static_cast<std::uint32_t>(points_.size()), std::max<std::size_t>(leaf_size, 1));
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end, std::size_t leaf_size) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= leaf_size) return id;

  Vec3 lo = points_[order_[begin]], hi = lo;
  for (std::uint32_t i = begin + 1; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis;
  const double extent = (hi - lo).maxCoeff(&axis);
  if (extent == 0.0) return id;  // all coincident: keep as a leaf

  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double pa = points_[a][axis], pb = points_[b][axis];
                     return pa < pb || (pa == pb && a < b);
                   });
  const double split = points_[order_[mid]][axis];
  const std::int32_t left = build(begin, mid, leaf_size);
  const std::int32_t right = build(mid, end, leaf_size);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(std::int32_t id, const Vec3& q, std::size_t k,
                    std::vector<Candidate>& heap) const {
  const Node& node = nodes_[id];
  if (node.axis < 0) {
    for (std::uint32_t i = node.begin; i < node.end; ++i) {
      const std::size_t idx = order_[i];
      const Candidate c{(points_[idx] - q).squaredNorm(), idx};
      if (heap.size() < k) {
        heap.push_back(c);
        std::push_heap(heap.begin(), heap.end());
      } else if (c < heap.front()) {
        std::pop_heap(heap.begin(), heap.end());
        heap.back() = c;
        std::push_heap(heap.begin(), heap.end());
      }
    }
    return;
  }
  // Left holds coordinates <= split, right holds >= split.
  const double diff = q[node.axis] - node.split;
  const std::int32_t near = diff <= 0.0 ? node.left : node.right;
  const std::int32_t far = diff <= 0.0 ? node.right : node.left;
  search(near, q, k, heap);
  // `<=` keeps equal-distance candidates with lower indices reachable.
  if (heap.size() < k || diff * diff <= heap.front().dist2) search(far, q, k, heap);
}

Neighbors KdTree::knn(const Vec3& query, std::size_t k) const {
  if (k < 1 || k > points_.size()) {
    throw std::invalid_argument("knn: k=" + std::to_string(k) + " outside [1, " +
                                std::to_string(points_.size()) + "]");
  }
  std::vector<Candidate> heap;
  heap.reserve(k + 1);
  search(0, query, k, heap);
  std::sort_heap(heap.begin(), heap.end());
  Neighbors out;
  out.indices.reserve(k);
  out.distances.reserve(k);
  for (const auto& c : heap) {
    out.indices.push_back(c.index);
    out.distances.push_back(std::sqrt(c.dist2));
  }
  return out;
}

std::unique_ptr<KdTree> build_index(const PointCloud& cloud) {
  if (cloud.points.empty()) throw std::invalid_argument("build_index: empty cloud");
  return std::make_unique<KdTree>(cloud);
}

Patch extract_patch(const PointCloud& cloud, const KdTree& index, std::size_t query_index,
                    std::size_t n) {
  if (n < 1) throw std::invalid_argument("extract_patch: N must be >= 1");
  if (query_index >= cloud.size()) {
    throw std::out_of_range("extract_patch: query index " + std::to_string(query_index) +
                            " out of range");
  }
  if (index.size() != cloud.size()) {
    throw std::invalid_argument("extract_patch: index was built over a different cloud");
  }
  const Vec3& q = cloud.points[query_index];
  const std::size_t available = std::min(n, cloud.size());
  Neighbors nb = index.knn(q, available);

  // The query goes first even when coincident duplicates with lower indices exist.
  Patch patch;
  patch.query_index = query_index;
  patch.query = q;
  patch.source_indices.reserve(n);
  patch.source_indices.push_back(query_index);
  for (std::size_t idx : nb.indices) {
    if (idx != query_index && patch.source_indices.size() < available) {
      patch.source_indices.push_back(idx);
    }
  }

  const std::size_t farthest = patch.source_indices.back();
  while (patch.source_indices.size() < n) {
    patch.source_indices.push_back(farthest);
    ++patch.pad_count;
  }

  double max_dist = 0.0;
  patch.local_points.reserve(n);
  for (std::size_t idx : patch.source_indices) {
    patch.local_points.push_back(cloud.points[idx] - q);
    max_dist = std::max(max_dist, patch.local_points.back().norm());
  }
  if (max_dist < kMinPatchScale) {
    patch.degenerate = true;
    max_dist = kMinPatchScale;
  }
  patch.scale = max_dist;
  for (auto& p : patch.local_points) p /= max_dist;

  // Rescaling can swap near-ties by an ulp; restore the order on the scaled norms.
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) norms[i] = patch.local_points[i].norm();
  std::stable_sort(perm.begin() + 1, perm.end(),
                   [&](std::size_t a, std::size_t b) { return norms[a] < norms[b]; });
  if (!std::is_sorted(perm.begin(), perm.end())) {
    Patch sorted = patch;
    for (std::size_t i = 0; i < n; ++i) {
      sorted.local_points[i] = patch.local_points[perm[i]];
      sorted.source_indices[i] = patch.source_indices[perm[i]];
    }
    return sorted;
  }
  return patch;
}

bool is_distance_sorted(const Patch& patch) {
  for (std::size_t i = 1; i < patch.local_points.size(); ++i) {
    if (patch.local_points[i].norm() < patch.local_points[i - 1].norm()) return false;
  }
  return true;
}

double bbox_diagonal(std::span<const Vec3> points) {
  if (points.empty()) throw std::invalid_argument("bbox_diagonal: empty point set");
  Vec3 lo = points.front(), hi = lo;
  for (const auto& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return (hi - lo).norm();
}

double bbox_diagonal(const PointCloud& cloud) { return bbox_diagonal(std::span<const Vec3>(cloud.points)); }

}  // namespace pff
