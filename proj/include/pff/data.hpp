#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "pff/geometry.hpp"
#include "pff/kv_config.hpp"

namespace pff {

enum class ShapeKind { plane, sphere, cylinder, torus, box_edges, quadric };

std::string to_string(ShapeKind k);
ShapeKind parse_shape_kind(const std::string& s);

struct ShapeSpec {
  ShapeKind kind = ShapeKind::sphere;
  std::size_t count = 10000;
  std::uint64_t seed = 0;
  double radius = 1.0;        ///< sphere, cylinder
  double height = 2.0;        ///< cylinder, along z
  double major_radius = 1.0;  ///< torus
  double minor_radius = 0.3;  ///< torus
  double half_extent = 1.0;   ///< plane, quadric (xy domain) and box
  std::array<double, 5> coeffs{};  ///< quadric z = c1 x + c2 y + c3 x^2 + c4 xy + c5 y^2

  void validate() const;
  KeyValueConfig to_kv() const;
  static ShapeSpec from_kv(const KeyValueConfig& kv);
};

enum class DensityPattern { uniform, stripe, gradient };

std::string to_string(DensityPattern d);
DensityPattern parse_density(const std::string& s);

struct CorruptionSpec {
  double noise_sigma_frac = 0.0;  ///< of the clean bbox diagonal: 0, 0.0012, 0.006, 0.012
  DensityPattern density = DensityPattern::uniform;
  std::uint64_t seed = 0;

  void validate() const;
  KeyValueConfig to_kv() const;
  static CorruptionSpec from_kv(const KeyValueConfig& kv);
};

/// Noise levels of the standard benchmark taxonomy.
inline constexpr double kNoiseLow = 0.0012;
inline constexpr double kNoiseMedium = 0.006;
inline constexpr double kNoiseHigh = 0.012;

struct StripeParams {
  int slabs = 6;
  double keep_ratio = 0.15;  ///< inside the depleted (odd) slabs
};

struct GradientParams {
  double keep_low = 0.05;  ///< at the low end of the principal axis
  double keep_high = 1.0;
};

/// Points sampled on the surface with exact analytic unit normals.
PointCloud synth_shape(const ShapeSpec& spec);

/// Isotropic Gaussian offsets, sigma = sigma_frac * bbox_diagonal(cloud).
/// Normals are carried over unchanged.
PointCloud add_noise(const PointCloud& cloud, double sigma_frac, std::uint64_t seed);

/// Unit direction of largest spread, canonical sign.
Vec3 principal_axis(const PointCloud& cloud);

/// Thins alternating slabs along the principal axis ("stripe-v1").
PointCloud density_stripe(const PointCloud& cloud, std::uint64_t seed, StripeParams p = {});
/// Keeps each point with a probability ramping linearly along the principal
/// axis ("gradient-v1").
PointCloud density_gradient(const PointCloud& cloud, std::uint64_t seed, GradientParams p = {});

/// Noise then density, as described by `spec`.
PointCloud corrupt(const PointCloud& clean, const CorruptionSpec& spec);

/// `count` indices, uniform without replacement (with replacement when count
/// exceeds the cloud size).
std::vector<std::size_t> sample_queries(std::size_t cloud_size, std::size_t count, std::uint64_t seed);

// ---- files ----------------------------------------------------------------------

std::vector<Vec3> read_vectors(std::istream& in);
std::vector<Vec3> read_xyz(const std::filesystem::path& path);
std::vector<Vec3> read_normals(const std::filesystem::path& path);
void write_vectors(std::ostream& out, const std::vector<Vec3>& v);
void write_xyz(const std::filesystem::path& path, const PointCloud& cloud);
void write_normals(const std::filesystem::path& path, const std::vector<Vec3>& normals);

/// `<stem>.xyz` plus, when present, `<stem>.normals` (normalised on load).
PointCloud load_cloud(const std::filesystem::path& xyz, const std::filesystem::path& normals = {});

}  // namespace pff
