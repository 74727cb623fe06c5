#include "pff/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "pff/baselines.hpp"
#include "pff/errors.hpp"
#include "pff/rng.hpp"

namespace pff {

namespace {
constexpr double kPi = std::numbers::pi;
}

std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::plane: return "plane";
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::cylinder: return "cylinder";
    case ShapeKind::torus: return "torus";
    case ShapeKind::box_edges: return "box-edges";
    case ShapeKind::quadric: return "quadric";
  }
  return "?";
}

ShapeKind parse_shape_kind(const std::string& s) {
  for (auto k : {ShapeKind::plane, ShapeKind::sphere, ShapeKind::cylinder, ShapeKind::torus,
                 ShapeKind::box_edges, ShapeKind::quadric}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown shape kind: " + s);
}

std::string to_string(DensityPattern d) {
  switch (d) {
    case DensityPattern::uniform: return "uniform";
    case DensityPattern::stripe: return "stripe-v1";
    case DensityPattern::gradient: return "gradient-v1";
  }
  return "?";
}

DensityPattern parse_density(const std::string& s) {
  if (s == "uniform") return DensityPattern::uniform;
  if (s == "stripe" || s == "stripe-v1") return DensityPattern::stripe;
  if (s == "gradient" || s == "gradient-v1") return DensityPattern::gradient;
  throw std::invalid_argument("unknown density pattern: " + s);
}

void ShapeSpec::validate() const {
  if (count < 1) throw std::invalid_argument("shape count must be >= 1");
  for (double v : {radius, height, major_radius, minor_radius, half_extent}) {
    if (!std::isfinite(v) || v <= 0.0) throw std::invalid_argument("shape extents must be finite and positive");
  }
  for (double c : coeffs)
    if (!std::isfinite(c)) throw std::invalid_argument("quadric coefficients must be finite");
  if (kind == ShapeKind::torus && minor_radius >= major_radius) {
    throw std::invalid_argument("torus minor radius must be below the major radius");
  }
}

KeyValueConfig ShapeSpec::to_kv() const {
  KeyValueConfig kv;
  kv.set("kind", to_string(kind));
  kv.set("count", std::to_string(count));
  kv.set("seed", std::to_string(seed));
  kv.set("radius", format_double(radius));
  kv.set("height", format_double(height));
  kv.set("major_radius", format_double(major_radius));
  kv.set("minor_radius", format_double(minor_radius));
  kv.set("half_extent", format_double(half_extent));
  for (int i = 0; i < 5; ++i) kv.set("c" + std::to_string(i + 1), format_double(coeffs[i]));
  return kv;
}

ShapeSpec ShapeSpec::from_kv(const KeyValueConfig& kv) {
  ShapeSpec s;
  s.kind = parse_shape_kind(kv.get_or("kind", "sphere"));
  const long long count = kv.get_int("count", static_cast<long long>(s.count));
  if (count < 1) throw std::invalid_argument("shape count must be >= 1");
  s.count = static_cast<std::size_t>(count);
  s.seed = kv.get_u64("seed", 0);
  s.radius = kv.get_double("radius", s.radius);
  s.height = kv.get_double("height", s.height);
  s.major_radius = kv.get_double("major_radius", s.major_radius);
  s.minor_radius = kv.get_double("minor_radius", s.minor_radius);
  s.half_extent = kv.get_double("half_extent", s.half_extent);
  for (int i = 0; i < 5; ++i) s.coeffs[i] = kv.get_double("c" + std::to_string(i + 1), 0.0);
  s.validate();
  return s;
}

void CorruptionSpec::validate() const {
  if (!std::isfinite(noise_sigma_frac) || noise_sigma_frac < 0.0) {
    throw std::invalid_argument("noise sigma fraction must be finite and >= 0");
  }
}

KeyValueConfig CorruptionSpec::to_kv() const {
  KeyValueConfig kv;
  kv.set("noise_sigma_frac", format_double(noise_sigma_frac));
  kv.set("density", to_string(density));
  kv.set("corruption_seed", std::to_string(seed));
  return kv;
}

CorruptionSpec CorruptionSpec::from_kv(const KeyValueConfig& kv) {
  CorruptionSpec c;
  c.noise_sigma_frac = kv.get_double("noise_sigma_frac", 0.0);
  c.density = parse_density(kv.get_or("density", "uniform"));
  c.seed = kv.get_u64("corruption_seed", 0);
  c.validate();
  return c;
}

// ---- synthesis ----------------------------------------------------------------------

PointCloud synth_shape(const ShapeSpec& spec) {
  spec.validate();
  CounterRng rng(spec.seed, fnv1a64("synth/" + to_string(spec.kind)));
  PointCloud cloud;
  cloud.name = to_string(spec.kind);
  cloud.points.reserve(spec.count);
  std::vector<Vec3> normals;
  normals.reserve(spec.count);

  while (cloud.points.size() < spec.count) {
    Vec3 p, n;
    switch (spec.kind) {
      case ShapeKind::plane: {
        p = {rng.uniform(-spec.half_extent, spec.half_extent), rng.uniform(-spec.half_extent, spec.half_extent), 0.0};
        n = {0.0, 0.0, 1.0};
        break;
      }
      case ShapeKind::sphere: {
        Vec3 g(rng.normal(), rng.normal(), rng.normal());
        const double len = g.norm();
        if (len < 1e-12) continue;
        n = g / len;
        p = spec.radius * n;
        break;
      }
      case ShapeKind::cylinder: {
        const double theta = rng.uniform(0.0, 2.0 * kPi);
        const double z = rng.uniform(-0.5 * spec.height, 0.5 * spec.height);
        n = {std::cos(theta), std::sin(theta), 0.0};
        p = {spec.radius * n.x(), spec.radius * n.y(), z};
        break;
      }
      case ShapeKind::torus: {
        // Area element is proportional to (R + r cos v); reject to make it uniform.
        const double u = rng.uniform(0.0, 2.0 * kPi);
        const double v = rng.uniform(0.0, 2.0 * kPi);
        const double accept = rng.uniform();
        const double R = spec.major_radius, r = spec.minor_radius;
        if (accept * (R + r) > R + r * std::cos(v)) continue;
        n = {std::cos(v) * std::cos(u), std::cos(v) * std::sin(u), std::sin(v)};
        p = {(R + r * std::cos(v)) * std::cos(u), (R + r * std::cos(v)) * std::sin(u), r * std::sin(v)};
        break;
      }
      case ShapeKind::box_edges: {
        const auto face = static_cast<int>(rng.below(6));
        const int axis = face / 2;
        const double sign = face % 2 == 0 ? 1.0 : -1.0;
        const double e = spec.half_extent;
        const double a = rng.uniform(-e, e), b = rng.uniform(-e, e);
        p.setZero();
        n.setZero();
        p[axis] = sign * e;
        p[(axis + 1) % 3] = a;
        p[(axis + 2) % 3] = b;
        n[axis] = sign;
        break;
      }
      case ShapeKind::quadric: {
        const auto& c = spec.coeffs;
        const double x = rng.uniform(-spec.half_extent, spec.half_extent);
        const double y = rng.uniform(-spec.half_extent, spec.half_extent);
        p = {x, y, c[0] * x + c[1] * y + c[2] * x * x + c[3] * x * y + c[4] * y * y};
        n = Vec3(-(c[0] + 2.0 * c[2] * x + c[3] * y), -(c[1] + c[3] * x + 2.0 * c[4] * y), 1.0).normalized();
        break;
      }
    }
    cloud.points.push_back(p);
    normals.push_back(n);
  }
  cloud.normals = std::move(normals);
  return cloud;
}

PointCloud add_noise(const PointCloud& cloud, double sigma_frac, std::uint64_t seed) {
  if (!std::isfinite(sigma_frac) || sigma_frac < 0.0) throw std::invalid_argument("sigma_frac must be >= 0");
  PointCloud out = cloud;
  if (sigma_frac == 0.0) return out;
  const double sigma = sigma_frac * bbox_diagonal(cloud);
  CounterRng rng(seed, fnv1a64("noise"));
  for (auto& p : out.points) {
    const double dx = rng.normal(), dy = rng.normal(), dz = rng.normal();
    p += sigma * Vec3(dx, dy, dz);
  }
  return out;
}

Vec3 principal_axis(const PointCloud& cloud) {
  if (cloud.points.empty()) throw std::invalid_argument("principal_axis: empty cloud");
  return canonical_sign(eigh3(covariance(cloud.points)).vectors.col(2).normalized());
}

namespace {

PointCloud keep_where(const PointCloud& cloud, const std::vector<char>& keep, const char* what) {
  PointCloud out;
  out.name = cloud.name;
  std::vector<Vec3> normals;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!keep[i]) continue;
    out.points.push_back(cloud.points[i]);
    if (cloud.normals) normals.push_back((*cloud.normals)[i]);
  }
  if (out.points.empty()) throw std::runtime_error(std::string(what) + ": every point was removed");
  if (cloud.normals) out.normals = std::move(normals);
  return out;
}

std::vector<double> axis_coordinates(const PointCloud& cloud, double& lo, double& hi) {
  const Vec3 axis = principal_axis(cloud);
  std::vector<double> t(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) t[i] = cloud.points[i].dot(axis);
  lo = *std::min_element(t.begin(), t.end());
  hi = *std::max_element(t.begin(), t.end());
  return t;
}

}  // namespace

PointCloud density_stripe(const PointCloud& cloud, std::uint64_t seed, StripeParams p) {
  if (cloud.points.empty()) throw std::invalid_argument("density_stripe: empty cloud");
  if (p.slabs < 1 || p.keep_ratio < 0.0 || p.keep_ratio > 1.0) throw std::invalid_argument("bad stripe parameters");
  double lo, hi;
  const auto t = axis_coordinates(cloud, lo, hi);
  const double width = (hi - lo) / p.slabs;
  CounterRng rng(seed, fnv1a64("density/stripe-v1"));
  std::vector<char> keep(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    int slab = width > 0.0 ? static_cast<int>((t[i] - lo) / width) : 0;
    slab = std::clamp(slab, 0, p.slabs - 1);
    const double u = rng.uniform();
    keep[i] = slab % 2 == 0 || u < p.keep_ratio;
  }
  return keep_where(cloud, keep, "density_stripe");
}

PointCloud density_gradient(const PointCloud& cloud, std::uint64_t seed, GradientParams p) {
  if (cloud.points.empty()) throw std::invalid_argument("density_gradient: empty cloud");
  double lo, hi;
  const auto t = axis_coordinates(cloud, lo, hi);
  CounterRng rng(seed, fnv1a64("density/gradient-v1"));
  std::vector<char> keep(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double s = hi > lo ? (t[i] - lo) / (hi - lo) : 1.0;
    const double prob = p.keep_low + (p.keep_high - p.keep_low) * s;
    keep[i] = rng.uniform() < prob;
  }
  return keep_where(cloud, keep, "density_gradient");
}

PointCloud corrupt(const PointCloud& clean, const CorruptionSpec& spec) {
  spec.validate();
  PointCloud out = add_noise(clean, spec.noise_sigma_frac, derive_seed(spec.seed, "noise"));
  switch (spec.density) {
    case DensityPattern::uniform: break;
    case DensityPattern::stripe: out = density_stripe(out, derive_seed(spec.seed, "stripe")); break;
    case DensityPattern::gradient: out = density_gradient(out, derive_seed(spec.seed, "gradient")); break;
  }
  return out;
}

std::vector<std::size_t> sample_queries(std::size_t cloud_size, std::size_t count, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("sample_queries: count must be >= 1");
  if (cloud_size < 1) throw std::invalid_argument("sample_queries: empty cloud");
  CounterRng rng(seed, fnv1a64("queries"));
  std::vector<std::size_t> out;
  out.reserve(count);
  if (count > cloud_size) {
    for (std::size_t i = 0; i < count; ++i) out.push_back(rng.below(cloud_size));
    return out;
  }
  std::vector<std::size_t> pool(cloud_size);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.below(cloud_size - i);
    std::swap(pool[i], pool[j]);
    out.push_back(pool[i]);
  }
  return out;
}

// ---- files ----------------------------------------------------------------------

std::vector<Vec3> read_vectors(std::istream& in) {
  std::vector<Vec3> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const char* p = line.data();
    const char* end = p + line.size();
    auto skip_ws = [&] {
      while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
    };
    skip_ws();
    if (p == end) continue;  // blank line
    Vec3 v;
    int fields = 0;
    while (p < end) {
      double d;
      const auto [next, ec] = std::from_chars(p, end, d);
      if (ec != std::errc() || (next < end && *next != ' ' && *next != '\t' && *next != '\r')) {
        throw ParseError("line " + std::to_string(line_no) + ": malformed number", line_no);
      }
      if (fields == 3) {
        throw ParseError("line " + std::to_string(line_no) + ": expected 3 fields, found more", line_no);
      }
      v[fields++] = d;
      p = next;
      skip_ws();
    }
    if (fields != 3) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 3 fields, found " + std::to_string(fields),
                       line_no);
    }
    out.push_back(v);
  }
  return out;
}

namespace {

std::vector<Vec3> read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return read_vectors(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  }
}

}  // namespace

std::vector<Vec3> read_xyz(const std::filesystem::path& path) { return read_file(path); }
std::vector<Vec3> read_normals(const std::filesystem::path& path) { return read_file(path); }

void write_vectors(std::ostream& out, const std::vector<Vec3>& v) {
  char buf[96];
  for (const auto& p : v) {
    const int n = std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", p.x(), p.y(), p.z());
    out.write(buf, n);
  }
}

void write_xyz(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_vectors(out, cloud.points);
}

void write_normals(const std::filesystem::path& path, const std::vector<Vec3>& normals) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_vectors(out, normals);
}

PointCloud load_cloud(const std::filesystem::path& xyz, const std::filesystem::path& normals) {
  PointCloud cloud;
  cloud.name = xyz.stem().string();
  cloud.points = read_xyz(xyz);
  if (!normals.empty()) {
    auto n = read_normals(normals);
    if (n.size() != cloud.points.size()) {
      throw std::runtime_error("length mismatch: " + std::to_string(cloud.points.size()) + " points vs " +
                               std::to_string(n.size()) + " normals");
    }
    for (std::size_t i = 0; i < n.size(); ++i) {
      const double len = n[i].norm();
      if (!(len > 0.0)) throw std::runtime_error("zero normal at line " + std::to_string(i + 1));
      n[i] /= len;
    }
    cloud.normals = std::move(n);
  }
  cloud.validate();
  return cloud;
}

}  // namespace pff
