#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "pff/geometry.hpp"

namespace pff {

/// Unoriented angle between two directions, in degrees within [0, 90].
/// Throws std::invalid_argument for a zero vector.
double angle_error_deg(const Vec3& n, const Vec3& reference);

/// sqrt(mean(e^2)); throws std::invalid_argument on an empty list.
double rmse(std::span<const double> errors_deg);

struct PgpPoint {
  double threshold_deg;
  double fraction;
};

/// Fraction of errors strictly below each threshold. Thresholds must ascend.
std::vector<PgpPoint> pgp_curve(std::span<const double> errors_deg,
                                std::span<const double> thresholds_deg);

/// 0, 1, ..., 90 degrees.
std::vector<double> default_pgp_thresholds();

struct EvalReport {
  std::vector<double> errors_deg;
  double rmse_deg = 0.0;
  std::vector<PgpPoint> pgp;
};

EvalReport make_report(std::span<const Vec3> predicted, std::span<const Vec3> truth,
                       std::span<const double> thresholds_deg);

/// `threshold_deg,pgp` rows followed by a `rmse_deg,<value>` footer.
void write_pgp_csv(std::ostream& out, const EvalReport& report);
void write_pgp_csv(const std::filesystem::path& path, const EvalReport& report);
/// Polyline of the PGP curve; x axis 0-90 degrees, y axis 0-1.
void write_pgp_svg(const std::filesystem::path& path, const std::vector<PgpPoint>& curve);

}  // namespace pff
