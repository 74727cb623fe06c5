#include "pff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <ostream>

#include "pff/kv_config.hpp"

namespace pff {

double angle_error_deg(const Vec3& n, const Vec3& reference) {
  const double a = n.norm(), b = reference.norm();
  if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("angle_error: zero vector");
  const double c = std::clamp(std::abs(n.dot(reference)) / (a * b), 0.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

double rmse(std::span<const double> errors_deg) {
  if (errors_deg.empty()) throw std::invalid_argument("rmse: empty error list");
  double acc = 0.0;
  for (double e : errors_deg) acc += e * e;
  return std::sqrt(acc / static_cast<double>(errors_deg.size()));
}

std::vector<PgpPoint> pgp_curve(std::span<const double> errors_deg,
                                std::span<const double> thresholds_deg) {
  if (!std::is_sorted(thresholds_deg.begin(), thresholds_deg.end())) {
    throw std::invalid_argument("pgp_curve: thresholds must be ascending");
  }
  std::vector<double> sorted(errors_deg.begin(), errors_deg.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<PgpPoint> curve;
  curve.reserve(thresholds_deg.size());
  const double n = static_cast<double>(sorted.size());
  for (double t : thresholds_deg) {
    // Unoriented errors never exceed 90, so the curve closes at 1 there even
    // for points sitting exactly at 90 degrees.
    const auto below = t >= 90.0 ? static_cast<std::ptrdiff_t>(sorted.size())
                                 : std::lower_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    curve.push_back({t, sorted.empty() ? 0.0 : static_cast<double>(below) / n});
  }
  return curve;
}

std::vector<double> default_pgp_thresholds() {
  std::vector<double> t(91);
  for (int i = 0; i <= 90; ++i) t[i] = i;
  return t;
}

EvalReport make_report(std::span<const Vec3> predicted, std::span<const Vec3> truth,
                       std::span<const double> thresholds_deg) {
  if (predicted.size() != truth.size()) {
    throw std::invalid_argument("evaluate: " + std::to_string(predicted.size()) +
                                " predictions vs " + std::to_string(truth.size()) +
                                " ground-truth normals");
  }
  EvalReport r;
  r.errors_deg.reserve(predicted.size());
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    r.errors_deg.push_back(angle_error_deg(predicted[i], truth[i]));
  }
  r.rmse_deg = rmse(r.errors_deg);
  r.pgp = pgp_curve(r.errors_deg, thresholds_deg);
  return r;
}

void write_pgp_csv(std::ostream& out, const EvalReport& report) {
  out << "threshold_deg,pgp\n";
  for (const auto& p : report.pgp) out << format_double(p.threshold_deg) << ',' << format_double(p.fraction) << '\n';
  out << "rmse_deg," << format_double(report.rmse_deg) << '\n';
}

void write_pgp_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_pgp_csv(out, report);
}

void write_pgp_svg(const std::filesystem::path& path, const std::vector<PgpPoint>& curve) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  constexpr double w = 480, h = 320, m = 40;
  auto sx = [&](double deg) { return m + (w - 2 * m) * deg / 90.0; };
  auto sy = [&](double f) { return h - m - (h - 2 * m) * f; };
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  out << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "  <line x1=\"" << sx(0) << "\" y1=\"" << sy(0) << "\" x2=\"" << sx(90) << "\" y2=\"" << sy(0)
      << "\" stroke=\"black\"/>\n";
  out << "  <line x1=\"" << sx(0) << "\" y1=\"" << sy(0) << "\" x2=\"" << sx(0) << "\" y2=\"" << sy(1)
      << "\" stroke=\"black\"/>\n";
  out << "  <text x=\"" << sx(45) << "\" y=\"" << h - 8 << "\" text-anchor=\"middle\">threshold (deg)</text>\n";
  out << "  <text x=\"12\" y=\"" << sy(0.5) << "\" transform=\"rotate(-90 12 " << sy(0.5)
      << ")\" text-anchor=\"middle\">PGP</text>\n";
  out << "  <polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (const auto& p : curve) out << sx(std::clamp(p.threshold_deg, 0.0, 90.0)) << ',' << sy(p.fraction) << ' ';
  out << "\"/>\n</svg>\n";
}

}  // namespace pff
