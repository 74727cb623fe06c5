#include "pff/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace pff {

GradCheckReport grad_check(const GraphBuilder& build, ModelParams& params, double tolerance,
                           double h, double norm_floor) {
  params.zero_grad();
  ad::backward(build(params));

  GradCheckReport report;
  report.tolerance = tolerance;
  for (auto& [name, var] : params) {
    const ad::Mat analytic = var.grad();
    ad::Mat numeric(var.rows(), var.cols());
    ad::Mat& value = var.mutable_value();
    for (ad::Index i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      value.data()[i] = saved + h;
      const double up = build(params).scalar();
      value.data()[i] = saved - h;
      const double down = build(params).scalar();
      value.data()[i] = saved;
      numeric.data()[i] = (up - down) / (2.0 * h);
    }
    GradCheckEntry e;
    e.name = name;
    e.max_abs_error = (analytic - numeric).cwiseAbs().maxCoeff();
    const double denom = std::max({analytic.norm(), numeric.norm(), norm_floor});
    e.rel_error = denom > 0.0 ? (analytic - numeric).norm() / denom : 0.0;
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.entries.push_back(std::move(e));
  }
  report.passed = report.max_rel_error < tolerance;
  params.zero_grad();
  return report;
}

}  // namespace pff
