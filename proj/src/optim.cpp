#include "pff/optim.hpp"

#include <cmath>

namespace pff {

void AdamW::set_lr(double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  hyper_.lr = lr;
}

void AdamW::step(ModelParams& params) {
  if (!(hyper_.lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  for (const auto& [name, var] : params) {
    const ad::Mat& g = var.node().grad;
    if (g.size() != 0 && !g.allFinite()) {
      throw NumericError("AdamW: non-finite gradient for " + name + "; step rejected");
    }
  }

  ++step_;
  const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(step_));
  for (auto& [name, var] : params) {
    ad::Mat& theta = var.mutable_value();
    auto [mit, m_new] = m_.try_emplace(name, ad::Mat::Zero(theta.rows(), theta.cols()));
    auto [vit, v_new] = v_.try_emplace(name, ad::Mat::Zero(theta.rows(), theta.cols()));
    ad::Mat& m = mit->second;
    ad::Mat& v = vit->second;

    theta *= 1.0 - hyper_.lr * hyper_.weight_decay;
    const ad::Mat& g = var.node().grad;
    if (g.size() == theta.size()) {
      m = hyper_.beta1 * m + (1.0 - hyper_.beta1) * g;
      v = hyper_.beta2 * v + (1.0 - hyper_.beta2) * g.cwiseAbs2();
    } else {
      m *= hyper_.beta1;
      v *= hyper_.beta2;
    }
    theta.array() -= hyper_.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + hyper_.eps);
  }
}

double LrSchedule::at(int epoch) const {
  double lr = initial;
  for (int m : milestones)
    if (epoch >= m) lr *= factor;
  return lr;
}

}  // namespace pff
