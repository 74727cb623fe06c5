#pragma once

#include <map>
#include <string>
#include <vector>

#include "pff/params.hpp"

namespace pff {

struct AdamWHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

/// AdamW with bias-corrected moments and decoupled weight decay
/// (theta -= lr * wd * theta, applied to the parameters only).
class AdamW {
 public:
  explicit AdamW(AdamWHyper hyper = {}) : hyper_(hyper) {}

  /// One update from the gradients currently stored on `params`. A parameter
  /// with no gradient counts as zero gradient. Throws NumericError (and leaves
  /// everything untouched) when any gradient is non-finite.
  void step(ModelParams& params);

  long steps() const { return step_; }
  const AdamWHyper& hyper() const { return hyper_; }
  void set_lr(double lr);

  const ad::Mat& first_moment(const std::string& name) const { return m_.at(name); }
  const ad::Mat& second_moment(const std::string& name) const { return v_.at(name); }

 private:
  AdamWHyper hyper_;
  long step_ = 0;
  std::map<std::string, ad::Mat> m_, v_;
};

/// Step decay: lr0 * factor^(number of milestones <= epoch).
struct LrSchedule {
  double initial = 1e-3;
  double factor = 0.2;
  std::vector<int> milestones = {400, 600};

  double at(int epoch) const;
};

}  // namespace pff
