#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "xvfg/autograd.hpp"

namespace xvfg {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected adaptive-moment update of `param` in place.
/// `step` is the 1-based step index after incrementing.
void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, std::int64_t step, const AdamConfig& cfg);

/// Adam over a fixed parameter group. Moment buffers start at zero.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg);

  /// Applies one update from each parameter's accumulated grad.
  void step();
  void zero_grad();

  std::int64_t steps() const { return steps_; }
  const AdamConfig& config() const { return cfg_; }
  const std::vector<Parameter*>& params() const { return params_; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::int64_t steps_ = 0;
};

}  // namespace xvfg
