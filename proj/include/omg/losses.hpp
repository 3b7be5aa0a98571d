#pragma once

#include "omg/dataset.hpp"
#include "omg/motion.hpp"
#include "omg/schedule.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace omg {

struct LossWeights {
  std::string lambda_t_rule = "constant";
  double lambda_vel = 30.0;
  double lambda_foot = 30.0;

  void validate() const;
};

struct LossReport {
  double simple = 0.0;
  double vel = 0.0;
  double foot = 0.0;
  double total = 0.0;
  std::int64_t simple_count = 0;  // valid frame-features
  std::int64_t pair_count = 0;    // valid adjacent frame pairs
};

// Each loss returns a batch mean over valid entries and, when `grad` is
// non-null, adds `scale` * d(loss)/d(x0_hat) into it. Padding rows never
// contribute to the value or the gradient.

/// sum_b lambda_b * sum_valid (x - x0_hat)^2 / (valid frames * D).
template <class S>
double loss_simple(const MotionBatch<S>& x, const MotionBatch<S>& x0_hat, const std::vector<double>& lambda_t,
                   MotionBatch<S>* grad = nullptr, double scale = 1.0);

/// Mean squared difference of first temporal differences over valid pairs.
template <class S>
double loss_velocity(const MotionBatch<S>& x, const MotionBatch<S>& x0_hat, MotionBatch<S>* grad = nullptr,
                     double scale = 1.0);

/// Mean over valid pairs of ||contact(x, t) * (p_hat[t+1] - p_hat[t])||^2
/// summed over the four foot joints, with contact labels from ground truth.
template <class S>
double loss_foot_contact(const MotionBatch<S>& x, const MotionBatch<S>& x0_hat, const FeatureLayout& layout,
                         MotionBatch<S>* grad = nullptr, double scale = 1.0);

/// simple + lambda_vel * vel + lambda_foot * foot. `grad` receives
/// d(total)/d(x0_hat) when non-null.
template <class S>
LossReport total_loss(const MotionBatch<S>& x, const MotionBatch<S>& x0_hat, const std::vector<int>& t,
                      const NoiseSchedule& schedule, const LossWeights& weights, const FeatureLayout& layout,
                      MotionBatch<S>* grad = nullptr);

}  // namespace omg
