#pragma once

#include "omg/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace omg {

struct OptimizerConfig {
  double lr = 1e-4;             // peak learning rate
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 1;
  std::string decay = "cosine";  // "cosine" or "constant"
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

/// Linear warmup to the peak, then the configured decay to zero at total_steps.
double learning_rate(const OptimizerConfig& config, std::int64_t step);

/// AdamW with decoupled weight decay. Vector-shaped tensors (biases) are not
/// decayed.
class AdamW {
 public:
  explicit AdamW(OptimizerConfig config) : config_(std::move(config)) {}

  /// One update using `grads` (same order and shapes as `params`).
  void step(const TensorList<float>& params, const TensorList<float>& grads);

  std::int64_t steps_taken() const { return step_; }
  void set_steps_taken(std::int64_t s) { step_ = s; }
  const OptimizerConfig& config() const { return config_; }

  /// Moment buffers named "optim.m.<name>" / "optim.v.<name>"; allocated on
  /// first use or by `prepare`.
  void prepare(const TensorList<float>& params);
  TensorList<float> state(const TensorList<float>& params);

 private:
  OptimizerConfig config_;
  std::int64_t step_ = 0;
  std::vector<MatF> m_, v_;
};

}  // namespace omg
