#include "omg/optim.hpp"

#include "omg/error.hpp"

#include <cmath>
#include <numbers>

namespace omg {

void OptimizerConfig::validate() const {
  require(lr >= 0.0 && std::isfinite(lr), ErrorCode::kConfig, "learning rate must be finite and >= 0");
  require(warmup_steps >= 0 && total_steps >= 1, ErrorCode::kConfig, "total steps must be >= 1, warmup >= 0");
  require(decay == "cosine" || decay == "constant", ErrorCode::kConfig,
          "decay must be \"cosine\" or \"constant\", got \"" + decay + "\"");
  require(weight_decay >= 0.0, ErrorCode::kConfig, "weight decay must be >= 0");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0, ErrorCode::kConfig,
          "Adam betas must lie in [0, 1) and eps > 0");
}

double learning_rate(const OptimizerConfig& c, std::int64_t step) {
  if (step < c.warmup_steps) return c.lr * static_cast<double>(step + 1) / static_cast<double>(c.warmup_steps);
  if (c.decay == "constant") return c.lr;
  const double span = static_cast<double>(std::max<std::int64_t>(1, c.total_steps - c.warmup_steps));
  const double progress = std::min(1.0, static_cast<double>(step - c.warmup_steps) / span);
  return c.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void AdamW::prepare(const TensorList<float>& params) {
  if (m_.size() == params.size()) return;
  m_.clear();
  v_.clear();
  for (const auto& p : params) {
    m_.push_back(MatF::Zero(p.value->rows(), p.value->cols()));
    v_.push_back(MatF::Zero(p.value->rows(), p.value->cols()));
  }
}

TensorList<float> AdamW::state(const TensorList<float>& params) {
  prepare(params);
  TensorList<float> out;
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back({"optim.m." + params[i].name, &m_[i], params[i].is_vector});
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back({"optim.v." + params[i].name, &v_[i], params[i].is_vector});
  return out;
}

void AdamW::step(const TensorList<float>& params, const TensorList<float>& grads) {
  require(params.size() == grads.size(), ErrorCode::kInternal, "parameter/gradient lists differ in length");
  prepare(params);
  const double lr = learning_rate(config_, step_);
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  const float b1 = static_cast<float>(config_.beta1), b2 = static_cast<float>(config_.beta2);
  const float step_size = static_cast<float>(lr / bc1);
  const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const float eps = static_cast<float>(config_.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    MatF& p = *params[i].value;
    const MatF& g = *grads[i].value;
    require(p.rows() == g.rows() && p.cols() == g.cols(), ErrorCode::kInternal,
            "gradient shape differs for " + params[i].name);
    m_[i] = b1 * m_[i] + (1.0f - b1) * g;
    v_[i] = b2 * v_[i] + (1.0f - b2) * g.cwiseAbs2();
    if (!params[i].is_vector && config_.weight_decay > 0.0) p *= static_cast<float>(1.0 - lr * config_.weight_decay);
    p.array() -= step_size * m_[i].array() / (v_[i].array().sqrt() * inv_sqrt_bc2 + eps);
  }
}

}  // namespace omg
