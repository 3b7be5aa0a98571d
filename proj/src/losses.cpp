#include "omg/losses.hpp"

#include "omg/error.hpp"

namespace omg {

void LossWeights::validate() const {
  require(lambda_vel >= 0.0 && lambda_foot >= 0.0, ErrorCode::kConfig, "loss weights must be >= 0");
  require(lambda_t_rule == "constant" || lambda_t_rule == "min-snr", ErrorCode::kConfig,
          "unknown loss weighting rule '" + lambda_t_rule + "'");
}

namespace {

template <class S>
void check_shapes(const MotionBatch<S>& x, const MotionBatch<S>& y) {
  require(x.batch() == y.batch() && x.pad_len == y.pad_len && x.dim == y.dim, ErrorCode::kShapeMismatch,
          "prediction and target batches differ in shape");
}

template <class S>
bool pair_valid(const std::vector<std::uint8_t>& mask, int t) {
  return mask[static_cast<std::size_t>(t)] && mask[static_cast<std::size_t>(t + 1)];
}

template <class S>
std::int64_t count_pairs(const MotionBatch<S>& x) {
  std::int64_t n = 0;
  for (int b = 0; b < x.batch(); ++b)
    for (int t = 0; t + 1 < x.pad_len; ++t) n += pair_valid<S>(x.mask[static_cast<std::size_t>(b)], t) ? 1 : 0;
  return n;
}

}  // namespace

template <class S>
double loss_simple(const MotionBatch<S>& x, const MotionBatch<S>& x0_hat, const std::vector<double>& lambda_t,
                   MotionBatch<S>* grad, double scale) {
  check_shapes(x, x0_hat);
  require(static_cast<int>(lambda_t.size()) == x.batch(), ErrorCode::kShapeMismatch, "one weight per batch item");
  std::int64_t count = 0;
  for (int b = 0; b < x.batch(); ++b) count += static_cast<std::int64_t>(x.valid_frames(b)) * x.dim;
  if (count == 0) return 0.0;
  double total = 0.0;
  for (int b = 0; b < x.batch(); ++b) {
    const auto& mask = x.mask[static_cast<std::size_t>(b)];
    const double w = lambda_t[static_cast<std::size_t>(b)];
    for (int t = 0; t < x.pad_len; ++t) {
      if (!mask[static_cast<std::size_t>(t)]) continue;
      for (int c = 0; c < x.dim; ++c) {
        const double r = static_cast<double>(x0_hat.items[b](t, c)) - static_cast<double>(x.items[b](t, c));
        total += w * r * r;
        if (grad) grad->items[b](t, c) += static_cast<S>(scale * 2.0 * w * r / static_cast<double>(count));
      }
    }
  }
  return total / static_cast<double>(count);
}

template <class S>
double loss_velocity(const MotionBatch<S>& x, const MotionBatch<S>& x0_hat, MotionBatch<S>* grad, double scale) {
  check_shapes(x, x0_hat);
  const std::int64_t pairs = count_pairs(x);
  if (pairs == 0) return 0.0;
  const double n = static_cast<double>(pairs) * x.dim;
  double total = 0.0;
  for (int b = 0; b < x.batch(); ++b) {
    const auto& mask = x.mask[static_cast<std::size_t>(b)];
    for (int t = 0; t + 1 < x.pad_len; ++t) {
      if (!pair_valid<S>(mask, t)) continue;
      for (int c = 0; c < x.dim; ++c) {
        const double dp = static_cast<double>(x0_hat.items[b](t + 1, c)) - static_cast<double>(x0_hat.items[b](t, c));
        const double dt = static_cast<double>(x.items[b](t + 1, c)) - static_cast<double>(x.items[b](t, c));
        const double r = dp - dt;
        total += r * r;
        if (grad) {
          const S g = static_cast<S>(scale * 2.0 * r / n);
          grad->items[b](t + 1, c) += g;
          grad->items[b](t, c) -= g;
        }
      }
    }
  }
  return total / n;
}

template <class S>
double loss_foot_contact(const MotionBatch<S>& x, const MotionBatch<S>& x0_hat, const FeatureLayout& layout,
                         MotionBatch<S>* grad, double scale) {
  check_shapes(x, x0_hat);
  require(x.dim == layout.dim, ErrorCode::kLayoutMismatch, "batch dim does not match layout");
  const int contact = layout.slice("foot_contacts").offset;
  std::array<int, 4> foot_pos{};
  for (int s = 0; s < 4; ++s)
    foot_pos[static_cast<std::size_t>(s)] = layout.joint_position_offset(layout.foot_joints[static_cast<std::size_t>(s)]);
  const std::int64_t pairs = count_pairs(x);
  if (pairs == 0) return 0.0;
  const double n = static_cast<double>(pairs);
  double total = 0.0;
  for (int b = 0; b < x.batch(); ++b) {
    const auto& mask = x.mask[static_cast<std::size_t>(b)];
    for (int t = 0; t + 1 < x.pad_len; ++t) {
      if (!pair_valid<S>(mask, t)) continue;
      for (int s = 0; s < 4; ++s) {
        const double label = static_cast<double>(x.items[b](t, contact + s));
        if (label == 0.0) continue;
        for (int k = 0; k < 3; ++k) {
          const int c = foot_pos[static_cast<std::size_t>(s)] + k;
          const double v =
              label * (static_cast<double>(x0_hat.items[b](t + 1, c)) - static_cast<double>(x0_hat.items[b](t, c)));
          total += v * v;
          if (grad) {
            const S g = static_cast<S>(scale * 2.0 * v * label / n);
            grad->items[b](t + 1, c) += g;
            grad->items[b](t, c) -= g;
          }
        }
      }
    }
  }
  return total / n;
}

template <class S>
LossReport total_loss(const MotionBatch<S>& x, const MotionBatch<S>& x0_hat, const std::vector<int>& t,
                      const NoiseSchedule& schedule, const LossWeights& weights, const FeatureLayout& layout,
                      MotionBatch<S>* grad) {
  weights.validate();
  std::vector<double> lambda;
  for (int step : t) lambda.push_back(loss_weight(weights.lambda_t_rule, schedule, step));
  LossReport r;
  r.simple = loss_simple(x, x0_hat, lambda, grad, 1.0);
  r.vel = loss_velocity(x, x0_hat, grad, weights.lambda_vel);
  r.foot = loss_foot_contact(x, x0_hat, layout, grad, weights.lambda_foot);
  r.total = r.simple + weights.lambda_vel * r.vel + weights.lambda_foot * r.foot;
  for (int b = 0; b < x.batch(); ++b) r.simple_count += static_cast<std::int64_t>(x.valid_frames(b)) * x.dim;
  r.pair_count = count_pairs(x);
  return r;
}

#define OMG_INSTANTIATE(S)                                                                                   \
  template double loss_simple<S>(const MotionBatch<S>&, const MotionBatch<S>&, const std::vector<double>&,    \
                                 MotionBatch<S>*, double);                                                    \
  template double loss_velocity<S>(const MotionBatch<S>&, const MotionBatch<S>&, MotionBatch<S>*, double);    \
  template double loss_foot_contact<S>(const MotionBatch<S>&, const MotionBatch<S>&, const FeatureLayout&,    \
                                       MotionBatch<S>*, double);                                              \
  template LossReport total_loss<S>(const MotionBatch<S>&, const MotionBatch<S>&, const std::vector<int>&,    \
                                    const NoiseSchedule&, const LossWeights&, const FeatureLayout&,           \
                                    MotionBatch<S>*);

OMG_INSTANTIATE(float)
OMG_INSTANTIATE(double)
#undef OMG_INSTANTIATE

}  // namespace omg
