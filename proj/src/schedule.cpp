#include "omg/schedule.hpp"

#include "omg/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace omg {

const char* parameterization_name(NoiseParameterization p) {
  return p == NoiseParameterization::kVariancePreserving ? "vp" : "ve";
}

NoiseParameterization parse_parameterization(const std::string& name) {
  if (name == "vp") return NoiseParameterization::kVariancePreserving;
  if (name == "ve") return NoiseParameterization::kVarianceExploding;
  fail(ErrorCode::kConfig, "unknown noise parameterization '" + name + "' (expected vp or ve)");
}

double NoiseSchedule::sigma(int t) const {
  const double ab = alpha_bar[static_cast<std::size_t>(t)];
  return std::sqrt((1.0 - ab) / ab);
}

NoiseSchedule build_cosine_schedule(int steps, NoiseParameterization p) {
  require(steps >= 1, ErrorCode::kInvalidArgument, "schedule needs T >= 1");
  auto f = [&](int t) {
    const double c = std::cos(((static_cast<double>(t) / steps + kCosineOffset) / (1.0 + kCosineOffset)) *
                              std::numbers::pi / 2.0);
    return c * c;
  };
  NoiseSchedule s;
  s.steps = steps;
  s.parameterization = p;
  s.alpha_bar.resize(static_cast<std::size_t>(steps) + 1);
  s.alpha_bar[0] = 1.0;
  const double f0 = f(0);
  double prev_raw = 1.0;
  for (int t = 1; t <= steps; ++t) {
    const double raw = f(t) / f0;
    const double beta = std::min(1.0 - raw / prev_raw, kMaxBeta);
    s.alpha_bar[static_cast<std::size_t>(t)] = s.alpha_bar[static_cast<std::size_t>(t - 1)] * (1.0 - beta);
    prev_raw = raw;
  }
  return s;
}

namespace {

void check_t(const NoiseSchedule& schedule, int t, const char* what) {
  if (t < 0 || t > schedule.steps)
    fail(ErrorCode::kScheduleOutOfRange, std::string(what) + " timestep " + std::to_string(t) + " outside [0, " +
                                             std::to_string(schedule.steps) + "]");
}

}  // namespace

template <class S>
Mat<S> forward_noise(const Mat<S>& x, int t, const Mat<S>& noise, const NoiseSchedule& schedule) {
  require(x.rows() == noise.rows() && x.cols() == noise.cols(), ErrorCode::kShapeMismatch,
          "noise shape differs from motion shape");
  check_t(schedule, t, "forward_noise");
  const double ab = schedule.alpha_bar[static_cast<std::size_t>(t)];
  if (schedule.parameterization == NoiseParameterization::kVarianceExploding)
    return x + static_cast<S>(schedule.sigma(t)) * noise;
  return static_cast<S>(std::sqrt(ab)) * x + static_cast<S>(std::sqrt(1.0 - ab)) * noise;
}

template <class S>
Mat<S> implied_noise(const Mat<S>& x_t, const Mat<S>& x0_hat, int t, const NoiseSchedule& schedule) {
  check_t(schedule, t, "implied_noise");
  require(t >= 1, ErrorCode::kScheduleOutOfRange, "noise is undefined at t=0");
  const double ab = schedule.alpha_bar[static_cast<std::size_t>(t)];
  if (schedule.parameterization == NoiseParameterization::kVarianceExploding)
    return (x_t - x0_hat) / static_cast<S>(schedule.sigma(t));
  return (x_t - static_cast<S>(std::sqrt(ab)) * x0_hat) / static_cast<S>(std::sqrt(1.0 - ab));
}

template <class S>
Mat<S> ddim_step(const Mat<S>& x_t, const Mat<S>& x0_hat, int t_cur, int t_prev, const NoiseSchedule& schedule,
                 double eta, Rng* rng) {
  check_t(schedule, t_cur, "ddim_step current");
  check_t(schedule, t_prev, "ddim_step previous");
  require(t_prev < t_cur, ErrorCode::kScheduleOutOfRange, "ddim_step requires t_prev < t_cur");
  require(x_t.rows() == x0_hat.rows() && x_t.cols() == x0_hat.cols(), ErrorCode::kShapeMismatch,
          "x_t and x0_hat shapes differ");
  const Mat<S> eps = implied_noise(x_t, x0_hat, t_cur, schedule);
  if (t_prev == 0) return x0_hat;
  const double ab_cur = schedule.alpha_bar[static_cast<std::size_t>(t_cur)];
  const double ab_prev = schedule.alpha_bar[static_cast<std::size_t>(t_prev)];
  if (schedule.parameterization == NoiseParameterization::kVarianceExploding) {
    // eta is ignored for the VE reading: deterministic probability-flow step.
    return x0_hat + static_cast<S>(schedule.sigma(t_prev)) * eps;
  }
  double sigma = 0.0;
  if (eta > 0.0) {
    sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab_cur)) * std::sqrt(1.0 - ab_cur / ab_prev);
  }
  const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
  Mat<S> out = static_cast<S>(std::sqrt(ab_prev)) * x0_hat + static_cast<S>(dir) * eps;
  if (sigma > 0.0) {
    require(rng != nullptr, ErrorCode::kInvalidArgument, "stochastic DDIM needs an rng");
    out += static_cast<S>(sigma) * normal_like<S>(static_cast<int>(x_t.rows()), static_cast<int>(x_t.cols()), *rng);
  }
  return out;
}

std::vector<int> sampling_timesteps(int total_steps, int n_steps) {
  require(n_steps >= 1 && n_steps <= total_steps, ErrorCode::kScheduleOutOfRange,
          "sampler steps must lie in [1, T]");
  std::vector<int> ts(static_cast<std::size_t>(n_steps) + 1);
  for (int i = 0; i <= n_steps; ++i) {
    ts[static_cast<std::size_t>(i)] =
        static_cast<int>(std::llround(static_cast<double>(total_steps) * (n_steps - i) / n_steps));
  }
  return ts;
}

template <class S>
Mat<S> normal_like(int rows, int cols, Rng& rng) {
  Mat<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(rng.normal());
  return m;
}

template <class S>
Mat<S> initial_noise(int len, int dim, const NoiseSchedule& schedule, Rng& rng) {
  Mat<S> x = normal_like<S>(len, dim, rng);
  if (schedule.parameterization == NoiseParameterization::kVarianceExploding)
    x *= static_cast<S>(std::sqrt(1.0 + schedule.sigma(schedule.steps) * schedule.sigma(schedule.steps)));
  return x;
}

double loss_weight(const std::string& rule, const NoiseSchedule& schedule, int t) {
  if (rule == "constant") return 1.0;
  if (rule == "min-snr") {
    const double ab = schedule.alpha_bar[static_cast<std::size_t>(t)];
    return std::min(ab / (1.0 - ab), 5.0);
  }
  fail(ErrorCode::kConfig, "unknown loss weighting rule '" + rule + "'");
}

template Mat<float> forward_noise(const Mat<float>&, int, const Mat<float>&, const NoiseSchedule&);
template Mat<double> forward_noise(const Mat<double>&, int, const Mat<double>&, const NoiseSchedule&);
template Mat<float> implied_noise(const Mat<float>&, const Mat<float>&, int, const NoiseSchedule&);
template Mat<double> implied_noise(const Mat<double>&, const Mat<double>&, int, const NoiseSchedule&);
template Mat<float> ddim_step(const Mat<float>&, const Mat<float>&, int, int, const NoiseSchedule&, double, Rng*);
template Mat<double> ddim_step(const Mat<double>&, const Mat<double>&, int, int, const NoiseSchedule&, double, Rng*);
template Mat<float> normal_like(int, int, Rng&);
template Mat<double> normal_like(int, int, Rng&);
template Mat<float> initial_noise(int, int, const NoiseSchedule&, Rng&);
template Mat<double> initial_noise(int, int, const NoiseSchedule&, Rng&);

}  // namespace omg
