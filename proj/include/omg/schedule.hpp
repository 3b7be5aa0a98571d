#pragma once

#include "omg/rng.hpp"
#include "omg/tensor.hpp"

#include <string>
#include <vector>

namespace omg {

/// How x^(t) is formed from clean motion and noise. kVariancePreserving:
/// sqrt(abar) x + sqrt(1 - abar) eps. kVarianceExploding: x + sigma eps with
/// sigma = sqrt((1 - abar) / abar), the literal "x + sigma_t eps" reading.
enum class NoiseParameterization { kVariancePreserving, kVarianceExploding };

const char* parameterization_name(NoiseParameterization p);
NoiseParameterization parse_parameterization(const std::string& name);

struct NoiseSchedule {
  int steps = 0;                    // T
  std::vector<double> alpha_bar;    // T + 1 entries, alpha_bar[0] = 1
  std::string kind = "cosine";
  NoiseParameterization parameterization = NoiseParameterization::kVariancePreserving;

  double beta(int t) const { return 1.0 - alpha_bar[static_cast<std::size_t>(t)] / alpha_bar[static_cast<std::size_t>(t - 1)]; }
  /// Noise scale of the VE reading.
  double sigma(int t) const;
};

inline constexpr double kCosineOffset = 0.008;
inline constexpr double kMaxBeta = 0.999;

/// abar_t = f(t)/f(0), f(t) = cos^2(((t/T + s0)/(1 + s0)) pi/2), with per-step
/// betas clipped at 0.999 and abar rebuilt from the clipped betas.
NoiseSchedule build_cosine_schedule(int steps,
                                    NoiseParameterization p = NoiseParameterization::kVariancePreserving);

struct SamplerConfig {
  int n_steps = 200;
  double guidance = 4.5;
  std::uint64_t seed = 0;
  double eta = 0.0;
};

template <class S>
Mat<S> forward_noise(const Mat<S>& x, int t, const Mat<S>& noise, const NoiseSchedule& schedule);

/// x0_hat-parameterized DDIM update from t_cur to t_prev. With eta > 0 the
/// extra noise is drawn from `rng`, which must then be non-null.
template <class S>
Mat<S> ddim_step(const Mat<S>& x_t, const Mat<S>& x0_hat, int t_cur, int t_prev, const NoiseSchedule& schedule,
                 double eta = 0.0, Rng* rng = nullptr);

/// Noise estimate implied by (x_t, x0_hat) at timestep t.
template <class S>
Mat<S> implied_noise(const Mat<S>& x_t, const Mat<S>& x0_hat, int t, const NoiseSchedule& schedule);

/// Evenly strided timesteps T = tau_0 > ... > tau_n = 0 for an n-step sampler.
std::vector<int> sampling_timesteps(int total_steps, int n_steps);

/// Standard normal start state x^(T) for a sequence of `len` x `dim`,
/// scaled by sigma_T under the VE reading.
template <class S>
Mat<S> initial_noise(int len, int dim, const NoiseSchedule& schedule, Rng& rng);

template <class S>
Mat<S> normal_like(int rows, int cols, Rng& rng);

/// Loss weight lambda_t: "constant" (1) or "min-snr" (min(snr, 5)).
double loss_weight(const std::string& rule, const NoiseSchedule& schedule, int t);

}  // namespace omg
