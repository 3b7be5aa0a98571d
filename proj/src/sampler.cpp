#include "omg/sampler.hpp"

#include "omg/error.hpp"

namespace omg {

MatF sample_sequence(const DenoiseFn& uncond, const DenoiseFn* cond, const SamplerConfig& config,
                     const NoiseSchedule& schedule, int len, int dim, Rng& rng) {
  require(config.n_steps >= 1 && config.n_steps <= schedule.steps, ErrorCode::kConfig,
          "sampler steps must lie in [1, " + std::to_string(schedule.steps) + "]");
  require(config.guidance >= 0.0, ErrorCode::kConfig, "guidance strength must be >= 0");
  require(len >= 1, ErrorCode::kConfig, "sample length must be >= 1");
  const std::vector<int> taus = sampling_timesteps(schedule.steps, config.n_steps);
  MatF x = initial_noise<float>(len, dim, schedule, rng);
  for (std::size_t i = 0; i + 1 < taus.size(); ++i) {
    const int t = taus[i];
    MatF x0 = uncond(x, t);
    if (cond) x0 = guided_prediction(x0, (*cond)(x, t), config.guidance);
    x = ddim_step(x, x0, t, taus[i + 1], schedule, config.eta, &rng);
  }
  return x;
}

std::vector<MatF> sample_many(const DenoiseFn& uncond, const DenoiseFn* cond, const SamplerConfig& config,
                              const NoiseSchedule& schedule, int len, int dim, int count, bool serial) {
  require(count >= 1, ErrorCode::kConfig, "sample count must be >= 1");
  std::vector<MatF> out(static_cast<std::size_t>(count));
  const Rng root(config.seed);
  parallel_for(
      out.size(),
      [&](std::size_t i) {
        Rng rng = root.split(i);
        out[i] = sample_sequence(uncond, cond, config, schedule, len, dim, rng);
      },
      serial);
  return out;
}

}  // namespace omg
