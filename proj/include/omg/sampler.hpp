#pragma once

#include "omg/schedule.hpp"

#include <functional>
#include <vector>

namespace omg {

/// x0 prediction for a full sequence (positions 0..len-1) at timestep t.
using DenoiseFn = std::function<MatF(const MatF& x_t, int t)>;

/// (1 - s) * u + s * c, evaluated literally so s = 0 and s = 1 reproduce u
/// and c bit for bit.
template <class S>
Mat<S> guided_prediction(const Mat<S>& uncond, const Mat<S>& cond, double s) {
  const S w = static_cast<S>(s);
  return (static_cast<S>(1) - w) * uncond + w * cond;
}

/// DDIM over the strided sub-schedule starting from x^(T) drawn from `rng`.
/// With `cond` null the unconditional prediction is used alone.
MatF sample_sequence(const DenoiseFn& uncond, const DenoiseFn* cond, const SamplerConfig& config,
                     const NoiseSchedule& schedule, int len, int dim, Rng& rng);

/// `count` sequences; item i uses Rng(config.seed).split(i), so serial and
/// parallel runs agree.
std::vector<MatF> sample_many(const DenoiseFn& uncond, const DenoiseFn* cond, const SamplerConfig& config,
                              const NoiseSchedule& schedule, int len, int dim, int count, bool serial = serial_mode());

}  // namespace omg
