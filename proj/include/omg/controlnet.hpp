#pragma once

// Conditional denoiser: a frozen pretrained stack plus, per layer, a trainable
// copy of the block whose output feeds a MoC block; the MoC residual is added
// to the frozen block's output.

#include "omg/backbone.hpp"
#include "omg/moc.hpp"

#include <memory>

namespace omg {

template <class S>
struct ControlTrainable {
  std::vector<DiTBlockParams<S>> blocks;  // trainable copies
  std::vector<MoCParams<S>> moc;          // one per layer

  /// "control.blocks.L.*" then "control.moc.L.*".
  TensorList<S> tensors();
  TensorList<S> tensors() const { return const_cast<ControlTrainable*>(this)->tensors(); }
  /// Same shapes, all zero.
  ControlTrainable zeros_like() const;
};

template <class S>
struct ControlNetParams {
  std::shared_ptr<const DenoiserParams<S>> base;  // frozen
  ControlTrainable<S> trainable;
  MoCConfig moc_config;
  std::uint64_t frozen_checksum = 0;

  const ModelConfig& config() const { return base->config; }
  /// Throws CheckpointMismatch when the frozen tensors changed.
  void verify_integrity() const;
};

/// Copies every transformer block of `pretrained` and attaches a MoC block per
/// layer (d_model is taken from the backbone). The frozen weights are shared,
/// never copied into the trainable set.
template <class S>
ControlNetParams<S> build_controlnet(std::shared_ptr<const DenoiserParams<S>> pretrained, MoCConfig moc,
                                     std::uint64_t seed);

template <class S>
std::uint64_t frozen_checksum(const DenoiserParams<S>& base);

template <class S>
struct ControlCache {
  DenoiseCache<S> frozen;                 // timestep path, frozen blocks, final layer
  std::vector<BlockCache<S>> copies;
  std::vector<MoCCache<S>> moc;
};

/// x0 prediction of the conditional denoiser for one valid-frame sequence.
template <class S>
Mat<S> conditional_denoise_item(const ControlNetParams<S>& p, const Mat<S>& x, int t, std::span<const int> positions,
                                const TextConditioning& cond, ControlCache<S>* cache);

/// Accumulates gradients of the trainable tensors only.
template <class S>
void conditional_denoise_item_backward(const ControlNetParams<S>& p, const ControlCache<S>& cache, const Mat<S>& dout,
                                       ControlTrainable<S>& grad);

/// Batched form; one conditioning per batch item.
template <class S>
MotionBatch<S> conditional_denoise(const ControlNetParams<S>& p, const MotionBatch<S>& x_t, const std::vector<int>& t,
                                   const std::vector<TextConditioning>& cond, bool serial = serial_mode());

}  // namespace omg
