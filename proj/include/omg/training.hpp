#pragma once

#include "omg/controlnet.hpp"
#include "omg/losses.hpp"
#include "omg/optim.hpp"

#include <filesystem>
#include <functional>
#include <memory>

namespace omg {

struct TrainConfig {
  OptimizerConfig optim;
  LossWeights weights;
  int batch_size = 8;
  int window = 300;        // L_max of the sliding random window
  bool full_clips = false;  // draw whole clips instead of windows
  std::uint64_t seed = 0;
  double eos_dropout = 0.5;  // conditional training only

  void validate() const;
};

/// One drawn minibatch: clean windows, their noised versions, timesteps and
/// (for paired data) captions.
struct TrainBatch {
  MotionBatchF x;
  MotionBatchF x_t;
  std::vector<int> t;
  std::vector<std::string> prompts;
};

TrainBatch draw_batch(const MotionDataset& data, const NoiseSchedule& schedule, int batch_size, int window,
                      bool full_clips, Rng& rng);

struct StepReport {
  std::int64_t step = 0;  // index of the step just taken
  double lr = 0.0;
  LossReport loss;
};
using StepCallback = std::function<void(const StepReport&)>;

/// Continues unconditional training from optimizer.steps_taken() up to
/// `until_step`. Step k draws its batch from Rng(config.seed).split(k), so a
/// resumed run matches an uninterrupted one. A non-finite loss throws
/// Diverged.
void pretrain(DenoiserParams<float>& params, AdamW& optimizer, const MotionDataset& data,
              const NoiseSchedule& schedule, const TrainConfig& config, std::int64_t until_step,
              const StepCallback& on_step = {}, bool serial = serial_mode());

/// As `pretrain` for the trainable ControlNet tensors, with eos dropout.
void finetune(ControlNetParams<float>& params, AdamW& optimizer, const MotionDataset& data,
              const EmbeddingProvider& text, const NoiseSchedule& schedule, const TrainConfig& config,
              std::int64_t until_step, const StepCallback& on_step = {}, bool serial = serial_mode());

/// Fixed (window, t, noise) draws for measuring progress without sampling noise.
struct ProbeSet {
  TrainBatch batch;
  std::vector<TextConditioning> cond;  // filled when a provider is given
};

ProbeSet make_probe_set(const MotionDataset& data, const NoiseSchedule& schedule, int n, int window, bool full_clips,
                        std::uint64_t seed, const EmbeddingProvider* text = nullptr);
LossReport probe_loss(const DenoiserParams<float>& params, const ProbeSet& probe, const NoiseSchedule& schedule,
                      const LossWeights& weights, const FeatureLayout& layout, bool serial = serial_mode());
LossReport probe_loss(const ControlNetParams<float>& params, const ProbeSet& probe, const NoiseSchedule& schedule,
                      const LossWeights& weights, const FeatureLayout& layout, bool serial = serial_mode());

// ---- persistence -----------------------------------------------------------------

struct BackboneCheckpoint {
  std::shared_ptr<DenoiserParams<float>> params;
  NoiseSchedule schedule;
  std::int64_t step = 0;
  std::uint64_t checksum = 0;  // of the parameter tensors
  std::string metadata;
};

/// Optimizer moments are stored when `optimizer` is non-null.
void save_backbone(const std::filesystem::path& path, const DenoiserParams<float>& params,
                   const NoiseSchedule& schedule, AdamW* optimizer);
BackboneCheckpoint load_backbone(const std::filesystem::path& path, AdamW* optimizer = nullptr);

struct ControlNetCheckpoint {
  ControlNetParams<float> params;
  NoiseSchedule schedule;
  std::int64_t step = 0;
  std::string ablation;
  std::string metadata;
};

void save_controlnet(const std::filesystem::path& path, const ControlNetParams<float>& params,
                     const NoiseSchedule& schedule, AdamW* optimizer, const std::string& ablation);
/// Rebuilds the frozen backbone from the file and verifies its checksum
/// against the recorded one (CheckpointMismatch otherwise).
ControlNetCheckpoint load_controlnet(const std::filesystem::path& path, AdamW* optimizer = nullptr);

}  // namespace omg
