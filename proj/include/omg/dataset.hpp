#pragma once

#include "omg/motion.hpp"
#include "omg/rng.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace omg {

struct ClipEntry {
  std::string clip_id;
  int n_frames = 0;
  // Global frame offset of the clip's first frame within the dataset.
  std::int64_t offset = 0;
};

struct DatasetIndex {
  std::vector<ClipEntry> clips;
  std::int64_t total_frames = 0;

  void add(std::string clip_id, int n_frames);
  /// Clip containing global frame `frame`.
  std::size_t locate(std::int64_t frame) const;
};

/// Clips held in memory, with an optional caption per clip.
struct MotionDataset {
  std::uint32_t layout_id = kLayoutDesk59;
  DatasetIndex index;
  std::vector<MotionSequence> clips;
  std::vector<std::string> prompts;  // empty, or one per clip

  void add(std::string clip_id, MotionSequence seq, std::string prompt = {});
  bool paired() const { return !prompts.empty(); }
  std::size_t size() const { return clips.size(); }
};

struct WindowSpan {
  std::size_t clip = 0;
  int start = 0;
  int len = 0;
};

struct WindowSample {
  std::string clip_id;
  int start = 0;
  int len = 0;
  std::uint32_t layout_id = kLayoutDesk59;
  MatF data;  // len x D
};

/// Draws a start frame uniformly over every frame of the dataset, then a
/// length uniformly from [1, min(max_len, n_frames - start)].
WindowSpan sample_window_span(const DatasetIndex& index, Rng& rng, int max_len);
WindowSample sample_window(const MotionDataset& dataset, Rng& rng, int max_len);

template <class S>
struct MotionBatch {
  int pad_len = 0;
  int dim = 0;
  std::vector<Mat<S>> items;                       // pad_len x dim each
  std::vector<std::vector<std::uint8_t>> mask;     // pad_len each

  int batch() const { return static_cast<int>(items.size()); }
  int valid_frames(int b) const;
  static MotionBatch zeros_like(const MotionBatch& other);
};

using MotionBatchF = MotionBatch<float>;

/// Zero-pads each window to `pad_to` frames with a validity mask.
MotionBatchF batch_windows(const std::vector<WindowSample>& samples, int pad_to);

struct SyntheticConfig {
  int min_frames = 60;
  int max_frames = 240;
  std::uint32_t fps = kDefaultFps;
  double contact_height = 0.05;
};

/// Band-limited synthetic clips: every raw channel is an offset plus at most
/// four sinusoids; velocities are forward differences of positions and
/// contacts are thresholded foot heights. Deterministic in `seed`.
MotionDataset generate_synthetic_dataset(int n_clips, std::uint64_t seed, const FeatureLayout& layout,
                                         const SyntheticConfig& config = {});

struct PairedConfig {
  int n_frames = 60;
  std::uint32_t fps = kDefaultFps;
  // Random per-instance phases; when false, a prompt maps to exactly one clip.
  bool randomize_phase = false;
  double contact_height = 0.05;
};

/// Caption -> motion synthesis used for conditional experiments. Each content
/// word owns a fixed motion signature; "then" splits the clip into halves.
MotionSequence motion_for_prompt(const std::string& prompt, const FeatureLayout& layout,
                                 const PairedConfig& config, Rng& rng);
std::string random_prompt(Rng& rng);
MotionDataset generate_paired_dataset(int n_pairs, std::uint64_t seed, const FeatureLayout& layout,
                                      const PairedConfig& config = {});

/// Writes clip_XXXXX.omgm files plus index.json.
void save_dataset(const MotionDataset& dataset, const std::filesystem::path& dir);
/// Loads index.json when present, otherwise every *.omgm in name order.
MotionDataset load_dataset(const std::filesystem::path& dir);

}  // namespace omg
