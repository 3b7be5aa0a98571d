#include "omg/dataset.hpp"

#include "json.hpp"
#include "omg/error.hpp"
#include "omg/hash.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace omg {

void DatasetIndex::add(std::string clip_id, int n_frames) {
  clips.push_back({std::move(clip_id), n_frames, total_frames});
  total_frames += n_frames;
}

std::size_t DatasetIndex::locate(std::int64_t frame) const {
  auto it = std::upper_bound(clips.begin(), clips.end(), frame,
                             [](std::int64_t f, const ClipEntry& c) { return f < c.offset; });
  return static_cast<std::size_t>(std::distance(clips.begin(), it)) - 1;
}

void MotionDataset::add(std::string clip_id, MotionSequence seq, std::string prompt) {
  if (clips.empty()) layout_id = seq.layout_id;
  require(seq.layout_id == layout_id, ErrorCode::kLayoutMismatch, "clip layout differs from dataset");
  if (!prompt.empty() || !prompts.empty()) {
    require(prompts.size() == clips.size(), ErrorCode::kData, "mixing captioned and uncaptioned clips");
    prompts.push_back(std::move(prompt));
  }
  index.add(std::move(clip_id), seq.n_frames());
  clips.push_back(std::move(seq));
}

WindowSpan sample_window_span(const DatasetIndex& index, Rng& rng, int max_len) {
  require(index.total_frames > 0, ErrorCode::kEmptyDataset, "cannot sample from an empty dataset");
  require(max_len >= 1, ErrorCode::kInvalidArgument, "max window length must be >= 1");
  const std::int64_t frame = rng.uniform_int(0, index.total_frames - 1);
  const std::size_t clip = index.locate(frame);
  const auto& entry = index.clips[clip];
  const int start = static_cast<int>(frame - entry.offset);
  const int cap = std::min(max_len, entry.n_frames - start);
  const int len = static_cast<int>(rng.uniform_int(1, cap));
  return {clip, start, len};
}

WindowSample sample_window(const MotionDataset& dataset, Rng& rng, int max_len) {
  const WindowSpan span = sample_window_span(dataset.index, rng, max_len);
  WindowSample w;
  w.clip_id = dataset.index.clips[span.clip].clip_id;
  w.start = span.start;
  w.len = span.len;
  w.layout_id = dataset.layout_id;
  w.data = dataset.clips[span.clip].frames.middleRows(span.start, span.len);
  return w;
}

template <class S>
int MotionBatch<S>::valid_frames(int b) const {
  int n = 0;
  for (auto m : mask[static_cast<std::size_t>(b)]) n += m ? 1 : 0;
  return n;
}

template <class S>
MotionBatch<S> MotionBatch<S>::zeros_like(const MotionBatch& other) {
  MotionBatch out;
  out.pad_len = other.pad_len;
  out.dim = other.dim;
  out.mask = other.mask;
  for (std::size_t b = 0; b < other.items.size(); ++b) out.items.push_back(Mat<S>::Zero(other.pad_len, other.dim));
  return out;
}

template struct MotionBatch<float>;
template struct MotionBatch<double>;

MotionBatchF batch_windows(const std::vector<WindowSample>& samples, int pad_to) {
  require(!samples.empty(), ErrorCode::kEmptyDataset, "no windows to batch");
  MotionBatchF batch;
  batch.pad_len = pad_to;
  batch.dim = static_cast<int>(samples.front().data.cols());
  for (const auto& s : samples) {
    require(s.layout_id == samples.front().layout_id && s.data.cols() == batch.dim,
            ErrorCode::kLayoutMismatch, "windows in a batch must share a layout");
    require(s.len <= pad_to, ErrorCode::kInvalidArgument, "pad_to is shorter than a window");
    MatF item = MatF::Zero(pad_to, batch.dim);
    item.topRows(s.len) = s.data;
    std::vector<std::uint8_t> m(static_cast<std::size_t>(pad_to), 0);
    std::fill(m.begin(), m.begin() + s.len, 1);
    batch.items.push_back(std::move(item));
    batch.mask.push_back(std::move(m));
  }
  return batch;
}

namespace {

struct Wave {
  double amplitude = 0.0;
  double freq_hz = 0.0;
  double phase = 0.0;
};

// offset + sum of waves, optionally active only on [begin, end) of the clip
// (in normalized time) with a raised-cosine edge.
struct Track {
  double offset = 0.0;
  std::vector<Wave> waves;

  double eval(double seconds) const {
    double v = offset;
    for (const auto& w : waves) v += w.amplitude * std::sin(2.0 * std::numbers::pi * w.freq_hz * seconds + w.phase);
    return v;
  }
};

struct Component {
  int channel = 0;
  Wave wave;
  double begin = 0.0;
  double end = 1.0;
};

// Raw trajectory channels: yaw rate, vx, vz, root height, then (J-1)*3
// root-relative positions, then (J-1)*3 axis-angle rotations.
struct Recipe {
  std::vector<Track> tracks;
  std::vector<Component> extra;  // windowed components added on top

  int joints = 0;
  static constexpr int kYaw = 0, kVx = 1, kVz = 2, kHeight = 3, kPos = 4;
  int rot_base() const { return kPos + (joints - 1) * 3; }

  double eval(int channel, double seconds, double normalized) const {
    double v = tracks[static_cast<std::size_t>(channel)].eval(seconds);
    for (const auto& c : extra) {
      if (c.channel != channel) continue;
      const double width = 0.08;
      auto edge = [&](double x) {
        if (x <= 0.0) return 0.0;
        if (x >= width) return 1.0;
        return 0.5 - 0.5 * std::cos(std::numbers::pi * x / width);
      };
      const double env = edge(normalized - c.begin) * edge(c.end - normalized);
      v += env * c.wave.amplitude * std::sin(2.0 * std::numbers::pi * c.wave.freq_hz * seconds + c.wave.phase);
    }
    return v;
  }
};

bool is_foot(const FeatureLayout& layout, int joint) {
  return std::find(layout.foot_joints.begin(), layout.foot_joints.end(), joint) != layout.foot_joints.end();
}

// Neutral skeleton offsets shared by every clip of a layout.
Recipe base_recipe(const FeatureLayout& layout) {
  Recipe r;
  r.joints = layout.joints;
  r.tracks.resize(static_cast<std::size_t>(Recipe::kPos + (layout.joints - 1) * 6));
  r.tracks[Recipe::kHeight].offset = 0.9;
  Rng skeleton(fnv1a64(layout.name));
  for (int j = 1; j < layout.joints; ++j) {
    const int p = Recipe::kPos + (j - 1) * 3;
    if (is_foot(layout, j)) {
      const auto slot = std::distance(layout.foot_joints.begin(),
                                      std::find(layout.foot_joints.begin(), layout.foot_joints.end(), j));
      const bool left = slot < 2;
      const bool toe = slot % 2 == 1;
      r.tracks[static_cast<std::size_t>(p)].offset = left ? 0.1 : -0.1;
      r.tracks[static_cast<std::size_t>(p + 1)].offset = toe ? -0.88 : -0.86;
      r.tracks[static_cast<std::size_t>(p + 2)].offset = toe ? 0.12 : 0.0;
    } else {
      r.tracks[static_cast<std::size_t>(p)].offset = skeleton.uniform(-0.3, 0.3);
      r.tracks[static_cast<std::size_t>(p + 1)].offset = skeleton.uniform(-0.5, 0.6);
      r.tracks[static_cast<std::size_t>(p + 2)].offset = skeleton.uniform(-0.1, 0.1);
    }
  }
  return r;
}

double channel_amplitude(const Recipe& r, int channel, Rng& rng) {
  if (channel == Recipe::kYaw) return rng.uniform(0.002, 0.02);
  if (channel == Recipe::kVx || channel == Recipe::kVz) return rng.uniform(0.002, 0.02);
  if (channel == Recipe::kHeight) return rng.uniform(0.005, 0.02);
  if (channel < r.rot_base()) return rng.uniform(0.01, 0.08);
  return rng.uniform(0.05, 0.3);
}

MotionSequence render(const Recipe& recipe, const FeatureLayout& layout, int n_frames, std::uint32_t fps,
                      double contact_height) {
  const int J = layout.joints;
  // Positions rendered one frame past the end so the last velocity is a true
  // forward difference.
  const int n_ext = n_frames + 1;
  Eigen::MatrixXd raw(n_ext, static_cast<Eigen::Index>(recipe.tracks.size()));
  for (int f = 0; f < n_ext; ++f) {
    const double seconds = static_cast<double>(f) / fps;
    const double normalized = n_frames > 1 ? static_cast<double>(f) / (n_frames - 1) : 0.0;
    for (Eigen::Index c = 0; c < raw.cols(); ++c) raw(f, c) = recipe.eval(static_cast<int>(c), seconds, normalized);
  }
  // Store positions in float first; velocities are differences of the
  // stored values so the finite-difference identity holds to rounding.
  const auto& s_ang = layout.slice("root_angular_velocity");
  const auto& s_lin = layout.slice("root_linear_velocity");
  const auto& s_h = layout.slice("root_height");
  const auto& s_pos = layout.slice("joint_positions");
  const auto& s_rot = layout.slice("joint_rotations");
  const auto& s_vel = layout.slice("joint_velocities");
  const auto& s_contact = layout.slice("foot_contacts");

  MotionSequence seq;
  seq.fps = fps;
  seq.layout_id = layout.id;
  seq.frames = MatF::Zero(n_frames, layout.dim);
  Eigen::MatrixXf pos(n_ext, (J - 1) * 3);
  Eigen::VectorXf height(n_ext);
  for (int f = 0; f < n_ext; ++f) {
    for (int k = 0; k < (J - 1) * 3; ++k) pos(f, k) = static_cast<float>(raw(f, Recipe::kPos + k));
    height(f) = static_cast<float>(raw(f, Recipe::kHeight));
  }
  for (int f = 0; f < n_frames; ++f) {
    auto row = seq.frames.row(f);
    row(s_ang.offset) = static_cast<float>(raw(f, Recipe::kYaw));
    row(s_lin.offset) = static_cast<float>(raw(f, Recipe::kVx));
    row(s_lin.offset + 1) = static_cast<float>(raw(f, Recipe::kVz));
    row(s_h.offset) = height(f);
    for (int k = 0; k < (J - 1) * 3; ++k) row(s_pos.offset + k) = pos(f, k);
    for (int j = 1; j < J; ++j) {
      const int rb = recipe.rot_base() + (j - 1) * 3;
      const Eigen::Vector3d aa(raw(f, rb), raw(f, rb + 1), raw(f, rb + 2));
      const double angle = aa.norm();
      const Eigen::Matrix3d rot =
          angle > 1e-12 ? Eigen::AngleAxisd(angle, aa / angle).toRotationMatrix() : Eigen::Matrix3d::Identity();
      const int o = s_rot.offset + (j - 1) * 6;
      for (int k = 0; k < 3; ++k) {
        row(o + k) = static_cast<float>(rot(k, 0));
        row(o + 3 + k) = static_cast<float>(rot(k, 1));
      }
    }
    row(s_vel.offset) = static_cast<float>(raw(f, Recipe::kVx));
    row(s_vel.offset + 1) = height(f + 1) - height(f);
    row(s_vel.offset + 2) = static_cast<float>(raw(f, Recipe::kVz));
    for (int k = 0; k < (J - 1) * 3; ++k) row(s_vel.offset + 3 + k) = pos(f + 1, k) - pos(f, k);
    for (int slot = 0; slot < 4; ++slot) {
      const int j = layout.foot_joints[static_cast<std::size_t>(slot)];
      const double foot_height = height(f) + pos(f, (j - 1) * 3 + 1);
      row(s_contact.offset + slot) = foot_height < contact_height ? 1.0f : 0.0f;
    }
  }
  return seq;
}

}  // namespace

MotionDataset generate_synthetic_dataset(int n_clips, std::uint64_t seed, const FeatureLayout& layout,
                                         const SyntheticConfig& config) {
  require(n_clips >= 1, ErrorCode::kInvalidArgument, "n_clips must be >= 1");
  require(config.min_frames >= 1 && config.max_frames >= config.min_frames, ErrorCode::kInvalidArgument,
          "bad frame range");
  MotionDataset dataset;
  dataset.layout_id = layout.id;
  const Recipe base = base_recipe(layout);
  for (int clip = 0; clip < n_clips; ++clip) {
    Rng rng = Rng(seed).split(static_cast<std::uint64_t>(clip));
    Recipe recipe = base;
    for (std::size_t c = 0; c < recipe.tracks.size(); ++c) {
      Track& track = recipe.tracks[c];
      const int channel = static_cast<int>(c);
      if (channel == Recipe::kYaw || channel == Recipe::kVx || channel == Recipe::kVz)
        track.offset = rng.uniform(-0.02, 0.02);
      else if (channel >= recipe.rot_base())
        track.offset = rng.uniform(-0.3, 0.3);
      const int n_waves = static_cast<int>(rng.uniform_int(1, 4));
      for (int w = 0; w < n_waves; ++w) {
        Wave wave;
        wave.amplitude = channel_amplitude(recipe, channel, rng);
        wave.freq_hz = rng.uniform(0.2, 2.0);
        wave.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        track.waves.push_back(wave);
      }
    }
    const int n_frames = static_cast<int>(rng.uniform_int(config.min_frames, config.max_frames));
    char id[32];
    std::snprintf(id, sizeof id, "clip_%05d", clip);
    dataset.add(id, render(recipe, layout, n_frames, config.fps, config.contact_height));
  }
  return dataset;
}

namespace {

const std::vector<std::string>& actions() {
  static const std::vector<std::string> words = {"walks", "runs", "jumps", "spins", "waves", "kicks",
                                                 "crouches", "sways", "hops", "stomps", "lunges", "twists"};
  return words;
}

const std::vector<std::string>& modifiers() {
  static const std::vector<std::string> words = {"slowly", "quickly", "gently", "wildly", "forward", "backward"};
  return words;
}

bool is_stopword(const std::string& w) { return w == "a" || w == "person" || w == "then" || w == "and"; }

// Fixed signature of a content word: a handful of (channel, wave) pairs.
std::vector<Component> word_signature(const std::string& word, const Recipe& recipe) {
  Rng rng(fnv1a64(word));
  std::vector<Component> out;
  const int n_channels = static_cast<int>(recipe.tracks.size());
  for (int k = 0; k < 6; ++k) {
    Component c;
    c.channel = static_cast<int>(rng.uniform_int(Recipe::kHeight, n_channels - 1));
    c.wave.amplitude = 2.0 * channel_amplitude(recipe, c.channel, rng);
    c.wave.freq_hz = rng.uniform(0.4, 2.0);
    c.wave.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    out.push_back(c);
  }
  return out;
}

std::vector<std::string> split_words(const std::string& prompt) {
  std::istringstream in(prompt);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

}  // namespace

std::string random_prompt(Rng& rng) {
  const auto& act = actions();
  const auto& mod = modifiers();
  auto pick = [&](const std::vector<std::string>& v) {
    return v[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(v.size()) - 1))];
  };
  if (rng.bernoulli(0.5)) return "a person " + pick(act) + " " + pick(mod);
  std::string first = pick(act);
  std::string second = pick(act);
  while (second == first) second = pick(act);
  return "a person " + first + " then " + second;
}

MotionSequence motion_for_prompt(const std::string& prompt, const FeatureLayout& layout, const PairedConfig& config,
                                 Rng& rng) {
  Recipe recipe = base_recipe(layout);
  const auto words = split_words(prompt);
  const auto then_pos = std::find(words.begin(), words.end(), "then");
  for (auto it = words.begin(); it != words.end(); ++it) {
    if (is_stopword(*it)) continue;
    double begin = 0.0, end = 1.0;
    if (then_pos != words.end()) {
      if (it < then_pos) end = 0.5;
      else begin = 0.5;
      // Widen so the envelope reaches full amplitude at the clip edges.
      if (begin == 0.0) begin = -1.0;
      if (end == 1.0) end = 2.0;
    } else {
      begin = -1.0;
      end = 2.0;
    }
    for (Component c : word_signature(*it, recipe)) {
      c.begin = begin;
      c.end = end;
      if (config.randomize_phase) c.wave.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      recipe.extra.push_back(c);
    }
  }
  return render(recipe, layout, config.n_frames, config.fps, config.contact_height);
}

MotionDataset generate_paired_dataset(int n_pairs, std::uint64_t seed, const FeatureLayout& layout,
                                      const PairedConfig& config) {
  require(n_pairs >= 1, ErrorCode::kInvalidArgument, "n_pairs must be >= 1");
  MotionDataset dataset;
  dataset.layout_id = layout.id;
  for (int i = 0; i < n_pairs; ++i) {
    Rng rng = Rng(seed).split(static_cast<std::uint64_t>(i));
    std::string prompt = random_prompt(rng);
    char id[32];
    std::snprintf(id, sizeof id, "pair_%05d", i);
    dataset.add(id, motion_for_prompt(prompt, layout, config, rng), prompt);
  }
  return dataset;
}

void save_dataset(const MotionDataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json index;
  index["layout_id"] = dataset.layout_id;
  index["total_frames"] = dataset.index.total_frames;
  auto& clips = index["clips"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& entry = dataset.index.clips[i];
    const std::string file = entry.clip_id + ".omgm";
    write_motion_file(dataset.clips[i], dir / file);
    nlohmann::ordered_json c{{"id", entry.clip_id}, {"file", file}, {"n_frames", entry.n_frames},
                             {"offset", entry.offset}};
    if (dataset.paired()) c["prompt"] = dataset.prompts[i];
    clips.push_back(std::move(c));
  }
  std::ofstream out(dir / "index.json");
  if (!out) fail(ErrorCode::kIo, "cannot write " + (dir / "index.json").string());
  out << index.dump(2) << "\n";
}

MotionDataset load_dataset(const std::filesystem::path& dir) {
  require(std::filesystem::is_directory(dir), ErrorCode::kData, "data directory not found: " + dir.string());
  MotionDataset dataset;
  const auto index_path = dir / "index.json";
  if (std::filesystem::exists(index_path)) {
    std::ifstream in(index_path);
    nlohmann::json index;
    try {
      in >> index;
      for (const auto& c : index.at("clips")) {
        dataset.add(c.at("id").get<std::string>(), read_motion_file(dir / c.at("file").get<std::string>()),
                    c.value("prompt", std::string{}));
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kData, index_path.string() + ": " + e.what());
    }
  } else {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
      if (entry.path().extension() == ".omgm") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) dataset.add(f.stem().string(), read_motion_file(f));
  }
  require(dataset.size() > 0, ErrorCode::kData, "no motion clips in " + dir.string());
  return dataset;
}

}  // namespace omg
