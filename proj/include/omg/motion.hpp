#pragma once

#include "omg/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace omg {

inline constexpr std::uint32_t kDefaultFps = 30;

/// Contiguous named slice of the per-frame feature vector.
struct FeatureSlice {
  std::string name;
  int offset = 0;
  int size = 0;
};

/// Per-frame feature composition for a skeleton with `joints` joints:
/// root angular velocity (1), root linear velocity (2), root height (1),
/// root-relative joint positions ((J-1)*3), 6D joint rotations ((J-1)*6),
/// joint velocities (J*3), foot contacts (4).
struct FeatureLayout {
  std::uint32_t id = 0;
  std::string name;
  int joints = 0;
  // Skeleton joint indices (>= 1) whose contacts occupy the 4 contact dims,
  // in contact-slice order.
  std::array<int, 4> foot_joints{};
  std::vector<FeatureSlice> slices;
  int dim = 0;

  static FeatureLayout build(std::uint32_t id, std::string name, int joints,
                             std::array<int, 4> foot_joints);

  const FeatureSlice& slice(std::string_view slice_name) const;

  /// Offset of joint `joint`'s xyz inside the joint_positions slice.
  int joint_position_offset(int joint) const;

  /// Throws kLayoutMismatch if the slices overlap, leave gaps, or the contact
  /// slice is not the trailing 4 dims.
  void validate() const;
};

inline constexpr std::uint32_t kLayoutHumanMl263 = 0;
inline constexpr std::uint32_t kLayoutDesk59 = 1;

/// 22-joint, 263-dim layout.
const FeatureLayout& humanml_layout();
/// 5-joint (pelvis plus two ankle/toe pairs), 59-dim layout for fast runs.
const FeatureLayout& desk_layout();
const FeatureLayout& layout_by_id(std::uint32_t id);

struct MotionSequence {
  MatF frames;  // n_frames x D
  std::uint32_t fps = kDefaultFps;
  std::uint32_t layout_id = kLayoutDesk59;

  int n_frames() const { return static_cast<int>(frames.rows()); }
  int dim() const { return static_cast<int>(frames.cols()); }
  const FeatureLayout& layout() const { return layout_by_id(layout_id); }

  /// n_frames >= 1, all values finite, contacts in [0, 1], D matches layout.
  void validate() const;
};

/// Reads an `.omgm` file: "OMGM", version=1, fps, n_frames, D, layout_id
/// (u32 little-endian) followed by n_frames*D float32 values, row-major.
MotionSequence read_motion_file(const std::filesystem::path& path);

void write_motion_file(const MotionSequence& seq, const std::filesystem::path& path);

/// Serialized form of write_motion_file, used for hashing and tests.
std::vector<std::byte> encode_motion(const MotionSequence& seq);
MotionSequence decode_motion(std::span<const std::byte> bytes, const std::string& origin);

/// Clamps the contact slice into [0, 1]; model outputs are unconstrained.
void clamp_contacts(MatF& frames, const FeatureLayout& layout);

/// Per-channel linear interpolation to a new frame rate.
MotionSequence resample(const MotionSequence& seq, std::uint32_t target_fps);

}  // namespace omg
