#include "omg/motion.hpp"

#include "binio.hpp"
#include "omg/error.hpp"

#include <cmath>

namespace omg {

FeatureLayout FeatureLayout::build(std::uint32_t id, std::string name, int joints,
                                   std::array<int, 4> foot_joints) {
  FeatureLayout layout;
  layout.id = id;
  layout.name = std::move(name);
  layout.joints = joints;
  layout.foot_joints = foot_joints;
  int offset = 0;
  auto add = [&](const char* slice_name, int size) {
    layout.slices.push_back({slice_name, offset, size});
    offset += size;
  };
  add("root_angular_velocity", 1);
  add("root_linear_velocity", 2);
  add("root_height", 1);
  add("joint_positions", (joints - 1) * 3);
  add("joint_rotations", (joints - 1) * 6);
  add("joint_velocities", joints * 3);
  add("foot_contacts", 4);
  layout.dim = offset;
  layout.validate();
  return layout;
}

const FeatureSlice& FeatureLayout::slice(std::string_view slice_name) const {
  for (const auto& s : slices)
    if (s.name == slice_name) return s;
  fail(ErrorCode::kLayoutMismatch, "layout " + name + " has no slice " + std::string(slice_name));
}

int FeatureLayout::joint_position_offset(int joint) const {
  require(joint >= 1 && joint < joints, ErrorCode::kLayoutMissingFeet,
          "joint index " + std::to_string(joint) + " has no root-relative position");
  return slice("joint_positions").offset + (joint - 1) * 3;
}

void FeatureLayout::validate() const {
  require(joints >= 2, ErrorCode::kLayoutMismatch, "layout needs at least two joints");
  int expected = 0;
  for (const auto& s : slices) {
    require(s.offset == expected && s.size > 0, ErrorCode::kLayoutMismatch,
            "slice " + s.name + " is not contiguous");
    expected += s.size;
  }
  require(expected == dim, ErrorCode::kLayoutMismatch, "slice sizes do not sum to dim");
  require(!slices.empty() && slices.back().name == "foot_contacts" && slices.back().size == 4,
          ErrorCode::kLayoutMismatch, "foot_contacts must be the trailing 4 dims");
  for (int j : foot_joints)
    require(j >= 1 && j < joints, ErrorCode::kLayoutMissingFeet, "foot joint out of range");
}

const FeatureLayout& humanml_layout() {
  static const FeatureLayout layout =
      FeatureLayout::build(kLayoutHumanMl263, "humanml-263", 22, {7, 10, 8, 11});
  return layout;
}

const FeatureLayout& desk_layout() {
  static const FeatureLayout layout = FeatureLayout::build(kLayoutDesk59, "desk-59", 5, {1, 2, 3, 4});
  return layout;
}

const FeatureLayout& layout_by_id(std::uint32_t id) {
  switch (id) {
    case kLayoutHumanMl263:
      return humanml_layout();
    case kLayoutDesk59:
      return desk_layout();
    default:
      fail(ErrorCode::kLayoutMismatch, "unknown layout id " + std::to_string(id));
  }
}

void MotionSequence::validate() const {
  const FeatureLayout& lay = layout();
  require(n_frames() >= 1, ErrorCode::kData, "motion has no frames");
  require(dim() == lay.dim, ErrorCode::kDimensionMismatch,
          "motion dim " + std::to_string(dim()) + " does not match layout " + lay.name);
  const auto& contacts = lay.slice("foot_contacts");
  for (int f = 0; f < n_frames(); ++f) {
    for (int c = 0; c < dim(); ++c) {
      if (!std::isfinite(frames(f, c)))
        fail(ErrorCode::kNonFiniteValue, "non-finite value at frame " + std::to_string(f));
    }
    for (int c = contacts.offset; c < contacts.offset + contacts.size; ++c) {
      require(frames(f, c) >= 0.0f && frames(f, c) <= 1.0f, ErrorCode::kData,
              "foot contact outside [0,1] at frame " + std::to_string(f));
    }
  }
}

std::vector<std::byte> encode_motion(const MotionSequence& seq) {
  detail::ByteWriter w;
  w.magic("OMGM");
  w.u32(1);
  w.u32(seq.fps);
  w.u32(static_cast<std::uint32_t>(seq.n_frames()));
  w.u32(static_cast<std::uint32_t>(seq.dim()));
  w.u32(seq.layout_id);
  for (Eigen::Index i = 0; i < seq.frames.size(); ++i) w.f32(seq.frames.data()[i]);
  return std::move(w.buffer());
}

MotionSequence decode_motion(std::span<const std::byte> bytes, const std::string& origin) {
  detail::ByteReader r(bytes, origin);
  if (!r.has_magic("OMGM")) fail(ErrorCode::kBadMagic, origin + ": not an OMGM motion file");
  const std::uint32_t version = r.u32();
  require(version == 1, ErrorCode::kBadMagic, origin + ": unsupported version " + std::to_string(version));
  MotionSequence seq;
  seq.fps = r.u32();
  const std::uint32_t n = r.u32();
  const std::uint32_t d = r.u32();
  seq.layout_id = r.u32();
  const FeatureLayout& lay = layout_by_id(seq.layout_id);
  if (static_cast<int>(d) != lay.dim)
    fail(ErrorCode::kDimensionMismatch, origin + ": header D=" + std::to_string(d) + " but layout " +
                                            lay.name + " has D=" + std::to_string(lay.dim));
  require(n >= 1, ErrorCode::kData, origin + ": zero frames");
  require(r.remaining() == static_cast<std::size_t>(n) * d * 4, ErrorCode::kIo,
          origin + ": payload size does not match header");
  seq.frames.resize(n, d);
  for (std::uint32_t f = 0; f < n; ++f) {
    for (std::uint32_t c = 0; c < d; ++c) {
      const float v = r.f32();
      if (!std::isfinite(v))
        fail(ErrorCode::kNonFiniteValue, origin + ": non-finite value at frame " + std::to_string(f) +
                                             ", channel " + std::to_string(c));
      seq.frames(f, c) = v;
    }
  }
  seq.validate();
  return seq;
}

MotionSequence read_motion_file(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  return decode_motion(bytes, path.string());
}

void write_motion_file(const MotionSequence& seq, const std::filesystem::path& path) {
  seq.validate();
  detail::write_file_bytes(path, encode_motion(seq));
}

void clamp_contacts(MatF& frames, const FeatureLayout& layout) {
  require(frames.cols() == layout.dim, ErrorCode::kDimensionMismatch, "frames do not match layout " + layout.name);
  const int off = layout.slice("foot_contacts").offset;
  frames.middleCols(off, 4) = frames.middleCols(off, 4).cwiseMax(0.0f).cwiseMin(1.0f);
}

MotionSequence resample(const MotionSequence& seq, std::uint32_t target_fps) {
  require(target_fps > 0 && seq.fps > 0, ErrorCode::kInvalidArgument, "fps must be positive");
  if (target_fps == seq.fps) return seq;
  const double duration = static_cast<double>(seq.n_frames() - 1) / seq.fps;
  const int n_out = static_cast<int>(std::floor(duration * target_fps + 1e-9)) + 1;
  MotionSequence out;
  out.fps = target_fps;
  out.layout_id = seq.layout_id;
  out.frames.resize(n_out, seq.dim());
  for (int f = 0; f < n_out; ++f) {
    const double src = static_cast<double>(f) * seq.fps / target_fps;
    const int lo = std::min(static_cast<int>(std::floor(src)), seq.n_frames() - 1);
    const int hi = std::min(lo + 1, seq.n_frames() - 1);
    const double w = src - lo;
    for (int c = 0; c < seq.dim(); ++c)
      out.frames(f, c) = static_cast<float>((1.0 - w) * seq.frames(lo, c) + w * seq.frames(hi, c));
  }
  return out;
}

}  // namespace omg
