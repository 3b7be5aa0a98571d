#include "omg/dataset.hpp"
#include "omg/error.hpp"
#include "omg/motion.hpp"

#include <doctest.h>

#include <filesystem>

using namespace omg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("omg_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kOk;
}

}  // namespace

TEST_CASE("layouts are contiguous and end in four contacts") {
  for (const FeatureLayout* l : {&humanml_layout(), &desk_layout()}) {
    l->validate();
    CHECK(l->slice("foot_contacts").offset + 4 == l->dim);
  }
  CHECK(humanml_layout().dim == 263);
  CHECK(desk_layout().dim == 59);
}

TEST_CASE("omgm round trip is exact") {
  auto data = generate_synthetic_dataset(1, 3, desk_layout());
  const MotionSequence& seq = data.clips.front();
  const fs::path dir = scratch("omgm");
  write_motion_file(seq, dir / "a.omgm");
  const MotionSequence back = read_motion_file(dir / "a.omgm");
  CHECK(back.frames == seq.frames);
  CHECK(back.layout_id == seq.layout_id);
  CHECK(back.fps == seq.fps);
}

TEST_CASE("malformed motion files are rejected") {
  auto data = generate_synthetic_dataset(1, 3, desk_layout());
  auto bytes = encode_motion(data.clips.front());

  auto bad = bytes;
  bad[0] = std::byte{'X'};
  CHECK(code_of([&] { decode_motion(bad, "bad"); }) == ErrorCode::kBadMagic);

  bad = bytes;
  bad.resize(bad.size() - 3);
  CHECK(code_of([&] { decode_motion(bad, "short"); }) != ErrorCode::kOk);

  MotionSequence nan = data.clips.front();
  nan.frames(0, 0) = std::numeric_limits<float>::quiet_NaN();
  CHECK(code_of([&] { decode_motion(encode_motion(nan), "nan"); }) == ErrorCode::kNonFiniteValue);

  MotionSequence wrong = data.clips.front();
  wrong.layout_id = kLayoutHumanMl263;
  CHECK(code_of([&] { wrong.validate(); }) != ErrorCode::kOk);
}

TEST_CASE("synthetic generation is deterministic in the seed") {
  auto a = generate_synthetic_dataset(3, 9, desk_layout());
  auto b = generate_synthetic_dataset(3, 9, desk_layout());
  auto c = generate_synthetic_dataset(3, 10, desk_layout());
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.clips[i].frames == b.clips[i].frames);
    a.clips[i].validate();
  }
  CHECK(a.clips[0].frames.rows() != 0);
  CHECK(!(a.clips[0].frames.rows() == c.clips[0].frames.rows() && a.clips[0].frames == c.clips[0].frames));
}

TEST_CASE("paired prompts map to fixed motions") {
  auto d = generate_paired_dataset(6, 1, desk_layout());
  REQUIRE(d.paired());
  PairedConfig cfg;
  Rng rng(0);
  const MotionSequence again = motion_for_prompt(d.prompts[2], desk_layout(), cfg, rng);
  CHECK(again.frames == d.clips[2].frames);
}

TEST_CASE("dataset save and load preserve clips and captions") {
  auto d = generate_paired_dataset(4, 2, desk_layout());
  const fs::path dir = scratch("dataset");
  save_dataset(d, dir);
  const MotionDataset back = load_dataset(dir);
  REQUIRE(back.size() == d.size());
  CHECK(back.prompts == d.prompts);
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(back.clips[i].frames == d.clips[i].frames);
  CHECK(back.index.total_frames == d.index.total_frames);
}

TEST_CASE("empty or missing data directories fail as data errors") {
  const fs::path dir = scratch("empty");
  CHECK(code_of([&] { load_dataset(dir); }) == ErrorCode::kData);
  CHECK(code_of([&] { load_dataset(dir / "nope"); }) != ErrorCode::kOk);
}

TEST_CASE("windows stay inside their clip") {
  auto d = generate_synthetic_dataset(4, 5, desk_layout());
  Rng rng(1);
  for (int i = 0; i < 20000; ++i) {
    const WindowSpan w = sample_window_span(d.index, rng, 50);
    const int n = d.index.clips[w.clip].n_frames;
    REQUIRE(w.len >= 1);
    REQUIRE(w.len <= 50);
    REQUIRE(w.start >= 0);
    REQUIRE(w.start + w.len <= n);
  }
}

TEST_CASE("batching pads with zeros and marks validity") {
  auto d = generate_synthetic_dataset(2, 5, desk_layout());
  Rng rng(4);
  std::vector<WindowSample> s = {sample_window(d, rng, 10), sample_window(d, rng, 30)};
  const MotionBatchF b = batch_windows(s, 30);
  REQUIRE(b.batch() == 2);
  for (int i = 0; i < 2; ++i) {
    CHECK(b.valid_frames(i) == s[static_cast<std::size_t>(i)].len);
    for (int r = s[static_cast<std::size_t>(i)].len; r < 30; ++r) CHECK(b.items[static_cast<std::size_t>(i)].row(r).isZero());
  }
}

TEST_CASE("resampling keeps duration") {
  auto d = generate_synthetic_dataset(1, 2, desk_layout());
  const MotionSequence& s = d.clips.front();
  const MotionSequence r = resample(s, 20);
  CHECK(r.fps == 20);
  CHECK(std::abs(r.n_frames() - s.n_frames() * 20.0 / s.fps) <= 1.0);
  CHECK(r.frames.row(0).isApprox(s.frames.row(0)));
}
