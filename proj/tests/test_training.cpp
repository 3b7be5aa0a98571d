#include "omg/error.hpp"
#include "omg/checkpoint.hpp"
#include "omg/commands.hpp"
#include "omg/training.hpp"

#include <doctest.h>

#include <filesystem>

using namespace omg;
namespace fs = std::filesystem;

namespace {

ModelConfig micro() {
  ModelConfig mc = model_preset("tiny", desk_layout().dim, 64);
  mc.n_layers = 1;
  mc.d_model = 16;
  mc.n_heads = 2;
  mc.d_head = 8;
  mc.d_ff = 32;
  mc.freq_dim = 16;
  return mc;
}

TrainConfig quick() {
  TrainConfig tc;
  tc.optim.lr = 1e-3;
  tc.optim.warmup_steps = 2;
  tc.optim.total_steps = 10;
  tc.batch_size = 2;
  tc.window = 24;
  tc.seed = 3;
  return tc;
}

fs::path tmp(const std::string& name) { return fs::temp_directory_path() / ("omg_test_" + name); }

}  // namespace

TEST_CASE("learning rate warms up then decays to zero") {
  OptimizerConfig c;
  c.lr = 1.0;
  c.warmup_steps = 4;
  c.total_steps = 20;
  CHECK(learning_rate(c, 0) == doctest::Approx(0.25));
  CHECK(learning_rate(c, 3) == doctest::Approx(1.0));
  CHECK(learning_rate(c, 12) < 1.0);
  CHECK(learning_rate(c, 20) == doctest::Approx(0.0));
  c.decay = "constant";
  CHECK(learning_rate(c, 15) == doctest::Approx(1.0));
}

TEST_CASE("adamw takes a signed first step and skips decay on vectors") {
  OptimizerConfig c;
  c.lr = 0.1;
  c.weight_decay = 0.5;
  c.total_steps = 10;
  c.decay = "constant";
  AdamW opt(c);
  MatF w = MatF::Constant(2, 2, 1.0f), b = MatF::Constant(1, 2, 1.0f);
  MatF gw = MatF::Constant(2, 2, 3.0f), gb = MatF::Constant(1, 2, -2.0f);
  opt.step({{"w", &w, false}, {"b", &b, true}}, {{"w", &gw, false}, {"b", &gb, true}});
  // Adam's bias-corrected first step is lr * sign(g); decay adds lr * wd * w.
  CHECK(w(0, 0) == doctest::Approx(1.0 - 0.1 - 0.05).epsilon(1e-5));
  CHECK(b(0, 0) == doctest::Approx(1.1).epsilon(1e-5));
  CHECK(opt.steps_taken() == 1);
}

TEST_CASE("checkpoint container round trip and corruption") {
  MatF a = MatF::Random(3, 4), v = MatF::Random(1, 5);
  const TensorList<float> tensors = {{"a", &a, false}, {"v", &v, true}};
  const auto bytes = encode_checkpoint(R"({"kind":"test"})", tensors);
  const CheckpointData d = decode_checkpoint(bytes, "mem");
  REQUIRE(d.find("a") != nullptr);
  CHECK(*d.find("a") == a);
  CHECK(*d.find("v") == v);
  CHECK(d.find("zz") == nullptr);

  auto bad = bytes;
  bad[1] = std::byte{'Q'};
  CHECK_THROWS_AS(decode_checkpoint(bad, "bad"), Error);
  MatF wrong = MatF::Zero(4, 3);
  bool mismatch = false;
  try {
    assign_tensors(d, {{"a", &wrong, false}}, "mem");
  } catch (const Error& e) {
    mismatch = e.code() == ErrorCode::kCheckpointMismatch;
  }
  CHECK(mismatch);
}

TEST_CASE("a resumed run matches an uninterrupted one bit for bit") {
  const auto data = generate_synthetic_dataset(2, 4, desk_layout(), {40, 60});
  const NoiseSchedule s = build_cosine_schedule(100);
  const TrainConfig tc = quick();

  DenoiserParams<float> straight = init_params<float>(micro(), 1);
  AdamW opt_a(tc.optim);
  pretrain(straight, opt_a, data, s, tc, 6, {}, true);

  DenoiserParams<float> half = init_params<float>(micro(), 1);
  AdamW opt_b(tc.optim);
  pretrain(half, opt_b, data, s, tc, 3, {}, true);
  const fs::path ckpt = tmp("resume.omgc");
  save_backbone(ckpt, half, s, &opt_b);

  AdamW opt_c(tc.optim);
  BackboneCheckpoint loaded = load_backbone(ckpt, &opt_c);
  CHECK(loaded.step == 3);
  CHECK(opt_c.steps_taken() == 3);
  pretrain(*loaded.params, opt_c, data, s, tc, 6, {}, true);
  CHECK(checksum(loaded.params->tensors()) == checksum(straight.tensors()));
}

TEST_CASE("parallel and serial training agree") {
  const auto data = generate_synthetic_dataset(2, 4, desk_layout(), {40, 60});
  const NoiseSchedule s = build_cosine_schedule(100);
  const TrainConfig tc = quick();
  DenoiserParams<float> a = init_params<float>(micro(), 1), b = a;
  AdamW oa(tc.optim), ob(tc.optim);
  pretrain(a, oa, data, s, tc, 3, {}, true);
  pretrain(b, ob, data, s, tc, 3, {}, false);
  CHECK(checksum(a.tensors()) == checksum(b.tensors()));
}

TEST_CASE("finetuning leaves the backbone untouched and round-trips") {
  const auto data = generate_paired_dataset(3, 2, desk_layout(), {});
  const NoiseSchedule s = build_cosine_schedule(100);
  auto base = std::make_shared<const DenoiserParams<float>>(init_params<float>(micro(), 1));
  const std::uint64_t before = checksum(base->tensors());
  MoCConfig moc;
  moc.d_m = 8;
  moc.pool_size = 2;
  auto cn = build_controlnet<float>(base, moc, 5);
  TrainConfig tc = quick();
  tc.full_clips = true;
  AdamW opt(tc.optim);
  StubEmbedder stub;
  std::vector<double> losses;
  finetune(cn, opt, data, stub, s, tc, 3, [&](const StepReport& r) { losses.push_back(r.loss.total); }, true);
  CHECK(losses.size() == 3);
  CHECK(checksum(base->tensors()) == before);
  CHECK(!cn.trainable.moc[0].up.weight.isZero());

  const fs::path path = tmp("cn.omgc");
  save_controlnet(path, cn, s, &opt, "none");
  const ControlNetCheckpoint back = load_controlnet(path);
  CHECK(back.params.frozen_checksum == cn.frozen_checksum);
  CHECK(checksum(back.params.trainable.tensors()) == checksum(cn.trainable.tensors()));
  CHECK(back.step == 3);
}

TEST_CASE("divergence is reported") {
  const auto data = generate_synthetic_dataset(1, 4, desk_layout(), {40, 60});
  const NoiseSchedule s = build_cosine_schedule(100);
  DenoiserParams<float> p = init_params<float>(micro(), 1);
  p.out_proj.weight.setConstant(std::numeric_limits<float>::infinity());
  AdamW opt(quick().optim);
  bool diverged = false;
  try {
    pretrain(p, opt, data, s, quick(), 1, {}, true);
  } catch (const Error& e) {
    diverged = e.code() == ErrorCode::kDiverged;
  }
  CHECK(diverged);
}

TEST_CASE("error codes map to process exit statuses") {
  CHECK(exit_code_for(ErrorCode::kConfig) == 2);
  CHECK(exit_code_for(ErrorCode::kEmptyPrompt) == 2);
  CHECK(exit_code_for(ErrorCode::kOddHeadDim) == 2);
  CHECK(exit_code_for(ErrorCode::kBadMagic) == 3);
  CHECK(exit_code_for(ErrorCode::kEmptyDataset) == 3);
  CHECK(exit_code_for(ErrorCode::kDiverged) == 4);
  CHECK(exit_code_for(ErrorCode::kNonFiniteActivation) == 4);
  CHECK(exit_code_for(ErrorCode::kCheckpointMismatch) == 5);
  CHECK(exit_code_for(ErrorCode::kUnknownPrompt) == 6);
  CHECK(exit_code_for(ErrorCode::kInternal) == 1);
}

TEST_CASE("unknown config keys are rejected") {
  try {
    run_command("gen-data", R"({"cuont": 3})");
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kConfig);
  }
}
