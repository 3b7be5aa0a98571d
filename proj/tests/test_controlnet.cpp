#include "omg/controlnet.hpp"
#include "omg/error.hpp"
#include "support.hpp"

#include <doctest.h>

#include <numeric>

using namespace omg;
using namespace omg::testing;

namespace {

ModelConfig small() {
  ModelConfig mc;
  mc.n_layers = 2;
  mc.d_model = 8;
  mc.n_heads = 2;
  mc.d_head = 4;
  mc.d_ff = 16;
  mc.input_dim = 5;
  mc.freq_dim = 8;
  mc.max_len = 16;
  return mc;
}

std::vector<int> iota(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

TEST_CASE("a fresh controlnet reproduces the frozen backbone") {
  Rng rng(1);
  auto base = std::make_shared<DenoiserParams<float>>(init_params<float>(small(), 1));
  for (auto& t : base->tensors())
    for (Eigen::Index i = 0; i < t.value->size(); ++i) t.value->data()[i] = static_cast<float>(rng.normal() * 0.3);
  MoCConfig moc;
  moc.d_m = 8;
  moc.pool_size = 3;
  const auto cn = build_controlnet<float>(base, moc, 2);
  StubEmbedder stub;
  const MatF x = random_mat(6, 5, rng).cast<float>();
  const MatF u = denoise_item<float>(*base, x, 30, iota(6), nullptr);
  const MatF c = conditional_denoise_item<float>(cn, x, 30, iota(6), stub.embed("a person waves"), nullptr);
  CHECK(c == u);
}

TEST_CASE("controlnet gradients match finite differences") {
  Rng rng(2);
  auto base = std::make_shared<DenoiserParams<double>>(init_params<double>(small(), 1));
  randomize(base->tensors(), rng, 0.3);
  MoCConfig moc;
  moc.d_text = 5;
  moc.d_m = 8;
  moc.pool_size = 3;
  auto cn = build_controlnet<double>(base, moc, 2);
  randomize(cn.trainable.tensors(), rng, 0.3);
  const TextConditioning cond = random_conditioning(3, 5, rng, 2);
  const MatD x = random_mat(4, 5, rng);
  const MatD w = random_mat(4, 5, rng);
  ControlCache<double> cache;
  conditional_denoise_item<double>(cn, x, 7, iota(4), cond, &cache);
  auto g = cn.trainable.zeros_like();
  conditional_denoise_item_backward(cn, cache, w, g);
  auto loss = [&] { return conditional_denoise_item<double>(cn, x, 7, iota(4), cond, nullptr).cwiseProduct(w).sum(); };
  CHECK(check_gradients(cn.trainable.tensors(), g.tensors(), loss, 3, rng).rel_error < 1e-5);
}

TEST_CASE("trainable tensors never alias the frozen ones") {
  auto base = std::make_shared<DenoiserParams<float>>(init_params<float>(small(), 1));
  MoCConfig moc;
  moc.d_m = 8;
  auto cn = build_controlnet<float>(base, moc, 2);
  CHECK(cn.trainable.blocks.size() == 2);
  CHECK(cn.trainable.moc.size() == 2);
  CHECK(cn.trainable.blocks[0].qkv.weight == base->blocks[0].qkv.weight);
  cn.trainable.blocks[0].qkv.weight.setConstant(1.0f);
  cn.verify_integrity();
  for (const auto& t : cn.trainable.tensors()) CHECK(t.name.rfind("control.", 0) == 0);
}

TEST_CASE("tampering with the frozen backbone is detected") {
  auto base = std::make_shared<DenoiserParams<float>>(init_params<float>(small(), 1));
  MoCConfig moc;
  moc.d_m = 8;
  const auto cn = build_controlnet<float>(base, moc, 2);
  base->out_proj.weight(0, 0) += 1.0f;
  bool caught = false;
  try {
    cn.verify_integrity();
  } catch (const Error& e) {
    caught = e.code() == ErrorCode::kCheckpointMismatch;
  }
  CHECK(caught);
}
