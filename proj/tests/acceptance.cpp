// Acceptance suite: one PASS/FAIL line per release criterion. Tolerances and
// budgets are pinned below. Exits 0 once every criterion has been evaluated;
// --strict makes any FAIL a nonzero exit; --report also writes the lines to a file.

#include "omg/checkpoint.hpp"
#include "omg/controlnet.hpp"
#include "omg/losses.hpp"
#include "omg/metrics.hpp"
#include "omg/sampler.hpp"
#include "omg/training.hpp"
#include "support.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

using namespace omg;
using namespace omg::testing;
namespace fs = std::filesystem;

#ifndef OMG_CLI_PATH
#define OMG_CLI_PATH "omg"
#endif

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<int> iota(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

template <class S>
void perturb(const TensorList<S>& tensors, Rng& rng, double std) {
  for (const auto& t : tensors)
    for (Eigen::Index i = 0; i < t.value->size(); ++i) t.value->data()[i] += static_cast<S>(rng.normal() * std);
}

DenoiseFn backbone_fn(const DenoiserParams<float>& p) {
  return [&p](const MatF& x, int t) { return denoise_item<float>(p, x, t, iota(static_cast<int>(x.rows())), nullptr); };
}

DenoiseFn control_fn(const ControlNetParams<float>& p, const TextConditioning& cond) {
  return [&p, cond](const MatF& x, int t) {
    return conditional_denoise_item<float>(p, x, t, iota(static_cast<int>(x.rows())), cond, nullptr);
  };
}

double frame_mse(const MatF& a, const MatF& b) { return (a - b).cast<double>().squaredNorm() / static_cast<double>(a.size()); }

// ---- zero-init identity ---------------------------------------------------------------

Outcome zero_init_identity() {
  constexpr int kTriples = 100;
  constexpr double kTol = 1e-5;
  Rng rng(1);
  auto base = std::make_shared<DenoiserParams<float>>(init_params<float>(model_preset("tiny", 263), 1));
  perturb(base->tensors(), rng, 0.05);  // stands in for pretrained, non-identity weights
  const auto cn = build_controlnet<float>(base, MoCConfig{}, 2);
  StubEmbedder stub;
  double worst = 0.0;
  for (int i = 0; i < kTriples; ++i) {
    const int len = static_cast<int>(rng.uniform_int(1, 60));
    const int t = static_cast<int>(rng.uniform_int(1, 1000));
    const MatF x = random_mat(len, 263, rng).cast<float>();
    const TextConditioning cond = stub.embed(random_prompt(rng));
    const MatF u = denoise_item<float>(*base, x, t, iota(len), nullptr);
    const MatF c = conditional_denoise_item<float>(cn, x, t, iota(len), cond, nullptr);
    worst = std::max(worst, static_cast<double>((c - u).cwiseAbs().maxCoeff()));
  }
  return {worst <= kTol, fmt("max|Dc-Du| = %.3g over %d triples (tol %.0e)", worst, kTriples, kTol)};
}

// ---- guidance collapse ------------------------------------------------------------

Outcome guidance_collapse() {
  constexpr double kTol = 1e-6;
  Rng rng(2);
  auto base = std::make_shared<DenoiserParams<float>>(init_params<float>(model_preset("tiny", 59), 1));
  perturb(base->tensors(), rng, 0.05);
  MoCConfig moc;
  moc.d_m = 32;
  auto cn = build_controlnet<float>(base, moc, 3);
  perturb(cn.trainable.tensors(), rng, 0.05);  // a non-trivial control branch
  StubEmbedder stub;
  const NoiseSchedule sched = build_cosine_schedule(1000);
  const DenoiseFn u = backbone_fn(*base);
  const DenoiseFn c = control_fn(cn, stub.embed("a person walks then waves"));
  double worst1 = 0.0, worst0 = 0.0, gap = 0.0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SamplerConfig sc;
    sc.n_steps = 50;
    sc.seed = seed;
    sc.guidance = 1.0;
    const MatF g1 = sample_many(u, &c, sc, sched, 30, 59, 1)[0];
    const MatF conly = sample_many(c, nullptr, sc, sched, 30, 59, 1)[0];
    sc.guidance = 0.0;
    const MatF g0 = sample_many(u, &c, sc, sched, 30, 59, 1)[0];
    const MatF uonly = sample_many(u, nullptr, sc, sched, 30, 59, 1)[0];
    worst1 = std::max(worst1, static_cast<double>((g1 - conly).cwiseAbs().maxCoeff()));
    worst0 = std::max(worst0, static_cast<double>((g0 - uonly).cwiseAbs().maxCoeff()));
    gap = std::max(gap, static_cast<double>((conly - uonly).cwiseAbs().maxCoeff()));
  }
  const bool ok = worst1 <= kTol && worst0 <= kTol && gap > 1e-3;
  return {ok, fmt("s=1 vs cond-only %.3g, s=0 vs uncond %.3g (tol %.0e); cond/uncond gap %.3g", worst1, worst0, kTol,
                  gap)};
}

// ---- gradient suite --------------------------------------------------------------

MotionBatch<double> loss_batch(Rng& rng, const FeatureLayout& layout) {
  MotionBatch<double> b;
  b.pad_len = 6;
  b.dim = layout.dim;
  const int off = layout.slice("foot_contacts").offset;
  for (int len : {6, 3}) {
    MatD m = random_mat(6, layout.dim, rng);
    m.middleCols(off, 4) = (m.middleCols(off, 4).array() > 0).cast<double>();
    m.bottomRows(6 - len).setZero();
    b.items.push_back(m);
    std::vector<std::uint8_t> mask(6, 0);
    std::fill(mask.begin(), mask.begin() + len, 1);
    b.mask.push_back(mask);
  }
  return b;
}

TensorList<double> items(MotionBatch<double>& b) {
  TensorList<double> t;
  for (std::size_t i = 0; i < b.items.size(); ++i) t.push_back({"i" + std::to_string(i), &b.items[i], false});
  return t;
}

Outcome gradient_suite() {
  constexpr int kInstances = 50;
  constexpr double kTol = 1e-3;
  ModelConfig mc;
  mc.n_layers = 1;
  mc.d_model = 8;
  mc.n_heads = 2;
  mc.d_head = 4;
  mc.d_ff = 16;
  mc.input_dim = 5;
  mc.freq_dim = 8;
  MoCConfig moc;
  moc.d_model = 6;
  moc.d_text = 5;
  moc.d_m = 8;
  moc.pool_size = 3;
  const FeatureLayout& layout = desk_layout();
  std::map<std::string, double> worst;
  Rng rng(3);
  for (int i = 0; i < kInstances; ++i) {
    {
      DiTBlockParams<double> b(mc);
      TensorList<double> t;
      b.collect("b", t);
      randomize(t, rng, 0.4);
      MatD h = random_mat(5, mc.d_model, rng);
      const MatD c = random_mat(1, mc.d_model, rng);
      const MatD w = random_mat(5, mc.d_model, rng);
      BlockCache<double> cache;
      block_forward(b, mc, h, c, iota(5), &cache);
      DiTBlockParams<double> g(mc);
      TensorList<double> gt;
      g.collect("b", gt);
      MatD dc = MatD::Zero(1, mc.d_model);
      const MatD dh = block_backward(b, mc, cache, w, &g, &dc);
      auto loss = [&] { return block_forward<double>(b, mc, h, c, iota(5), nullptr).cwiseProduct(w).sum(); };
      worst["block"] = std::max({worst["block"], check_gradients(t, gt, loss, 2, rng).rel_error,
                                 check_input_gradient(h, dh, loss, 6, rng).rel_error});
    }
    {
      MotionBatch<double> x = loss_batch(rng, layout), y = loss_batch(rng, layout);
      const std::vector<double> lam = {1.0, 0.7};
      auto g = MotionBatch<double>::zeros_like(y);
      loss_simple(x, y, lam, &g);
      worst["simple"] = std::max(worst["simple"],
                                 check_gradients(items(y), items(g), [&] { return loss_simple(x, y, lam); }, 6, rng).rel_error);
      g = MotionBatch<double>::zeros_like(y);
      loss_velocity(x, y, &g);
      worst["velocity"] = std::max(
          worst["velocity"], check_gradients(items(y), items(g), [&] { return loss_velocity(x, y); }, 6, rng).rel_error);
      g = MotionBatch<double>::zeros_like(y);
      loss_foot_contact(x, y, layout, &g);
      worst["foot"] = std::max(
          worst["foot"],
          check_gradients(items(y), items(g), [&] { return loss_foot_contact(x, y, layout); }, 6, rng).rel_error);
    }
    {
      MoCConfig v = moc;
      v.use_attention_mask = i % 3 != 1;
      v.experts_as_plain_ffn = i % 3 == 2;
      MoCParams<double> p(v);
      randomize(p.tensors(), rng, 0.5);
      TextConditioning cond = random_conditioning(3, v.d_text, rng, 2, {1});
      cond.embeddings *= 3.0f;
      MatD h = random_mat(4, v.d_model, rng);
      const MatD w = random_mat(4, v.d_model, rng);
      MoCCache<double> cache;
      moc_forward(p, h, cond, &cache);
      MoCParams<double> g(v);
      const MatD dh = moc_backward(p, cache, w, &g);
      auto loss = [&] { return moc_forward<double>(p, h, cond, nullptr).cwiseProduct(w).sum(); };
      worst["moc"] = std::max({worst["moc"], check_gradients(p.tensors(), g.tensors(), loss, 2, rng).rel_error,
                               check_input_gradient(h, dh, loss, 6, rng).rel_error});
    }
  }
  bool ok = true;
  std::ostringstream d;
  for (const auto& [name, e] : worst) {
    ok = ok && e < kTol;
    d << name << " " << fmt("%.1e", e) << "  ";
  }
  d << fmt("(worst relative error over %d instances each, tol %.0e)", kInstances, kTol);
  return {ok, d.str()};
}

// ---- MoC oracle --------------------------------------------------------------------

Outcome moc_oracle() {
  constexpr int kInstances = 100;
  constexpr double kTol = 1e-4;
  MoCConfig cfg;
  cfg.d_model = 16;
  cfg.d_m = 8;
  cfg.pool_size = 3;
  Rng rng(4);
  double worst = 0.0;
  for (int i = 0; i < kInstances; ++i) {
    MoCParams<double> pd(cfg);
    randomize(pd.tensors(), rng, 0.3);
    const MoCParams<float> pf = cast_moc_params<float>(pd);
    const MoCParams<double> exact = cast_moc_params<double>(pf);  // same weights as the float path
    TextConditioning cond = random_conditioning(2, cfg.d_text, rng, 1);
    cond.embeddings *= 8.0f;
    const MatF h = random_mat(4, cfg.d_model, rng).cast<float>();
    const MatF y = moc_forward<float>(pf, h, cond, nullptr);
    const MatD ref = reference_moc(exact, h.cast<double>(), cond);
    worst = std::max(worst, (y.cast<double>() - ref).cwiseAbs().maxCoeff());
  }
  return {worst <= kTol, fmt("float block vs 64-bit loops: max diff %.3g over %d instances (tol %.0e)", worst,
                             kInstances, kTol)};
}

// ---- expert blending ----------------------------------------------------------------

Outcome expert_blend() {
  constexpr double kSumTol = 1e-6, kSatTol = 1e-4;
  MoCConfig cfg;
  cfg.d_model = 8;
  cfg.d_m = 8;
  cfg.pool_size = 12;
  Rng rng(5);
  MoCParams<double> p(cfg);
  randomize(p.tensors(), rng, 0.5);
  double sum_err = 0.0;
  for (int i = 0; i < 200; ++i) {
    const MatD w = gate_weights(p, random_mat(1, cfg.d_text, rng));
    sum_err = std::max(sum_err, std::abs(w.sum() - 1.0));
  }
  MoCConfig one = cfg;
  one.pool_size = 1;
  MoCParams<double> q(one);
  randomize(q.tensors(), rng, 0.5);
  const ExpertParams<double> e1 = blend_expert(q, random_mat(1, cfg.d_text, rng));
  const bool exact = e1.w0 == q.experts[0].w0 && e1.b0 == q.experts[0].b0 && e1.w1 == q.experts[0].w1 &&
                     e1.b1 == q.experts[0].b1;
  double sat_err = 0.0;
  for (int j = 0; j < cfg.pool_size; ++j) {
    MoCParams<double> s = p;
    s.gate3.bias.setZero();
    s.gate3.bias(0, j) = 1e3;  // saturates the softmax on expert j
    const ExpertParams<double> e = blend_expert(s, random_mat(1, cfg.d_text, rng, 0.1));
    const MatD f = random_mat(5, cfg.d_m, rng);
    sat_err = std::max(sat_err, (expert_forward(f, e) - expert_forward(f, p.experts[static_cast<std::size_t>(j)]))
                                    .cwiseAbs()
                                    .maxCoeff());
  }
  const bool ok = sum_err <= kSumTol && exact && sat_err <= kSatTol;
  return {ok, fmt("|sum w - 1| %.1e (tol %.0e); K=1 exact: %s; saturated gate vs e_j %.1e (tol %.0e)", sum_err, kSumTol,
                  exact ? "yes" : "no", sat_err, kSatTol)};
}

// ---- attention mask ------------------------------------------------------------------

Outcome mask_scalars() {
  Eigen::VectorXd col(3);
  col << 1.0, 0.25, 0.0;
  const Eigen::VectorXd m = attention_mask<double>(col, 24.0, 0.25);
  const double at_max = std::abs(m(0) - 1.0 / (1.0 + std::exp(-18.0)));
  // Threshold at a non-unit max too.
  Eigen::VectorXd col2(2);
  col2 << 0.6, 0.15;
  const Eigen::VectorXd m2 = attention_mask<double>(col2, 24.0, 0.25);
  const bool ok = m(1) == 0.5 && m2(1) == 0.5 && at_max <= 1e-9;
  return {ok, fmt("mask(beta*max) = %.17g, %.17g; |mask(max) - sigmoid(18)| = %.1e (tol 1e-9)", m(1), m2(1), at_max)};
}

// ---- sliding windows -----------------------------------------------------------------

Outcome window_law() {
  constexpr int kLmax = 300;
  constexpr int kDraws = 100000;
  constexpr double kMinP = 0.01;
  DatasetIndex index;
  for (int n : {900, 1200, 700}) index.add("c" + std::to_string(n), n);
  Rng rng(6);
  std::vector<double> counts(kLmax, 0.0);
  int kept = 0;
  while (kept < kDraws) {
    const WindowSpan w = sample_window_span(index, rng, kLmax);
    if (index.clips[w.clip].n_frames - w.start < kLmax) continue;  // condition on a full-length start
    counts[static_cast<std::size_t>(w.len - 1)] += 1.0;
    ++kept;
  }
  const double expected = static_cast<double>(kDraws) / kLmax;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(kLmax - 1), chi2));

  Rng fuzz(7);
  long bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    DatasetIndex idx;
    const int clips = static_cast<int>(fuzz.uniform_int(1, 5));
    for (int c = 0; c < clips; ++c) idx.add("c", static_cast<int>(fuzz.uniform_int(1, 400)));
    const int lmax = static_cast<int>(fuzz.uniform_int(1, 400));
    for (int s = 0; s < 1000; ++s) {
      const WindowSpan w = sample_window_span(idx, fuzz, lmax);
      const int n = idx.clips[w.clip].n_frames;
      if (w.len < 1 || w.len > lmax || w.start < 0 || w.start + w.len > n) ++bad;
    }
  }
  const bool ok = p > kMinP && bad == 0;
  return {ok, fmt("chi2 = %.1f on %d dof, p = %.3f (need > %.2f); out-of-range windows: %ld of 1e6", chi2, kLmax - 1, p,
                  kMinP, bad)};
}

// ---- schedule and sampler --------------------------------------------------------------

Outcome schedule_sampler() {
  const NoiseSchedule s = build_cosine_schedule(1000);
  bool decreasing = true, clipped = true;
  for (int t = 1; t <= s.steps; ++t) {
    decreasing = decreasing && s.alpha_bar[t] < s.alpha_bar[t - 1];
    clipped = clipped && s.beta(t) <= kMaxBeta + 1e-12;
  }
  const bool hits_clip = std::abs(s.beta(s.steps) - kMaxBeta) < 1e-12;

  double ddim = 0.0;
  Rng rng(8);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const MatF x = random_mat(40, 59, rng).cast<float>();
    SamplerConfig sc;
    sc.seed = seed;
    const DenoiseFn oracle = [&x](const MatF&, int) { return x; };
    const MatF out = sample_many(oracle, nullptr, sc, s, 40, 59, 1)[0];
    ddim = std::max(ddim, static_cast<double>((out - x).cwiseAbs().maxCoeff()));
  }

  double rope = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<MatF> q = {random_mat(32, 16, rng).cast<float>()}, k = {random_mat(32, 16, rng).cast<float>()};
    std::vector<int> p0 = iota(32), p1 = p0;
    const int shift = static_cast<int>(rng.uniform_int(1, 268));
    for (int& v : p1) v += shift;
    const auto a = rotary_scores(q, k, p0), b = rotary_scores(q, k, p1);
    rope = std::max(rope, static_cast<double>((a[0] - b[0]).cwiseAbs().maxCoeff() / a[0].cwiseAbs().maxCoeff()));
  }
  const bool ok = decreasing && clipped && hits_clip && ddim <= 1e-4 && rope <= 1e-5;
  return {ok, fmt("abar strictly decreasing: %s, betas clipped at 0.999: %s; DDIM oracle error %.2g (tol 1e-4); "
                  "RoPE shift error %.2g relative (tol 1e-5)",
                  decreasing ? "yes" : "no", clipped && hits_clip ? "yes" : "no", ddim, rope)};
}

// ---- overfitting -----------------------------------------------------------------------

// Shared by the unconditional and ControlNet runs.
constexpr int kOverfitSteps = 2000;

TrainConfig overfit_config(double lr, int batch, bool full_clips) {
  TrainConfig tc;
  tc.optim.lr = lr;
  tc.optim.warmup_steps = 100;
  tc.optim.total_steps = kOverfitSteps;
  tc.batch_size = batch;
  tc.full_clips = full_clips;
  tc.seed = 1;
  return tc;
}

struct Pretrained {
  std::shared_ptr<const DenoiserParams<float>> params;
  double initial = 0.0, final = 0.0;
};

// Unconditional Tiny run on 5 synthetic clips; its weights are reused as the
// frozen backbone of the ControlNet run.
const Pretrained& pretrained_tiny() {
  static const Pretrained p = [] {
    const NoiseSchedule sched = build_cosine_schedule(1000);
    const MotionDataset data = generate_synthetic_dataset(5, 1, desk_layout());
    DenoiserParams<float> params = init_params<float>(model_preset("tiny", 59), 0);
    const TrainConfig tc = overfit_config(1e-3, 8, false);
    const ProbeSet probe = make_probe_set(data, sched, 64, tc.window, false, 11);
    Pretrained out;
    out.initial = probe_loss(params, probe, sched, tc.weights, desk_layout()).total;
    AdamW opt(tc.optim);
    pretrain(params, opt, data, sched, tc, kOverfitSteps);
    out.final = probe_loss(params, probe, sched, tc.weights, desk_layout()).total;
    out.params = std::make_shared<const DenoiserParams<float>>(std::move(params));
    return out;
  }();
  return p;
}

Outcome overfit_unconditional() {
  constexpr double kRatio = 0.10;
  const Pretrained& p = pretrained_tiny();
  const double r = p.final / p.initial;
  return {r < kRatio, fmt("probe loss %.4g -> %.4g, ratio %.4f (need < %.2f)", p.initial, p.final, r, kRatio)};
}

// Control-branch settings for the single-pair run.
constexpr double kControlLr = 3e-3;
constexpr int kControlBatch = 8;
constexpr int kControlWidth = 64;
constexpr double kGuidance = 4.5;  // the default inference strength

Outcome overfit_controlnet() {
  constexpr double kLossRatio = 0.05, kMseRatio = 0.25;
  const NoiseSchedule sched = build_cosine_schedule(1000);
  const MotionDataset pairs = generate_paired_dataset(20, 5, desk_layout());
  MotionDataset one;
  one.layout_id = pairs.layout_id;
  one.add("pair", pairs.clips[0], pairs.prompts[0]);
  StubEmbedder stub;
  MoCConfig moc;
  moc.d_m = kControlWidth;
  auto base = pretrained_tiny().params;
  auto cn = build_controlnet<float>(base, moc, 3);
  TrainConfig tc = overfit_config(kControlLr, kControlBatch, true);
  tc.optim.weight_decay = 1e-5;
  const ProbeSet probe = make_probe_set(one, sched, 32, tc.window, true, 11, &stub);
  const double initial = probe_loss(cn, probe, sched, tc.weights, desk_layout()).total;
  AdamW opt(tc.optim);
  finetune(cn, opt, one, stub, sched, tc, kOverfitSteps);
  const double final = probe_loss(cn, probe, sched, tc.weights, desk_layout()).total;

  const MatF& target = one.clips[0].frames;
  const int len = static_cast<int>(target.rows());
  const DenoiseFn u = backbone_fn(*base);
  const DenoiseFn c = control_fn(cn, stub.embed(one.prompts[0]));
  SamplerConfig sc;
  sc.guidance = kGuidance;
  sc.seed = 9;
  constexpr int kSamples = 3;
  const auto cs = sample_many(u, &c, sc, sched, len, target.cols(), kSamples);
  const auto us = sample_many(u, nullptr, sc, sched, len, target.cols(), kSamples);
  sc.guidance = 1.0;
  const auto c1 = sample_many(u, &c, sc, sched, len, target.cols(), kSamples);
  double mc = 0.0, mu = 0.0, m1 = 0.0;
  for (int i = 0; i < kSamples; ++i) {
    mc += frame_mse(cs[static_cast<std::size_t>(i)], target);
    mu += frame_mse(us[static_cast<std::size_t>(i)], target);
    m1 += frame_mse(c1[static_cast<std::size_t>(i)], target);
  }
  const double lr = final / initial, sr = mc / mu;
  return {lr < kLossRatio && sr < kMseRatio,
          fmt("probe loss %.4g -> %.4g, ratio %.3f (need < %.2f); sample MSE ratio at s=%.1f: %.3f (need < %.2f) "
              "[s=1: %.3f]",
              initial, final, lr, kLossRatio, kGuidance, sr, kMseRatio, m1 / mu)};
}

// ---- ablation ordering -----------------------------------------------------------------

Outcome ablation_direction() {
  constexpr int kPairs = 50, kHeldOut = 8, kSteps = 600, kSampleSteps = 50;
  const NoiseSchedule sched = build_cosine_schedule(1000);
  StubEmbedder stub;
  const char* names[] = {"full", "no-zero-conv", "no-attn-mask", "cross-attn-ffn"};
  int wins = 0;
  std::ostringstream d;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const MotionDataset data = generate_paired_dataset(kPairs, 100 + seed, desk_layout());
    std::set<std::string> seen(data.prompts.begin(), data.prompts.end());
    std::vector<std::string> held;
    Rng pr = Rng(900 + seed);
    while (static_cast<int>(held.size()) < kHeldOut) {
      std::string p = random_prompt(pr);
      if (!seen.count(p)) {
        held.push_back(p);
        seen.insert(p);
      }
    }
    DenoiserParams<float> bp = init_params<float>(model_preset("tiny", 59), seed);
    TrainConfig pt = overfit_config(1e-3, 8, true);
    pt.optim.total_steps = 1000;
    pt.seed = seed;
    AdamW bopt(pt.optim);
    pretrain(bp, bopt, data, sched, pt, 1000);
    auto base = std::make_shared<const DenoiserParams<float>>(std::move(bp));

    double mse[4] = {};
    for (int v = 0; v < 4; ++v) {
      MoCConfig moc;
      moc.d_m = 32;
      moc.use_zero_conv = v != 1;
      moc.use_attention_mask = v != 2;
      moc.experts_as_plain_ffn = v == 3;
      auto cn = build_controlnet<float>(base, moc, seed);
      TrainConfig tc = overfit_config(kControlLr, 4, true);
      tc.optim.total_steps = kSteps;
      tc.optim.weight_decay = 1e-5;
      tc.seed = seed;
      AdamW opt(tc.optim);
      finetune(cn, opt, data, stub, sched, tc, kSteps);
      const DenoiseFn u = backbone_fn(*base);
      for (std::size_t h = 0; h < held.size(); ++h) {
        Rng unused(0);
        const MatF target = motion_for_prompt(held[h], desk_layout(), PairedConfig{}, unused).frames;
        const DenoiseFn c = control_fn(cn, stub.embed(held[h]));
        SamplerConfig sc;
        sc.n_steps = kSampleSteps;
        sc.guidance = kGuidance;
        sc.seed = 1000 + h;
        mse[v] += frame_mse(sample_many(u, &c, sc, sched, static_cast<int>(target.rows()), 59, 1)[0], target) /
                  static_cast<double>(held.size());
      }
    }
    const bool win = mse[0] <= mse[1] && mse[0] <= mse[2] && mse[0] <= mse[3];
    wins += win ? 1 : 0;
    d << "seed " << seed << ":";
    for (int v = 0; v < 4; ++v) d << " " << names[v] << "=" << fmt("%.4f", mse[v]);
    d << (win ? " [full best]; " : " [full not best]; ");
  }
  d << "full model best in " << wins << "/3 seeds (need >= 2)";
  return {wins >= 2, d.str()};
}

// ---- metrics -----------------------------------------------------------------------------

// Instantiated preset sizes against the published table.
Outcome preset_sizes() {
  constexpr double kTol = 0.05;
  const std::pair<const char*, double> table[] = {{"base", 88e6}, {"large", 201e6}, {"huge", 405e6}, {"giant", 1e9}};
  bool ok = true;
  std::ostringstream d;
  for (const auto& [name, target] : table) {
    const double n = static_cast<double>(parameter_count(model_preset(name, 263)));
    const double rel = n / target - 1.0;
    ok = ok && std::abs(rel) <= kTol;
    d << name << " " << fmt("%.1fM vs %.0fM (%+.0f%%); ", n / 1e6, target / 1e6, 100 * rel);
  }
  d << fmt("tol %.0f%%", 100 * kTol);
  return {ok, d.str()};
}

Outcome metrics() {
  FeatureStats a, b;
  a.mean = Eigen::VectorXd::Zero(2);
  b.mean = Eigen::VectorXd::Ones(2);
  a.cov = Eigen::MatrixXd::Identity(2, 2);
  b.cov = 4.0 * Eigen::MatrixXd::Identity(2, 2);
  a.count = b.count = 2;
  const double diag = frechet_distance(a, b);

  // Self-FID: the same clips against themselves, and two draws of one generator
  // against a draw from a different one for scale.
  const MotionDataset r1 = generate_synthetic_dataset(200, 1, desk_layout());
  const MotionDataset r2 = generate_synthetic_dataset(200, 2, desk_layout());
  const MotionDataset other = generate_paired_dataset(200, 3, desk_layout());
  StatsExtractor fx(59);
  auto feats = [&](const MotionDataset& d) {
    std::vector<Feature> f;
    for (const auto& c : d.clips) f.push_back(fx.extract(c.frames));
    return f;
  };
  const FeatureStats s1 = feature_stats(feats(r1)), s2 = feature_stats(feats(r2)), so = feature_stats(feats(other));
  const double self = frechet_distance(s1, s1);
  const double same_gen = frechet_distance(s1, s2), cross = frechet_distance(s1, so);

  Rng rng(10);
  std::vector<Feature> m, t;
  for (int i = 0; i < 3200; ++i) {
    m.push_back(random_mat(1, 32, rng).row(0).transpose());
    t.push_back(random_mat(1, 32, rng).row(0).transpose());
  }
  const double rp = r_precision(m, t, rng, 32, 3);

  const bool diag_ok = std::abs(diag - 4.0) <= 1e-12;
  const bool self_ok = std::abs(self) <= 1e-8 * std::max(1.0, cross);
  const bool rp_ok = std::abs(rp - 0.094) <= 0.02;
  const Outcome sizes = preset_sizes();
  return {diag_ok && self_ok && rp_ok && sizes.pass,
          fmt("diagonal FID %.15g (want 4); self-FID %.2g, same-generator %.3g vs cross %.3g; null R-precision %.4f "
              "(want 0.094 +- 0.02); ",
              diag, self, same_gen, cross, rp) +
              "parameter counts " + sizes.detail};
}

// ---- reproducibility ----------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int cli(const std::string& args) {
  const std::string cmd = std::string(OMG_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

// Every file except effective_config.json, which records the output path.
bool same_tree(const fs::path& a, const fs::path& b, std::string& why) {
  std::set<std::string> names;
  for (const fs::path& root : {a, b})
    for (const auto& e : fs::recursive_directory_iterator(root))
      if (e.is_regular_file()) names.insert(fs::relative(e.path(), root).string());
  for (const auto& n : names) {
    if (fs::path(n).filename() == "effective_config.json") continue;
    if (!fs::exists(a / n) || !fs::exists(b / n) || slurp(a / n) != slurp(b / n)) {
      why = n;
      return false;
    }
  }
  return !names.empty();
}

Outcome reproducibility() {
  const fs::path root = fs::temp_directory_path() / "omg_acceptance_repro";
  fs::remove_all(root);
  const std::string model = R"(--config )" + (root / "model.json").string();
  fs::create_directories(root);
  std::ofstream(root / "model.json")
      << R"({"model": {"n_layers": 1, "d_model": 32, "n_heads": 2, "d_head": 16, "d_ff": 64}})";
  std::ofstream(root / "moc.json") << R"({"moc": {"d_m": 16, "pool_size": 4}})";
  std::vector<std::string> failed;
  for (const char* run : {"a", "b"}) {
    const fs::path r = root / run;
    const std::string s = " --serial --seed 5 ";
    bool ok = cli("gen-data" + s + "--kind paired --count 6 -o " + (r / "data").string()) == 0;
    ok = ok && cli("pretrain" + s + model + " --data " + (r / "data").string() + " -o " + (r / "pre").string() +
                   " --steps 20 --batch-size 2") == 0;
    ok = ok && cli("finetune" + s + "--config " + (root / "moc.json").string() + " --pretrained " +
                   (r / "pre" / "model.omgc").string() + " --data " + (r / "data").string() + " -o " +
                   (r / "ft").string() + " --stub-embedder --steps 10 --batch-size 2") == 0;
    ok = ok && cli("sample" + s + "--checkpoint " + (r / "pre" / "model.omgc").string() + " --controlnet " +
                   (r / "ft" / "controlnet.omgc").string() +
                   " -p \"a person walks then jumps\" --stub-embedder --steps 20 --count 2 --length 40 --dump-csv -o " +
                   (r / "sample").string()) == 0;
    ok = ok && cli("eval" + s + "--generated " + (r / "sample").string() + " --reference " + (r / "data").string() +
                   " --replicates 5 -o " + (r / "eval").string()) == 0;
    if (!ok) return {false, std::string("a CLI command failed in run ") + run};
  }
  int checked = 0;
  for (const char* dir : {"data", "pre", "ft", "sample", "eval"}) {
    std::string why;
    if (!same_tree(root / "a" / dir, root / "b" / dir, why)) failed.push_back(std::string(dir) + "/" + why);
    ++checked;
  }
  if (!failed.empty()) return {false, "differs: " + failed.front()};
  return {true, fmt("gen-data, pretrain, finetune, sample and eval outputs byte-identical across two --serial runs "
                    "(%d commands)",
                    checked)};
}

struct Criterion {
  const char* id;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  std::set<std::string> only;
  std::string report_path;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--strict") strict = true;
    else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string id; std::getline(ss, id, ',');) only.insert(id);
    } else if (a == "--report" && i + 1 < argc) {
      report_path = argv[++i];
    } else {
      std::cerr << "usage: omg_acceptance [--strict] [--only id,id,...] [--report FILE]\n";
      return 2;
    }
  }
  const std::vector<Criterion> criteria = {
      {"zero-init-identity", zero_init_identity},
      {"guidance-collapse", guidance_collapse},
      {"gradient-suite", gradient_suite},
      {"moc-oracle", moc_oracle},
      {"expert-blend", expert_blend},
      {"attention-mask", mask_scalars},
      {"sliding-window", window_law},
      {"schedule-sampler", schedule_sampler},
      {"overfit-unconditional", overfit_unconditional},
      {"overfit-controlnet", overfit_controlnet},
      {"ablation-direction", ablation_direction},
      {"metrics", metrics},
      {"reproducibility", reproducibility},
  };
  std::ofstream report;
  if (!report_path.empty()) report.open(report_path);
  auto emit = [&](const std::string& line) {
    std::cout << line << std::endl;
    if (report) report << line << std::endl;
  };
  int passed = 0, total = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    emit((o.pass ? "PASS " : "FAIL ") + std::string(c.id) + ": " + o.detail + fmt(" [%.1fs]", secs));
    passed += o.pass ? 1 : 0;
    ++total;
  }
  emit(std::to_string(passed) + "/" + std::to_string(total) + " criteria passed");
  return strict && passed != total ? 1 : 0;
}
