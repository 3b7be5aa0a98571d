#pragma once

// Mixture-of-Controllers block: a kernel-1 down-projection to the control
// latent, cross-attention against text tokens, Ada-IN on the eos embedding,
// per-token experts blended from a shared pool and gated by a sharpened
// attention mask, then a kernel-1 up-projection back to the model width.

#include "omg/nn.hpp"
#include "omg/text.hpp"

#include <string>
#include <vector>

namespace omg {

struct MoCConfig {
  int d_model = 64;
  int d_text = kTextDim;
  int d_m = 256;
  int pool_size = 12;
  double gamma = 24.0;
  double beta = 0.25;
  bool use_attention_mask = true;
  bool use_zero_conv = true;
  bool experts_as_plain_ffn = false;  // "cross-attention + FFN" variant

  void validate() const;
};

template <class S>
struct ExpertParams {
  Mat<S> w0;  // d_m x 2d_m
  Mat<S> b0;  // 1 x 2d_m
  Mat<S> w1;  // 2d_m x d_m
  Mat<S> b1;  // 1 x d_m

  ExpertParams() = default;
  explicit ExpertParams(int d_m);
  void collect(const std::string& prefix, TensorList<S>& out);
};

template <class S>
struct MoCParams {
  MoCConfig config;
  nn::Linear<S> down;  // d_model -> d_m
  nn::Linear<S> up;    // d_m -> d_model
  Mat<S> w_q;          // d_m x d_m
  Mat<S> w_k;          // d_c x d_m
  Mat<S> w_v;          // d_c x d_m
  nn::Linear<S> ada;   // d_c -> 2d_m: [scale, shift]
  nn::Linear<S> gate1, gate2, gate3;  // d_c -> d_m -> d_m -> K
  std::vector<ExpertParams<S>> experts;
  ExpertParams<S> ffn;  // plain FFN variant only

  MoCParams() = default;
  explicit MoCParams(const MoCConfig& c);  // zeros

  /// Parameters that the configured variant actually uses.
  TensorList<S> tensors();
  TensorList<S> tensors() const { return const_cast<MoCParams*>(this)->tensors(); }
};

/// Zero-initialized conv pair (Gaussian std 0.02 when use_zero_conv is off),
/// truncated-normal attention/gating/expert weights, identity Ada-IN.
template <class S>
MoCParams<S> init_moc_params(const MoCConfig& config, std::uint64_t seed);

template <class Dst, class Src>
MoCParams<Dst> cast_moc_params(const MoCParams<Src>& p);

// ---- stand-alone operations -------------------------------------------------

template <class S>
struct CrossAttention {
  Mat<S> updated;    // f' = f + A V
  Mat<S> attention;  // l x n, zero on masked tokens
};

template <class S>
CrossAttention<S> cross_attend(const Mat<S>& f, const TextConditioning& cond, const Mat<S>& w_q, const Mat<S>& w_k,
                               const Mat<S>& w_v);

/// Per-channel temporal normalization (eps 1e-5) then eos-driven scale/shift.
template <class S>
Mat<S> ada_in(const Mat<S>& f, const TextConditioning& cond, const nn::Linear<S>& ada);

/// softmax over the gating network's logits for one token embedding.
template <class S>
Mat<S> gate_weights(const MoCParams<S>& p, const Mat<S>& token_embedding);

template <class S>
ExpertParams<S> blend_experts(const std::vector<ExpertParams<S>>& pool, const Mat<S>& weights);

template <class S>
ExpertParams<S> blend_expert(const MoCParams<S>& p, const Mat<S>& token_embedding);

/// GELU two-layer FFN applied frame-wise.
template <class S>
Mat<S> expert_forward(const Mat<S>& f, const ExpertParams<S>& e);

/// sigmoid(gamma * (a - beta * max(a))) for one attention column.
template <class S>
Eigen::Matrix<S, Eigen::Dynamic, 1> attention_mask(const Eigen::Matrix<S, Eigen::Dynamic, 1>& column, double gamma,
                                                   double beta);

// ---- full block ---------------------------------------------------------------

template <class S>
struct MoCTokenCache {
  int token = 0;
  Mat<S> embedding;                // 1 x d_c
  Mat<S> g1_pre, g1, g2_pre, g2;   // gating activations
  Mat<S> omega;                    // 1 x K
  ExpertParams<S> expert;          // blended
  Mat<S> pre, hidden, output;      // expert activations
  Eigen::Matrix<S, Eigen::Dynamic, 1> mask;
  Eigen::Index argmax = 0;
};

template <class S>
struct MoCCache {
  Mat<S> input;
  Mat<S> text;  // n x d_c
  Mat<S> f, q, k, v, attention, f1;
  Mat<S> normalized, inv_std, eos, scale_shift, f2;
  std::vector<MoCTokenCache<S>> tokens;
  Mat<S> residual;  // sum of per-token residuals, l x d_m
};

/// Summed residual for the model stream, l x d_model.
template <class S>
Mat<S> moc_forward(const MoCParams<S>& p, const Mat<S>& h, const TextConditioning& cond, MoCCache<S>* cache);

/// Returns dL/dh; accumulates parameter gradients into `grad` when non-null.
template <class S>
Mat<S> moc_backward(const MoCParams<S>& p, const MoCCache<S>& cache, const Mat<S>& dout, MoCParams<S>* grad);

}  // namespace omg
