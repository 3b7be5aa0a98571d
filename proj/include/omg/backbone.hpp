#pragma once

#include "omg/dataset.hpp"
#include "omg/nn.hpp"
#include "omg/rng.hpp"
#include "omg/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace omg {

struct ModelConfig {
  std::string preset = "tiny";
  int n_layers = 2;
  int d_model = 64;
  int n_heads = 4;
  int d_head = 16;
  int d_ff = 128;
  int max_len = 300;
  int input_dim = 59;
  int freq_dim = 256;  // sinusoidal timestep features

  void validate() const;
};

/// Named presets: tiny, base, large, huge, giant. d_ff = 2 * d_model.
ModelConfig model_preset(const std::string& name, int input_dim = 263, int max_len = 300);

/// Exact parameter count of DenoiserParams for `config`, without allocating.
std::int64_t parameter_count(const ModelConfig& config);

template <class S>
struct DiTBlockParams {
  nn::Linear<S> ada;   // d -> 6d: shift/scale/gate for attention and MLP
  nn::Linear<S> qkv;   // d -> 3d
  nn::Linear<S> proj;  // d -> d
  nn::Linear<S> fc1;   // d -> d_ff
  nn::Linear<S> fc2;   // d_ff -> d

  DiTBlockParams() = default;
  explicit DiTBlockParams(const ModelConfig& c);
  void collect(const std::string& prefix, TensorList<S>& out);
};

template <class S>
struct DenoiserParams {
  ModelConfig config;
  nn::Linear<S> in_proj;
  nn::Linear<S> t_fc1;
  nn::Linear<S> t_fc2;
  std::vector<DiTBlockParams<S>> blocks;
  nn::Linear<S> final_ada;  // d -> 2d: shift/scale
  nn::Linear<S> out_proj;

  DenoiserParams() = default;
  explicit DenoiserParams(const ModelConfig& c);  // all zeros

  TensorList<S> tensors();
  TensorList<S> tensors() const { return const_cast<DenoiserParams*>(this)->tensors(); }
};

/// Truncated-normal (std 0.02) projections, zero adaptive-modulation layers.
template <class S>
DenoiserParams<S> init_params(const ModelConfig& config, std::uint64_t seed);

template <class Dst, class Src>
DenoiserParams<Dst> cast_params(const DenoiserParams<Src>& p);

// ---- rotary embedding -------------------------------------------------------

/// Rotates consecutive channel pairs of each row by position * base^(-2i/d).
/// `inverse` applies the transpose rotation.
template <class S>
void apply_rope(Mat<S>& m, std::span<const int> positions, bool inverse = false);

/// Per-head q.k logits after rotary encoding (unscaled). q and k hold one
/// len x d_head matrix per head.
template <class S>
std::vector<Mat<S>> rotary_scores(const std::vector<Mat<S>>& q, const std::vector<Mat<S>>& k,
                                  std::span<const int> positions);

// ---- forward / backward pieces ------------------------------------------------

template <class S>
struct BlockCache {
  Mat<S> h;        // block input
  Mat<S> c_act;    // silu(c)
  Mat<S> mod;      // 1 x 6d
  nn::LayerNormCache<S> ln1;
  Mat<S> attn_in;
  Mat<S> q, k, v;  // rotated q, k
  std::vector<Mat<S>> probs;
  Mat<S> attn_heads;  // concatenated head outputs, pre-projection
  Mat<S> attn_out;
  Mat<S> h1;
  nn::LayerNormCache<S> ln2;
  Mat<S> mlp_in;
  Mat<S> fc1_pre;
  Mat<S> fc1_act;
  Mat<S> mlp_out;
  std::vector<int> positions;
};

template <class S>
struct DenoiseCache {
  Mat<S> x;
  Mat<S> t_freq, t_pre, c;
  std::vector<BlockCache<S>> blocks;
  Mat<S> h_final;
  Mat<S> c_act_final, mod_final;
  nn::LayerNormCache<S> ln_final;
  Mat<S> y_final;
  std::vector<int> positions;
};

/// Sinusoidal features [cos(t f_i), sin(t f_i)], f_i = 10000^(-i/half).
template <class S>
Mat<S> timestep_features(int t, int dim);

template <class S>
Mat<S> timestep_embedding(const DenoiserParams<S>& p, int t, DenoiseCache<S>* cache);

template <class S>
Mat<S> block_forward(const DiTBlockParams<S>& p, const ModelConfig& config, const Mat<S>& h, const Mat<S>& c,
                     std::span<const int> positions, BlockCache<S>* cache);

/// Returns dL/dh; adds dL/d silu(c) into `dc` and parameter gradients into
/// `grad` (either may be null).
template <class S>
Mat<S> block_backward(const DiTBlockParams<S>& p, const ModelConfig& config, const BlockCache<S>& cache,
                      const Mat<S>& dout, DiTBlockParams<S>* grad, Mat<S>* dc);

template <class S>
Mat<S> final_forward(const DenoiserParams<S>& p, const Mat<S>& h, const Mat<S>& c, DenoiseCache<S>* cache);

template <class S>
Mat<S> final_backward(const DenoiserParams<S>& p, const DenoiseCache<S>& cache, const Mat<S>& dout,
                      DenoiserParams<S>* grad, Mat<S>* dc);

template <class S>
void timestep_backward(const DenoiserParams<S>& p, const DenoiseCache<S>& cache, const Mat<S>& dc,
                       DenoiserParams<S>* grad);

/// x0 prediction for one sequence of valid frames at the given positions.
template <class S>
Mat<S> denoise_item(const DenoiserParams<S>& p, const Mat<S>& x, int t, std::span<const int> positions,
                    DenoiseCache<S>* cache);

template <class S>
void denoise_item_backward(const DenoiserParams<S>& p, const DenoiseCache<S>& cache, const Mat<S>& dout,
                           DenoiserParams<S>& grad);

/// Valid-frame gather/scatter between padded items and dense sequences.
std::vector<int> valid_positions(const std::vector<std::uint8_t>& mask);
template <class S>
Mat<S> gather_rows(const Mat<S>& m, std::span<const int> rows);
template <class S>
void scatter_rows(const Mat<S>& src, std::span<const int> rows, Mat<S>& dst);

/// Batched x0 prediction. Padding rows are ignored on input and zero on output.
template <class S>
MotionBatch<S> denoise(const DenoiserParams<S>& p, const MotionBatch<S>& x_t, const std::vector<int>& t,
                       bool serial = serial_mode());

}  // namespace omg
