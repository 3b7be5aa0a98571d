#include "omg/backbone.hpp"

#include "omg/error.hpp"

#include <cmath>

namespace omg {

void ModelConfig::validate() const {
  require(n_layers >= 1 && d_model >= 1 && n_heads >= 1 && d_head >= 1 && d_ff >= 1 && max_len >= 1 &&
              input_dim >= 1 && freq_dim >= 2,
          ErrorCode::kConfig, "model dimensions must be positive");
  require(n_heads * d_head == d_model, ErrorCode::kConfig, "n_heads * d_head must equal d_model");
  require(d_head % 2 == 0, ErrorCode::kOddHeadDim, "rotary embedding needs an even head dimension");
  require(freq_dim % 2 == 0, ErrorCode::kConfig, "timestep feature dim must be even");
}

ModelConfig model_preset(const std::string& name, int input_dim, int max_len) {
  ModelConfig c;
  c.preset = name;
  c.input_dim = input_dim;
  c.max_len = max_len;
  auto set = [&](int layers, int d, int heads, int head_dim) {
    c.n_layers = layers;
    c.d_model = d;
    c.n_heads = heads;
    c.d_head = head_dim;
    c.d_ff = 2 * d;
  };
  if (name == "tiny") set(2, 64, 4, 16);
  else if (name == "base") set(8, 1024, 8, 128);
  else if (name == "large") set(12, 1280, 10, 128);
  else if (name == "huge") set(16, 1664, 13, 128);
  else if (name == "giant") set(24, 2048, 16, 128);
  else fail(ErrorCode::kConfig, "unknown model preset '" + name + "'");
  c.validate();
  return c;
}

std::int64_t parameter_count(const ModelConfig& c) {
  auto linear = [](std::int64_t in, std::int64_t out) { return in * out + out; };
  const std::int64_t d = c.d_model;
  const std::int64_t block = linear(d, 6 * d) + linear(d, 3 * d) + linear(d, d) + linear(d, c.d_ff) + linear(c.d_ff, d);
  return linear(c.input_dim, d) + linear(c.freq_dim, d) + linear(d, d) + c.n_layers * block + linear(d, 2 * d) +
         linear(d, c.input_dim);
}

template <class S>
DiTBlockParams<S>::DiTBlockParams(const ModelConfig& c)
    : ada(c.d_model, 6 * c.d_model),
      qkv(c.d_model, 3 * c.d_model),
      proj(c.d_model, c.d_model),
      fc1(c.d_model, c.d_ff),
      fc2(c.d_ff, c.d_model) {}

template <class S>
void DiTBlockParams<S>::collect(const std::string& prefix, TensorList<S>& out) {
  ada.collect(prefix + ".ada", out);
  qkv.collect(prefix + ".attn.qkv", out);
  proj.collect(prefix + ".attn.proj", out);
  fc1.collect(prefix + ".mlp.fc1", out);
  fc2.collect(prefix + ".mlp.fc2", out);
}

template <class S>
DenoiserParams<S>::DenoiserParams(const ModelConfig& c)
    : config(c),
      in_proj(c.input_dim, c.d_model),
      t_fc1(c.freq_dim, c.d_model),
      t_fc2(c.d_model, c.d_model),
      final_ada(c.d_model, 2 * c.d_model),
      out_proj(c.d_model, c.input_dim) {
  c.validate();
  for (int l = 0; l < c.n_layers; ++l) blocks.emplace_back(c);
}

template <class S>
TensorList<S> DenoiserParams<S>::tensors() {
  TensorList<S> out;
  in_proj.collect("in_proj", out);
  t_fc1.collect("t_embed.fc1", out);
  t_fc2.collect("t_embed.fc2", out);
  for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].collect("blocks." + std::to_string(l), out);
  final_ada.collect("final.ada", out);
  out_proj.collect("out_proj", out);
  return out;
}

template <class S>
DenoiserParams<S> init_params(const ModelConfig& config, std::uint64_t seed) {
  DenoiserParams<S> p(config);
  Rng rng(seed);
  constexpr double kStd = 0.02;
  p.in_proj.init_truncated_normal(rng, kStd);
  p.t_fc1.init_truncated_normal(rng, kStd);
  p.t_fc2.init_truncated_normal(rng, kStd);
  for (auto& b : p.blocks) {
    b.qkv.init_truncated_normal(rng, kStd);
    b.proj.init_truncated_normal(rng, kStd);
    b.fc1.init_truncated_normal(rng, kStd);
    b.fc2.init_truncated_normal(rng, kStd);
  }
  p.out_proj.init_truncated_normal(rng, kStd);
  return p;
}

template <class Dst, class Src>
DenoiserParams<Dst> cast_params(const DenoiserParams<Src>& p) {
  DenoiserParams<Dst> out(p.config);
  const auto src = p.tensors();
  const auto dst = out.tensors();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].value = src[i].value->template cast<Dst>();
  return out;
}

// ---- rotary -------------------------------------------------------------------

template <class S>
void apply_rope(Mat<S>& m, std::span<const int> positions, bool inverse) {
  const Eigen::Index d = m.cols();
  require(d % 2 == 0, ErrorCode::kOddHeadDim, "rotary embedding needs an even head dimension");
  require(static_cast<Eigen::Index>(positions.size()) == m.rows(), ErrorCode::kShapeMismatch,
          "one position per row required");
  const double sign = inverse ? -1.0 : 1.0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index i = 0; i < d / 2; ++i) {
      const double theta = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
      const double angle = sign * static_cast<double>(positions[static_cast<std::size_t>(r)]) * theta;
      const S cs = static_cast<S>(std::cos(angle));
      const S sn = static_cast<S>(std::sin(angle));
      const S a = m(r, 2 * i);
      const S b = m(r, 2 * i + 1);
      m(r, 2 * i) = a * cs - b * sn;
      m(r, 2 * i + 1) = a * sn + b * cs;
    }
  }
}

template <class S>
std::vector<Mat<S>> rotary_scores(const std::vector<Mat<S>>& q, const std::vector<Mat<S>>& k,
                                  std::span<const int> positions) {
  require(q.size() == k.size(), ErrorCode::kShapeMismatch, "q and k head counts differ");
  std::vector<Mat<S>> out;
  for (std::size_t h = 0; h < q.size(); ++h) {
    Mat<S> qr = q[h];
    Mat<S> kr = k[h];
    apply_rope(qr, positions);
    apply_rope(kr, positions);
    out.push_back(qr * kr.transpose());
  }
  return out;
}

// ---- timestep conditioning ---------------------------------------------------------

template <class S>
Mat<S> timestep_features(int t, int dim) {
  const int half = dim / 2;
  Mat<S> f(1, dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
    f(0, i) = static_cast<S>(std::cos(t * freq));
    f(0, half + i) = static_cast<S>(std::sin(t * freq));
  }
  return f;
}

template <class S>
Mat<S> timestep_embedding(const DenoiserParams<S>& p, int t, DenoiseCache<S>* cache) {
  Mat<S> freq = timestep_features<S>(t, p.config.freq_dim);
  Mat<S> pre = p.t_fc1.forward(freq);
  Mat<S> c = p.t_fc2.forward(nn::silu(pre));
  if (cache) {
    cache->t_freq = std::move(freq);
    cache->t_pre = std::move(pre);
    cache->c = c;
  }
  return c;
}

template <class S>
void timestep_backward(const DenoiserParams<S>& p, const DenoiseCache<S>& cache, const Mat<S>& dc,
                       DenoiserParams<S>* grad) {
  if (!grad) return;
  const Mat<S> act = nn::silu(cache.t_pre);
  const Mat<S> dact = p.t_fc2.backward(act, dc, &grad->t_fc2);
  const Mat<S> dpre = nn::silu_backward(cache.t_pre, dact);
  p.t_fc1.backward(cache.t_freq, dpre, &grad->t_fc1);
}

// ---- DiT block -----------------------------------------------------------------------

namespace {

template <class S>
Mat<S> chunk(const Mat<S>& mod, int index, int d) {
  return mod.block(0, static_cast<Eigen::Index>(index) * d, 1, d);
}

template <class S>
constexpr S kLnEps = static_cast<S>(1e-6);

}  // namespace

template <class S>
Mat<S> block_forward(const DiTBlockParams<S>& p, const ModelConfig& config, const Mat<S>& h, const Mat<S>& c,
                     std::span<const int> positions, BlockCache<S>* cache) {
  const int d = config.d_model;
  const int dh = config.d_head;
  const Eigen::Index len = h.rows();
  BlockCache<S> local;
  BlockCache<S>& bc = cache ? *cache : local;
  bc.h = h;
  bc.positions.assign(positions.begin(), positions.end());
  bc.c_act = nn::silu(c);
  bc.mod = p.ada.forward(bc.c_act);
  const Mat<S> shift1 = chunk(bc.mod, 0, d), scale1 = chunk(bc.mod, 1, d), gate1 = chunk(bc.mod, 2, d);
  const Mat<S> shift2 = chunk(bc.mod, 3, d), scale2 = chunk(bc.mod, 4, d), gate2 = chunk(bc.mod, 5, d);

  bc.attn_in = nn::modulate(nn::layer_norm(h, kLnEps<S>, &bc.ln1), shift1, scale1);
  const Mat<S> qkv = p.qkv.forward(bc.attn_in);
  bc.q = qkv.leftCols(d);
  bc.k = qkv.middleCols(d, d);
  bc.v = qkv.rightCols(d);
  bc.probs.resize(static_cast<std::size_t>(config.n_heads));
  bc.attn_heads.resize(len, d);
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  for (int head = 0; head < config.n_heads; ++head) {
    Mat<S> qh = bc.q.middleCols(head * dh, dh);
    Mat<S> kh = bc.k.middleCols(head * dh, dh);
    apply_rope(qh, positions);
    apply_rope(kh, positions);
    bc.q.middleCols(head * dh, dh) = qh;
    bc.k.middleCols(head * dh, dh) = kh;
    Mat<S> logits = (qh * kh.transpose()) * scale;
    bc.probs[static_cast<std::size_t>(head)] = nn::softmax_rows(logits);
    bc.attn_heads.middleCols(head * dh, dh) = bc.probs[static_cast<std::size_t>(head)] * bc.v.middleCols(head * dh, dh);
  }
  bc.attn_out = p.proj.forward(bc.attn_heads);
  bc.h1 = h;
  bc.h1.array() += bc.attn_out.array().rowwise() * gate1.row(0).array();

  bc.mlp_in = nn::modulate(nn::layer_norm(bc.h1, kLnEps<S>, &bc.ln2), shift2, scale2);
  bc.fc1_pre = p.fc1.forward(bc.mlp_in);
  bc.fc1_act = nn::gelu(bc.fc1_pre);
  bc.mlp_out = p.fc2.forward(bc.fc1_act);
  Mat<S> out = bc.h1;
  out.array() += bc.mlp_out.array().rowwise() * gate2.row(0).array();
  return out;
}

template <class S>
Mat<S> block_backward(const DiTBlockParams<S>& p, const ModelConfig& config, const BlockCache<S>& bc,
                      const Mat<S>& dout, DiTBlockParams<S>* grad, Mat<S>* dc) {
  const int d = config.d_model;
  const int hd = config.d_head;
  const Mat<S> scale1 = chunk(bc.mod, 1, d), gate1 = chunk(bc.mod, 2, d);
  const Mat<S> scale2 = chunk(bc.mod, 4, d), gate2 = chunk(bc.mod, 5, d);
  Mat<S> dmod = Mat<S>::Zero(1, 6 * d);

  // MLP branch.
  Mat<S> dh1 = dout;
  dmod.block(0, 5 * d, 1, d) = dout.cwiseProduct(bc.mlp_out).colwise().sum();
  Mat<S> dmlp = dout;
  dmlp.array().rowwise() *= gate2.row(0).array();
  Mat<S> dact = p.fc2.backward(bc.fc1_act, dmlp, grad ? &grad->fc2 : nullptr);
  Mat<S> dpre = nn::gelu_backward(bc.fc1_pre, dact);
  Mat<S> dmlp_in = p.fc1.backward(bc.mlp_in, dpre, grad ? &grad->fc1 : nullptr);
  dmod.block(0, 3 * d, 1, d) = dmlp_in.colwise().sum();
  dmod.block(0, 4 * d, 1, d) = dmlp_in.cwiseProduct(bc.ln2.normalized).colwise().sum();
  Mat<S> dn2 = dmlp_in;
  dn2.array().rowwise() *= (scale2.row(0).array() + static_cast<S>(1));
  dh1 += nn::layer_norm_backward(bc.ln2, dn2);

  // Attention branch.
  Mat<S> dh = dh1;
  dmod.block(0, 2 * d, 1, d) = dh1.cwiseProduct(bc.attn_out).colwise().sum();
  Mat<S> dattn = dh1;
  dattn.array().rowwise() *= gate1.row(0).array();
  const Mat<S> dheads = p.proj.backward(bc.attn_heads, dattn, grad ? &grad->proj : nullptr);
  Mat<S> dqkv(dheads.rows(), 3 * d);
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));
  for (int head = 0; head < config.n_heads; ++head) {
    const Mat<S>& probs = bc.probs[static_cast<std::size_t>(head)];
    const Mat<S> doh = dheads.middleCols(head * hd, hd);
    const Mat<S> vh = bc.v.middleCols(head * hd, hd);
    const Mat<S> dprobs = doh * vh.transpose();
    const Mat<S> dlogits = nn::softmax_rows_backward(probs, dprobs) * scale;
    Mat<S> dq = dlogits * bc.k.middleCols(head * hd, hd);
    Mat<S> dk = dlogits.transpose() * bc.q.middleCols(head * hd, hd);
    apply_rope(dq, bc.positions, true);
    apply_rope(dk, bc.positions, true);
    dqkv.middleCols(head * hd, hd) = dq;
    dqkv.middleCols(d + head * hd, hd) = dk;
    dqkv.middleCols(2 * d + head * hd, hd) = probs.transpose() * doh;
  }
  const Mat<S> dattn_in = p.qkv.backward(bc.attn_in, dqkv, grad ? &grad->qkv : nullptr);
  dmod.block(0, 0, 1, d) = dattn_in.colwise().sum();
  dmod.block(0, d, 1, d) = dattn_in.cwiseProduct(bc.ln1.normalized).colwise().sum();
  Mat<S> dn1 = dattn_in;
  dn1.array().rowwise() *= (scale1.row(0).array() + static_cast<S>(1));
  dh += nn::layer_norm_backward(bc.ln1, dn1);

  const Mat<S> dc_act = p.ada.backward(bc.c_act, dmod, grad ? &grad->ada : nullptr);
  if (dc) *dc += dc_act;
  return dh;
}

template <class S>
Mat<S> final_forward(const DenoiserParams<S>& p, const Mat<S>& h, const Mat<S>& c, DenoiseCache<S>* cache) {
  const int d = p.config.d_model;
  Mat<S> c_act = nn::silu(c);
  Mat<S> mod = p.final_ada.forward(c_act);
  nn::LayerNormCache<S> ln;
  Mat<S> y = nn::modulate(nn::layer_norm(h, kLnEps<S>, &ln), chunk(mod, 0, d), chunk(mod, 1, d));
  Mat<S> out = p.out_proj.forward(y);
  if (cache) {
    cache->h_final = h;
    cache->c_act_final = std::move(c_act);
    cache->mod_final = std::move(mod);
    cache->ln_final = std::move(ln);
    cache->y_final = std::move(y);
  }
  return out;
}

template <class S>
Mat<S> final_backward(const DenoiserParams<S>& p, const DenoiseCache<S>& cache, const Mat<S>& dout,
                      DenoiserParams<S>* grad, Mat<S>* dc) {
  const int d = p.config.d_model;
  const Mat<S> dy = p.out_proj.backward(cache.y_final, dout, grad ? &grad->out_proj : nullptr);
  Mat<S> dmod(1, 2 * d);
  dmod.block(0, 0, 1, d) = dy.colwise().sum();
  dmod.block(0, d, 1, d) = dy.cwiseProduct(cache.ln_final.normalized).colwise().sum();
  Mat<S> dn = dy;
  dn.array().rowwise() *= (chunk(cache.mod_final, 1, d).row(0).array() + static_cast<S>(1));
  const Mat<S> dc_act = p.final_ada.backward(cache.c_act_final, dmod, grad ? &grad->final_ada : nullptr);
  if (dc) *dc += dc_act;
  return nn::layer_norm_backward(cache.ln_final, dn);
}

template <class S>
Mat<S> denoise_item(const DenoiserParams<S>& p, const Mat<S>& x, int t, std::span<const int> positions,
                    DenoiseCache<S>* cache) {
  const ModelConfig& config = p.config;
  require(x.cols() == config.input_dim, ErrorCode::kShapeMismatch,
          "input has " + std::to_string(x.cols()) + " features, model expects " + std::to_string(config.input_dim));
  require(x.rows() >= 1, ErrorCode::kShapeMismatch, "empty sequence");
  require(x.rows() <= config.max_len, ErrorCode::kLengthExceeded,
          "sequence length " + std::to_string(x.rows()) + " exceeds max_len " + std::to_string(config.max_len));
  DenoiseCache<S> local;
  DenoiseCache<S>& dc = cache ? *cache : local;
  dc.x = x;
  dc.positions.assign(positions.begin(), positions.end());
  const Mat<S> c = timestep_embedding(p, t, &dc);
  Mat<S> h = p.in_proj.forward(x);
  dc.blocks.resize(p.blocks.size());
  for (std::size_t l = 0; l < p.blocks.size(); ++l)
    h = block_forward(p.blocks[l], config, h, c, positions, cache ? &dc.blocks[l] : nullptr);
  Mat<S> out = final_forward(p, h, c, cache ? &dc : nullptr);
  if (!out.allFinite()) fail(ErrorCode::kNonFiniteActivation, "denoiser produced a non-finite output");
  return out;
}

template <class S>
void denoise_item_backward(const DenoiserParams<S>& p, const DenoiseCache<S>& cache, const Mat<S>& dout,
                           DenoiserParams<S>& grad) {
  Mat<S> dc_act_total = Mat<S>::Zero(1, p.config.d_model);
  Mat<S> dh = final_backward(p, cache, dout, &grad, &dc_act_total);
  for (std::size_t l = p.blocks.size(); l-- > 0;)
    dh = block_backward(p.blocks[l], p.config, cache.blocks[l], dh, &grad.blocks[l], &dc_act_total);
  p.in_proj.backward(cache.x, dh, &grad.in_proj);
  // Every consumer of c applies silu first, so the accumulated gradient is
  // with respect to silu(c).
  const Mat<S> dc = nn::silu_backward(cache.c, dc_act_total);
  timestep_backward(p, cache, dc, &grad);
}

std::vector<int> valid_positions(const std::vector<std::uint8_t>& mask) {
  std::vector<int> pos;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) pos.push_back(static_cast<int>(i));
  return pos;
}

template <class S>
Mat<S> gather_rows(const Mat<S>& m, std::span<const int> rows) {
  Mat<S> out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

template <class S>
void scatter_rows(const Mat<S>& src, std::span<const int> rows, Mat<S>& dst) {
  for (std::size_t i = 0; i < rows.size(); ++i) dst.row(rows[i]) = src.row(static_cast<Eigen::Index>(i));
}

template <class S>
MotionBatch<S> denoise(const DenoiserParams<S>& p, const MotionBatch<S>& x_t, const std::vector<int>& t,
                       bool serial) {
  require(static_cast<int>(t.size()) == x_t.batch(), ErrorCode::kShapeMismatch, "one timestep per batch item");
  MotionBatch<S> out = MotionBatch<S>::zeros_like(x_t);
  out.dim = p.config.input_dim;
  parallel_for(
      static_cast<std::size_t>(x_t.batch()),
      [&](std::size_t b) {
        const auto pos = valid_positions(x_t.mask[b]);
        if (pos.empty()) return;
        const Mat<S> y = denoise_item<S>(p, gather_rows(x_t.items[b], pos), t[b], pos, nullptr);
        out.items[b] = Mat<S>::Zero(x_t.pad_len, p.config.input_dim);
        scatter_rows(y, pos, out.items[b]);
      },
      serial);
  return out;
}

#define OMG_INSTANTIATE(S)                                                                                      \
  template struct DiTBlockParams<S>;                                                                            \
  template struct DenoiserParams<S>;                                                                            \
  template DenoiserParams<S> init_params<S>(const ModelConfig&, std::uint64_t);                                 \
  template void apply_rope<S>(Mat<S>&, std::span<const int>, bool);                                             \
  template std::vector<Mat<S>> rotary_scores<S>(const std::vector<Mat<S>>&, const std::vector<Mat<S>>&,         \
                                                std::span<const int>);                                          \
  template Mat<S> timestep_features<S>(int, int);                                                               \
  template Mat<S> timestep_embedding<S>(const DenoiserParams<S>&, int, DenoiseCache<S>*);                       \
  template void timestep_backward<S>(const DenoiserParams<S>&, const DenoiseCache<S>&, const Mat<S>&,           \
                                     DenoiserParams<S>*);                                                       \
  template Mat<S> block_forward<S>(const DiTBlockParams<S>&, const ModelConfig&, const Mat<S>&, const Mat<S>&,  \
                                   std::span<const int>, BlockCache<S>*);                                       \
  template Mat<S> block_backward<S>(const DiTBlockParams<S>&, const ModelConfig&, const BlockCache<S>&,         \
                                    const Mat<S>&, DiTBlockParams<S>*, Mat<S>*);                                \
  template Mat<S> final_forward<S>(const DenoiserParams<S>&, const Mat<S>&, const Mat<S>&, DenoiseCache<S>*);  \
  template Mat<S> final_backward<S>(const DenoiserParams<S>&, const DenoiseCache<S>&, const Mat<S>&,            \
                                    DenoiserParams<S>*, Mat<S>*);                                               \
  template Mat<S> denoise_item<S>(const DenoiserParams<S>&, const Mat<S>&, int, std::span<const int>,          \
                                  DenoiseCache<S>*);                                                            \
  template void denoise_item_backward<S>(const DenoiserParams<S>&, const DenoiseCache<S>&, const Mat<S>&,       \
                                         DenoiserParams<S>&);                                                   \
  template Mat<S> gather_rows<S>(const Mat<S>&, std::span<const int>);                                          \
  template void scatter_rows<S>(const Mat<S>&, std::span<const int>, Mat<S>&);                                  \
  template MotionBatch<S> denoise<S>(const DenoiserParams<S>&, const MotionBatch<S>&, const std::vector<int>&,  \
                                     bool);

OMG_INSTANTIATE(float)
OMG_INSTANTIATE(double)
#undef OMG_INSTANTIATE

template DenoiserParams<double> cast_params<double, float>(const DenoiserParams<float>&);
template DenoiserParams<float> cast_params<float, double>(const DenoiserParams<double>&);
template DenoiserParams<float> cast_params<float, float>(const DenoiserParams<float>&);
template DenoiserParams<double> cast_params<double, double>(const DenoiserParams<double>&);

}  // namespace omg
