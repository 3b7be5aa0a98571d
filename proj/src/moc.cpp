#include "omg/moc.hpp"

#include "omg/error.hpp"

#include <cmath>
#include <limits>

namespace omg {

void MoCConfig::validate() const {
  require(d_model >= 1 && d_text >= 1 && d_m >= 1, ErrorCode::kConfig, "MoC dimensions must be positive");
  require(pool_size >= 1, ErrorCode::kConfig, "expert pool size must be >= 1");
  require(beta >= 0.0 && beta < 1.0, ErrorCode::kConfig, "mask threshold beta must lie in [0, 1)");
  require(gamma > 0.0, ErrorCode::kConfig, "mask sharpness gamma must be > 0");
}

template <class S>
ExpertParams<S>::ExpertParams(int d_m)
    : w0(Mat<S>::Zero(d_m, 2 * d_m)),
      b0(Mat<S>::Zero(1, 2 * d_m)),
      w1(Mat<S>::Zero(2 * d_m, d_m)),
      b1(Mat<S>::Zero(1, d_m)) {}

template <class S>
void ExpertParams<S>::collect(const std::string& prefix, TensorList<S>& out) {
  out.push_back({prefix + ".w0", &w0, false});
  out.push_back({prefix + ".b0", &b0, true});
  out.push_back({prefix + ".w1", &w1, false});
  out.push_back({prefix + ".b1", &b1, true});
}

template <class S>
MoCParams<S>::MoCParams(const MoCConfig& c)
    : config(c),
      down(c.d_model, c.d_m),
      up(c.d_m, c.d_model),
      w_q(Mat<S>::Zero(c.d_m, c.d_m)),
      w_k(Mat<S>::Zero(c.d_text, c.d_m)),
      w_v(Mat<S>::Zero(c.d_text, c.d_m)) {
  c.validate();
  if (c.experts_as_plain_ffn) {
    ffn = ExpertParams<S>(c.d_m);
  } else {
    ada = nn::Linear<S>(c.d_text, 2 * c.d_m);
    gate1 = nn::Linear<S>(c.d_text, c.d_m);
    gate2 = nn::Linear<S>(c.d_m, c.d_m);
    gate3 = nn::Linear<S>(c.d_m, c.pool_size);
    for (int j = 0; j < c.pool_size; ++j) experts.emplace_back(c.d_m);
  }
}

template <class S>
TensorList<S> MoCParams<S>::tensors() {
  TensorList<S> out;
  down.collect("down", out);
  out.push_back({"attn.w_q", &w_q, false});
  out.push_back({"attn.w_k", &w_k, false});
  out.push_back({"attn.w_v", &w_v, false});
  if (config.experts_as_plain_ffn) {
    ffn.collect("ffn", out);
  } else {
    ada.collect("ada_in", out);
    gate1.collect("gate.fc1", out);
    gate2.collect("gate.fc2", out);
    gate3.collect("gate.fc3", out);
    for (std::size_t j = 0; j < experts.size(); ++j) experts[j].collect("experts." + std::to_string(j), out);
  }
  up.collect("up", out);
  return out;
}

namespace {

template <class S>
void fill_truncated(Mat<S>& m, Rng& rng, double std) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(truncated_normal(rng, std));
}

template <class S>
void fill_gaussian(Mat<S>& m, Rng& rng, double std) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(rng.normal() * std);
}

template <class S>
void init_expert(ExpertParams<S>& e, Rng& rng) {
  fill_truncated(e.w0, rng, 0.02);
  fill_truncated(e.w1, rng, 0.02);
}

}  // namespace

template <class S>
MoCParams<S> init_moc_params(const MoCConfig& config, std::uint64_t seed) {
  MoCParams<S> p(config);
  Rng rng(seed);
  if (!config.use_zero_conv) {
    fill_gaussian(p.down.weight, rng, 0.02);
    fill_gaussian(p.up.weight, rng, 0.02);
  }
  fill_truncated(p.w_q, rng, 0.02);
  fill_truncated(p.w_k, rng, 0.02);
  fill_truncated(p.w_v, rng, 0.02);
  if (config.experts_as_plain_ffn) {
    init_expert(p.ffn, rng);
  } else {
    fill_truncated(p.ada.weight, rng, 0.02);
    p.ada.bias.leftCols(config.d_m).setOnes();
    p.gate1.init_truncated_normal(rng, 0.02);
    p.gate2.init_truncated_normal(rng, 0.02);
    p.gate3.init_truncated_normal(rng, 0.02);
    for (auto& e : p.experts) init_expert(e, rng);
  }
  return p;
}

template <class Dst, class Src>
MoCParams<Dst> cast_moc_params(const MoCParams<Src>& p) {
  MoCParams<Dst> out(p.config);
  const auto src = p.tensors();
  const auto dst = out.tensors();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].value = src[i].value->template cast<Dst>();
  return out;
}

// ---- operations -------------------------------------------------------------------

namespace {

template <class S>
Mat<S> attention_logits(const Mat<S>& q, const Mat<S>& k, const std::vector<std::uint8_t>& token_mask) {
  const S inv_sqrt_d = static_cast<S>(1.0 / std::sqrt(static_cast<double>(q.cols())));
  Mat<S> logits = (q * k.transpose()) * inv_sqrt_d;
  for (Eigen::Index i = 0; i < logits.cols(); ++i)
    if (!token_mask[static_cast<std::size_t>(i)]) logits.col(i).setConstant(-std::numeric_limits<S>::infinity());
  return logits;
}

template <class S>
constexpr S kAdaInEps = static_cast<S>(1e-5);

}  // namespace

template <class S>
CrossAttention<S> cross_attend(const Mat<S>& f, const TextConditioning& cond, const Mat<S>& w_q, const Mat<S>& w_k,
                               const Mat<S>& w_v) {
  cond.validate();
  require(f.cols() == w_q.rows() && cond.dim() == w_k.rows() && cond.dim() == w_v.rows(), ErrorCode::kShapeMismatch,
          "cross-attention dimension mismatch");
  const Mat<S> text = cond.embeddings.template cast<S>();
  const Mat<S> q = f * w_q;
  const Mat<S> k = text * w_k;
  const Mat<S> v = text * w_v;
  CrossAttention<S> out;
  out.attention = nn::softmax_rows(attention_logits(q, k, cond.token_mask));
  out.updated = f + out.attention * v;
  return out;
}

template <class S>
Mat<S> ada_in(const Mat<S>& f, const TextConditioning& cond, const nn::Linear<S>& ada) {
  const Eigen::Index d_m = f.cols();
  const Mat<S> mean = f.colwise().mean();
  Mat<S> centered = f.rowwise() - mean.row(0);
  const Mat<S> var = centered.cwiseAbs2().colwise().mean();
  for (Eigen::Index c = 0; c < d_m; ++c) centered.col(c) /= std::sqrt(var(0, c) + kAdaInEps<S>);
  const Mat<S> ss = ada.forward(cond.eos().template cast<S>());
  centered.array().rowwise() *= ss.leftCols(d_m).row(0).array();
  centered.rowwise() += ss.rightCols(d_m).row(0);
  return centered;
}

template <class S>
Mat<S> gate_weights(const MoCParams<S>& p, const Mat<S>& token_embedding) {
  const Mat<S> g1 = nn::gelu(p.gate1.forward(token_embedding));
  const Mat<S> g2 = nn::gelu(p.gate2.forward(g1));
  return nn::softmax_rows(p.gate3.forward(g2));
}

template <class S>
ExpertParams<S> blend_experts(const std::vector<ExpertParams<S>>& pool, const Mat<S>& weights) {
  require(!pool.empty() && static_cast<std::size_t>(weights.cols()) == pool.size(), ErrorCode::kShapeMismatch,
          "one blend weight per pool entry required");
  ExpertParams<S> out = pool.front();
  out.w0 *= weights(0, 0);
  out.b0 *= weights(0, 0);
  out.w1 *= weights(0, 0);
  out.b1 *= weights(0, 0);
  for (std::size_t j = 1; j < pool.size(); ++j) {
    const S w = weights(0, static_cast<Eigen::Index>(j));
    out.w0 += w * pool[j].w0;
    out.b0 += w * pool[j].b0;
    out.w1 += w * pool[j].w1;
    out.b1 += w * pool[j].b1;
  }
  return out;
}

template <class S>
ExpertParams<S> blend_expert(const MoCParams<S>& p, const Mat<S>& token_embedding) {
  if (p.experts.size() == 1) return p.experts.front();
  return blend_experts(p.experts, gate_weights(p, token_embedding));
}

template <class S>
Mat<S> expert_forward(const Mat<S>& f, const ExpertParams<S>& e) {
  Mat<S> pre = f * e.w0;
  pre.rowwise() += e.b0.row(0);
  Mat<S> out = nn::gelu(pre) * e.w1;
  out.rowwise() += e.b1.row(0);
  return out;
}

template <class S>
Eigen::Matrix<S, Eigen::Dynamic, 1> attention_mask(const Eigen::Matrix<S, Eigen::Dynamic, 1>& column, double gamma,
                                                   double beta) {
  const S peak = column.maxCoeff();
  return column.unaryExpr([&](S a) {
    return nn::sigmoid(static_cast<S>(gamma) * (a - static_cast<S>(beta) * peak));
  });
}

// ---- block forward/backward -----------------------------------------------------------

template <class S>
Mat<S> moc_forward(const MoCParams<S>& p, const Mat<S>& h, const TextConditioning& cond, MoCCache<S>* cache) {
  const MoCConfig& cfg = p.config;
  cond.validate();
  require(h.cols() == cfg.d_model, ErrorCode::kShapeMismatch, "MoC input width differs from d_model");
  require(cond.dim() == cfg.d_text, ErrorCode::kShapeMismatch,
          "text embedding dim " + std::to_string(cond.dim()) + " differs from " + std::to_string(cfg.d_text));
  MoCCache<S> local;
  MoCCache<S>& mc = cache ? *cache : local;
  mc.input = h;
  mc.text = cond.embeddings.template cast<S>();
  mc.f = p.down.forward(h);
  mc.q = mc.f * p.w_q;
  mc.k = mc.text * p.w_k;
  mc.v = mc.text * p.w_v;
  mc.attention = nn::softmax_rows(attention_logits(mc.q, mc.k, cond.token_mask));
  mc.f1 = mc.f + mc.attention * mc.v;
  mc.tokens.clear();

  if (cfg.experts_as_plain_ffn) {
    MoCTokenCache<S> tc;
    tc.pre = mc.f1 * p.ffn.w0;
    tc.pre.rowwise() += p.ffn.b0.row(0);
    tc.hidden = nn::gelu(tc.pre);
    tc.output = tc.hidden * p.ffn.w1;
    tc.output.rowwise() += p.ffn.b1.row(0);
    mc.residual = tc.output;
    mc.tokens.push_back(std::move(tc));
    return p.up.forward(mc.residual);
  }

  // Ada-IN over the temporal axis.
  const Eigen::Index d_m = cfg.d_m;
  const Mat<S> mean = mc.f1.colwise().mean();
  Mat<S> centered = mc.f1.rowwise() - mean.row(0);
  const Mat<S> var = centered.cwiseAbs2().colwise().mean();
  mc.inv_std = var.unaryExpr([](S v) { return static_cast<S>(1) / std::sqrt(v + kAdaInEps<S>); });
  mc.normalized = centered;
  mc.normalized.array().rowwise() *= mc.inv_std.row(0).array();
  mc.eos = mc.text.row(cond.eos_index);
  mc.scale_shift = p.ada.forward(mc.eos);
  mc.f2 = mc.normalized;
  mc.f2.array().rowwise() *= mc.scale_shift.leftCols(d_m).row(0).array();
  mc.f2.rowwise() += mc.scale_shift.rightCols(d_m).row(0);

  mc.residual = Mat<S>::Zero(h.rows(), d_m);
  for (int i = 0; i < cond.n_tokens(); ++i) {
    if (!cond.token_mask[static_cast<std::size_t>(i)]) continue;
    MoCTokenCache<S> tc;
    tc.token = i;
    tc.embedding = mc.text.row(i);
    tc.g1_pre = p.gate1.forward(tc.embedding);
    tc.g1 = nn::gelu(tc.g1_pre);
    tc.g2_pre = p.gate2.forward(tc.g1);
    tc.g2 = nn::gelu(tc.g2_pre);
    tc.omega = nn::softmax_rows(p.gate3.forward(tc.g2));
    tc.expert = blend_experts(p.experts, tc.omega);
    tc.pre = mc.f2 * tc.expert.w0;
    tc.pre.rowwise() += tc.expert.b0.row(0);
    tc.hidden = nn::gelu(tc.pre);
    tc.output = tc.hidden * tc.expert.w1;
    tc.output.rowwise() += tc.expert.b1.row(0);
    if (cfg.use_attention_mask) {
      const Eigen::Matrix<S, Eigen::Dynamic, 1> column = mc.attention.col(i);
      column.maxCoeff(&tc.argmax);
      tc.mask = attention_mask(column, cfg.gamma, cfg.beta);
      mc.residual.array() += tc.output.array().colwise() * tc.mask.array();
    } else {
      mc.residual += tc.output;
    }
    mc.tokens.push_back(std::move(tc));
  }
  return p.up.forward(mc.residual);
}

template <class S>
Mat<S> moc_backward(const MoCParams<S>& p, const MoCCache<S>& mc, const Mat<S>& dout, MoCParams<S>* grad) {
  const MoCConfig& cfg = p.config;
  const Eigen::Index d_m = cfg.d_m;
  const Mat<S> dres = p.up.backward(mc.residual, dout, grad ? &grad->up : nullptr);
  Mat<S> df1;
  Mat<S> dattn = Mat<S>::Zero(mc.attention.rows(), mc.attention.cols());

  if (cfg.experts_as_plain_ffn) {
    const auto& tc = mc.tokens.front();
    if (grad) {
      grad->ffn.w1.noalias() += tc.hidden.transpose() * dres;
      grad->ffn.b1 += dres.colwise().sum();
    }
    const Mat<S> dpre = nn::gelu_backward(tc.pre, Mat<S>(dres * p.ffn.w1.transpose()));
    if (grad) {
      grad->ffn.w0.noalias() += mc.f1.transpose() * dpre;
      grad->ffn.b0 += dpre.colwise().sum();
    }
    df1 = dpre * p.ffn.w0.transpose();
  } else {
    Mat<S> df2 = Mat<S>::Zero(mc.f2.rows(), d_m);
    const S gamma = static_cast<S>(cfg.gamma);
    const S beta = static_cast<S>(cfg.beta);
    for (const auto& tc : mc.tokens) {
      Mat<S> dout_tok = dres;
      if (cfg.use_attention_mask) {
        dout_tok.array().colwise() *= tc.mask.array();
        const Eigen::Matrix<S, Eigen::Dynamic, 1> dmask = dres.cwiseProduct(tc.output).rowwise().sum();
        const Eigen::Matrix<S, Eigen::Dynamic, 1> du =
            dmask.cwiseProduct(tc.mask.cwiseProduct((1 - tc.mask.array()).matrix()));
        dattn.col(tc.token) += gamma * du;
        dattn(tc.argmax, tc.token) -= gamma * beta * du.sum();
      }
      // Blended expert.
      ExpertParams<S> de;
      de.w1 = tc.hidden.transpose() * dout_tok;
      de.b1 = dout_tok.colwise().sum();
      const Mat<S> dpre = nn::gelu_backward(tc.pre, Mat<S>(dout_tok * tc.expert.w1.transpose()));
      de.w0 = mc.f2.transpose() * dpre;
      de.b0 = dpre.colwise().sum();
      df2.noalias() += dpre * tc.expert.w0.transpose();
      if (!grad) continue;
      // Pool and gate.
      Mat<S> domega(1, cfg.pool_size);
      for (int j = 0; j < cfg.pool_size; ++j) {
        const auto& e = p.experts[static_cast<std::size_t>(j)];
        domega(0, j) = de.w0.cwiseProduct(e.w0).sum() + de.b0.cwiseProduct(e.b0).sum() +
                       de.w1.cwiseProduct(e.w1).sum() + de.b1.cwiseProduct(e.b1).sum();
        const S w = tc.omega(0, j);
        auto& ge = grad->experts[static_cast<std::size_t>(j)];
        ge.w0 += w * de.w0;
        ge.b0 += w * de.b0;
        ge.w1 += w * de.w1;
        ge.b1 += w * de.b1;
      }
      const Mat<S> dlogits = nn::softmax_rows_backward(tc.omega, domega);
      const Mat<S> dg2 = p.gate3.backward(tc.g2, dlogits, &grad->gate3);
      const Mat<S> dg1 = p.gate2.backward(tc.g1, nn::gelu_backward(tc.g2_pre, dg2), &grad->gate2);
      p.gate1.backward(tc.embedding, nn::gelu_backward(tc.g1_pre, dg1), &grad->gate1);
    }
    // Ada-IN.
    Mat<S> dss(1, 2 * d_m);
    dss.leftCols(d_m) = df2.cwiseProduct(mc.normalized).colwise().sum();
    dss.rightCols(d_m) = df2.colwise().sum();
    p.ada.backward(mc.eos, dss, grad ? &grad->ada : nullptr);
    Mat<S> dy = df2;
    dy.array().rowwise() *= mc.scale_shift.leftCols(d_m).row(0).array();
    const Mat<S> mean_dy = dy.colwise().mean();
    const Mat<S> mean_dy_y = dy.cwiseProduct(mc.normalized).colwise().mean();
    df1 = dy.rowwise() - mean_dy.row(0);
    df1 -= (mc.normalized.array().rowwise() * mean_dy_y.row(0).array()).matrix();
    df1.array().rowwise() *= mc.inv_std.row(0).array();
  }

  // Cross-attention.
  Mat<S> df = df1;
  dattn.noalias() += df1 * mc.v.transpose();
  const Mat<S> dv = mc.attention.transpose() * df1;
  const S inv_sqrt_d = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d_m)));
  const Mat<S> dlogits = nn::softmax_rows_backward(mc.attention, dattn) * inv_sqrt_d;
  const Mat<S> dq = dlogits * mc.k;
  const Mat<S> dk = dlogits.transpose() * mc.q;
  df.noalias() += dq * p.w_q.transpose();
  if (grad) {
    grad->w_q.noalias() += mc.f.transpose() * dq;
    grad->w_k.noalias() += mc.text.transpose() * dk;
    grad->w_v.noalias() += mc.text.transpose() * dv;
  }
  return p.down.backward(mc.input, df, grad ? &grad->down : nullptr);
}

#define OMG_INSTANTIATE(S)                                                                                      \
  template struct ExpertParams<S>;                                                                              \
  template struct MoCParams<S>;                                                                                 \
  template MoCParams<S> init_moc_params<S>(const MoCConfig&, std::uint64_t);                                    \
  template CrossAttention<S> cross_attend<S>(const Mat<S>&, const TextConditioning&, const Mat<S>&,             \
                                             const Mat<S>&, const Mat<S>&);                                     \
  template Mat<S> ada_in<S>(const Mat<S>&, const TextConditioning&, const nn::Linear<S>&);                     \
  template Mat<S> gate_weights<S>(const MoCParams<S>&, const Mat<S>&);                                          \
  template ExpertParams<S> blend_experts<S>(const std::vector<ExpertParams<S>>&, const Mat<S>&);                \
  template ExpertParams<S> blend_expert<S>(const MoCParams<S>&, const Mat<S>&);                                 \
  template Mat<S> expert_forward<S>(const Mat<S>&, const ExpertParams<S>&);                                     \
  template Eigen::Matrix<S, Eigen::Dynamic, 1> attention_mask<S>(const Eigen::Matrix<S, Eigen::Dynamic, 1>&,    \
                                                                 double, double);                               \
  template Mat<S> moc_forward<S>(const MoCParams<S>&, const Mat<S>&, const TextConditioning&, MoCCache<S>*);   \
  template Mat<S> moc_backward<S>(const MoCParams<S>&, const MoCCache<S>&, const Mat<S>&, MoCParams<S>*);

OMG_INSTANTIATE(float)
OMG_INSTANTIATE(double)
#undef OMG_INSTANTIATE

template MoCParams<double> cast_moc_params<double, float>(const MoCParams<float>&);
template MoCParams<float> cast_moc_params<float, double>(const MoCParams<double>&);
template MoCParams<float> cast_moc_params<float, float>(const MoCParams<float>&);

}  // namespace omg
