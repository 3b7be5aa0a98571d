#pragma once

// Helpers shared by the unit tests and the acceptance binary: random inputs,
// central finite differences, and loop-level reference implementations that
// share no code with the library's matrix paths.

#include "omg/backbone.hpp"
#include "omg/moc.hpp"
#include "omg/rng.hpp"
#include "omg/text.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace omg::testing {

inline MatD random_mat(int rows, int cols, Rng& rng, double scale = 1.0) {
  MatD m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * scale;
  return m;
}

/// Random token embeddings with unit-scale rows, the eos at `eos`, and the
/// given padding tokens masked out.
inline TextConditioning random_conditioning(int n, int d_c, Rng& rng, int eos, std::vector<int> masked = {}) {
  TextConditioning c;
  c.embeddings = random_mat(n, d_c, rng, 1.0 / std::sqrt(static_cast<double>(d_c))).cast<float>();
  c.eos_index = eos;
  c.token_mask.assign(static_cast<std::size_t>(n), 1);
  for (int m : masked) c.token_mask[static_cast<std::size_t>(m)] = 0;
  c.source = "stub";
  return c;
}

/// Randomizes every tensor so no zero-init shortcut hides a gradient path.
inline void randomize(const TensorList<double>& tensors, Rng& rng, double scale) {
  for (const auto& t : tensors)
    for (Eigen::Index i = 0; i < t.value->size(); ++i) t.value->data()[i] = rng.normal() * scale;
}

struct GradCheck {
  double rel_error = 0.0;  // ||g_analytic - g_numeric|| / max(norms) over probed coordinates
  int probed = 0;
};

/// Central differences (step h) at `per_tensor` random coordinates of every
/// tensor in `params`, compared against `grads`.
inline GradCheck check_gradients(const TensorList<double>& params, const TensorList<double>& grads,
                                 const std::function<double()>& loss, int per_tensor, Rng& rng, double h = 1e-3) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  GradCheck out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    MatD& p = *params[k].value;
    for (int s = 0; s < per_tensor; ++s) {
      const auto i = static_cast<Eigen::Index>(rng.uniform_int(0, p.size() - 1));
      const double keep = p.data()[i];
      p.data()[i] = keep + h;
      const double up = loss();
      p.data()[i] = keep - h;
      const double down = loss();
      p.data()[i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grads[k].value->data()[i];
      diff += (numeric - analytic) * (numeric - analytic);
      na += analytic * analytic;
      nn += numeric * numeric;
      ++out.probed;
    }
  }
  const double denom = std::max(std::sqrt(std::max(na, nn)), 1e-12);
  out.rel_error = std::sqrt(diff) / denom;
  return out;
}

/// Same probe on an input matrix.
inline GradCheck check_input_gradient(MatD& x, const MatD& grad, const std::function<double()>& loss, int probes,
                                      Rng& rng, double h = 1e-3) {
  NamedTensor<double> px{"x", &x, false};
  MatD g = grad;
  NamedTensor<double> pg{"x", &g, false};
  return check_gradients({px}, {pg}, loss, probes, rng, h);
}

// ---- loop-level MoC reference -------------------------------------------------

inline double ref_gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
inline double ref_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

using Grid = std::vector<std::vector<double>>;

inline Grid to_grid(const MatD& m) {
  Grid g(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) g[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
  return g;
}

inline Grid ref_matmul(const Grid& a, const Grid& b) {
  Grid c(a.size(), std::vector<double>(b.front().size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b.front().size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Grid ref_affine(const Grid& x, const MatD& weight, const MatD& bias) {
  Grid y = ref_matmul(x, to_grid(weight));
  for (auto& row : y)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias(0, static_cast<Eigen::Index>(j));
  return y;
}

inline Grid ref_affine(const Grid& x, const nn::Linear<double>& layer) {
  return ref_affine(x, layer.weight, layer.bias);
}

inline std::vector<double> ref_softmax(const std::vector<double>& z, const std::vector<std::uint8_t>& valid) {
  double peak = -INFINITY;
  for (std::size_t i = 0; i < z.size(); ++i)
    if (valid[i]) peak = std::max(peak, z[i]);
  std::vector<double> p(z.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i)
    if (valid[i]) total += (p[i] = std::exp(z[i] - peak));
  for (auto& v : p) v /= total;
  return p;
}

/// Straight transcription of the block definition.
inline MatD reference_moc(const MoCParams<double>& p, const MatD& h_in, const TextConditioning& cond) {
  const MoCConfig& cfg = p.config;
  const std::size_t l = static_cast<std::size_t>(h_in.rows());
  const std::size_t n = static_cast<std::size_t>(cond.n_tokens());
  const std::size_t dm = static_cast<std::size_t>(cfg.d_m);
  const Grid text = to_grid(cond.embeddings.cast<double>());
  const Grid f = ref_affine(to_grid(h_in), p.down);
  const Grid q = ref_matmul(f, to_grid(p.w_q));
  const Grid k = ref_matmul(text, to_grid(p.w_k));
  const Grid v = ref_matmul(text, to_grid(p.w_v));
  Grid attn(l, std::vector<double>(n));
  for (std::size_t i = 0; i < l; ++i) {
    std::vector<double> z(n);
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < dm; ++c) s += q[i][c] * k[j][c];
      z[j] = s / std::sqrt(static_cast<double>(dm));
    }
    attn[i] = ref_softmax(z, cond.token_mask);
  }
  Grid f1 = f;
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < dm; ++c) f1[i][c] += attn[i][j] * v[j][c];

  Grid residual(l, std::vector<double>(dm, 0.0));
  if (cfg.experts_as_plain_ffn) {
    const Grid hid = ref_affine(f1, p.ffn.w0, p.ffn.b0);
    Grid act = hid;
    for (auto& row : act)
      for (auto& x : row) x = ref_gelu(x);
    residual = ref_affine(act, p.ffn.w1, p.ffn.b1);
  } else {
    const Grid eos = {text[static_cast<std::size_t>(cond.eos_index)]};
    const Grid ss = ref_affine(eos, p.ada);
    Grid f2 = f1;
    for (std::size_t c = 0; c < dm; ++c) {
      double mean = 0.0, var = 0.0;
      for (std::size_t i = 0; i < l; ++i) mean += f1[i][c];
      mean /= static_cast<double>(l);
      for (std::size_t i = 0; i < l; ++i) var += (f1[i][c] - mean) * (f1[i][c] - mean);
      var /= static_cast<double>(l);
      for (std::size_t i = 0; i < l; ++i)
        f2[i][c] = (f1[i][c] - mean) / std::sqrt(var + 1e-5) * ss[0][c] + ss[0][dm + c];
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (!cond.token_mask[j]) continue;
      const Grid e = {text[j]};
      Grid g1 = ref_affine(e, p.gate1);
      for (auto& x : g1[0]) x = ref_gelu(x);
      Grid g2 = ref_affine(g1, p.gate2);
      for (auto& x : g2[0]) x = ref_gelu(x);
      const Grid logits = ref_affine(g2, p.gate3);
      const std::vector<double> omega =
          ref_softmax(logits[0], std::vector<std::uint8_t>(static_cast<std::size_t>(cfg.pool_size), 1));
      MatD w0 = MatD::Zero(cfg.d_m, 2 * cfg.d_m), b0 = MatD::Zero(1, 2 * cfg.d_m);
      MatD w1 = MatD::Zero(2 * cfg.d_m, cfg.d_m), b1 = MatD::Zero(1, cfg.d_m);
      for (std::size_t kk = 0; kk < omega.size(); ++kk) {
        const auto& ex = p.experts[kk];
        for (Eigen::Index a = 0; a < w0.size(); ++a) w0.data()[a] += omega[kk] * ex.w0.data()[a];
        for (Eigen::Index a = 0; a < b0.size(); ++a) b0.data()[a] += omega[kk] * ex.b0.data()[a];
        for (Eigen::Index a = 0; a < w1.size(); ++a) w1.data()[a] += omega[kk] * ex.w1.data()[a];
        for (Eigen::Index a = 0; a < b1.size(); ++a) b1.data()[a] += omega[kk] * ex.b1.data()[a];
      }
      Grid hid = ref_affine(f2, w0, b0);
      for (auto& row : hid)
        for (auto& x : row) x = ref_gelu(x);
      const Grid out = ref_affine(hid, w1, b1);
      double peak = -INFINITY;
      for (std::size_t i = 0; i < l; ++i) peak = std::max(peak, attn[i][j]);
      for (std::size_t i = 0; i < l; ++i) {
        const double m = cfg.use_attention_mask ? ref_sigmoid(cfg.gamma * (attn[i][j] - cfg.beta * peak)) : 1.0;
        for (std::size_t c = 0; c < dm; ++c) residual[i][c] += m * out[i][c];
      }
    }
  }
  const Grid y = ref_affine(residual, p.up);
  MatD out(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(y.front().size()));
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t c = 0; c < y.front().size(); ++c)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = y[i][c];
  return out;
}

}  // namespace omg::testing
