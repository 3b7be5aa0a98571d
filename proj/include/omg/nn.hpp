#pragma once

// Dense building blocks with explicit forward/backward passes. Activations
// are row-major (frames x channels); weights map rows by right-multiplication.

#include "omg/rng.hpp"
#include "omg/tensor.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace omg::nn {

template <class S>
struct Linear {
  Mat<S> weight;  // in x out
  Mat<S> bias;    // 1 x out

  Linear() = default;
  Linear(int in, int out) : weight(Mat<S>::Zero(in, out)), bias(Mat<S>::Zero(1, out)) {}

  int in_dim() const { return static_cast<int>(weight.rows()); }
  int out_dim() const { return static_cast<int>(weight.cols()); }

  Mat<S> forward(const Mat<S>& x) const {
    Mat<S> y = x * weight;
    y.rowwise() += bias.row(0);
    return y;
  }

  /// Accumulates into `grad` when non-null; returns dL/dx.
  Mat<S> backward(const Mat<S>& x, const Mat<S>& dy, Linear* grad) const {
    if (grad) {
      grad->weight.noalias() += x.transpose() * dy;
      grad->bias += dy.colwise().sum();
    }
    return dy * weight.transpose();
  }

  void init_truncated_normal(Rng& rng, double std) {
    for (Eigen::Index i = 0; i < weight.size(); ++i) weight.data()[i] = static_cast<S>(truncated_normal(rng, std));
    bias.setZero();
  }

  void collect(const std::string& prefix, TensorList<S>& out) {
    out.push_back({prefix + ".weight", &weight, false});
    out.push_back({prefix + ".bias", &bias, true});
  }
};

template <class S>
inline S gelu(S x) {
  return static_cast<S>(0.5) * x * (static_cast<S>(1) + std::erf(x / static_cast<S>(std::numbers::sqrt2)));
}

template <class S>
inline S gelu_grad(S x) {
  const S cdf = static_cast<S>(0.5) * (static_cast<S>(1) + std::erf(x / static_cast<S>(std::numbers::sqrt2)));
  const S pdf = std::exp(static_cast<S>(-0.5) * x * x) / static_cast<S>(std::sqrt(2.0 * std::numbers::pi));
  return cdf + x * pdf;
}

template <class S>
inline S silu(S x) {
  return x / (static_cast<S>(1) + std::exp(-x));
}

template <class S>
inline S silu_grad(S x) {
  const S sig = static_cast<S>(1) / (static_cast<S>(1) + std::exp(-x));
  return sig * (static_cast<S>(1) + x * (static_cast<S>(1) - sig));
}

template <class S>
inline S sigmoid(S x) {
  return static_cast<S>(1) / (static_cast<S>(1) + std::exp(-x));
}

template <class S>
Mat<S> gelu(const Mat<S>& x) {
  return x.unaryExpr([](S v) { return gelu(v); });
}

template <class S>
Mat<S> gelu_backward(const Mat<S>& x, const Mat<S>& dy) {
  return dy.cwiseProduct(x.unaryExpr([](S v) { return gelu_grad(v); }));
}

template <class S>
Mat<S> silu(const Mat<S>& x) {
  return x.unaryExpr([](S v) { return silu(v); });
}

template <class S>
Mat<S> silu_backward(const Mat<S>& x, const Mat<S>& dy) {
  return dy.cwiseProduct(x.unaryExpr([](S v) { return silu_grad(v); }));
}

/// Row softmax. Entries of `logits` equal to -inf get probability 0; a row
/// with no finite entry is left at 0.
template <class S>
Mat<S> softmax_rows(const Mat<S>& logits) {
  Mat<S> p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const S m = logits.row(r).maxCoeff();
    if (!std::isfinite(m)) {
      p.row(r).setZero();
      continue;
    }
    S total = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      const S e = std::isfinite(logits(r, c)) ? std::exp(logits(r, c) - m) : S(0);
      p(r, c) = e;
      total += e;
    }
    p.row(r) /= total;
  }
  return p;
}

/// dL/dlogits given softmax output p and dL/dp.
template <class S>
Mat<S> softmax_rows_backward(const Mat<S>& p, const Mat<S>& dp) {
  Mat<S> dz = p.cwiseProduct(dp);
  const Eigen::Matrix<S, Eigen::Dynamic, 1> dot = dz.rowwise().sum();
  dz -= p.cwiseProduct(dot.replicate(1, p.cols()));
  return dz;
}

/// Layer norm without affine parameters, over the channel axis of each row.
template <class S>
struct LayerNormCache {
  Mat<S> normalized;
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std;
};

template <class S>
Mat<S> layer_norm(const Mat<S>& x, S eps, LayerNormCache<S>* cache) {
  const Eigen::Index n = x.cols();
  Mat<S> y(x.rows(), n);
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S mean = x.row(r).mean();
    const auto centered = (x.row(r).array() - mean).matrix();
    const S var = centered.squaredNorm() / static_cast<S>(n);
    inv_std(r) = static_cast<S>(1) / std::sqrt(var + eps);
    y.row(r) = centered * inv_std(r);
  }
  if (cache) {
    cache->normalized = y;
    cache->inv_std = inv_std;
  }
  return y;
}

template <class S>
Mat<S> layer_norm_backward(const LayerNormCache<S>& cache, const Mat<S>& dy) {
  const Eigen::Index n = dy.cols();
  Mat<S> dx(dy.rows(), n);
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const S mean_dy = dy.row(r).mean();
    const S mean_dy_y = dy.row(r).dot(cache.normalized.row(r)) / static_cast<S>(n);
    dx.row(r) = cache.inv_std(r) *
                (dy.row(r).array() - mean_dy - cache.normalized.row(r).array() * mean_dy_y).matrix();
  }
  return dx;
}

/// y = x * (1 + scale) + shift, with 1 x n scale/shift rows.
template <class S>
Mat<S> modulate(const Mat<S>& x, const Mat<S>& shift, const Mat<S>& scale) {
  Mat<S> y = x;
  y.array().rowwise() *= (scale.row(0).array() + static_cast<S>(1));
  y.rowwise() += shift.row(0);
  return y;
}

}  // namespace omg::nn
