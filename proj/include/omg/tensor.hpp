#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace omg {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatF = Mat<float>;
using MatD = Mat<double>;

/// A named, mutable view of one parameter tensor. Biases are 1 x n matrices
/// and are serialized as rank-1 tensors.
template <class S>
struct NamedTensor {
  std::string name;
  Mat<S>* value;
  bool is_vector;
};

template <class S>
using TensorList = std::vector<NamedTensor<S>>;

template <class S>
std::size_t count_elements(const TensorList<S>& tensors) {
  std::size_t total = 0;
  for (const auto& t : tensors) total += static_cast<std::size_t>(t.value->size());
  return total;
}

/// FNV-1a over names, shapes, and the float32 bytes of every tensor.
template <class S>
std::uint64_t checksum(const TensorList<S>& tensors);

template <class S>
bool all_finite(const Mat<S>& m) {
  return m.allFinite();
}

template <class Dst, class Src>
Mat<Dst> cast_mat(const Mat<Src>& m) {
  return m.template cast<Dst>();
}

/// Zero every tensor in place.
template <class S>
void zero_all(const TensorList<S>& tensors) {
  for (const auto& t : tensors) t.value->setZero();
}

// Row-broadcast helpers. `row` is a 1 x n matrix.
template <class S>
void add_row(Mat<S>& m, const Mat<S>& row) {
  m.rowwise() += row.row(0);
}

/// Column sums as a 1 x n matrix.
template <class S>
Mat<S> col_sum(const Mat<S>& m) {
  return m.colwise().sum();
}

/// Runs fn(i) for i in [0, n). With serial=false work is spread over hardware
/// threads; each index is handled by exactly one thread, so callers that write
/// per-index outputs and reduce afterwards in index order stay bit-exact.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, bool serial);

/// Global default for parallel_for callers that do not pass a mode explicitly.
void set_serial_mode(bool serial);
bool serial_mode();

}  // namespace omg
