#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace fsnet::linalg {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// C[m x n] (+)= op(A)[m x k] * op(B)[k x n] over row-major buffers.
/// op(A) = A when A is stored m x k, or A^T when stored k x m and trans_a is set.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  using Map = Eigen::Map<const RowMajor<T>>;
  Eigen::Map<RowMajor<T>> out(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  const auto mi = static_cast<Eigen::Index>(m);
  const auto ni = static_cast<Eigen::Index>(n);
  const auto ki = static_cast<Eigen::Index>(k);
  if (!accumulate) out.setZero();
  if (m == 0 || n == 0 || k == 0) return;
  if (!trans_a && !trans_b) {
    out.noalias() += Map(a, mi, ki) * Map(b, ki, ni);
  } else if (trans_a && !trans_b) {
    out.noalias() += Map(a, ki, mi).transpose() * Map(b, ki, ni);
  } else if (!trans_a && trans_b) {
    out.noalias() += Map(a, mi, ki) * Map(b, ni, ki).transpose();
  } else {
    out.noalias() += Map(a, ki, mi).transpose() * Map(b, ni, ki).transpose();
  }
}

}  // namespace fsnet::linalg
