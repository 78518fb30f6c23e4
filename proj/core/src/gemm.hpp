#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace leafvit::detail {

/// C[m,n] = op(A)·op(B) (+ C when `accumulate`). All operands row-major with
/// explicit leading dimensions; op(X) is X or Xᵀ. Backed by Eigen's GEMM.
template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
          const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Stride = Eigen::OuterStride<>;
  using ConstMap = Eigen::Map<const Mat, 0, Stride>;
  using Map = Eigen::Map<Mat, 0, Stride>;
  const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };

  ConstMap A(a, trans_a ? ei(k) : ei(m), trans_a ? ei(m) : ei(k), Stride(ei(lda)));
  ConstMap B(b, trans_b ? ei(n) : ei(k), trans_b ? ei(k) : ei(n), Stride(ei(ldb)));
  Map C(c, ei(m), ei(n), Stride(ei(ldc)));
  if (!accumulate) C.setZero();
  if (!trans_a && !trans_b) {
    C.noalias() += A * B;
  } else if (trans_a && !trans_b) {
    C.noalias() += A.transpose() * B;
  } else if (!trans_a && trans_b) {
    C.noalias() += A * B.transpose();
  } else {
    C.noalias() += A.transpose() * B.transpose();
  }
}

}  // namespace leafvit::detail
