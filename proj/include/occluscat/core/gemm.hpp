#pragma once

#include <Eigen/Dense>

namespace occluscat {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

// C = A(m x k) * B(k x n), optionally transposing either input in place.
// beta selects overwrite (0) or accumulate (1).
inline void gemm(const float* a, const float* b, float* c, int m, int k, int n,
                 bool trans_a = false, bool trans_b = false, float beta = 0.0f) {
    ConstMatMap A(a, trans_a ? k : m, trans_a ? m : k);
    ConstMatMap B(b, trans_b ? n : k, trans_b ? k : n);
    MatMap C(c, m, n);
    if (beta == 0.0f) {
        if (!trans_a && !trans_b) C.noalias() = A * B;
        else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
        else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
        else C.noalias() = A.transpose() * B.transpose();
    } else {
        if (!trans_a && !trans_b) C.noalias() += A * B;
        else if (trans_a && !trans_b) C.noalias() += A.transpose() * B;
        else if (!trans_a && trans_b) C.noalias() += A * B.transpose();
        else C.noalias() += A.transpose() * B.transpose();
    }
}

}  // namespace occluscat
