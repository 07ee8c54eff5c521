#pragma once

// Naive reference implementations used as independent oracles. These stay
// deliberately dumb: scalar loops and explicit matrix powers, sharing no code
// with the kernels they check.

#include <Eigen/Dense>

#include <vector>

#include "gwnet/tensor.hpp"

namespace gwnet::testutil {

// y[b,co,n,t] = bias[co] + sum_s sum_ci k[co,ci,s] * x[b,ci,n,t - d*s]
// (zero-padded left in padded mode; warm-up dropped in valid mode)
inline Tensor naive_dilated_conv(const Tensor& x, const Tensor& kernel, const Tensor& bias, Index d, bool padded) {
  const Index B = x.dim(0), C = x.dim(1), N = x.dim(2), L = x.dim(3);
  const Index Cout = kernel.dim(0), ks = kernel.dim(2);
  const Index Lout = padded ? L : L - d * (ks - 1);
  Tensor y({B, Cout, N, Lout});
  for (Index b = 0; b < B; ++b)
    for (Index co = 0; co < Cout; ++co)
      for (Index n = 0; n < N; ++n)
        for (Index t = 0; t < Lout; ++t) {
          double acc = bias[co];
          for (Index s = 0; s < ks; ++s)
            for (Index ci = 0; ci < C; ++ci) {
              const Index src = padded ? t - d * s : t + d * (ks - 1) - d * s;
              if (src < 0 || src >= L) continue;
              acc += kernel.at({co, ci, s}) * x.at({b, ci, n, src});
            }
          y.at({b, co, n, t}) = acc;
        }
  return y;
}

inline Eigen::MatrixXd matrix_power(const Eigen::MatrixXd& m, int k) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Identity(m.rows(), m.cols());
  for (int i = 0; i < k; ++i) out = out * m;
  return out;
}

// Z_l = sum_s sum_k (S_s^k X_l) W[s][k], applied independently per time slice.
inline Tensor naive_gcn(const Tensor& x, const std::vector<Eigen::MatrixXd>& supports,
                        const std::vector<std::vector<Eigen::MatrixXd>>& weights, int max_k) {
  const Index B = x.dim(0), C = x.dim(1), N = x.dim(2), L = x.dim(3);
  const Index Cout = weights.front().front().cols();
  Tensor y({B, Cout, N, L});
  for (Index b = 0; b < B; ++b)
    for (Index l = 0; l < L; ++l) {
      Eigen::MatrixXd slice(N, C);
      for (Index n = 0; n < N; ++n)
        for (Index c = 0; c < C; ++c) slice(n, c) = x.at({b, c, n, l});
      Eigen::MatrixXd z = Eigen::MatrixXd::Zero(N, Cout);
      for (std::size_t s = 0; s < supports.size(); ++s)
        for (int k = 0; k <= max_k; ++k) z += matrix_power(supports[s], k) * slice * weights[s][static_cast<std::size_t>(k)];
      for (Index n = 0; n < N; ++n)
        for (Index c = 0; c < Cout; ++c) y.at({b, c, n, l}) = z(n, c);
    }
  return y;
}

}  // namespace gwnet::testutil
