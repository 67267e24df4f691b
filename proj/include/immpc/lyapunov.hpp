#pragma once

#include "immpc/internal_model.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <type_traits>
#include <vector>

namespace immpc {

template <typename Scalar>
Scalar spectral_radius(const Matrix<Scalar>& A) {
  if (A.size() == 0) return Scalar(0);
  Eigen::EigenSolver<Matrix<Scalar>> es(A, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// ||A' P A - P + Q + eps I||_max.
template <typename Scalar>
Scalar lyapunov_residual(const Matrix<Scalar>& A, const Matrix<Scalar>& P, const Matrix<Scalar>& Q,
                         Scalar eps) {
  if (A.size() == 0) return Scalar(0);
  const Matrix<Scalar> r =
      A.transpose() * P * A - P + Q + eps * Matrix<Scalar>::Identity(A.rows(), A.cols());
  return r.cwiseAbs().maxCoeff();
}

/**
 * Solves A' P A - P + Q + eps I = 0 for a Schur-stable A.
 *
 * Small problems go through the Kronecker form; larger ones use squared
 * Smith iteration, P = sum_k (A')^k Qe A^k, which converges quadratically.
 */
template <typename Scalar>
Matrix<Scalar> dlyap(const Matrix<Scalar>& A, const Matrix<Scalar>& Q, Scalar eps) {
  if (A.rows() != A.cols() || Q.rows() != A.rows() || Q.cols() != A.cols())
    throw std::invalid_argument("dlyap: A and Q must be square and of equal size");
  if (eps < Scalar(0)) throw std::invalid_argument("dlyap: eps must be nonnegative");
  const Index n = A.rows();
  if (n == 0) return Matrix<Scalar>(0, 0);
  if (spectral_radius(A) >= Scalar(1)) throw std::invalid_argument("dlyap: filter numerator not Schur");

  const Matrix<Scalar> Qe = Scalar(0.5) * (Q + Q.transpose()) + eps * Matrix<Scalar>::Identity(n, n);
  Matrix<Scalar> P;
  if (n <= 16) {
    // (A' (x) A' - I) vec(P) = -vec(Qe)
    const Index nn = n * n;
    const Matrix<Scalar> At = A.transpose();
    Matrix<Scalar> K(nn, nn);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) K.block(i * n, j * n, n, n) = At(i, j) * At;
    K -= Matrix<Scalar>::Identity(nn, nn);
    const Vector<Scalar> rhs = -Eigen::Map<const Vector<Scalar>>(Qe.data(), nn);
    const Vector<Scalar> vecP = K.fullPivLu().solve(rhs);
    P = Eigen::Map<const Matrix<Scalar>>(vecP.data(), n, n);
  } else {
    P = Qe;
    Matrix<Scalar> Ak = A;
    for (int it = 0; it < 64; ++it) {
      const Matrix<Scalar> inc = Ak.transpose() * P * Ak;
      P += inc;
      Ak = Ak * Ak;
      if (inc.cwiseAbs().maxCoeff() <= std::numeric_limits<Scalar>::epsilon() * P.cwiseAbs().maxCoeff()) break;
    }
  }
  return Scalar(0.5) * (P + P.transpose());
}

/// Terminal weights V_N = ||e~_x||^2_Px + ||e~_u||^2_Pu; empty when the numerator degree is zero.
template <typename Scalar = double>
struct TerminalCost {
  Matrix<Scalar> Px;
  Matrix<Scalar> Pu;
  Scalar epsilon{0};

  bool trivial() const { return Px.size() == 0 && Pu.size() == 0; }
};

template <typename Scalar>
Scalar default_lyapunov_slack(const Matrix<Scalar>& Qblk) {
  return Qblk.size() ? Scalar(1e-6) * Qblk.cwiseAbs().maxCoeff() : Scalar(0);
}

template <typename Scalar>
TerminalCost<Scalar> build_terminal_cost(const MatrixFractionFilter<Scalar>& Gx, const MatrixFractionFilter<Scalar>& Gu,
                                         const std::type_identity_t<Matrix<Scalar>>& Q,
                                         const std::type_identity_t<Matrix<Scalar>>& R) {
  TerminalCost<Scalar> tc;
  const Matrix<Scalar> Ax = companion_realization(Gx.numerator());
  const Matrix<Scalar> Au = companion_realization(Gu.numerator());
  const Matrix<Scalar> Qblk = blkdiag(Q, Gx.numerator_degree());
  const Matrix<Scalar> Rblk = blkdiag(R, Gu.numerator_degree());
  tc.epsilon = std::max(default_lyapunov_slack(Qblk), default_lyapunov_slack(Rblk));
  tc.Px = dlyap<Scalar>(Ax, Qblk, default_lyapunov_slack(Qblk));
  tc.Pu = dlyap<Scalar>(Au, Rblk, default_lyapunov_slack(Rblk));
  return tc;
}

/**
 * Diagonal reference weight with blkdiag_p(S_a)' Pa blkdiag_p(S_a) = Pa.
 *
 * `weights` is the full diagonal, p blocks of gen_a.dimension() entries; the two
 * entries of every rotation pair must agree.
 */
template <typename Scalar>
Matrix<Scalar> build_Pa(const SignalGenerator<Scalar>& gen_a, Index outputs,
                        const std::type_identity_t<Vector<Scalar>>& weights) {
  const Index d = gen_a.dimension();
  if (weights.size() != outputs * d) throw std::invalid_argument("build_Pa: expected p * dim(S_a) weights");
  if ((weights.array() <= Scalar(0)).any()) throw std::invalid_argument("build_Pa: weights must be positive");
  for (Index r = 0; r < outputs; ++r)
    for (Index j = 0; j < gen_a.pairs(); ++j) {
      const Index off = r * d + gen_a.pair_offset(j);
      if (weights(off) != weights(off + 1))
        throw std::invalid_argument("build_Pa: unequal weights within a rotation pair");
    }
  return weights.asDiagonal();
}

template <typename Scalar>
Matrix<Scalar> build_Pa(const SignalGenerator<Scalar>& gen_a, Index outputs, std::type_identity_t<Scalar> weight) {
  return build_Pa(gen_a, outputs, Vector<Scalar>::Constant(outputs * gen_a.dimension(), weight));
}

}  // namespace immpc
