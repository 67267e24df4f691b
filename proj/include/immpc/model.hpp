#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace immpc {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Eigen::Index;

/// dx/dt = A_c x + B_c u, y = C x.
template <typename Scalar = double>
struct ContinuousLTI {
  Matrix<Scalar> A;
  Matrix<Scalar> B;
  Matrix<Scalar> C;

  Index states() const { return A.rows(); }
  Index inputs() const { return B.cols(); }
  Index outputs() const { return C.rows(); }
};

/**
 * Controller-visible plant model
 *
 *   x(t+1) = A x(t) + B u(t)
 *   y(t)   = C x(t)
 *
 * The exogenous part (E w, F w) lives in DisturbanceChannel and is only
 * known to the simulator.
 */
template <typename Scalar = double>
struct DiscreteLTI {
  Matrix<Scalar> A;
  Matrix<Scalar> B;
  Matrix<Scalar> C;
  Scalar Ts{1};

  Index n() const { return A.rows(); }
  Index m() const { return B.cols(); }
  Index p() const { return C.rows(); }

  void validate() const {
    if (!(Ts > Scalar(0))) throw std::invalid_argument("DiscreteLTI: sample time must be positive");
    if (A.rows() != A.cols()) throw std::invalid_argument("DiscreteLTI: A must be square");
    if (B.rows() != A.rows()) throw std::invalid_argument("DiscreteLTI: B row count must match A");
    if (C.cols() != A.rows()) throw std::invalid_argument("DiscreteLTI: C column count must match A");
  }
};

/// Exogenous input channel of the true plant: x+ = ... + E w, y = ... + F w, w+ = S w.
/// Owned by the simulator; controller code never sees it.
template <typename Scalar = double>
struct DisturbanceChannel {
  Matrix<Scalar> E;
  Matrix<Scalar> F;
  Matrix<Scalar> S;
  Vector<Scalar> w0;

  Index q() const { return S.rows(); }

  void validate(const DiscreteLTI<Scalar>& sys) const {
    if (S.rows() != S.cols()) throw std::invalid_argument("DisturbanceChannel: S must be square");
    if (E.rows() != sys.n() || E.cols() != q())
      throw std::invalid_argument("DisturbanceChannel: E must be n x q");
    if (F.rows() != sys.p() || F.cols() != q())
      throw std::invalid_argument("DisturbanceChannel: F must be p x q");
    if (w0.size() != q()) throw std::invalid_argument("DisturbanceChannel: w0 must have q entries");
  }
};

/// Z = {(x,u) | Cbar x + Dbar u <= cbar}.
template <typename Scalar = double>
struct ConstraintPolytope {
  Matrix<Scalar> Cbar;
  Matrix<Scalar> Dbar;
  Vector<Scalar> cbar;

  Index rows() const { return cbar.size(); }

  /// One face per bound: rows ordered x_max, x_min, u_max, u_min.
  static ConstraintPolytope box(const Vector<Scalar>& x_min, const Vector<Scalar>& x_max,
                                const Vector<Scalar>& u_min, const Vector<Scalar>& u_max) {
    const Index n = x_min.size();
    const Index m = u_min.size();
    if (x_max.size() != n || u_max.size() != m)
      throw std::invalid_argument("ConstraintPolytope::box: bound sizes differ");
    if ((x_min.array() > x_max.array()).any() || (u_min.array() > u_max.array()).any())
      throw std::invalid_argument("ConstraintPolytope::box: empty box");
    ConstraintPolytope poly;
    const Index rows = 2 * (n + m);
    poly.Cbar = Matrix<Scalar>::Zero(rows, n);
    poly.Dbar = Matrix<Scalar>::Zero(rows, m);
    poly.cbar.resize(rows);
    for (Index i = 0; i < n; ++i) {
      poly.Cbar(i, i) = 1;
      poly.cbar(i) = x_max(i);
      poly.Cbar(n + i, i) = -1;
      poly.cbar(n + i) = -x_min(i);
    }
    for (Index j = 0; j < m; ++j) {
      poly.Dbar(2 * n + j, j) = 1;
      poly.cbar(2 * n + j) = u_max(j);
      poly.Dbar(2 * n + m + j, j) = -1;
      poly.cbar(2 * n + m + j) = -u_min(j);
    }
    return poly;
  }

  /// Row i touches the state (as opposed to a pure input limit).
  bool is_state_row(Index i) const { return Cbar.row(i).cwiseAbs().maxCoeff() > Scalar(0); }

  /// max_i (Cbar x + Dbar u - cbar)_i, clamped at zero.
  Scalar violation(const Vector<Scalar>& x, const Vector<Scalar>& u) const {
    const Vector<Scalar> r = Cbar * x + Dbar * u - cbar;
    return std::max(Scalar(0), r.maxCoeff());
  }

  void validate(Index n, Index m) const {
    if (Cbar.cols() != n || Dbar.cols() != m || Cbar.rows() != cbar.size() || Dbar.rows() != cbar.size())
      throw std::invalid_argument("ConstraintPolytope: dimension mismatch");
  }
};

template <typename Scalar>
DiscreteLTI<Scalar> discretize_euler(const ContinuousLTI<Scalar>& sys, Scalar Ts) {
  if (!(Ts > Scalar(0))) throw std::invalid_argument("discretize_euler: sample time must be positive");
  DiscreteLTI<Scalar> d;
  d.A = Matrix<Scalar>::Identity(sys.states(), sys.states()) + Ts * sys.A;
  d.B = Ts * sys.B;
  d.C = sys.C;
  d.Ts = Ts;
  return d;
}

template <typename Scalar>
struct PlantStep {
  Vector<Scalar> x_next;
  Vector<Scalar> y;
};

/// True plant update including the hidden exogenous channel.
template <typename Scalar>
PlantStep<Scalar> plant_step(const DiscreteLTI<Scalar>& sys, const DisturbanceChannel<Scalar>& dist,
                             const std::type_identity_t<Vector<Scalar>>& x,
                             const std::type_identity_t<Vector<Scalar>>& u,
                             const std::type_identity_t<Vector<Scalar>>& w) {
  if (x.size() != sys.n() || u.size() != sys.m() || w.size() != dist.q() || dist.E.rows() != sys.n() ||
      dist.F.rows() != sys.p())
    throw std::invalid_argument("plant_step: dimension mismatch");
  return {sys.A * x + dist.E * w + sys.B * u, sys.C * x + dist.F * w};
}

template <typename Scalar>
Index numerical_rank(const Matrix<Scalar>& M, Scalar tol = Scalar(1e-8)) {
  if (M.size() == 0) return 0;
  Eigen::JacobiSVD<Matrix<Scalar>> svd(M);
  const auto& s = svd.singularValues();
  const Scalar ref = std::max(Scalar(1), s(0));
  Index r = 0;
  for (Index i = 0; i < s.size(); ++i)
    if (s(i) > tol * ref) ++r;
  return r;
}

template <typename Scalar>
Matrix<Scalar> controllability_matrix(const Matrix<Scalar>& A, const Matrix<Scalar>& B) {
  const Index n = A.rows();
  Matrix<Scalar> ctrb(n, n * B.cols());
  Matrix<Scalar> block = B;
  for (Index k = 0; k < n; ++k) {
    ctrb.middleCols(k * B.cols(), B.cols()) = block;
    block = A * block;
  }
  return ctrb;
}

template <typename Scalar>
bool is_controllable(const Matrix<Scalar>& A, const Matrix<Scalar>& B, Scalar tol = Scalar(1e-8)) {
  return numerical_rank<Scalar>(controllability_matrix<Scalar>(A, B), tol) == A.rows();
}

/// PBH test on the eigenvalues with |lambda| >= 1 (discrete) or Re >= 0 (continuous).
template <typename Scalar>
bool is_detectable(const Matrix<Scalar>& A, const Matrix<Scalar>& C, bool discrete, Scalar tol = Scalar(1e-8)) {
  using Complex = std::complex<Scalar>;
  const Index n = A.rows();
  Eigen::EigenSolver<Matrix<Scalar>> es(A, false);
  for (Index i = 0; i < n; ++i) {
    const Complex lambda = es.eigenvalues()(i);
    const bool unstable = discrete ? std::abs(lambda) >= Scalar(1) - tol : lambda.real() >= -tol;
    if (!unstable) continue;
    Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic> pbh(n + C.rows(), n);
    pbh.topRows(n) = lambda * Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic>::Identity(n, n) -
                     A.template cast<Complex>();
    pbh.bottomRows(C.rows()) = C.template cast<Complex>();
    Eigen::JacobiSVD<decltype(pbh)> svd(pbh);
    const auto& s = svd.singularValues();
    Index r = 0;
    for (Index k = 0; k < s.size(); ++k)
      if (s(k) > tol * std::max(Scalar(1), s(0))) ++r;
    if (r < n) return false;
  }
  return true;
}

template <typename Scalar = double>
struct OperatingPoint {
  Vector<Scalar> x;
  Vector<Scalar> u;
};

/// Linearized quadruple-tank process in deviation coordinates.
template <typename Scalar = double>
struct FourTankModel {
  ContinuousLTI<Scalar> continuous;
  ConstraintPolytope<Scalar> constraints;
  OperatingPoint<Scalar> operating_point;
  /// A_c x_lin + B_c u_lin: the drift the deviation model neglects at the operating point.
  Vector<Scalar> operating_drift;
};

template <typename Scalar = double>
FourTankModel<Scalar> four_tank() {
  const Scalar a1 = Scalar(0.0751), a2 = Scalar(0.0371);
  const Scalar b1 = Scalar(0.151), b2 = Scalar(0.0693);

  FourTankModel<Scalar> ft;
  auto& sys = ft.continuous;
  sys.A.resize(4, 4);
  sys.A << -a1, 0, 0, 0,
            a1, -a2, 0, 0,
            0, 0, -a1, 0,
            0, 0, a1, -a2;
  sys.B.resize(4, 2);
  sys.B << b1, 0,
           0, b2,
           0, b1,
           b2, 0;
  sys.C.resize(2, 4);
  sys.C << 0, 1, 0, 0,
           0, 0, 0, 1;

  ft.operating_point.x = (Vector<Scalar>(4) << 8, 18, 8, 18).finished();
  ft.operating_point.u = (Vector<Scalar>(2) << 8, 8).finished();

  const Vector<Scalar> h_min = Vector<Scalar>::Constant(4, 0), h_max = Vector<Scalar>::Constant(4, 22);
  const Vector<Scalar> u_min = Vector<Scalar>::Constant(2, 0), u_max = Vector<Scalar>::Constant(2, 16);
  const auto& op = ft.operating_point;
  ft.constraints = ConstraintPolytope<Scalar>::box(h_min - op.x, h_max - op.x, u_min - op.u, u_max - op.u);
  ft.operating_drift = sys.A * op.x + sys.B * op.u;
  return ft;
}

}  // namespace immpc
