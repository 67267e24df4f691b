#pragma once

#include "immpc/model.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace immpc {

template <typename Scalar>
using ComplexVector = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, 1>;

/// blkdiag_count(M): `count` copies of M on the diagonal.
template <typename Derived>
Matrix<typename Derived::Scalar> blkdiag(const Eigen::MatrixBase<Derived>& M, Index count) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> out = Matrix<Scalar>::Zero(M.rows() * count, M.cols() * count);
  for (Index k = 0; k < count; ++k) out.block(k * M.rows(), k * M.cols(), M.rows(), M.cols()) = M;
  return out;
}

/**
 * Exosystem made of an optional constant mode and rotations
 *
 *   S   = diag(1, R_1, ..., R_nS),  R_j = [cos w_j, -sin w_j; sin w_j, cos w_j]
 *   C_S = (1, 1, 0, ..., 1, 0)
 *
 * Frequencies are in rad/sample and must lie in (0, pi).
 */
template <typename Scalar = double>
class SignalGenerator {
 public:
  SignalGenerator() : SignalGenerator({}, true) {}

  SignalGenerator(std::vector<Scalar> frequencies, bool include_constant)
      : frequencies_(std::move(frequencies)), constant_(include_constant) {
    for (std::size_t j = 0; j < frequencies_.size(); ++j) {
      const Scalar w = frequencies_[j];
      if (!(w > Scalar(0) && w < Scalar(std::numbers::pi)))
        throw std::invalid_argument("SignalGenerator: frequency " + std::to_string(double(w)) +
                                    " outside (0, pi)");
      for (std::size_t k = 0; k < j; ++k)
        if (std::abs(frequencies_[k] - w) < Scalar(1e-12))
          throw std::invalid_argument("SignalGenerator: duplicate frequency");
    }
    if (dimension() == 0) throw std::invalid_argument("SignalGenerator: empty generator");

    S_ = Matrix<Scalar>::Zero(dimension(), dimension());
    C_S_ = RowVector<Scalar>::Zero(dimension());
    Index off = 0;
    if (constant_) {
      S_(0, 0) = 1;
      C_S_(0) = 1;
      off = 1;
    }
    for (Scalar w : frequencies_) {
      const Scalar c = std::cos(w), s = std::sin(w);
      S_(off, off) = c;
      S_(off, off + 1) = -s;
      S_(off + 1, off) = s;
      S_(off + 1, off + 1) = c;
      C_S_(off) = 1;
      off += 2;
    }
  }

  const Matrix<Scalar>& S() const { return S_; }
  const RowVector<Scalar>& C_S() const { return C_S_; }
  const std::vector<Scalar>& frequencies() const { return frequencies_; }
  bool has_constant() const { return constant_; }
  Index pairs() const { return static_cast<Index>(frequencies_.size()); }
  Index dimension() const { return (constant_ ? 1 : 0) + 2 * pairs(); }

  /// Offset of the rotation pair j inside a block of size dimension().
  Index pair_offset(Index j) const { return (constant_ ? 1 : 0) + 2 * j; }

  /// Generator restricted to the first `count` frequencies (same constant flag).
  SignalGenerator leading(Index count) const {
    if (count > pairs()) throw std::invalid_argument("SignalGenerator::leading: too many frequencies");
    return SignalGenerator(std::vector<Scalar>(frequencies_.begin(), frequencies_.begin() + count), constant_);
  }

  /// (C_S S^k)^T.
  Vector<Scalar> basis(Index k) const {
    Vector<Scalar> c(dimension());
    Index off = 0;
    if (constant_) c(off++) = 1;
    for (Scalar w : frequencies_) {
      c(off++) = std::cos(Scalar(k) * w);
      c(off++) = -std::sin(Scalar(k) * w);
    }
    return c;
  }

  /// blkdiag_count(C_S S^k), count x count*dimension().
  Matrix<Scalar> trajectory_map(Index count, Index k) const {
    return blkdiag(basis(k).transpose(), count);
  }

  bool operator==(const SignalGenerator& o) const {
    return constant_ == o.constant_ && frequencies_ == o.frequencies_;
  }

 private:
  std::vector<Scalar> frequencies_;
  bool constant_;
  Matrix<Scalar> S_;
  RowVector<Scalar> C_S_;
};

template <typename Scalar>
SignalGenerator<Scalar> build_generator(std::vector<Scalar> frequencies, bool include_constant) {
  return SignalGenerator<Scalar>(std::move(frequencies), include_constant);
}

/// p(z) = sum_i p_i z^{-i}.
template <typename Scalar = double>
class Polynomial {
 public:
  Polynomial() : coeffs_(Vector<Scalar>::Ones(1)) {}
  explicit Polynomial(Vector<Scalar> coeffs) : coeffs_(std::move(coeffs)) {
    if (coeffs_.size() == 0 || coeffs_(0) == Scalar(0))
      throw std::invalid_argument("Polynomial: leading coefficient p0 must be nonzero");
  }
  Polynomial(std::initializer_list<Scalar> c)
      : Polynomial(Eigen::Map<const Vector<Scalar>>(c.begin(), Index(c.size()))) {}

  const Vector<Scalar>& coefficients() const { return coeffs_; }
  Scalar operator[](Index i) const { return coeffs_(i); }
  Index degree() const { return coeffs_.size() - 1; }

  Polynomial operator*(const Polynomial& o) const {
    Vector<Scalar> r = Vector<Scalar>::Zero(coeffs_.size() + o.coeffs_.size() - 1);
    for (Index i = 0; i < coeffs_.size(); ++i)
      for (Index j = 0; j < o.coeffs_.size(); ++j) r(i + j) += coeffs_(i) * o.coeffs_(j);
    return Polynomial(std::move(r));
  }

  Polynomial monic() const { return Polynomial(Vector<Scalar>(coeffs_ / coeffs_(0))); }

  /// Zeros in the z-plane, i.e. roots of sum_i p_i z^{n-i}.
  ComplexVector<Scalar> roots() const {
    const Index n = degree();
    if (n == 0) return ComplexVector<Scalar>(0);
    Matrix<Scalar> comp = Matrix<Scalar>::Zero(n, n);
    for (Index i = 0; i < n; ++i) comp(0, i) = -coeffs_(i + 1) / coeffs_(0);
    for (Index i = 1; i < n; ++i) comp(i, i - 1) = 1;
    Eigen::EigenSolver<Matrix<Scalar>> es(comp, false);
    return es.eigenvalues();
  }

 private:
  Vector<Scalar> coeffs_;
};

/// Monic p(z) with zeros exactly at lambda(S).
template <typename Scalar>
Polynomial<Scalar> char_poly(const SignalGenerator<Scalar>& gen) {
  Polynomial<Scalar> p;
  if (gen.has_constant()) p = p * Polynomial<Scalar>{Scalar(1), Scalar(-1)};
  for (Scalar w : gen.frequencies()) p = p * Polynomial<Scalar>{Scalar(1), -2 * std::cos(w), Scalar(1)};
  return p;
}

/// max over t in [n_n, T] of ||sum_i p_i w(t-i)||_inf for w(t) = S^t w0.
template <typename Scalar>
Scalar annihilation_check(const Polynomial<Scalar>& p, const Matrix<Scalar>& S,
                          const std::type_identity_t<Vector<Scalar>>& w0, Index T) {
  const Index nn = p.degree();
  if (T <= nn) throw std::invalid_argument("annihilation_check: horizon must exceed the polynomial degree");
  std::vector<Vector<Scalar>> w;
  w.reserve(T + 1);
  w.push_back(w0);
  for (Index t = 1; t <= T; ++t) w.push_back(S * w.back());
  Scalar worst = 0;
  for (Index t = nn; t <= T; ++t) {
    Vector<Scalar> acc = Vector<Scalar>::Zero(w0.size());
    for (Index i = 0; i <= nn; ++i) acc += p[i] * w[t - i];
    worst = std::max(worst, acc.size() ? acc.cwiseAbs().maxCoeff() : Scalar(0));
  }
  return worst;
}

template <typename Scalar>
Scalar annihilation_check(const Polynomial<Scalar>& p, const SignalGenerator<Scalar>& gen,
                          const std::type_identity_t<Vector<Scalar>>& w0, Index T) {
  return annihilation_check(p, gen.S(), w0, T);
}

/**
 * Block-companion realization of sum_i Q_i e(t-i) = 0 with state
 * (e(t-1), ..., e(t-nd)); first block row holds -Q_0^{-1} Q_i.
 */
template <typename Scalar>
Matrix<Scalar> companion_realization(const std::vector<Matrix<Scalar>>& Q) {
  if (Q.empty()) throw std::invalid_argument("companion_realization: no coefficients");
  const Index d = Q[0].rows();
  const Index nd = static_cast<Index>(Q.size()) - 1;
  if (nd == 0) return Matrix<Scalar>(0, 0);
  Eigen::FullPivLU<Matrix<Scalar>> lu(Q[0]);
  if (!lu.isInvertible()) throw std::invalid_argument("companion_realization: Q0 is singular");
  Matrix<Scalar> Ae = Matrix<Scalar>::Zero(d * nd, d * nd);
  for (Index i = 1; i <= nd; ++i) Ae.block(0, (i - 1) * d, d, d) = -lu.solve(Q[i]);
  for (Index i = 1; i < nd; ++i) Ae.block(i * d, (i - 1) * d, d, d).setIdentity();
  return Ae;
}

/**
 * G(z) = (sum_{i=0}^{nd} Q_i z^{-i}) / p(z), square of size `dimension()`.
 *
 * The inverse G^{-1} maps raw samples (x or u) to the filtered errors e~.
 */
template <typename Scalar = double>
class MatrixFractionFilter {
 public:
  MatrixFractionFilter() = default;

  MatrixFractionFilter(std::vector<Matrix<Scalar>> numerator, Polynomial<Scalar> denominator)
      : MatrixFractionFilter(std::move(numerator), std::move(denominator), true) {}

  /// Skips the cancellation check; for diagnostics that need to build a degenerate filter.
  static MatrixFractionFilter unchecked(std::vector<Matrix<Scalar>> numerator, Polynomial<Scalar> denominator) {
    return MatrixFractionFilter(std::move(numerator), std::move(denominator), false);
  }


  /// Q(z) = I, the default choice.
  static MatrixFractionFilter identity(Index dim, Polynomial<Scalar> p) {
    return MatrixFractionFilter({Matrix<Scalar>::Identity(dim, dim)}, std::move(p));
  }

  /// Q(z) = q(z) I for a scalar polynomial q.
  static MatrixFractionFilter scalar(Index dim, const Polynomial<Scalar>& q, Polynomial<Scalar> p) {
    std::vector<Matrix<Scalar>> Q;
    for (Index i = 0; i <= q.degree(); ++i) Q.push_back(q[i] * Matrix<Scalar>::Identity(dim, dim));
    return MatrixFractionFilter(std::move(Q), std::move(p));
  }

  Index dimension() const { return Q_.empty() ? 0 : Q_[0].rows(); }
  Index numerator_degree() const { return static_cast<Index>(Q_.size()) - 1; }
  Index denominator_degree() const { return p_.degree(); }
  const std::vector<Matrix<Scalar>>& numerator() const { return Q_; }
  const Matrix<Scalar>& Q(Index i) const { return Q_[i]; }
  const Matrix<Scalar>& Q0_inverse() const { return Q0_inv_; }
  const Polynomial<Scalar>& denominator() const { return p_; }

  /// Zeros of det(sum_i Q_i z^{-i}).
  ComplexVector<Scalar> numerator_roots() const {
    const Matrix<Scalar> Ae = companion_realization(Q_);
    if (Ae.size() == 0) return ComplexVector<Scalar>(0);
    Eigen::EigenSolver<Matrix<Scalar>> es(Ae, false);
    return es.eigenvalues();
  }

 private:
  MatrixFractionFilter(std::vector<Matrix<Scalar>> numerator, Polynomial<Scalar> denominator, bool checked)
      : Q_(std::move(numerator)), p_(std::move(denominator)) {
    if (Q_.empty()) throw std::invalid_argument("MatrixFractionFilter: empty numerator");
    const Index d = Q_[0].rows();
    for (const auto& Qi : Q_)
      if (Qi.rows() != d || Qi.cols() != d)
        throw std::invalid_argument("MatrixFractionFilter: numerator matrices must be square and equal-sized");
    Eigen::FullPivLU<Matrix<Scalar>> lu(Q_[0]);
    if (!lu.isInvertible()) throw std::invalid_argument("MatrixFractionFilter: Q0 is singular");
    Q0_inv_ = lu.inverse();
    if (checked) check_no_cancellation();
  }

  void check_no_cancellation() const {
    using Complex = std::complex<Scalar>;
    const auto roots = p_.roots();
    for (Index r = 0; r < roots.size(); ++r) {
      const Complex zinv = Scalar(1) / roots(r);
      Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic> Qz =
          Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic>::Zero(dimension(), dimension());
      Complex zp = 1;
      for (const auto& Qi : Q_) {
        Qz += zp * Qi.template cast<Complex>();
        zp *= zinv;
      }
      Eigen::JacobiSVD<decltype(Qz)> svd(Qz);
      const auto& s = svd.singularValues();
      if (s(s.size() - 1) <= Scalar(1e-8) * std::max(Scalar(1), s(0)))
        throw std::invalid_argument("MatrixFractionFilter: numerator cancels a zero of p(z)");
    }
  }

  std::vector<Matrix<Scalar>> Q_;
  Polynomial<Scalar> p_;
  Matrix<Scalar> Q0_inv_;
};

/// Fixed-capacity history, index 0 is the most recent entry.
template <typename Scalar = double>
class History {
 public:
  History() = default;
  History(Index capacity, Index dim) : buf_(static_cast<std::size_t>(capacity), Vector<Scalar>::Zero(dim)) {}

  void push(const Vector<Scalar>& v) {
    if (buf_.empty()) return;
    head_ = (head_ + buf_.size() - 1) % buf_.size();
    buf_[head_] = v;
  }
  void fill(const Vector<Scalar>& v) { std::fill(buf_.begin(), buf_.end(), v); }
  const Vector<Scalar>& operator[](Index i) const { return buf_[(head_ + static_cast<std::size_t>(i)) % buf_.size()]; }
  Index size() const { return static_cast<Index>(buf_.size()); }

 private:
  std::vector<Vector<Scalar>> buf_;
  std::size_t head_ = 0;
};

/// Runtime state of one filter direction: last n_n raw samples and last n_d filtered samples.
template <typename Scalar = double>
struct FilterState {
  History<Scalar> raw;
  History<Scalar> filtered;
  Index startup = 0;
  Index startup_limit = 0;

  FilterState() = default;
  explicit FilterState(const MatrixFractionFilter<Scalar>& f)
      : raw(f.denominator_degree(), f.dimension()),
        filtered(f.numerator_degree(), f.dimension()),
        startup_limit(f.denominator_degree()) {}

  /// Fewer than n_n samples have passed through; output not yet meaningful.
  bool trusted() const { return startup >= startup_limit; }

  void advance(const Vector<Scalar>& sample, const Vector<Scalar>& e) {
    raw.push(sample);
    filtered.push(e);
    if (startup < startup_limit) ++startup;
  }
};

/// e~(t) = Q0^{-1} [sum_{i=0}^{nn} p_i s(t-i) - sum_{i=1}^{nd} Q_i e~(t-i)].
template <typename Scalar>
Vector<Scalar> inverse_filter_step(const MatrixFractionFilter<Scalar>& f, FilterState<Scalar>& state,
                                   const std::type_identity_t<Vector<Scalar>>& sample) {
  const auto& p = f.denominator();
  Vector<Scalar> acc = p[0] * sample;
  for (Index i = 1; i <= p.degree(); ++i) acc += p[i] * state.raw[i - 1];
  for (Index i = 1; i <= f.numerator_degree(); ++i) acc -= f.Q(i) * state.filtered[i - 1];
  Vector<Scalar> e = f.Q0_inverse() * acc;
  state.advance(sample, e);
  return e;
}

/// s(t) = (1/p0) [sum_{i=0}^{nd} Q_i e~(t-i) - sum_{i=1}^{nn} p_i s(t-i)].
template <typename Scalar>
Vector<Scalar> forward_filter_step(const MatrixFractionFilter<Scalar>& f, FilterState<Scalar>& state,
                                   const std::type_identity_t<Vector<Scalar>>& e) {
  const auto& p = f.denominator();
  Vector<Scalar> acc = f.Q(0) * e;
  for (Index i = 1; i <= f.numerator_degree(); ++i) acc += f.Q(i) * state.filtered[i - 1];
  for (Index i = 1; i <= p.degree(); ++i) acc -= p[i] * state.raw[i - 1];
  Vector<Scalar> s = acc / p[0];
  state.advance(s, e);
  return s;
}

template <typename Scalar = double>
struct CancellationReport {
  bool ok = true;
  std::vector<std::string> issues;
  std::vector<std::complex<Scalar>> offending;
};

/**
 * Verifies that no zero of p(z) is a plant pole and that no zero of either
 * numerator determinant coincides with a zero of p(z).
 */
template <typename Scalar>
CancellationReport<Scalar> cancellation_check(const DiscreteLTI<Scalar>& plant,
                                              const MatrixFractionFilter<Scalar>& Gx,
                                              const MatrixFractionFilter<Scalar>& Gu, Scalar tol = Scalar(1e-7)) {
  CancellationReport<Scalar> report;
  if (Gx.dimension() != plant.n() || Gu.dimension() != plant.m()) {
    report.ok = false;
    report.issues.push_back("filter dimensions do not match the plant");
    return report;
  }
  const auto p_roots = Gx.denominator().roots();
  Eigen::EigenSolver<Matrix<Scalar>> es(plant.A, false);
  const ComplexVector<Scalar> poles = es.eigenvalues();

  auto coincide = [&](const ComplexVector<Scalar>& a, const std::string& what) {
    for (Index i = 0; i < a.size(); ++i)
      for (Index r = 0; r < p_roots.size(); ++r)
        if (std::abs(a(i) - p_roots(r)) < tol) {
          report.ok = false;
          report.offending.push_back(p_roots(r));
          report.issues.push_back(what + " coincides with a zero of p(z) at (" +
                                  std::to_string(double(p_roots(r).real())) + ", " +
                                  std::to_string(double(p_roots(r).imag())) + ")");
        }
  };
  coincide(poles, "plant eigenvalue");
  coincide(Gx.numerator_roots(), "zero of det Q_x(z)");
  coincide(Gu.numerator_roots(), "zero of det Q_u(z)");
  return report;
}

}  // namespace immpc
