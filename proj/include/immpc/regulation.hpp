#pragma once

#include "immpc/internal_model.hpp"
#include "immpc/qp.hpp"

#include <vector>

namespace immpc {

/// Pi1 S = A Pi1 + E + B Pi2,  C Pi1 + F = 0.
struct RegulationSolution {
  MatrixXd Pi1;
  MatrixXd Pi2;
  double residual_dynamics = 0;
  double residual_output = 0;
};

/// Throws std::runtime_error("regulation problem not well-defined") unless the solution is unique and well conditioned.
RegulationSolution solve_regulation(const DiscreteLTI<double>& plant, const MatrixXd& E, const MatrixXd& F,
                                    const MatrixXd& S);

/**
 * Constant/sinusoidal reference trajectories
 *
 *   x_a(k) = blkdiag_n(C_S S^k) theta_x,  u_a(k) = blkdiag_m(C_S S^k) theta_u,
 *   y_a(k) = blkdiag_p(C_Sa S_a^k) theta_y.
 *
 * Every signal owns one contiguous block of dim(S) (or dim(S_a)) entries:
 * the constant coefficient first, then the two coefficients of each frequency.
 */
struct ArtificialReferenceParam {
  VectorXd theta_x;
  VectorXd theta_u;
  VectorXd theta_y;
};

VectorXd reference_at(const SignalGenerator<double>& gen, const VectorXd& theta, Index k);

/**
 * Rows of Z_{F,sigma} as sum-of-norms groups over a decision vector of width
 * `width`, where theta_x starts at `x_offset` and theta_u at `u_offset`.
 * Pairs whose coefficients vanish are omitted.
 */
std::vector<SocRowGroup> reference_row_groups(const SignalGenerator<double>& gen, const ConstraintPolytope<double>& poly,
                                              Index width, Index x_offset, Index u_offset);

struct AdmissibleResult {
  bool admissible = true;
  /// c_i - sigma_i - (z0_i + sum_j ||z_j,i||) per constraint row.
  VectorXd margin;
};

AdmissibleResult admissible_check(const ArtificialReferenceParam& ref, const SignalGenerator<double>& gen,
                                  const ConstraintPolytope<double>& poly, const VectorXd& sigma);

/// True disturbance seen by the reference oracle: E w(t+k), F w(t+k) with w(t+k) = S^k w.
struct DisturbanceSnapshot {
  MatrixXd E;
  MatrixXd F;
  MatrixXd S;
  VectorXd w;
};

struct OptimalReference {
  ArtificialReferenceParam theta;
  double objective = 0;  // ||theta_y||^2_Pa
  SignalGenerator<double> gen_a;

  /// y*(t + k)
  VectorXd y_star(Index k) const { return reference_at(gen_a, theta.theta_y, k); }
};

/**
 * Smallest ||theta_y||_Pa over references that the true plant can follow
 * inside Z_{F,sigma}. The disturbance is projected onto the generator basis
 * (it must lie in its span); the trajectory constraints then become the
 * per-frequency linear equations
 *
 *   Theta_x S' = A Theta_x + Gamma_E + B Theta_u,   C Theta_x + Gamma_F = [Theta_y 0].
 *
 * Among references attaining the optimum the minimum-norm (theta_x, theta_u)
 * is returned. Throws std::runtime_error when Z_{F,sigma} admits no reference.
 */
OptimalReference optimal_reference(const DiscreteLTI<double>& plant, const DisturbanceSnapshot& dist,
                                   const SignalGenerator<double>& gen, const SignalGenerator<double>& gen_a,
                                   const MatrixXd& Pa, const ConstraintPolytope<double>& poly, const VectorXd& sigma,
                                   int facets);

/// Coefficients Gamma (rows x dim(gen)) with M S_w^k w = Gamma c(k) for all k; throws if no such fit exists.
MatrixXd fit_to_generator(const SignalGenerator<double>& gen, const MatrixXd& M, const MatrixXd& S, const VectorXd& w);

struct PolytopeCheck {
  bool nonempty = false;
  bool bounded = false;
  VectorXd lower;  // per variable (x then u)
  VectorXd upper;
};

/// Bounding-box LPs over the polytope in (x, u).
PolytopeCheck check_polytope(const ConstraintPolytope<double>& poly);

}  // namespace immpc
