#pragma once

#include <Eigen/Dense>
#include <array>
#include <optional>
#include <vector>

#include "qte/errors.hpp"

namespace qte::quantreg {

struct QrFit {
  Eigen::VectorXd coefficients;
  double tau = 0.5;
  double objective = 0.0;  // attained mean check loss, recomputed from b
  int n_neg = 0;           // residuals strictly below zero
  int n_zero = 0;          // residuals within the interpolation tolerance
  bool converged = false;
  int iterations = 0;
};

struct RankDeficientError : NumericalError {
  using NumericalError::NumericalError;
};

struct NonConvergenceError : NumericalError {
  NonConvergenceError(std::string msg, QrFit best_iterate)
      : NumericalError(std::move(msg)), best(std::move(best_iterate)) {}
  QrFit best;
};

// rho_tau(u) = (tau - 1{u < 0}) u; nonnegative and piecewise linear.
inline double check_loss(double u, double tau) {
  return (tau - (u < 0.0 ? 1.0 : 0.0)) * u + 0.0;
}

// Mean check loss of `b` on (responses, design).
double mean_check_loss(const Eigen::VectorXd& responses,
                       const Eigen::MatrixXd& design,
                       const Eigen::VectorXd& b, double tau);

// Quantile regression of responses on design at level tau, solved by a
// primal-dual interior point method on the LP dual (Frisch-Newton with
// Mehrotra predictor-corrector). Stops once the certified duality gap on the
// mean objective is below tol; throws NonConvergenceError (best iterate
// attached) when max_iter is exhausted first.
//
// If `box` is set, coefficients escaping the box are clamped to it and the
// fit is marked non-converged; by default the solver is unconstrained.
QrFit fit(const Eigen::VectorXd& responses, const Eigen::MatrixXd& design,
          double tau, double tol = 1e-8, int max_iter = 200,
          const std::optional<std::vector<std::array<double, 2>>>& box =
              std::nullopt,
          bool check_rank = true);

// Optimality certificate: max-norm of the mean subgradient, minimized over
// the admissible subgradient selection at zero residuals (the selection is
// chosen by Euclidean-norm minimization over the box [tau-1, tau]).
double first_order_gap(const QrFit& fit, const Eigen::VectorXd& responses,
                       const Eigen::MatrixXd& design, double tau);

}  // namespace qte::quantreg
