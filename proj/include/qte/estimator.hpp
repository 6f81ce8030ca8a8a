#pragma once

#include <Eigen/Dense>
#include <vector>

#include "qte/core.hpp"
#include "qte/moments.hpp"
#include "qte/quantreg.hpp"

namespace qte::estimator {

struct NoFiniteObjectiveError : NumericalError {
  using NumericalError::NumericalError;
};

struct GridPoint {
  Eigen::VectorXd a;
  double objective;  // +inf marks a failed evaluation
};

// Estimated coefficient path over the tau grid. beta[k] row t holds the
// period-t first-step fit at alpha[k]; re-running profile_beta at alpha[k]
// reproduces it exactly.
struct QtePath {
  std::vector<double> tau_grid;
  std::vector<Eigen::VectorXd> alpha;
  std::vector<Eigen::MatrixXd> beta;   // T x d_Z each
  std::vector<double> objective_at_min;
  std::vector<std::vector<GridPoint>> diagnostics;  // lattice trace per tau
};

// First step: per-period quantile regression of Y_it - X_it'a on Z_it.
// Row t of the result is the period-t coefficient vector. Solver errors are
// rethrown tagged with the period index.
Eigen::MatrixXd profile_beta(const core::PanelDataset& data,
                             const Eigen::VectorXd& a, double tau,
                             const core::EstimationConfig& config = {});

// Second-step objective (1/T) sum_t sum_j w_j D_t(v_j; a, beta~(a,tau))^2.
double objective(const core::PanelDataset& data,
                 const core::StackedRegressors& stacked,
                 const moments::QuadratureRule& rule, const Eigen::VectorXd& a,
                 double tau, const core::EstimationConfig& config = {});

// Full two-step estimator: lattice scan over the a box followed by
// derivative-free refinement (golden section with plateau centering for
// d_X = 1, compass search otherwise; refine_tol <= 0 keeps the lattice
// argmin). Lattice ties break toward the smallest a.
QtePath estimate(const core::PanelDataset& data,
                 const core::EstimationConfig& config, int threads = 1);

// Variant used by the bootstrap: reuses an externally built rule and a
// frozen stacked-regressor layout so replicates share the base quadrature.
QtePath estimate_with_rule(const core::PanelDataset& data,
                           const core::EstimationConfig& config,
                           const moments::QuadratureRule& rule,
                           const core::StackedRegressors* layout, int threads);

}  // namespace qte::estimator
