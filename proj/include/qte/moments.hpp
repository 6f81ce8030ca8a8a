#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "qte/core.hpp"

namespace qte::moments {

struct BudgetExceededError : ValidationError {
  using ValidationError::ValidationError;
};

// Integration rule over the box V = [-0.5, 0.5]^dim. Tensor Gauss-Legendre
// weights are positive and sum to vol(V) = 1; Halton nodes carry equal
// weight 1/J. Node sets are deterministic given (scheme, J, dim, seed).
struct QuadratureRule {
  Eigen::MatrixXd nodes;    // J_total x dim
  Eigen::VectorXd weights;  // J_total
  core::QuadScheme scheme = core::QuadScheme::TensorGauss;
  std::uint64_t seed = 0;
  int count() const { return static_cast<int>(nodes.rows()); }
  int dim() const { return static_cast<int>(nodes.cols()); }
};

// Builds the rule. Auto resolves to tensor Gauss when dim <= 4 and
// j^dim <= 1e5 and to Halton with j total points otherwise; requesting a
// tensor grid beyond that cap throws BudgetExceededError. The Halton
// sequence starts at index 1 and is shift-scrambled from the seed.
QuadratureRule make_rule(int dim, int j, core::QuadScheme scheme,
                         std::uint64_t seed);

// omega(x~, z~, v) = exp(v_x' x~ + v_z' z~); strictly positive.
double weight_omega(const Eigen::VectorXd& x_std, const Eigen::VectorXd& z_std,
                    const Eigen::VectorXd& v);

// n x J matrix of unit weights omega_i(v_j); rows follow regressor rows.
Eigen::MatrixXd weight_matrix(const core::StackedRegressors& stacked,
                              const QuadratureRule& rule);

// ind(i,t) = 1{Y_it <= X_it'a + Z_it'b_t}; ties (equality) count as 1.
struct IndicatorMatrix {
  Eigen::MatrixXi ind;        // n x T in {0,1}
  Eigen::VectorXd row_means;  // (1/T) sum_s ind(i,s)
};

IndicatorMatrix indicators(const core::PanelDataset& data,
                           const Eigen::VectorXd& a, const Eigen::MatrixXd& b);

// Empirical moment process for period t (0-based): the j-th entry is
// (1/n) sum_i (ind(i,t) - row_mean(i)) * omega_i(v_j). The reduction over
// units runs in canonical order, so the result is invariant to unit
// reordering.
Eigen::VectorXd dhat(const core::PanelDataset& data,
                     const core::StackedRegressors& stacked,
                     const QuadratureRule& rule, const Eigen::VectorXd& a,
                     const Eigen::MatrixXd& b, int t);

// Per-unit contributions g_t(W_i; a, b, v_j) as an n x J matrix (rows follow
// the dataset order). dhat equals the column means of this matrix.
Eigen::MatrixXd g_matrix(const core::PanelDataset& data,
                         const core::StackedRegressors& stacked,
                         const QuadratureRule& rule, const Eigen::VectorXd& a,
                         const Eigen::MatrixXd& b, int t);

namespace detail_impl {

// Integer numerators m(i,t) = T*ind(i,t) - sum_s ind(i,s), so that
// g_t = m(i,t) * (omega_i / T) and sum_t m(i,t) = 0 exactly.
Eigen::MatrixXi moment_numerators(const core::PanelDataset& data,
                                  const Eigen::VectorXd& a,
                                  const Eigen::MatrixXd& b);

// Shared reduction used by dhat and the estimator: sums m(order[i], t) *
// weights.row(order[i]) pairwise over the nonzero entries, scaled by 1/(nT).
Eigen::VectorXd dhat_from_numerators(const Eigen::MatrixXi& m,
                                     const Eigen::MatrixXd& weights,
                                     const std::vector<int>& order, int t,
                                     int periods);

}  // namespace detail_impl

}  // namespace qte::moments
