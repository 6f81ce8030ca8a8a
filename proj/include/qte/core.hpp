#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qte/errors.hpp"

namespace qte::core {

// Balanced panel of n units observed in every period t = 0..T-1.
// y(i,t) is the outcome, x(t) the n x d_X treatment block for period t and
// z(t) the n x d_Z covariate block whose first column is the intercept.
// Immutable after construction; safe to share across threads.
class PanelDataset {
 public:
  PanelDataset(Eigen::MatrixXd y, std::vector<Eigen::MatrixXd> x,
               std::vector<Eigen::MatrixXd> z,
               std::vector<std::string> unit_ids = {});

  int n() const { return static_cast<int>(y_.rows()); }
  int periods() const { return static_cast<int>(y_.cols()); }
  int dx() const { return static_cast<int>(x_.front().cols()); }
  int dz() const { return static_cast<int>(z_.front().cols()); }

  const Eigen::MatrixXd& y() const { return y_; }
  const Eigen::MatrixXd& x(int t) const { return x_[static_cast<size_t>(t)]; }
  const Eigen::MatrixXd& z(int t) const { return z_[static_cast<size_t>(t)]; }
  const std::vector<std::string>& unit_ids() const { return unit_ids_; }

  // New dataset holding rows[k] of this one at position k. Used both for
  // canonical reordering and bootstrap resampling (indices may repeat).
  PanelDataset take_rows(const std::vector<int>& rows) const;

 private:
  Eigen::MatrixXd y_;
  std::vector<Eigen::MatrixXd> x_;
  std::vector<Eigen::MatrixXd> z_;
  std::vector<std::string> unit_ids_;
};

// Report-only diagnostics; callers decide whether to abort.
struct ValidationReport {
  bool balanced = true;  // dense storage is balanced by construction
  bool all_finite = true;
  bool intercept_ok = true;
  std::vector<int> z_rank;          // per-period rank of the Z design
  bool z_full_rank_all = true;      // rank == d_Z in every period
  std::vector<bool> x_has_variance; // per-period: some X column varies
  bool x_full_rank_some_period = true;
  std::vector<std::string> messages;

  bool ok() const {
    return balanced && all_finite && intercept_ok && z_full_rank_all &&
           x_full_rank_some_period;
  }
};

ValidationReport validate(const PanelDataset& data);

// Stacked, standardized regressors feeding the exponential weight function.
// x_std: n x (d_X*T), unit i's treatment history flattened time-major.
// z_std: n x d_Z*, distinct covariate columns across periods (duplicated
// time-invariant columns collapsed; duplicate detection is exact bitwise).
// Columns have mean 0 and population standard deviation 1 (denominator n);
// zero-variance columns (the intercept in particular) map to all zeros and
// are flagged, so they contribute nothing to the weight exponent.
struct StackedRegressors {
  Eigen::MatrixXd x_std;
  Eigen::MatrixXd z_std;
  Eigen::VectorXd col_means;  // x columns first, then kept z columns
  Eigen::VectorXd col_sds;
  std::vector<bool> degenerate;
  std::vector<std::pair<int, int>> z_sources;  // (period, column) per kept col

  int dim() const { return static_cast<int>(x_std.cols() + z_std.cols()); }
};

StackedRegressors standardize(const PanelDataset& data);

// Re-standardize `data` while keeping the column layout (z deduplication)
// frozen from `layout`. Bootstrap replicates use this so every replicate
// matches the dimension of the base quadrature rule.
StackedRegressors restandardize_like(const PanelDataset& data,
                                     const StackedRegressors& layout);

// Lexicographic order of units by their (y, x, z) rows. Estimation routines
// reduce over units in this order, which makes their outputs invariant to
// unit reordering down to the last bit.
std::vector<int> canonical_order(const PanelDataset& data);

enum class QuadScheme { Auto, TensorGauss, Halton };

struct EstimationConfig {
  std::vector<double> tau_grid{0.25, 0.5, 0.75};
  // Closed interval per coordinate of a; a single entry broadcasts to d_X.
  std::vector<std::array<double, 2>> a_bounds{{-2.0, 4.0}};
  int grid_points = 201;
  double refine_tol = 1e-4;  // <= 0 disables refinement (lattice argmin)
  QuadScheme quad_scheme = QuadScheme::Auto;
  int quad_nodes = 4;  // per dimension (tensor-Gauss) or total (Halton)
  std::uint64_t seed = 1;
  // Optional box safeguard for the first-step coefficients; unset leaves the
  // quantile regression unconstrained.
  std::optional<std::vector<std::array<double, 2>>> b_bounds;
  double qr_tol = 1e-8;
  int qr_max_iter = 200;
};

// Throws ValidationError when the config violates its invariants for a
// dataset with d_X treatment coordinates.
void check_config(const EstimationConfig& config, int dx);

// Expands a_bounds to exactly d_X entries (broadcasting a single entry).
std::vector<std::array<double, 2>> resolved_a_bounds(
    const EstimationConfig& config, int dx);

}  // namespace qte::core
