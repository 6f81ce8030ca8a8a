#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "qte/core.hpp"
#include "qte/estimator.hpp"

namespace qte::inference {

struct TooManyFailuresError : NumericalError {
  using NumericalError::NumericalError;
};

struct MissingMedianError : ValidationError {
  using ValidationError::ValidationError;
};

// Nonparametric unit-level bootstrap: each replicate resamples n unit rows
// with replacement (all T periods kept together), re-standardizes, and
// re-estimates with the base tau grid, bounds and quadrature rule.
struct BootstrapDraws {
  int B = 0;
  int n_units = 0;
  estimator::QtePath base;
  std::vector<estimator::QtePath> paths;       // successful replicates
  std::vector<int> replicate_index;            // indices of `paths` in 0..B-1
  std::vector<std::uint64_t> replicate_seeds;  // all B seeds
  int failures = 0;
};

using ProgressFn = std::function<void(int done, int total)>;

// Throws TooManyFailuresError when more than 10% of replicates fail. A
// precomputed base path may be passed to skip re-estimating it.
BootstrapDraws bootstrap(const core::PanelDataset& data,
                         const core::EstimationConfig& config, int B,
                         int threads = 1,
                         const estimator::QtePath* base = nullptr,
                         const ProgressFn& progress = {});

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

// Percentile interval [q_{(1-level)/2}, q_{(1+level)/2}] of the replicate
// alpha coordinates at tau, using the left-continuous (type-1) empirical
// quantile.
Interval pointwise_ci(const BootstrapDraws& draws, double tau, double level,
                      int coord = 0);

enum class NullKind { KnownR, ConstantQte, ZeroQte };

struct TestResult {
  double statistic = 0.0;
  double critical_value = 0.0;
  double level = 0.05;
  bool reject = false;
  NullKind null_kind = NullKind::ConstantQte;
};

// Builds a result with the reject flag derived from statistic > critical.
TestResult make_test_result(double statistic, double critical_value,
                            double level, NullKind kind);

// Uniform test of H0: alpha(tau) = r(tau) on the tau grid (Riemann
// approximation n * mean_tau ||alpha_hat - r_hat||^2). For the constant null
// r_hat = alpha_hat(0.5) and the bootstrap statistic centers at
// alpha*(0.5) - alpha_hat(0.5); for known r and the zero null the bootstrap
// statistic is the uncentered n * mean_tau ||alpha* - alpha_hat||^2.
TestResult uniform_test(
    const BootstrapDraws& draws, NullKind null_kind, double level,
    const std::optional<std::vector<Eigen::VectorXd>>& r_known = std::nullopt);

// Type-1 (left-continuous inverse) empirical quantile of a sample.
double quantile_type1(std::vector<double> values, double p);

}  // namespace qte::inference
