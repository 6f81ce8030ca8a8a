#include "qte/inference.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "qte/detail/parallel.hpp"
#include "qte/detail/rng.hpp"

namespace qte::inference {

namespace {

std::size_t tau_index(const std::vector<double>& grid, double tau) {
  for (std::size_t k = 0; k < grid.size(); ++k)
    if (std::fabs(grid[k] - tau) <= 1e-9) return k;
  throw ValidationError("tau not on the estimated grid");
}

}  // namespace

double quantile_type1(std::vector<double> values, double p) {
  if (values.empty()) throw ValidationError("quantile of empty sample");
  std::sort(values.begin(), values.end());
  const auto m = static_cast<double>(values.size());
  auto idx = static_cast<long>(std::ceil(p * m));
  idx = std::max<long>(1, std::min<long>(idx, static_cast<long>(values.size())));
  return values[static_cast<size_t>(idx - 1)];
}

BootstrapDraws bootstrap(const core::PanelDataset& data,
                         const core::EstimationConfig& config, int B,
                         int threads, const estimator::QtePath* base,
                         const ProgressFn& progress) {
  if (B < 2) throw ValidationError("bootstrap needs B >= 2");
  core::check_config(config, data.dx());

  BootstrapDraws draws;
  draws.B = B;
  draws.n_units = data.n();

  // The base layout and rule are shared by every replicate, so bootstrap
  // variation comes from data resampling only.
  const core::StackedRegressors layout = core::standardize(data);
  const moments::QuadratureRule rule = moments::make_rule(
      layout.dim(), config.quad_nodes, config.quad_scheme, config.seed);

  draws.base = base ? *base
                    : estimator::estimate_with_rule(data, config, rule,
                                                    &layout, threads);

  draws.replicate_seeds.resize(static_cast<size_t>(B));
  for (int b = 0; b < B; ++b)
    draws.replicate_seeds[static_cast<size_t>(b)] =
        qte::detail::splitmix_at(config.seed, static_cast<std::uint64_t>(b));

  std::vector<std::optional<estimator::QtePath>> slots(
      static_cast<size_t>(B));
  std::mutex progress_mutex;
  int done = 0;

  qte::detail::parallel_for(B, threads, [&](int b) {
    qte::detail::Xoshiro256pp rng(draws.replicate_seeds[static_cast<size_t>(b)]);
    std::vector<int> rows(static_cast<size_t>(data.n()));
    for (auto& r : rows)
      r = static_cast<int>(rng.uniform_below(
          static_cast<std::uint64_t>(data.n())));
    const core::PanelDataset resampled = data.take_rows(rows);
    try {
      slots[static_cast<size_t>(b)] = estimator::estimate_with_rule(
          resampled, config, rule, &layout, /*threads=*/1);
    } catch (const NumericalError&) {
      // recorded below as a failed replicate
    }
    if (progress) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      progress(++done, B);
    }
  });

  for (int b = 0; b < B; ++b) {
    if (slots[static_cast<size_t>(b)].has_value()) {
      draws.paths.push_back(std::move(*slots[static_cast<size_t>(b)]));
      draws.replicate_index.push_back(b);
    } else {
      ++draws.failures;
    }
  }
  if (draws.failures * 10 > B)
    throw TooManyFailuresError(std::to_string(draws.failures) + " of " +
                               std::to_string(B) +
                               " bootstrap replicates failed");
  return draws;
}

Interval pointwise_ci(const BootstrapDraws& draws, double tau, double level,
                      int coord) {
  if (draws.paths.empty()) throw ValidationError("no bootstrap replicates");
  if (!(level > 0.0 && level < 1.0))
    throw ValidationError("confidence level must lie in (0,1)");
  const std::size_t k = tau_index(draws.base.tau_grid, tau);
  std::vector<double> values;
  values.reserve(draws.paths.size());
  for (const auto& path : draws.paths)
    values.push_back(path.alpha[k](coord));
  const double lo_p = 0.5 * (1.0 - level);
  const double hi_p = 0.5 * (1.0 + level);
  return Interval{quantile_type1(values, lo_p), quantile_type1(values, hi_p)};
}

TestResult make_test_result(double statistic, double critical_value,
                            double level, NullKind kind) {
  TestResult out;
  out.statistic = statistic;
  out.critical_value = critical_value;
  out.level = level;
  out.null_kind = kind;
  out.reject = statistic > critical_value;
  return out;
}

TestResult uniform_test(
    const BootstrapDraws& draws, NullKind null_kind, double level,
    const std::optional<std::vector<Eigen::VectorXd>>& r_known) {
  const auto& grid = draws.base.tau_grid;
  if (grid.size() < 2)
    throw ValidationError("uniform test needs at least 2 tau points");
  if (!(level > 0.0 && level < 1.0))
    throw ValidationError("test level must lie in (0,1)");
  if (draws.paths.empty()) throw ValidationError("no bootstrap replicates");

  const auto g = grid.size();
  const double n = static_cast<double>(draws.n_units);
  const int dx = static_cast<int>(draws.base.alpha.front().size());

  std::vector<Eigen::VectorXd> r(g, Eigen::VectorXd::Zero(dx));
  std::size_t median_idx = 0;
  switch (null_kind) {
    case NullKind::KnownR:
      if (!r_known.has_value() || r_known->size() != g)
        throw ValidationError("known-r null needs r values on the tau grid");
      r = *r_known;
      break;
    case NullKind::ZeroQte:
      break;  // r stays 0
    case NullKind::ConstantQte: {
      bool found = false;
      for (std::size_t k = 0; k < g; ++k) {
        if (std::fabs(grid[k] - 0.5) <= 1e-9) {
          median_idx = k;
          found = true;
          break;
        }
      }
      if (!found)
        throw MissingMedianError(
            "constant null needs 0.5 on the tau grid");
      for (std::size_t k = 0; k < g; ++k) r[k] = draws.base.alpha[median_idx];
      break;
    }
  }

  double stat = 0.0;
  for (std::size_t k = 0; k < g; ++k)
    stat += (draws.base.alpha[k] - r[k]).squaredNorm();
  stat *= n / static_cast<double>(g);

  std::vector<double> boot_stats;
  boot_stats.reserve(draws.paths.size());
  for (const auto& path : draws.paths) {
    double s = 0.0;
    if (null_kind == NullKind::ConstantQte) {
      const Eigen::VectorXd center =
          path.alpha[median_idx] - draws.base.alpha[median_idx];
      for (std::size_t k = 0; k < g; ++k)
        s += (path.alpha[k] - draws.base.alpha[k] - center).squaredNorm();
    } else {
      for (std::size_t k = 0; k < g; ++k)
        s += (path.alpha[k] - draws.base.alpha[k]).squaredNorm();
    }
    boot_stats.push_back(s * n / static_cast<double>(g));
  }
  const double critical = quantile_type1(boot_stats, 1.0 - level);
  return make_test_result(stat, critical, level, null_kind);
}

}  // namespace qte::inference
