#include "qte/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "qte/detail/pairwise.hpp"
#include "qte/detail/parallel.hpp"

namespace qte::estimator {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Everything the per-candidate evaluation needs, with units already in
// canonical order so reductions are permutation-invariant bit for bit.
struct Workspace {
  core::PanelDataset data;      // canonically ordered copy
  core::StackedRegressors stacked;
  moments::QuadratureRule rule;
  Eigen::MatrixXd weights;      // n x J
  std::vector<int> identity;    // 0..n-1 (data already sorted)
  std::vector<Eigen::VectorXd> responses_base;  // per period: y_t
  std::vector<bool> x_is_zero;  // period has X identically zero
  core::EstimationConfig config;

  int periods() const { return data.periods(); }
};

Workspace make_workspace(const core::PanelDataset& data,
                         const core::EstimationConfig& config,
                         const moments::QuadratureRule* rule,
                         const core::StackedRegressors* layout) {
  const std::vector<int> order = core::canonical_order(data);
  Workspace ws{data.take_rows(order),
               core::StackedRegressors{},
               moments::QuadratureRule{},
               Eigen::MatrixXd{},
               {},
               {},
               {},
               config};
  ws.stacked = layout ? core::restandardize_like(ws.data, *layout)
                      : core::standardize(ws.data);
  ws.rule = rule ? *rule
                 : moments::make_rule(ws.stacked.dim(), config.quad_nodes,
                                      config.quad_scheme, config.seed);
  ws.weights = moments::weight_matrix(ws.stacked, ws.rule);
  ws.identity.resize(static_cast<size_t>(ws.data.n()));
  std::iota(ws.identity.begin(), ws.identity.end(), 0);
  ws.responses_base.reserve(static_cast<size_t>(ws.data.periods()));
  for (int t = 0; t < ws.data.periods(); ++t) {
    ws.responses_base.emplace_back(ws.data.y().col(t));
    ws.x_is_zero.push_back((ws.data.x(t).array() == 0.0).all());
  }
  // Designs are fixed across candidates; check rank once per period.
  for (int t = 0; t < ws.data.periods(); ++t) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(ws.data.z(t));
    if (qr.rank() < ws.data.dz())
      throw quantreg::RankDeficientError("Z design rank deficient in period " +
                                         std::to_string(t + 1));
  }
  return ws;
}

Eigen::MatrixXd profile_fits(const Workspace& ws, const Eigen::VectorXd& a,
                             double tau,
                             const std::vector<Eigen::VectorXd>* cached_zero_x,
                             std::vector<Eigen::VectorXd>* cache_out) {
  const int T = ws.periods();
  Eigen::MatrixXd beta(T, ws.data.dz());
  for (int t = 0; t < T; ++t) {
    if (ws.x_is_zero[static_cast<size_t>(t)] && cached_zero_x &&
        static_cast<int>(cached_zero_x->size()) == T &&
        (*cached_zero_x)[static_cast<size_t>(t)].size() > 0) {
      beta.row(t) = (*cached_zero_x)[static_cast<size_t>(t)].transpose();
      continue;
    }
    Eigen::VectorXd resp = ws.responses_base[static_cast<size_t>(t)];
    if (!ws.x_is_zero[static_cast<size_t>(t)]) resp -= ws.data.x(t) * a;
    try {
      const quantreg::QrFit fit =
          quantreg::fit(resp, ws.data.z(t), tau, ws.config.qr_tol,
                        ws.config.qr_max_iter, ws.config.b_bounds,
                        /*check_rank=*/false);
      beta.row(t) = fit.coefficients.transpose();
    } catch (const quantreg::NonConvergenceError& e) {
      throw quantreg::NonConvergenceError(
          "period " + std::to_string(t + 1) + ": " + e.what(), e.best);
    }
    if (ws.x_is_zero[static_cast<size_t>(t)] && cache_out) {
      if (static_cast<int>(cache_out->size()) != T)
        cache_out->assign(static_cast<size_t>(T), Eigen::VectorXd());
      (*cache_out)[static_cast<size_t>(t)] = beta.row(t).transpose();
    }
  }
  return beta;
}

double objective_at(const Workspace& ws, const Eigen::VectorXd& a, double tau,
                    const std::vector<Eigen::VectorXd>* cached_zero_x,
                    std::vector<Eigen::VectorXd>* cache_out) {
  const Eigen::MatrixXd beta =
      profile_fits(ws, a, tau, cached_zero_x, cache_out);
  const Eigen::MatrixXi m =
      moments::detail_impl::moment_numerators(ws.data, a, beta);
  const int T = ws.periods();
  double total = 0.0;
  for (int t = 0; t < T; ++t) {
    const Eigen::VectorXd d = moments::detail_impl::dhat_from_numerators(
        m, ws.weights, ws.identity, t, T);
    total += qte::detail::pairwise_sum(
        static_cast<std::size_t>(d.size()),
        [&](std::size_t j) { return ws.rule.weights(static_cast<Eigen::Index>(j)) * d(static_cast<Eigen::Index>(j)) * d(static_cast<Eigen::Index>(j)); });
  }
  return total / static_cast<double>(T);
}

std::vector<Eigen::VectorXd> build_lattice(
    const std::vector<std::array<double, 2>>& bounds, int points_per_axis) {
  const int dx = static_cast<int>(bounds.size());
  double total = 1.0;
  for (int k = 0; k < dx; ++k) total *= static_cast<double>(points_per_axis);
  if (total > 2e6)
    throw ValidationError("a-grid of " + std::to_string(points_per_axis) +
                          "^" + std::to_string(dx) + " points is too large");

  std::vector<std::vector<double>> axes(static_cast<size_t>(dx));
  for (int k = 0; k < dx; ++k) {
    auto& axis = axes[static_cast<size_t>(k)];
    const double lo = bounds[static_cast<size_t>(k)][0];
    const double hi = bounds[static_cast<size_t>(k)][1];
    if (lo == hi) {
      axis.push_back(lo);
      continue;
    }
    axis.resize(static_cast<size_t>(points_per_axis));
    for (int g = 0; g < points_per_axis; ++g)
      axis[static_cast<size_t>(g)] =
          lo + (hi - lo) * static_cast<double>(g) /
                   static_cast<double>(points_per_axis - 1);
    axis.back() = hi;
  }

  std::vector<Eigen::VectorXd> lattice;
  std::vector<std::size_t> idx(static_cast<size_t>(dx), 0);
  for (;;) {
    Eigen::VectorXd a(dx);
    for (int k = 0; k < dx; ++k)
      a(k) = axes[static_cast<size_t>(k)][idx[static_cast<size_t>(k)]];
    lattice.push_back(std::move(a));
    int k = dx - 1;
    for (; k >= 0; --k) {
      if (++idx[static_cast<size_t>(k)] < axes[static_cast<size_t>(k)].size())
        break;
      idx[static_cast<size_t>(k)] = 0;
    }
    if (k < 0) break;
  }
  return lattice;
}

// Golden-section refinement for scalar a on [lo, hi], followed by plateau
// centering: the objective is piecewise constant in a, so after locating the
// minimum we bisect for both edges of the plateau holding the minimal value
// and return its midpoint. `eval` must be safe (returns +inf on failure).
template <class Eval>
std::pair<double, double> refine_scalar(double lo, double hi, double f_lo_hint,
                                        double best_a, double best_f,
                                        double tol, const Eval& eval) {
  (void)f_lo_hint;
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = lo, b = hi;
  double c1 = b - gr * (b - a);
  double c2 = a + gr * (b - a);
  double f1 = eval(c1);
  double f2 = eval(c2);
  auto consider = [&](double cand, double val) {
    if (val < best_f || (val == best_f && cand < best_a)) {
      best_f = val;
      best_a = cand;
    }
  };
  consider(c1, f1);
  consider(c2, f2);
  int guard = 0;
  while (b - a > tol && ++guard < 200) {
    if (f1 <= f2) {
      b = c2;
      c2 = c1;
      f2 = f1;
      c1 = b - gr * (b - a);
      f1 = eval(c1);
      consider(c1, f1);
    } else {
      a = c1;
      c1 = c2;
      f1 = f2;
      c2 = a + gr * (b - a);
      f2 = eval(c2);
      consider(c2, f2);
    }
  }

  // Plateau edges at resolution tol/4, scanning outward from the best point.
  const double step_res = std::max(tol * 0.25, 1e-14);
  auto edge = [&](double inside, double outside) {
    // invariant: eval(inside) == best_f, probe toward `outside`
    double good = inside, bad = outside;
    if (eval(bad) == best_f) return bad;
    while (std::fabs(bad - good) > step_res) {
      const double mid = 0.5 * (good + bad);
      if (eval(mid) == best_f)
        good = mid;
      else
        bad = mid;
    }
    return good;
  };
  const double span = std::max(b - a, tol);
  const double left = edge(best_a, std::max(lo, best_a - span));
  const double right = edge(best_a, std::min(hi, best_a + span));
  const double mid = 0.5 * (left + right);
  const double f_mid = eval(mid);
  if (f_mid <= best_f) {
    best_f = f_mid;
    best_a = mid;
  }
  return {best_a, best_f};
}

template <class Eval>
std::pair<Eigen::VectorXd, double> refine_compass(
    Eigen::VectorXd a0, double f0,
    const std::vector<std::array<double, 2>>& bounds, double h0, double tol,
    const Eval& eval) {
  Eigen::VectorXd best = std::move(a0);
  double best_f = f0;
  double h = h0;
  const int dx = static_cast<int>(best.size());
  int guard = 0;
  while (h >= tol && ++guard < 500) {
    bool improved = false;
    for (int k = 0; k < dx; ++k) {
      for (double sign : {-1.0, 1.0}) {
        Eigen::VectorXd cand = best;
        cand(k) = std::clamp(cand(k) + sign * h,
                             bounds[static_cast<size_t>(k)][0],
                             bounds[static_cast<size_t>(k)][1]);
        const double f = eval(cand);
        if (f < best_f) {
          best_f = f;
          best = cand;
          improved = true;
        }
      }
    }
    if (!improved) h *= 0.5;
  }
  return {best, best_f};
}

QtePath estimate_impl(const core::PanelDataset& data,
                      const core::EstimationConfig& config,
                      const moments::QuadratureRule* rule,
                      const core::StackedRegressors* layout, int threads) {
  core::check_config(config, data.dx());
  const auto bounds = core::resolved_a_bounds(config, data.dx());
  Workspace ws = make_workspace(data, config, rule, layout);

  QtePath path;
  path.tau_grid = config.tau_grid;
  path.alpha.resize(config.tau_grid.size());
  path.beta.resize(config.tau_grid.size());
  path.objective_at_min.resize(config.tau_grid.size());
  path.diagnostics.resize(config.tau_grid.size());

  const std::vector<Eigen::VectorXd> lattice =
      build_lattice(bounds, config.grid_points);

  for (std::size_t ti = 0; ti < config.tau_grid.size(); ++ti) {
    const double tau = config.tau_grid[ti];

    // Periods with X identically zero have a-independent first steps; fit
    // them once per tau.
    std::vector<Eigen::VectorXd> zero_x_cache;
    bool any_zero_x = false;
    for (bool flag : ws.x_is_zero) any_zero_x = any_zero_x || flag;
    if (any_zero_x) {
      try {
        profile_fits(ws, lattice.front(), tau, nullptr, &zero_x_cache);
      } catch (...) {
        zero_x_cache.clear();
      }
    }

    auto safe_eval = [&](const Eigen::VectorXd& a) {
      try {
        return objective_at(ws, a, tau,
                            zero_x_cache.empty() ? nullptr : &zero_x_cache,
                            nullptr);
      } catch (const NumericalError&) {
        return kInf;
      }
    };

    std::vector<GridPoint>& trace = path.diagnostics[ti];
    trace.resize(lattice.size());
    qte::detail::parallel_for(
        static_cast<int>(lattice.size()), threads, [&](int g) {
          const auto& a = lattice[static_cast<size_t>(g)];
          trace[static_cast<size_t>(g)] = GridPoint{a, safe_eval(a)};
        });

    std::size_t best_idx = 0;
    double best_f = kInf;
    for (std::size_t g = 0; g < trace.size(); ++g) {
      if (trace[g].objective < best_f) {  // lattice is in lexicographic
        best_f = trace[g].objective;      // order, first hit = smallest a
        best_idx = g;
      }
    }
    if (!std::isfinite(best_f))
      throw NoFiniteObjectiveError(
          "objective failed at every lattice point for tau = " +
          std::to_string(tau));

    Eigen::VectorXd alpha = trace[best_idx].a;
    double alpha_f = best_f;

    if (config.refine_tol > 0.0) {
      if (data.dx() == 1) {
        const double lo_b = bounds[0][0];
        const double hi_b = bounds[0][1];
        const double spacing =
            (hi_b - lo_b) / static_cast<double>(config.grid_points - 1);
        const double lo = std::max(lo_b, alpha(0) - spacing);
        const double hi = std::min(hi_b, alpha(0) + spacing);
        auto eval1 = [&](double v) {
          Eigen::VectorXd a(1);
          a(0) = v;
          return safe_eval(a);
        };
        const auto [ra, rf] = refine_scalar(lo, hi, best_f, alpha(0), alpha_f,
                                            config.refine_tol, eval1);
        alpha(0) = ra;
        alpha_f = rf;
      } else {
        double spacing = 0.0;
        for (std::size_t k = 0; k < bounds.size(); ++k)
          spacing = std::max(spacing, (bounds[k][1] - bounds[k][0]) /
                                          static_cast<double>(
                                              config.grid_points - 1));
        const auto [ra, rf] = refine_compass(alpha, alpha_f, bounds, spacing,
                                             config.refine_tol, safe_eval);
        alpha = ra;
        alpha_f = rf;
      }
    }

    path.alpha[ti] = alpha;
    path.objective_at_min[ti] = alpha_f;
    path.beta[ti] = profile_fits(ws, alpha, tau,
                                 zero_x_cache.empty() ? nullptr : &zero_x_cache,
                                 nullptr);
  }
  return path;
}

}  // namespace

Eigen::MatrixXd profile_beta(const core::PanelDataset& data,
                             const Eigen::VectorXd& a, double tau,
                             const core::EstimationConfig& config) {
  if (a.size() != data.dx()) throw ValidationError("a dimension mismatch");
  const std::vector<int> order = core::canonical_order(data);
  const core::PanelDataset sorted = data.take_rows(order);
  Eigen::MatrixXd beta(sorted.periods(), sorted.dz());
  for (int t = 0; t < sorted.periods(); ++t) {
    Eigen::VectorXd resp = sorted.y().col(t);
    const bool zero_x = (sorted.x(t).array() == 0.0).all();
    if (!zero_x) resp -= sorted.x(t) * a;
    try {
      const quantreg::QrFit fit =
          quantreg::fit(resp, sorted.z(t), tau, config.qr_tol,
                        config.qr_max_iter, config.b_bounds);
      beta.row(t) = fit.coefficients.transpose();
    } catch (const quantreg::NonConvergenceError& e) {
      throw quantreg::NonConvergenceError(
          "period " + std::to_string(t + 1) + ": " + e.what(), e.best);
    } catch (const quantreg::RankDeficientError& e) {
      throw quantreg::RankDeficientError("period " + std::to_string(t + 1) +
                                         ": " + e.what());
    }
  }
  return beta;
}

double objective(const core::PanelDataset& data,
                 const core::StackedRegressors& stacked,
                 const moments::QuadratureRule& rule, const Eigen::VectorXd& a,
                 double tau, const core::EstimationConfig& config) {
  if (rule.dim() != stacked.dim())
    throw ValidationError("rule dimension does not match stacked regressors");
  Workspace ws = make_workspace(data, config, &rule, &stacked);
  return objective_at(ws, a, tau, nullptr, nullptr);
}

QtePath estimate(const core::PanelDataset& data,
                 const core::EstimationConfig& config, int threads) {
  return estimate_impl(data, config, nullptr, nullptr, threads);
}

QtePath estimate_with_rule(const core::PanelDataset& data,
                           const core::EstimationConfig& config,
                           const moments::QuadratureRule& rule,
                           const core::StackedRegressors* layout,
                           int threads) {
  return estimate_impl(data, config, &rule, layout, threads);
}

}  // namespace qte::estimator
