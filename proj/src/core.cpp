#include "qte/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "qte/detail/pairwise.hpp"

namespace qte::core {

namespace {

std::string shape_msg(const char* what, long a, long b) {
  return std::string(what) + " (" + std::to_string(a) + " vs " +
         std::to_string(b) + ")";
}

}  // namespace

PanelDataset::PanelDataset(Eigen::MatrixXd y, std::vector<Eigen::MatrixXd> x,
                           std::vector<Eigen::MatrixXd> z,
                           std::vector<std::string> unit_ids)
    : y_(std::move(y)), x_(std::move(x)), z_(std::move(z)),
      unit_ids_(std::move(unit_ids)) {
  const long n = y_.rows();
  const long T = y_.cols();
  if (n < 2) throw ValidationError("panel needs at least 2 units");
  if (T < 2) throw ValidationError("panel needs at least 2 periods");
  if (static_cast<long>(x_.size()) != T)
    throw ValidationError(shape_msg("x blocks vs periods", x_.size(), T));
  if (static_cast<long>(z_.size()) != T)
    throw ValidationError(shape_msg("z blocks vs periods", z_.size(), T));
  const long dx = x_.front().cols();
  const long dz = z_.front().cols();
  if (dx < 1) throw ValidationError("treatment dimension must be >= 1");
  if (dz < 1) throw ValidationError("covariate dimension must be >= 1");
  for (const auto& block : x_) {
    if (block.rows() != n || block.cols() != dx)
      throw ValidationError("inconsistent x block shape");
  }
  for (const auto& block : z_) {
    if (block.rows() != n || block.cols() != dz)
      throw ValidationError("inconsistent z block shape");
  }
  if (unit_ids_.empty()) {
    unit_ids_.resize(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) unit_ids_[static_cast<size_t>(i)] = std::to_string(i + 1);
  } else if (static_cast<long>(unit_ids_.size()) != n) {
    throw ValidationError(shape_msg("unit_ids vs units", unit_ids_.size(), n));
  }
}

PanelDataset PanelDataset::take_rows(const std::vector<int>& rows) const {
  const long m = static_cast<long>(rows.size());
  Eigen::MatrixXd y(m, periods());
  std::vector<Eigen::MatrixXd> x(static_cast<size_t>(periods()));
  std::vector<Eigen::MatrixXd> z(static_cast<size_t>(periods()));
  for (int t = 0; t < periods(); ++t) {
    x[static_cast<size_t>(t)].resize(m, dx());
    z[static_cast<size_t>(t)].resize(m, dz());
  }
  std::vector<std::string> ids(static_cast<size_t>(m));
  for (long k = 0; k < m; ++k) {
    const int i = rows[static_cast<size_t>(k)];
    y.row(k) = y_.row(i);
    for (int t = 0; t < periods(); ++t) {
      x[static_cast<size_t>(t)].row(k) = x_[static_cast<size_t>(t)].row(i);
      z[static_cast<size_t>(t)].row(k) = z_[static_cast<size_t>(t)].row(i);
    }
    ids[static_cast<size_t>(k)] = unit_ids_[static_cast<size_t>(i)];
  }
  return PanelDataset(std::move(y), std::move(x), std::move(z), std::move(ids));
}

ValidationReport validate(const PanelDataset& data) {
  ValidationReport report;
  const int n = data.n();
  const int T = data.periods();

  bool finite = data.y().allFinite();
  for (int t = 0; t < T && finite; ++t)
    finite = data.x(t).allFinite() && data.z(t).allFinite();
  report.all_finite = finite;
  if (!finite) report.messages.push_back("non-finite values present");

  bool intercept = true;
  for (int t = 0; t < T && intercept; ++t)
    intercept = (data.z(t).col(0).array() == 1.0).all();
  report.intercept_ok = intercept;
  if (!intercept)
    report.messages.push_back("z[.,.,0] is not identically 1");

  report.z_rank.resize(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(data.z(t));
    const int rank = static_cast<int>(qr.rank());
    report.z_rank[static_cast<size_t>(t)] = rank;
    if (rank < data.dz()) {
      report.z_full_rank_all = false;
      report.messages.push_back("Z design rank-deficient in period " +
                                std::to_string(t + 1));
    }
  }

  report.x_has_variance.resize(static_cast<size_t>(T));
  bool some_full_rank = false;
  for (int t = 0; t < T; ++t) {
    const Eigen::MatrixXd& xt = data.x(t);
    bool varies = false;
    for (int k = 0; k < data.dx() && !varies; ++k)
      varies = (xt.col(k).array() != xt(0, k)).any();
    report.x_has_variance[static_cast<size_t>(t)] = varies;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xt);
    if (static_cast<int>(qr.rank()) == data.dx()) some_full_rank = true;
    if (!varies)
      report.messages.push_back("X has zero variance in period " +
                                std::to_string(t + 1));
  }
  report.x_full_rank_some_period = some_full_rank;
  if (!some_full_rank)
    report.messages.push_back("X'X is rank-deficient in every period");

  (void)n;
  return report;
}

namespace {

// Mean and population sd computed over the value-sorted column, so the
// statistics are bit-identical under any unit permutation.
void column_stats(const Eigen::VectorXd& col, double& mean, double& sd) {
  std::vector<double> sorted(col.data(), col.data() + col.size());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double total = detail::pairwise_sum(n, [&](std::size_t i) { return sorted[i]; });
  mean = total / static_cast<double>(n);
  const double ss = detail::pairwise_sum(n, [&](std::size_t i) {
    const double d = sorted[i] - mean;
    return d * d;
  });
  sd = std::sqrt(ss / static_cast<double>(n));
}

void standardize_column(const Eigen::VectorXd& raw, Eigen::Ref<Eigen::VectorXd> out,
                        double& mean, double& sd, bool& degenerate) {
  column_stats(raw, mean, sd);
  degenerate = !(sd > 0.0) || !std::isfinite(sd);
  if (degenerate) {
    out.setZero();
  } else {
    out = (raw.array() - mean) / sd;
  }
}

bool bitwise_equal(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) return false;
  return std::memcmp(a.data(), b.data(),
                     sizeof(double) * static_cast<size_t>(a.size())) == 0;
}

StackedRegressors standardize_impl(
    const PanelDataset& data,
    const std::vector<std::pair<int, int>>& z_sources) {
  const int n = data.n();
  const int T = data.periods();
  const int dx = data.dx();
  const int x_cols = dx * T;
  const int z_cols = static_cast<int>(z_sources.size());

  StackedRegressors out;
  out.x_std.resize(n, x_cols);
  out.z_std.resize(n, z_cols);
  out.col_means.resize(x_cols + z_cols);
  out.col_sds.resize(x_cols + z_cols);
  out.degenerate.assign(static_cast<size_t>(x_cols + z_cols), false);
  out.z_sources = z_sources;

  for (int t = 0; t < T; ++t) {
    for (int k = 0; k < dx; ++k) {
      const int c = t * dx + k;
      bool deg = false;
      standardize_column(data.x(t).col(k), out.x_std.col(c),
                         out.col_means(c), out.col_sds(c), deg);
      out.degenerate[static_cast<size_t>(c)] = deg;
    }
  }
  for (int c = 0; c < z_cols; ++c) {
    const auto [t, k] = z_sources[static_cast<size_t>(c)];
    const int full = x_cols + c;
    bool deg = false;
    standardize_column(data.z(t).col(k), out.z_std.col(c),
                       out.col_means(full), out.col_sds(full), deg);
    out.degenerate[static_cast<size_t>(full)] = deg;
  }
  return out;
}

}  // namespace

StackedRegressors standardize(const PanelDataset& data) {
  // Keep the first occurrence of each distinct (bitwise) covariate column,
  // scanning periods in order.
  std::vector<std::pair<int, int>> sources;
  std::vector<Eigen::VectorXd> kept;
  for (int t = 0; t < data.periods(); ++t) {
    for (int k = 0; k < data.dz(); ++k) {
      Eigen::VectorXd col = data.z(t).col(k);
      bool dup = false;
      for (const auto& existing : kept) {
        if (bitwise_equal(existing, col)) {
          dup = true;
          break;
        }
      }
      if (!dup) {
        kept.push_back(std::move(col));
        sources.emplace_back(t, k);
      }
    }
  }
  return standardize_impl(data, sources);
}

StackedRegressors restandardize_like(const PanelDataset& data,
                                     const StackedRegressors& layout) {
  return standardize_impl(data, layout.z_sources);
}

std::vector<int> canonical_order(const PanelDataset& data) {
  const int T = data.periods();
  auto less_rows = [&](int a, int b) {
    for (int t = 0; t < T; ++t) {
      if (data.y()(a, t) != data.y()(b, t)) return data.y()(a, t) < data.y()(b, t);
    }
    for (int t = 0; t < T; ++t) {
      for (int k = 0; k < data.dx(); ++k) {
        if (data.x(t)(a, k) != data.x(t)(b, k))
          return data.x(t)(a, k) < data.x(t)(b, k);
      }
    }
    for (int t = 0; t < T; ++t) {
      for (int k = 0; k < data.dz(); ++k) {
        if (data.z(t)(a, k) != data.z(t)(b, k))
          return data.z(t)(a, k) < data.z(t)(b, k);
      }
    }
    return false;
  };
  std::vector<int> order(static_cast<size_t>(data.n()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), less_rows);
  return order;
}

void check_config(const EstimationConfig& config, int dx) {
  if (config.tau_grid.empty())
    throw ValidationError("tau grid must be nonempty");
  for (std::size_t i = 0; i < config.tau_grid.size(); ++i) {
    const double tau = config.tau_grid[i];
    if (!(tau > 0.0 && tau < 1.0))
      throw ValidationError("tau values must lie strictly inside (0,1)");
    if (i > 0 && !(tau > config.tau_grid[i - 1]))
      throw ValidationError("tau grid must be strictly increasing");
  }
  if (config.a_bounds.empty())
    throw ValidationError("a_bounds must be nonempty");
  if (config.a_bounds.size() != 1 &&
      config.a_bounds.size() != static_cast<size_t>(dx))
    throw ValidationError("a_bounds must have 1 or d_X entries");
  for (const auto& iv : config.a_bounds) {
    if (!(iv[0] <= iv[1]))
      throw ValidationError("each a_bounds interval needs lo <= hi");
  }
  if (config.grid_points < 3)
    throw ValidationError("grid_points must be at least 3");
  if (config.quad_nodes < 1)
    throw ValidationError("quad_nodes must be at least 1");
  if (!(config.qr_tol > 0.0))
    throw ValidationError("qr_tol must be positive");
}

std::vector<std::array<double, 2>> resolved_a_bounds(
    const EstimationConfig& config, int dx) {
  check_config(config, dx);
  if (config.a_bounds.size() == static_cast<size_t>(dx)) return config.a_bounds;
  return std::vector<std::array<double, 2>>(static_cast<size_t>(dx),
                                            config.a_bounds.front());
}

}  // namespace qte::core
