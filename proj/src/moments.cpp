#include "qte/moments.hpp"

#include <cmath>
#include <vector>

#include "qte/detail/pairwise.hpp"
#include "qte/detail/rng.hpp"

namespace qte::moments {

namespace {

constexpr long kTensorCap = 100000;

// Gauss-Legendre nodes/weights on [-1, 1] by Newton iteration on P_j.
void gauss_legendre(int j, std::vector<double>& nodes,
                    std::vector<double>& weights) {
  nodes.assign(static_cast<size_t>(j), 0.0);
  weights.assign(static_cast<size_t>(j), 0.0);
  const int half = (j + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double x = std::cos(M_PI * (static_cast<double>(i) + 0.75) /
                        (static_cast<double>(j) + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      if (j == 1) {
        p1 = x;
      }
      for (int k = 2; k <= j; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      dp = j * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::fabs(dx) < 1e-15) break;
    }
    // Recompute the derivative at the converged node for the weight.
    double p0 = 1.0, p1 = x;
    for (int k = 2; k <= j; ++k) {
      const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = pk;
    }
    dp = j * (x * p1 - p0) / (x * x - 1.0);
    const double wgt = 2.0 / ((1.0 - x * x) * dp * dp);
    nodes[static_cast<size_t>(i)] = -x;
    nodes[static_cast<size_t>(j - 1 - i)] = x;
    weights[static_cast<size_t>(i)] = wgt;
    weights[static_cast<size_t>(j - 1 - i)] = wgt;
  }
  if (j == 1) {
    nodes[0] = 0.0;
    weights[0] = 2.0;
  }
  if (j % 2 == 1) nodes[static_cast<size_t>(j / 2)] = 0.0;
}

QuadratureRule tensor_gauss(int dim, int j, std::uint64_t seed) {
  std::vector<double> n1, w1;
  gauss_legendre(j, n1, w1);
  long total = 1;
  for (int k = 0; k < dim; ++k) total *= j;

  QuadratureRule rule;
  rule.scheme = core::QuadScheme::TensorGauss;
  rule.seed = seed;
  rule.nodes.resize(total, dim);
  rule.weights.resize(total);

  std::vector<int> idx(static_cast<size_t>(dim), 0);
  for (long r = 0; r < total; ++r) {
    double w = 1.0;
    for (int k = 0; k < dim; ++k) {
      const auto c = static_cast<size_t>(idx[static_cast<size_t>(k)]);
      rule.nodes(r, k) = 0.5 * n1[c];
      w *= 0.5 * w1[c];
    }
    rule.weights(r) = w;
    for (int k = dim - 1; k >= 0; --k) {  // odometer, last axis fastest
      if (++idx[static_cast<size_t>(k)] < j) break;
      idx[static_cast<size_t>(k)] = 0;
    }
  }
  return rule;
}

std::vector<int> first_primes(int count) {
  std::vector<int> primes;
  int candidate = 2;
  while (static_cast<int>(primes.size()) < count) {
    bool is_prime = true;
    for (int p : primes) {
      if (p * p > candidate) break;
      if (candidate % p == 0) {
        is_prime = false;
        break;
      }
    }
    if (is_prime) primes.push_back(candidate);
    ++candidate;
  }
  return primes;
}

double radical_inverse(int base, long index) {
  double inv_base = 1.0 / base;
  double factor = inv_base;
  double value = 0.0;
  while (index > 0) {
    value += static_cast<double>(index % base) * factor;
    index /= base;
    factor *= inv_base;
  }
  return value;
}

QuadratureRule halton(int dim, int j, std::uint64_t seed) {
  QuadratureRule rule;
  rule.scheme = core::QuadScheme::Halton;
  rule.seed = seed;
  rule.nodes.resize(j, dim);
  rule.weights = Eigen::VectorXd::Constant(j, 1.0 / static_cast<double>(j));

  const std::vector<int> primes = first_primes(dim);
  std::vector<double> shift(static_cast<size_t>(dim));
  std::uint64_t state = seed;
  for (int k = 0; k < dim; ++k) {
    shift[static_cast<size_t>(k)] =
        static_cast<double>(qte::detail::splitmix64_next(state) >> 11) *
        0x1.0p-53;
  }
  for (long r = 0; r < j; ++r) {
    for (int k = 0; k < dim; ++k) {
      double u = radical_inverse(primes[static_cast<size_t>(k)], r + 1) +
                 shift[static_cast<size_t>(k)];
      u -= std::floor(u);
      rule.nodes(r, k) = u - 0.5;
    }
  }
  return rule;
}

}  // namespace

QuadratureRule make_rule(int dim, int j, core::QuadScheme scheme,
                         std::uint64_t seed) {
  if (dim < 1) throw ValidationError("quadrature dimension must be >= 1");
  if (j < 1) throw ValidationError("quadrature size must be >= 1");

  double budget = 1.0;
  for (int k = 0; k < dim; ++k) budget *= static_cast<double>(j);
  const bool tensor_fits = dim <= 4 && budget <= static_cast<double>(kTensorCap);

  switch (scheme) {
    case core::QuadScheme::TensorGauss:
      if (!tensor_fits)
        throw BudgetExceededError("tensor grid of " + std::to_string(j) + "^" +
                                  std::to_string(dim) + " exceeds the cap");
      return tensor_gauss(dim, j, seed);
    case core::QuadScheme::Halton:
      return halton(dim, j, seed);
    case core::QuadScheme::Auto:
    default:
      return tensor_fits ? tensor_gauss(dim, j, seed) : halton(dim, j, seed);
  }
}

double weight_omega(const Eigen::VectorXd& x_std, const Eigen::VectorXd& z_std,
                    const Eigen::VectorXd& v) {
  if (v.size() != x_std.size() + z_std.size())
    throw ValidationError("weight node dimension mismatch");
  double expo = 0.0;
  for (Eigen::Index k = 0; k < x_std.size(); ++k) expo += v(k) * x_std(k);
  for (Eigen::Index k = 0; k < z_std.size(); ++k)
    expo += v(x_std.size() + k) * z_std(k);
  return std::exp(expo);
}

Eigen::MatrixXd weight_matrix(const core::StackedRegressors& stacked,
                              const QuadratureRule& rule) {
  if (rule.dim() != stacked.dim())
    throw ValidationError("rule dimension does not match stacked regressors");
  const Eigen::Index n = stacked.x_std.rows();
  Eigen::MatrixXd combined(n, stacked.dim());
  combined << stacked.x_std, stacked.z_std;
  // Row-at-a-time so each unit's weights are computed by identical
  // arithmetic regardless of where the row sits in the matrix.
  Eigen::MatrixXd w(n, rule.count());
  for (Eigen::Index i = 0; i < n; ++i)
    w.row(i) =
        (rule.nodes * combined.row(i).transpose()).array().exp().transpose();
  return w;
}

IndicatorMatrix indicators(const core::PanelDataset& data,
                           const Eigen::VectorXd& a, const Eigen::MatrixXd& b) {
  const int n = data.n();
  const int T = data.periods();
  if (a.size() != data.dx()) throw ValidationError("a dimension mismatch");
  if (b.rows() != T || b.cols() != data.dz())
    throw ValidationError("b dimension mismatch");

  IndicatorMatrix out;
  out.ind.resize(n, T);
  out.row_means.resize(n);
  for (int i = 0; i < n; ++i) {
    int count = 0;
    for (int t = 0; t < T; ++t) {
      // Scalar accumulation in fixed coordinate order; the brute-force test
      // oracles evaluate the same expression shape.
      double fitted = 0.0;
      for (int k = 0; k < data.dx(); ++k) fitted += data.x(t)(i, k) * a(k);
      for (int k = 0; k < data.dz(); ++k) fitted += data.z(t)(i, k) * b(t, k);
      const int ind = data.y()(i, t) <= fitted ? 1 : 0;
      out.ind(i, t) = ind;
      count += ind;
    }
    out.row_means(i) = static_cast<double>(count) / static_cast<double>(T);
  }
  return out;
}

namespace detail_impl {

Eigen::MatrixXi moment_numerators(const core::PanelDataset& data,
                                  const Eigen::VectorXd& a,
                                  const Eigen::MatrixXd& b) {
  const int n = data.n();
  const int T = data.periods();
  Eigen::MatrixXi m(n, T);
  for (int i = 0; i < n; ++i) {
    int count = 0;
    for (int t = 0; t < T; ++t) {
      double fitted = 0.0;
      for (int k = 0; k < data.dx(); ++k) fitted += data.x(t)(i, k) * a(k);
      for (int k = 0; k < data.dz(); ++k) fitted += data.z(t)(i, k) * b(t, k);
      m(i, t) = data.y()(i, t) <= fitted ? 1 : 0;
      count += m(i, t);
    }
    for (int t = 0; t < T; ++t) m(i, t) = T * m(i, t) - count;
  }
  return m;
}

Eigen::VectorXd dhat_from_numerators(const Eigen::MatrixXi& m,
                                     const Eigen::MatrixXd& weights,
                                     const std::vector<int>& order, int t,
                                     int periods) {
  std::vector<int> rows;
  std::vector<double> scale;
  rows.reserve(order.size());
  scale.reserve(order.size());
  for (int idx : order) {
    if (m(idx, t) != 0) {
      rows.push_back(idx);
      scale.push_back(static_cast<double>(m(idx, t)));
    }
  }
  const Eigen::Index j = weights.cols();
  Eigen::VectorXd sum =
      qte::detail::pairwise_row_sum(rows.size(), j, [&](std::size_t k) {
        return scale[k] * weights.row(rows[k]).transpose();
      });
  const double denom =
      static_cast<double>(m.rows()) * static_cast<double>(periods);
  return sum / denom;
}

}  // namespace detail_impl

Eigen::VectorXd dhat(const core::PanelDataset& data,
                     const core::StackedRegressors& stacked,
                     const QuadratureRule& rule, const Eigen::VectorXd& a,
                     const Eigen::MatrixXd& b, int t) {
  if (t < 0 || t >= data.periods())
    throw ValidationError("period index out of range");
  const Eigen::MatrixXd weights = weight_matrix(stacked, rule);
  const Eigen::MatrixXi m = detail_impl::moment_numerators(data, a, b);
  const std::vector<int> order = core::canonical_order(data);
  return detail_impl::dhat_from_numerators(m, weights, order, t,
                                           data.periods());
}

Eigen::MatrixXd g_matrix(const core::PanelDataset& data,
                         const core::StackedRegressors& stacked,
                         const QuadratureRule& rule, const Eigen::VectorXd& a,
                         const Eigen::MatrixXd& b, int t) {
  if (t < 0 || t >= data.periods())
    throw ValidationError("period index out of range");
  const Eigen::MatrixXd weights = weight_matrix(stacked, rule);
  const Eigen::MatrixXi m = detail_impl::moment_numerators(data, a, b);
  const double inv_t = 1.0 / static_cast<double>(data.periods());
  Eigen::MatrixXd g(data.n(), rule.count());
  for (int i = 0; i < data.n(); ++i)
    g.row(i) = static_cast<double>(m(i, t)) * (weights.row(i) * inv_t);
  return g;
}

}  // namespace qte::moments
