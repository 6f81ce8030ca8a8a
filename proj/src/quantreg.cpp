#include "qte/quantreg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace qte::quantreg {

namespace {

constexpr double kStepDamping = 0.9995;

double residual_zero_tol(const Eigen::VectorXd& responses) {
  return 1e-7 * (1.0 + responses.cwiseAbs().maxCoeff());
}

void count_signs(const Eigen::VectorXd& resid, double zero_tol, int& n_neg,
                 int& n_zero) {
  n_neg = 0;
  n_zero = 0;
  for (Eigen::Index i = 0; i < resid.size(); ++i) {
    if (std::fabs(resid(i)) <= zero_tol)
      ++n_zero;
    else if (resid(i) < 0.0)
      ++n_neg;
  }
}

QrFit make_fit(const Eigen::VectorXd& b, const Eigen::VectorXd& responses,
               const Eigen::MatrixXd& design, double tau, bool converged,
               int iterations) {
  QrFit fit;
  fit.coefficients = b;
  fit.tau = tau;
  fit.objective = mean_check_loss(responses, design, b, tau);
  const Eigen::VectorXd resid = responses - design * b;
  count_signs(resid, residual_zero_tol(responses), fit.n_neg, fit.n_zero);
  fit.converged = converged;
  fit.iterations = iterations;
  return fit;
}

}  // namespace

double mean_check_loss(const Eigen::VectorXd& responses,
                       const Eigen::MatrixXd& design, const Eigen::VectorXd& b,
                       double tau) {
  const Eigen::VectorXd resid = responses - design * b;
  double total = 0.0;
  for (Eigen::Index i = 0; i < resid.size(); ++i)
    total += check_loss(resid(i), tau);
  return total / static_cast<double>(resid.size());
}

QrFit fit(const Eigen::VectorXd& responses, const Eigen::MatrixXd& design,
          double tau, double tol, int max_iter,
          const std::optional<std::vector<std::array<double, 2>>>& box,
          bool check_rank) {
  const Eigen::Index n = design.rows();
  const Eigen::Index d = design.cols();
  if (!(tau > 0.0 && tau < 1.0))
    throw ValidationError("quantile level must lie in (0,1)");
  if (responses.size() != n)
    throw ValidationError("responses and design row counts differ");
  if (n <= d)
    throw ValidationError("quantile regression needs n > d_Z");
  if (check_rank) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    if (qr.rank() < d)
      throw RankDeficientError("design matrix is rank deficient");
  }

  // LP over x in [0,1]^n: min c'x s.t. Z'x = rhs, with c = -y and
  // rhs = (1-tau) Z'1. The QR coefficients are -theta for the equality
  // multiplier theta, and any feasible x certifies the lower bound
  // y'x - (1-tau) sum(y) on the summed check loss.
  const Eigen::VectorXd c = -responses;
  Eigen::VectorXd x = Eigen::VectorXd::Constant(n, 1.0 - tau);
  Eigen::VectorXd s = Eigen::VectorXd::Constant(n, tau);
  const double sum_y = responses.sum();

  Eigen::MatrixXd ztz = design.transpose() * design;
  Eigen::VectorXd theta = ztz.ldlt().solve(design.transpose() * c);
  Eigen::VectorXd res = c - design * theta;

  const double eps0 = 1e-6 * (1.0 + res.cwiseAbs().maxCoeff());
  Eigen::VectorXd z = res.cwiseMax(0.0).array() + eps0;
  Eigen::VectorXd w = z - res;

  const double tol_sum = tol * static_cast<double>(n);
  Eigen::VectorXd best_b = -theta;
  double best_obj = mean_check_loss(responses, design, best_b, tau);

  int it = 0;
  bool converged = false;
  while (it < max_iter) {
    ++it;

    const Eigen::ArrayXd zx = z.array() / x.array();
    const Eigen::ArrayXd ws = w.array() / s.array();
    const Eigen::VectorXd q = (zx + ws).inverse().matrix();

    Eigen::MatrixXd m = design.transpose() * (design.array().colwise() * q.array()).matrix();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
    if (ldlt.info() != Eigen::Success) {
      m.diagonal().array() += 1e-13 * m.trace() + 1e-300;
      ldlt.compute(m);
    }

    const Eigen::VectorXd zw = z - w;

    // Affine (predictor) direction.
    const Eigen::VectorXd dtheta_aff =
        ldlt.solve(design.transpose() * (q.array() * zw.array()).matrix());
    const Eigen::VectorXd dx_aff =
        (q.array() * ((design * dtheta_aff) - zw).array()).matrix();
    const Eigen::VectorXd dz_aff = (-z.array() - zx * dx_aff.array()).matrix();
    const Eigen::VectorXd dw_aff = (-w.array() + ws * dx_aff.array()).matrix();

    auto primal_step = [&](const Eigen::VectorXd& dx) {
      double alpha = 1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (dx(i) < 0.0) alpha = std::min(alpha, -kStepDamping * x(i) / dx(i));
        if (dx(i) > 0.0) alpha = std::min(alpha, kStepDamping * s(i) / dx(i));
      }
      return alpha;
    };
    auto dual_step = [&](const Eigen::VectorXd& dz, const Eigen::VectorXd& dw) {
      double alpha = 1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (dz(i) < 0.0) alpha = std::min(alpha, -kStepDamping * z(i) / dz(i));
        if (dw(i) < 0.0) alpha = std::min(alpha, -kStepDamping * w(i) / dw(i));
      }
      return alpha;
    };

    const double ap_aff = primal_step(dx_aff);
    const double ad_aff = dual_step(dz_aff, dw_aff);

    const double mu = (x.dot(z) + s.dot(w)) / (2.0 * static_cast<double>(n));
    const double mu_aff =
        ((x + ap_aff * dx_aff).dot(z + ad_aff * dz_aff) +
         (s - ap_aff * dx_aff).dot(w + ad_aff * dw_aff)) /
        (2.0 * static_cast<double>(n));
    double sigma = mu_aff / mu;
    sigma = std::clamp(sigma * sigma * sigma, 0.0, 1.0);

    // Corrector direction with Mehrotra's second-order term.
    const Eigen::ArrayXd uz =
        (sigma * mu - dx_aff.array() * dz_aff.array()) / x.array() - z.array();
    const Eigen::ArrayXd uw =
        (sigma * mu - (-dx_aff.array()) * dw_aff.array()) / s.array() -
        w.array();
    const Eigen::VectorXd dtheta =
        ldlt.solve(-design.transpose() * (q.array() * (uz - uw)).matrix());
    const Eigen::VectorXd dx =
        (q.array() * ((design * dtheta).array() + uz - uw)).matrix();
    const Eigen::VectorXd dz = (uz - zx * dx.array()).matrix();
    const Eigen::VectorXd dw = (uw + ws * dx.array()).matrix();

    const double ap = primal_step(dx);
    const double ad = dual_step(dz, dw);

    x += ap * dx;
    s -= ap * dx;
    theta += ad * dtheta;
    z += ad * dz;
    w += ad * dw;

    const double floor = 1e-300;
    x = x.cwiseMax(floor);
    s = s.cwiseMax(floor);
    z = z.cwiseMax(floor);
    w = w.cwiseMax(floor);

    res = c - design * theta;

    // Certified duality gap on the summed check loss.
    const Eigen::VectorXd b = -theta;
    const double primal = mean_check_loss(responses, design, b, tau) *
                          static_cast<double>(n);
    const double lower = responses.dot(x) - (1.0 - tau) * sum_y;
    const double gap = primal - lower;

    if (primal / static_cast<double>(n) < best_obj) {
      best_obj = primal / static_cast<double>(n);
      best_b = b;
    }
    if (gap <= tol_sum) {
      converged = true;
      break;
    }
  }

  if (!converged) {
    QrFit best = make_fit(best_b, responses, design, tau, false, it);
    throw NonConvergenceError(
        "quantile regression did not reach tolerance in " +
            std::to_string(max_iter) + " iterations",
        std::move(best));
  }

  QrFit out = make_fit(-theta, responses, design, tau, true, it);
  if (box.has_value()) {
    if (box->size() != static_cast<size_t>(d))
      throw ValidationError("b_bounds dimension mismatch");
    bool clamped = false;
    Eigen::VectorXd clipped = out.coefficients;
    for (Eigen::Index k = 0; k < d; ++k) {
      const auto& iv = (*box)[static_cast<size_t>(k)];
      const double v = std::clamp(clipped(k), iv[0], iv[1]);
      if (v != clipped(k)) clamped = true;
      clipped(k) = v;
    }
    if (clamped) out = make_fit(clipped, responses, design, tau, false, it);
  }
  return out;
}

double first_order_gap(const QrFit& fit, const Eigen::VectorXd& responses,
                       const Eigen::MatrixXd& design, double tau) {
  const Eigen::Index n = design.rows();
  const Eigen::Index d = design.cols();
  const Eigen::VectorXd resid = responses - design * fit.coefficients;
  const double zero_tol = residual_zero_tol(responses);

  Eigen::VectorXd base = Eigen::VectorXd::Zero(d);
  std::vector<Eigen::Index> zeros;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::fabs(resid(i)) <= zero_tol) {
      zeros.push_back(i);
    } else {
      const double coef = tau - (resid(i) < 0.0 ? 1.0 : 0.0);
      base += coef * design.row(i).transpose();
    }
  }
  base /= static_cast<double>(n);
  if (zeros.empty()) return base.cwiseAbs().maxCoeff();

  // Projected gradient descent for the subgradient selection minimizing the
  // Euclidean norm of base + M s over s in [tau-1, tau]^m.
  const auto m = static_cast<Eigen::Index>(zeros.size());
  Eigen::MatrixXd cols(d, m);
  for (Eigen::Index k = 0; k < m; ++k)
    cols.col(k) = design.row(zeros[static_cast<size_t>(k)]).transpose() /
                  static_cast<double>(n);

  Eigen::VectorXd sel = Eigen::VectorXd::Zero(m);  // 0 is inside [tau-1, tau]
  const double lipschitz = std::max(cols.squaredNorm(), 1e-300);
  const double step = 1.0 / lipschitz;
  for (int iter = 0; iter < 500; ++iter) {
    const Eigen::VectorXd g = cols.transpose() * (base + cols * sel);
    Eigen::VectorXd next = sel - step * g;
    for (Eigen::Index k = 0; k < m; ++k)
      next(k) = std::clamp(next(k), tau - 1.0, tau);
    if ((next - sel).cwiseAbs().maxCoeff() < 1e-14) {
      sel = next;
      break;
    }
    sel = next;
  }
  return (base + cols * sel).cwiseAbs().maxCoeff();
}

}  // namespace qte::quantreg
