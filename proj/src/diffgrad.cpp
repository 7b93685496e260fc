#include "dadnn/diffgrad.hpp"

#include <cmath>

#include "dadnn/errors.hpp"

namespace dadnn {

Vec kkt_residual_vector(const QpProblemd& p, const Vec& x, const Vec& lambda, const Vec& mu) {
  const Eigen::Index n = p.num_vars(), me = p.num_eq(), mi = p.num_ineq();
  Vec r(n + me + mi);
  r.head(n) = p.Q * x + p.q + p.A.transpose() * lambda + p.G.transpose() * mu;
  r.segment(n, me) = p.A * x - p.b;
  r.tail(mi) = mu.cwiseProduct(p.G * x - p.h);
  return r;
}

KktSystem build_kkt_system(const QpProblemd& p, const Vec& x, const Vec& lambda, const Vec& mu, Mat J_z) {
  const auto n = static_cast<int>(p.num_vars());
  const auto me = static_cast<int>(p.num_eq());
  const auto mi = static_cast<int>(p.num_ineq());
  if (x.size() != n || lambda.size() != me || mu.size() != mi)
    throw ContractError("solution dimensions do not match the problem");
  const int dim = n + me + mi;
  if (J_z.rows() != dim) throw ContractError("J_z row count must equal n + m_e + m_i");

  KktSystem k;
  k.n = n;
  k.m_eq = me;
  k.m_ineq = mi;
  k.n_param = static_cast<int>(J_z.cols());
  k.J_x = Mat::Zero(dim, dim);
  k.J_x.topLeftCorner(n, n) = p.Q;
  k.J_x.block(0, n, n, me) = p.A.transpose();
  k.J_x.block(0, n + me, n, mi) = p.G.transpose();
  k.J_x.block(n, 0, me, n) = p.A;
  k.J_x.block(n + me, 0, mi, n) = mu.asDiagonal() * p.G;
  k.J_x.bottomRightCorner(mi, mi).diagonal() = p.G * x - p.h;
  k.J_z = std::move(J_z);
  return k;
}

KktSystem build_kkt_jacobians(const GridCase& g, const OpfFormulation& f, const Dispatch& d) {
  if (!d.optimal()) throw ContractError("sensitivities need an optimal dispatch");
  const QpProblemd& p = f.qp;
  const OpfIndexMap& m = f.map;
  const int n = static_cast<int>(p.num_vars());
  const int me = static_cast<int>(p.num_eq());
  const int mi = static_cast<int>(p.num_ineq());
  const int nl = g.n_line;
  const bool scaled = f.limit_form == LimitForm::kScaled;

  // Row l of C restricted to the theta columns of x.
  auto c_theta = [&](int l) {
    Vec row = Vec::Zero(n);
    for (int i = 0; i < g.n_bus; ++i) {
      const int c = m.theta_col[static_cast<std::size_t>(i)];
      if (c >= 0) row(c) = g.branch_incidence(l, i);
    }
    return row;
  };

  Mat Jz = Mat::Zero(n + me + mi, nl);
  for (int l = 0; l < nl; ++l) {
    const double b = g.susceptance(l);
    const Vec cr = c_theta(l);
    const double angle_diff = cr.dot(d.x);   // (C theta)_l
    const double lam_diff = g.branch_incidence.row(l).dot(d.lambda);  // (C lambda)_l

    // Stationarity: d(A' lambda)/dz_l + d(G' mu)/dz_l, theta columns only.
    double mu_net = 0.0;
    const int up = m.line_upper_row[static_cast<std::size_t>(l)];
    const int lo = m.line_lower_row[static_cast<std::size_t>(l)];
    if (up >= 0) mu_net += d.mu(up);
    if (lo >= 0) mu_net -= d.mu(lo);
    Jz.col(l).head(n) = b * (mu_net - lam_diff) * cr;

    // Balance rows: d(A x)/dz_l = -C_l' b (C theta)_l.
    Jz.col(l).segment(n, me) = -b * angle_diff * g.branch_incidence.row(l).transpose();

    // Line-limit complementarity rows.
    if (up >= 0) {
      const double dh = scaled ? g.line_flow_max(l) : 0.0;
      Jz(n + me + up, l) = d.mu(up) * (b * angle_diff - dh);
    }
    if (lo >= 0) {
      const double dh = scaled ? -g.line_flow_min(l) : 0.0;
      Jz(n + me + lo, l) = d.mu(lo) * (-b * angle_diff - dh);
    }
  }
  return build_kkt_system(p, d.x, d.lambda, d.mu, std::move(Jz));
}

SensitivityResult solve_sensitivity(const KktSystem& k) {
  const Eigen::Index dim = k.J_x.rows();
  SensitivityResult out;
  if (k.J_x.cols() != dim || k.J_z.rows() != dim) throw ContractError("malformed KKT system");

  // Row equilibration leaves the solution unchanged.
  Vec scale = Vec::Ones(dim);
  for (Eigen::Index r = 0; r < dim; ++r) {
    const double s = k.J_x.row(r).cwiseAbs().maxCoeff();
    if (s > 0) scale(r) = 1.0 / s;
  }
  Mat J = scale.asDiagonal() * k.J_x;
  const Mat rhs = -(scale.asDiagonal() * k.J_z);

  auto attempt = [&](const Mat& M) {
    Eigen::PartialPivLU<Mat> lu(M);
    const double rc = lu.rcond();
    out.condition_estimate = rc > 0 ? 1.0 / rc : std::numeric_limits<double>::infinity();
    Mat S = lu.solve(rhs);
    const bool good = std::isfinite(out.condition_estimate) && out.condition_estimate <= 1e12 && S.allFinite();
    return std::make_pair(good, std::move(S));
  };

  auto [good, S] = attempt(J);
  if (!good) {
    J.diagonal().array() += 1e-8;
    out.regularized = true;
    Eigen::PartialPivLU<Mat> lu(J);
    const double rc = lu.rcond();
    out.condition_estimate = rc > 0 ? 1.0 / rc : std::numeric_limits<double>::infinity();
    S = lu.solve(rhs);
    if (!S.allFinite()) {
      out.ok = false;
      return out;
    }
  }
  out.dx_dz = S.topRows(k.n);
  out.ok = true;
  return out;
}

Vec loss_grad_wrt_z(const GridCase& g, const Dispatch& d, const SensitivityResult& s) {
  if (s.dx_dz.rows() < g.n_gen) throw ContractError("sensitivity has too few rows");
  return s.dx_dz.topRows(g.n_gen).transpose() * marginal_cost(g, d.pg);
}

CostGradient relaxed_cost_gradient(const GridCase& g, const Vec& pd, const Vec& z, const OpfOptions& options) {
  CostGradient out;
  const auto f = build_opf(g, pd, SwitchVector::relaxed(z), options.limit_form);
  out.dispatch = solve_formulation(g, f, options.qp);
  if (!out.dispatch.optimal()) return out;
  const auto s = solve_sensitivity(build_kkt_jacobians(g, f, out.dispatch));
  if (!s.ok) return out;
  out.grad = loss_grad_wrt_z(g, out.dispatch, s);
  out.regularized = s.regularized;
  out.ok = out.grad.allFinite();
  return out;
}

std::vector<int> active_rows(const QpProblemd& p, const Vec& x, double tol) {
  std::vector<int> rows;
  const Vec slack = p.h - p.G * x;
  for (Eigen::Index i = 0; i < slack.size(); ++i)
    if (slack(i) <= tol * std::max(1.0, std::abs(p.h(i)))) rows.push_back(static_cast<int>(i));
  return rows;
}

FiniteDiffResult finite_diff_grad(const GridCase& g, const Vec& pd, const Vec& z, double step,
                                  const OpfOptions& options) {
  if (!(step > 0)) throw ContractError("finite-difference step must be positive");
  if (z.size() != g.n_line) throw ContractError("z length must equal the number of lines");
  if ((z.array() - step).minCoeff() <= 0.0 || (z.array() + step).maxCoeff() >= 1.0)
    throw ContractError("z +/- step must stay inside (0, 1)");

  FiniteDiffResult r;
  r.grad = Vec::Zero(g.n_line);
  r.reliable.assign(static_cast<std::size_t>(g.n_line), true);
  r.active_set_changed.assign(static_cast<std::size_t>(g.n_line), false);
  for (int l = 0; l < g.n_line; ++l) {
    Vec zp = z, zm = z;
    zp(l) += step;
    zm(l) -= step;
    const auto fp = build_opf(g, pd, SwitchVector::relaxed(zp), options.limit_form);
    const auto fm = build_opf(g, pd, SwitchVector::relaxed(zm), options.limit_form);
    const auto dp = solve_formulation(g, fp, options.qp);
    const auto dm = solve_formulation(g, fm, options.qp);
    if (!dp.optimal() || !dm.optimal()) {
      r.reliable[static_cast<std::size_t>(l)] = false;
      continue;
    }
    r.grad(l) = (dp.cost - dm.cost) / (2 * step);
    r.active_set_changed[static_cast<std::size_t>(l)] =
        active_rows(fp.qp, dp.x) != active_rows(fm.qp, dm.x);
  }
  return r;
}

}  // namespace dadnn
