#include "dadnn/dcopf.hpp"

#include <algorithm>
#include <cmath>

#include "dadnn/errors.hpp"

namespace dadnn {

SwitchVector SwitchVector::binary(Vec v) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (v(i) != 0.0 && v(i) != 1.0) throw ContractError("binary switch vector must be 0/1");
  return {std::move(v), SwitchMode::kBinary};
}

SwitchVector SwitchVector::relaxed(Vec v) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (!(v(i) >= 0.0 && v(i) <= 1.0)) throw ContractError("relaxed switch value outside [0, 1]");
  return {std::move(v), SwitchMode::kRelaxed};
}

std::vector<bool> SwitchVector::closed_mask() const {
  std::vector<bool> out(static_cast<std::size_t>(values.size()));
  for (Eigen::Index i = 0; i < values.size(); ++i) out[static_cast<std::size_t>(i)] = values(i) >= 0.5;
  return out;
}

int SwitchVector::num_open() const {
  return static_cast<int>((values.array() < 0.5).count());
}

namespace {

void check_inputs(const GridCase& g, const Vec& pd, const SwitchVector& z) {
  if (pd.size() != g.n_bus) throw ContractError("pd length must equal the number of buses");
  if (z.size() != g.n_line) throw ContractError("z length must equal the number of lines");
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double v = z.values(i);
    if (z.mode == SwitchMode::kBinary && v != 0.0 && v != 1.0)
      throw ContractError("binary switch vector must be 0/1");
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError("switch value outside [0, 1]");
  }
}

}  // namespace

double generation_cost(const GridCase& g, const Vec& pg) {
  if (pg.size() != g.n_gen) throw ContractError("pg length must equal the number of generators");
  const Mat& c = g.cost_coeffs;
  return (c.col(0).array() * pg.array().square() + c.col(1).array() * pg.array() + c.col(2).array()).sum();
}

Vec marginal_cost(const GridCase& g, const Vec& pg) {
  return 2.0 * g.cost_coeffs.col(0).cwiseProduct(pg) + g.cost_coeffs.col(1);
}

OpfFormulation build_opf(const GridCase& g, const Vec& pd, const SwitchVector& z, LimitForm form) {
  check_inputs(g, pd, z);
  const int ng = g.n_gen, nb = g.n_bus, nl = g.n_line;
  const int nt = nb - 1;
  const int n = ng + nt;

  OpfFormulation f;
  f.z = z;
  f.limit_form = form;
  OpfIndexMap& m = f.map;
  m.n_gen = ng;
  m.n_theta = nt;
  m.theta_col.assign(static_cast<std::size_t>(nb), -1);
  Mat Cr(nl, nt);
  for (int i = 0, col = 0; i < nb; ++i) {
    if (i == g.slack_index) continue;
    m.theta_col[static_cast<std::size_t>(i)] = ng + col;
    Cr.col(col) = g.branch_incidence.col(i);
    ++col;
  }

  // flow = diag(z b) C_r theta
  const Vec zb = z.values.cwiseProduct(g.susceptance);
  const Mat F = zb.asDiagonal() * Cr;

  QpProblemd& p = f.qp;
  p.Q = Mat::Zero(n, n);
  p.Q.topLeftCorner(ng, ng).diagonal() = 2.0 * g.cost_coeffs.col(0);
  p.q = Vec::Zero(n);
  p.q.head(ng) = g.cost_coeffs.col(1);
  p.objective_offset = g.cost_coeffs.col(2).sum();

  p.A.resize(nb, n);
  p.A.leftCols(ng) = g.gen_incidence;
  p.A.rightCols(nt) = -g.branch_incidence.transpose() * F;
  p.b = pd;

  std::vector<int> kept;
  for (int l = 0; l < nl; ++l)
    if (z.mode == SwitchMode::kRelaxed || z.values(l) != 0.0) kept.push_back(l);
  const int nk = static_cast<int>(kept.size());
  const int mi = 2 * nk + 2 * ng + 2 * nt;
  p.G = Mat::Zero(mi, n);
  p.h = Vec::Zero(mi);
  m.line_upper_row.assign(static_cast<std::size_t>(nl), -1);
  m.line_lower_row.assign(static_cast<std::size_t>(nl), -1);
  int row = 0;
  for (int l : kept) {
    const double s = form == LimitForm::kScaled ? z.values(l) : 1.0;
    m.line_upper_row[static_cast<std::size_t>(l)] = row;
    p.G.block(row, ng, 1, nt) = F.row(l);
    p.h(row++) = s * g.line_flow_max(l);
  }
  for (int l : kept) {
    const double s = form == LimitForm::kScaled ? z.values(l) : 1.0;
    m.line_lower_row[static_cast<std::size_t>(l)] = row;
    p.G.block(row, ng, 1, nt) = -F.row(l);
    p.h(row++) = -s * g.line_flow_min(l);
  }
  m.gen_upper_row.resize(static_cast<std::size_t>(ng));
  m.gen_lower_row.resize(static_cast<std::size_t>(ng));
  for (int k = 0; k < ng; ++k) {
    m.gen_upper_row[static_cast<std::size_t>(k)] = row;
    p.G(row, k) = 1.0;
    p.h(row++) = g.pg_max(k);
  }
  for (int k = 0; k < ng; ++k) {
    m.gen_lower_row[static_cast<std::size_t>(k)] = row;
    p.G(row, k) = -1.0;
    p.h(row++) = -g.pg_min(k);
  }
  m.angle_upper_row.assign(static_cast<std::size_t>(nb), -1);
  m.angle_lower_row.assign(static_cast<std::size_t>(nb), -1);
  for (int i = 0; i < nb; ++i) {
    const int c = m.theta_col[static_cast<std::size_t>(i)];
    if (c < 0) continue;
    m.angle_upper_row[static_cast<std::size_t>(i)] = row;
    p.G(row, c) = 1.0;
    p.h(row++) = g.theta_max(i);
  }
  for (int i = 0; i < nb; ++i) {
    const int c = m.theta_col[static_cast<std::size_t>(i)];
    if (c < 0) continue;
    m.angle_lower_row[static_cast<std::size_t>(i)] = row;
    p.G(row, c) = -1.0;
    p.h(row++) = -g.theta_min(i);
  }
  return f;
}

Dispatch solve_formulation(const GridCase& g, const OpfFormulation& f, const QpSettings& qp) {
  const QpSolutiond s = solve_qp(f.qp, qp);
  Dispatch d;
  d.status = s.status;
  d.kkt_residual = s.kkt_residual;
  d.diagnostics = s.diagnostics;
  d.x = s.x;
  d.lambda = s.lambda;
  d.mu = s.mu;
  d.pg = s.x.head(g.n_gen);
  d.theta = Vec::Zero(g.n_bus);
  for (int i = 0; i < g.n_bus; ++i) {
    const int c = f.map.theta_col[static_cast<std::size_t>(i)];
    if (c >= 0) d.theta(i) = s.x(c);
  }
  d.flow = f.z.values.cwiseProduct(g.susceptance).cwiseProduct(g.branch_incidence * d.theta);
  d.cost = generation_cost(g, d.pg);
  return d;
}

Dispatch solve_dcopf(const GridCase& g, const Vec& pd, const SwitchVector& z, const OpfOptions& options) {
  return solve_formulation(g, build_opf(g, pd, z, options.limit_form), options.qp);
}

Dispatch solve_ed(const GridCase& g, const Vec& pd, const QpSettings& settings) {
  if (pd.size() != g.n_bus) throw ContractError("pd length must equal the number of buses");
  const int ng = g.n_gen;
  Dispatch d;
  d.theta_applicable = false;
  d.theta = Vec::Zero(g.n_bus);
  d.flow = Vec::Zero(g.n_line);
  d.pg = Vec::Zero(ng);
  d.x = d.pg;
  d.lambda = Vec::Zero(1);
  d.mu = Vec::Zero(2 * ng);

  const double total = pd.sum();
  if (total > g.pg_max.sum() || total < g.pg_min.sum()) {
    d.status = QpStatus::kInfeasible;
    d.diagnostics = "total demand outside aggregate generator capability";
    d.cost = generation_cost(g, d.pg);
    return d;
  }

  QpProblemd p;
  p.Q = Mat::Zero(ng, ng);
  p.Q.diagonal() = 2.0 * g.cost_coeffs.col(0);
  p.q = g.cost_coeffs.col(1);
  p.objective_offset = g.cost_coeffs.col(2).sum();
  p.A = Mat::Ones(1, ng);
  p.b = Vec::Constant(1, total);
  p.G.resize(2 * ng, ng);
  p.G << Mat::Identity(ng, ng), -Mat::Identity(ng, ng);
  p.h.resize(2 * ng);
  p.h << g.pg_max, -g.pg_min;

  const QpSolutiond s = solve_qp(p, settings);
  d.status = s.status;
  d.kkt_residual = s.kkt_residual;
  d.diagnostics = s.diagnostics;
  d.pg = s.x;
  d.x = s.x;
  d.lambda = s.lambda;
  d.mu = s.mu;
  d.cost = generation_cost(g, d.pg);
  return d;
}

ViolationReport check_feasibility(const GridCase& g, const Vec& pd, const SwitchVector& z,
                                  const Dispatch& d, double audit_tol) {
  check_inputs(g, pd, z);
  if (z.mode != SwitchMode::kBinary) throw ContractError("feasibility audit needs a binary topology");
  if (d.pg.size() != g.n_gen || d.theta.size() != g.n_bus)
    throw ContractError("dispatch dimensions do not match the case");

  ViolationReport r;
  const Vec flow = z.values.cwiseProduct(g.susceptance).cwiseProduct(g.branch_incidence * d.theta);
  r.balance_residual = g.gen_incidence * d.pg - pd - g.branch_incidence.transpose() * flow;
  r.balance = r.balance_residual.cwiseAbs().maxCoeff();

  auto over = [](const Vec& v, const Vec& lo, const Vec& hi) {
    if (v.size() == 0) return 0.0;
    return std::max({0.0, (v - hi).maxCoeff(), (lo - v).maxCoeff()});
  };
  r.line = over(flow, g.line_flow_min, g.line_flow_max);
  r.gen = over(d.pg, g.pg_min, g.pg_max);
  r.angle = over(d.theta, g.theta_min, g.theta_max);

  r.max_eq_violation = r.balance;
  r.max_ineq_violation = std::max({r.line, r.gen, r.angle});
  const bool finite = d.pg.allFinite() && d.theta.allFinite();
  r.violated = !finite || r.max_eq_violation > audit_tol || r.max_ineq_violation > audit_tol;
  return r;
}

namespace {
std::vector<double> as_vector(const Vec& v) { return {v.data(), v.data() + v.size()}; }
}  // namespace

nlohmann::json to_json(const Dispatch& d) {
  return {{"status", std::string(to_string(d.status))},
          {"cost", d.cost},
          {"pg", as_vector(d.pg)},
          {"theta", d.theta_applicable ? nlohmann::json(as_vector(d.theta)) : nlohmann::json()},
          {"flow", as_vector(d.flow)},
          {"kkt_residual", d.kkt_residual}};
}

nlohmann::json to_json(const ViolationReport& r) {
  return {{"violated", r.violated},
          {"max_eq_violation", r.max_eq_violation},
          {"max_ineq_violation", r.max_ineq_violation},
          {"balance", r.balance},
          {"line", r.line},
          {"gen", r.gen},
          {"angle", r.angle}};
}

}  // namespace dadnn
