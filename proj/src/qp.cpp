#include "dadnn/qp.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "dadnn/errors.hpp"

namespace dadnn {

std::string_view to_string(QpStatus status) {
  switch (status) {
    case QpStatus::kOptimal: return "optimal";
    case QpStatus::kInfeasible: return "infeasible";
    case QpStatus::kNumericalFailure: break;
  }
  return "numerical_failure";
}

namespace {

using Index = Eigen::Index;

// Reduced, row-equilibrated and objective-scaled copy of the user problem.
// Original multipliers are recovered as lambda = eq_scale .* y / obj_scale.
struct Reduced {
  QpProblemd p;
  std::vector<Index> eq_rows;
  std::vector<Index> ineq_rows;
  Vec eq_scale;
  Vec ineq_scale;
  double obj_scale = 1.0;
  bool infeasible = false;
  std::string why;
};

Reduced reduce(const QpProblemd& in) {
  Reduced r;
  const Index n = in.num_vars();

  // Inequalities: drop rows with no coefficients; 0 <= h must hold for them.
  for (Index i = 0; i < in.num_ineq(); ++i) {
    const double norm = in.G.row(i).cwiseAbs().maxCoeff();
    if (norm == 0.0) {
      if (in.h(i) < 0) {
        r.infeasible = true;
        r.why = "empty inequality row with negative rhs";
      }
      continue;
    }
    r.ineq_rows.push_back(i);
  }

  // Equalities: drop empty rows, then keep a linearly independent subset.
  std::vector<Index> nonzero;
  for (Index i = 0; i < in.num_eq(); ++i) {
    const double norm = in.A.row(i).cwiseAbs().maxCoeff();
    if (norm == 0.0) {
      if (in.b(i) != 0.0) {
        r.infeasible = true;
        r.why = "empty equality row with nonzero rhs";
      }
      continue;
    }
    nonzero.push_back(i);
  }
  if (!nonzero.empty()) {
    Mat At(n, static_cast<Index>(nonzero.size()));
    for (std::size_t k = 0; k < nonzero.size(); ++k) {
      const Index i = nonzero[k];
      At.col(static_cast<Index>(k)) = in.A.row(i).transpose() / in.A.row(i).cwiseAbs().maxCoeff();
    }
    Eigen::ColPivHouseholderQR<Mat> qr(At);
    qr.setThreshold(1e-10);
    const Index rank = qr.rank();
    const auto& perm = qr.colsPermutation().indices();
    for (Index k = 0; k < rank; ++k) r.eq_rows.push_back(nonzero[static_cast<std::size_t>(perm(k))]);
    std::sort(r.eq_rows.begin(), r.eq_rows.end());

    // Dropped rows are combinations of kept ones; their rhs must agree.
    if (rank < static_cast<Index>(nonzero.size())) {
      Mat Ak(n, rank);
      Vec bk(rank);
      for (Index k = 0; k < rank; ++k) {
        const Index i = r.eq_rows[static_cast<std::size_t>(k)];
        Ak.col(k) = in.A.row(i).transpose();
        bk(k) = in.b(i);
      }
      const Eigen::ColPivHouseholderQR<Mat> kept(Ak);
      for (Index i : nonzero) {
        if (std::binary_search(r.eq_rows.begin(), r.eq_rows.end(), i)) continue;
        const Vec c = kept.solve(Vec(in.A.row(i).transpose()));
        const double scale = std::max(1.0, std::abs(in.b(i)) + c.cwiseAbs().dot(bk.cwiseAbs()));
        if (std::abs(in.b(i) - c.dot(bk)) > 1e-9 * scale) {
          r.infeasible = true;
          r.why = "dependent equality row " + std::to_string(i) + " has an inconsistent rhs";
        }
      }
    }
  }

  const auto me = static_cast<Index>(r.eq_rows.size());
  const auto mi = static_cast<Index>(r.ineq_rows.size());
  r.eq_scale.resize(me);
  r.ineq_scale.resize(mi);
  r.p.A.resize(me, n);
  r.p.b.resize(me);
  r.p.G.resize(mi, n);
  r.p.h.resize(mi);
  for (Index k = 0; k < me; ++k) {
    const Index i = r.eq_rows[static_cast<std::size_t>(k)];
    const double s = 1.0 / in.A.row(i).cwiseAbs().maxCoeff();
    r.eq_scale(k) = s;
    r.p.A.row(k) = in.A.row(i) * s;
    r.p.b(k) = in.b(i) * s;
  }
  for (Index k = 0; k < mi; ++k) {
    const Index i = r.ineq_rows[static_cast<std::size_t>(k)];
    const double s = 1.0 / in.G.row(i).cwiseAbs().maxCoeff();
    r.ineq_scale(k) = s;
    r.p.G.row(k) = in.G.row(i) * s;
    r.p.h(k) = in.h(i) * s;
  }
  double mag = 1.0;
  if (n > 0) {
    mag = std::max(mag, in.Q.cwiseAbs().maxCoeff());
    mag = std::max(mag, in.q.cwiseAbs().maxCoeff());
  }
  r.obj_scale = 1.0 / mag;
  r.p.Q = in.Q * r.obj_scale;
  r.p.q = in.q * r.obj_scale;
  return r;
}

struct Iterate {
  Vec x, y, z, s;
};

enum class CoreExit { kConverged, kStalled, kIterationCap, kSingular, kInfeasible };

struct CoreResult {
  Iterate it;
  CoreExit exit = CoreExit::kStalled;
  int iterations = 0;
};

// Largest step in (0, 1] keeping v + a*dv >= 0.
double max_step(const Vec& v, const Vec& dv) {
  double a = 1.0;
  for (Index i = 0; i < v.size(); ++i)
    if (dv(i) < 0) a = std::min(a, -v(i) / dv(i));
  return a;
}

using ConvergedFn = std::function<bool(const Iterate&)>;

// Interior-point iterations on a reduced problem (independent equality rows,
// no empty inequality rows). `converged` judges the iterate in caller units.
CoreResult ipm_core(const QpProblemd& p, int max_iter, double ridge, const ConvergedFn& converged) {
  const Index n = p.num_vars(), me = p.num_eq(), mi = p.num_ineq();
  CoreResult out;
  Iterate& it = out.it;

  Mat K = Mat::Zero(n + me, n + me);
  auto assemble = [&](const Mat& H) {
    K.topLeftCorner(n, n) = H;
    K.topLeftCorner(n, n).diagonal().array() += ridge;
    K.topRightCorner(n, me) = p.A.transpose();
    K.bottomLeftCorner(me, n) = p.A;
    K.bottomRightCorner(me, me).diagonal().setConstant(-1e-13);
  };

  // Initial point: least-squares projection onto the constraint set.
  {
    assemble(p.Q + p.G.transpose() * p.G);
    Eigen::PartialPivLU<Mat> lu(K);
    Vec rhs(n + me);
    rhs.head(n) = -p.q + p.G.transpose() * p.h;
    rhs.tail(me) = p.b;
    const Vec sol = lu.solve(rhs);
    if (!sol.allFinite()) {
      out.exit = CoreExit::kSingular;
      it.x = Vec::Zero(n);
      it.y = Vec::Zero(me);
      it.z = Vec::Ones(mi);
      it.s = Vec::Ones(mi);
      return out;
    }
    it.x = sol.head(n);
    it.y = sol.tail(me);
    it.s = p.h - p.G * it.x;
    it.z = -it.s;
    if (mi > 0) {
      const double ap = -it.s.minCoeff();
      if (ap >= -1e-8) it.s.array() += 1.0 + ap;
      const double ad = -it.z.minCoeff();
      if (ad >= -1e-8) it.z.array() += 1.0 + ad;
    }
  }

  if (mi == 0) {
    // Equality-constrained QP: one Newton step is exact.
    assemble(p.Q);
    Eigen::PartialPivLU<Mat> lu(K);
    Vec rhs(n + me);
    rhs.head(n) = -p.q;
    rhs.tail(me) = p.b;
    Vec sol = lu.solve(rhs);
    // One step of iterative refinement against the unregularized system.
    for (int r = 0; r < 2 && sol.allFinite(); ++r) {
      Vec res(n + me);
      res.head(n) = rhs.head(n) - p.Q * sol.head(n) - p.A.transpose() * sol.tail(me);
      res.tail(me) = rhs.tail(me) - p.A * sol.head(n);
      sol += lu.solve(res);
    }
    out.iterations = 1;
    if (!sol.allFinite()) {
      out.exit = CoreExit::kSingular;
      return out;
    }
    it.x = sol.head(n);
    it.y = sol.tail(me);
    out.exit = converged(it) ? CoreExit::kConverged : CoreExit::kStalled;
    return out;
  }

  int tiny_steps = 0;
  for (int k = 0; k < max_iter; ++k) {
    out.iterations = k;
    if (converged(it)) {
      out.exit = CoreExit::kConverged;
      return out;
    }
    const Vec rx = p.Q * it.x + p.q + p.A.transpose() * it.y + p.G.transpose() * it.z;
    const Vec ry = p.A * it.x - p.b;
    const Vec rz = p.G * it.x + it.s - p.h;
    const double mu = it.s.dot(it.z) / static_cast<double>(mi);

    // Diverging duals: test whether their direction certifies infeasibility,
    // i.e. A'y + G'z ~ 0 with b'y + h'z < 0 and z >= 0.
    const double dual_size = std::max(me > 0 ? it.y.cwiseAbs().maxCoeff() : 0.0, it.z.maxCoeff());
    if (dual_size > 1e4) {
      const Vec yh = it.y / dual_size, zh = it.z / dual_size;
      const double farkas = (p.A.transpose() * yh + p.G.transpose() * zh).cwiseAbs().maxCoeff();
      const double value = p.b.dot(yh) + p.h.dot(zh);
      if (farkas <= 1e-9 && value < -1e-6) {
        out.exit = CoreExit::kInfeasible;
        return out;
      }
    }

    if (it.z.maxCoeff() > 1e13 || it.x.cwiseAbs().maxCoeff() > 1e13) {
      out.exit = CoreExit::kStalled;
      return out;
    }

    const Vec w = it.z.cwiseQuotient(it.s);
    assemble(p.Q + p.G.transpose() * w.asDiagonal() * p.G);
    Eigen::PartialPivLU<Mat> lu(K);

    auto direction = [&](const Vec& rc, Vec& dx, Vec& dy, Vec& dz, Vec& ds) {
      Vec rhs(n + me);
      rhs.head(n) = -rx - p.G.transpose() * (w.cwiseProduct(rz) - rc.cwiseQuotient(it.s));
      rhs.tail(me) = -ry;
      const Vec sol = lu.solve(rhs);
      dx = sol.head(n);
      dy = sol.tail(me);
      dz = w.cwiseProduct(p.G * dx + rz) - rc.cwiseQuotient(it.s);
      ds = (-rc - it.s.cwiseProduct(dz)).cwiseQuotient(it.z);
      return sol.allFinite();
    };

    Vec dx, dy, dz, ds;
    const Vec rc_aff = it.s.cwiseProduct(it.z);
    if (!direction(rc_aff, dx, dy, dz, ds)) {
      out.exit = CoreExit::kSingular;
      return out;
    }
    const double a_aff = std::min(max_step(it.s, ds), max_step(it.z, dz));
    const double mu_aff =
        (it.s + a_aff * ds).dot(it.z + a_aff * dz) / static_cast<double>(mi);
    const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);

    const Vec rc = rc_aff + ds.cwiseProduct(dz) - Vec::Constant(mi, sigma * mu);
    if (!direction(rc, dx, dy, dz, ds)) {
      out.exit = CoreExit::kSingular;
      return out;
    }
    const double a = std::min(1.0, 0.99 * std::min(max_step(it.s, ds), max_step(it.z, dz)));
    it.x += a * dx;
    it.y += a * dy;
    it.z += a * dz;
    it.s += a * ds;
    // Keep strictly interior in floating point.
    it.s = it.s.cwiseMax(1e-300);
    it.z = it.z.cwiseMax(1e-300);

    tiny_steps = a < 1e-10 ? tiny_steps + 1 : 0;
    if (tiny_steps >= 3) {
      out.exit = CoreExit::kStalled;
      return out;
    }
  }
  out.iterations = max_iter;
  out.exit = converged(it) ? CoreExit::kConverged : CoreExit::kIterationCap;
  return out;
}

// Minimum total constraint violation of the reduced problem (0 iff feasible).
// Returns NaN when the auxiliary problem itself cannot be solved.
double phase_one_violation(const QpProblemd& p, int max_iter) {
  const Index n = p.num_vars(), me = p.num_eq(), mi = p.num_ineq();
  const Index nv = n + 1 + 2 * me;  // x, t, u, v
  QpProblemd aux;
  aux.Q = Mat::Zero(nv, nv);
  aux.q = Vec::Zero(nv);
  aux.q(n) = 1.0;
  aux.q.tail(2 * me).setOnes();
  aux.A = Mat::Zero(me, nv);
  aux.A.leftCols(n) = p.A;
  aux.A.block(0, n + 1, me, me) = Mat::Identity(me, me);
  aux.A.block(0, n + 1 + me, me, me) = -Mat::Identity(me, me);
  aux.b = p.b;
  aux.G = Mat::Zero(mi + 1 + 2 * me, nv);
  aux.h = Vec::Zero(mi + 1 + 2 * me);
  aux.G.topLeftCorner(mi, n) = p.G;
  aux.G.block(0, n, mi, 1).setConstant(-1.0);
  aux.h.head(mi) = p.h;
  aux.G(mi, n) = -1.0;
  for (Index k = 0; k < 2 * me; ++k) aux.G(mi + 1 + k, n + 1 + k) = -1.0;

  auto conv = [&](const Iterate& it) {
    const Vec rx = aux.Q * it.x + aux.q + aux.A.transpose() * it.y + aux.G.transpose() * it.z;
    const double gap = it.s.dot(it.z);
    double pres = (aux.G * it.x - aux.h).maxCoeff();
    if (me > 0) pres = std::max(pres, (aux.A * it.x - aux.b).cwiseAbs().maxCoeff());
    return rx.cwiseAbs().maxCoeff() < 1e-9 && gap < 1e-10 && pres < 1e-9;
  };
  const CoreResult res = ipm_core(aux, max_iter, 1e-10, conv);
  if (res.exit != CoreExit::kConverged && res.exit != CoreExit::kIterationCap)
    return std::numeric_limits<double>::quiet_NaN();
  return aux.q.dot(res.it.x);
}

// Re-solves the KKT system with the identified active set as equalities.
bool polish(const QpProblemd& p, Iterate& it) {
  const Index n = p.num_vars(), me = p.num_eq(), mi = p.num_ineq();
  std::vector<Index> active;
  for (Index i = 0; i < mi; ++i)
    if (it.z(i) > it.s(i)) active.push_back(i);
  const auto na = static_cast<Index>(active.size());
  const Index dim = n + me + na;

  Mat K = Mat::Zero(dim, dim);
  Vec rhs = Vec::Zero(dim);
  K.topLeftCorner(n, n) = p.Q;
  K.block(0, n, n, me) = p.A.transpose();
  K.block(n, 0, me, n) = p.A;
  rhs.head(n) = -p.q;
  rhs.segment(n, me) = p.b;
  for (Index k = 0; k < na; ++k) {
    const Index i = active[static_cast<std::size_t>(k)];
    K.block(0, n + me + k, n, 1) = p.G.row(i).transpose();
    K.block(n + me + k, 0, 1, n) = p.G.row(i);
    rhs(n + me + k) = p.h(i);
  }
  Eigen::FullPivLU<Mat> lu(K);
  lu.setThreshold(1e-12);
  Vec sol;
  if (lu.isInvertible()) {
    sol = lu.solve(rhs);
  } else {
    sol = Eigen::CompleteOrthogonalDecomposition<Mat>(K).solve(rhs);
  }
  for (int r = 0; r < 2 && sol.allFinite(); ++r) {
    const Vec res = rhs - K * sol;
    sol += lu.isInvertible() ? Vec(lu.solve(res))
                             : Vec(Eigen::CompleteOrthogonalDecomposition<Mat>(K).solve(res));
  }
  if (!sol.allFinite()) return false;
  if ((K * sol - rhs).cwiseAbs().maxCoeff() > 1e-9) return false;

  Iterate cand;
  cand.x = sol.head(n);
  cand.y = sol.segment(n, me);
  cand.z = Vec::Zero(mi);
  for (Index k = 0; k < na; ++k) cand.z(active[static_cast<std::size_t>(k)]) = sol(n + me + k);
  if (mi > 0 && cand.z.minCoeff() < -1e-10) return false;
  cand.z = cand.z.cwiseMax(0.0);
  cand.s = (p.h - p.G * cand.x);
  if (mi > 0 && cand.s.minCoeff() < -1e-10) return false;
  cand.s = cand.s.cwiseMax(0.0);
  it = std::move(cand);
  return true;
}

}  // namespace

QpSolutiond solve_qp(const QpProblemd& problem, const QpSettings& settings) {
  const Index n = problem.num_vars();
  if (problem.Q.rows() != n || problem.Q.cols() != n)
    throw ContractError("solve_qp: Q must be n x n");
  if (problem.A.cols() != n && problem.num_eq() > 0) throw ContractError("solve_qp: A has wrong width");
  if (problem.A.rows() != problem.num_eq()) throw ContractError("solve_qp: A rows != len(b)");
  if (problem.G.cols() != n && problem.num_ineq() > 0) throw ContractError("solve_qp: G has wrong width");
  if (problem.G.rows() != problem.num_ineq()) throw ContractError("solve_qp: G rows != len(h)");
  if (n > 0 && (problem.Q - problem.Q.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw ContractError("solve_qp: Q must be symmetric");
  if (!(settings.tol > 0 && settings.tol <= 1e-2)) throw ContractError("solve_qp: tol out of range");

  QpSolutiond sol;
  sol.x = Vec::Zero(n);
  sol.lambda = Vec::Zero(problem.num_eq());
  sol.mu = Vec::Zero(problem.num_ineq());

  Reduced red = reduce(problem);
  if (red.infeasible) {
    sol.status = QpStatus::kInfeasible;
    sol.diagnostics = red.why;
    return sol;
  }

  auto expand = [&](const Iterate& it, QpSolutiond& out) {
    out.x = it.x;
    out.lambda.setZero();
    out.mu.setZero();
    for (std::size_t k = 0; k < red.eq_rows.size(); ++k)
      out.lambda(red.eq_rows[k]) = it.y(static_cast<Index>(k)) * red.eq_scale(static_cast<Index>(k)) / red.obj_scale;
    for (std::size_t k = 0; k < red.ineq_rows.size(); ++k)
      out.mu(red.ineq_rows[k]) = it.z(static_cast<Index>(k)) * red.ineq_scale(static_cast<Index>(k)) / red.obj_scale;
  };

  QpSolutiond scratch = sol;
  auto residual_of = [&](const Iterate& it) {
    expand(it, scratch);
    return kkt_residuals(problem, scratch).max();
  };
  auto converged = [&](const Iterate& it) { return residual_of(it) <= settings.tol; };

  CoreResult core = ipm_core(red.p, settings.max_iter, 0.0, converged);
  sol.iterations = core.iterations;
  if (core.exit == CoreExit::kInfeasible) {
    expand(core.it, sol);
    sol.kkt_residual = kkt_residuals(problem, sol).max();
    sol.status = QpStatus::kInfeasible;
    sol.diagnostics = "dual iterates approach a Farkas certificate";
    return sol;
  }

  bool ok = core.exit == CoreExit::kConverged;
  if (settings.polish && (ok || core.exit == CoreExit::kStalled || core.exit == CoreExit::kIterationCap) &&
      red.p.num_ineq() > 0) {
    Iterate candidate = core.it;
    if (polish(red.p, candidate)) {
      const double before = residual_of(core.it);
      const double after = residual_of(candidate);
      if (after <= settings.tol && after <= before) {
        core.it = std::move(candidate);
        sol.polished = true;
        ok = true;
      }
    }
  }

  if (ok) {
    expand(core.it, sol);
    const auto res = kkt_residuals(problem, sol);
    sol.kkt_residual = res.max();
    sol.objective = problem.objective(sol.x);
    sol.status = QpStatus::kOptimal;
    return sol;
  }

  // Distinguish infeasibility from numerical trouble with a phase-one solve.
  expand(core.it, sol);
  sol.kkt_residual = kkt_residuals(problem, sol).max();
  const double viol = phase_one_violation(red.p, settings.max_iter);
  if (std::isfinite(viol) && viol > 1e-6) {
    sol.status = QpStatus::kInfeasible;
    sol.diagnostics = "phase-one minimum violation " + std::to_string(viol);
  } else {
    sol.status = QpStatus::kNumericalFailure;
    const auto r = kkt_residuals(problem, sol);
    sol.diagnostics = "no convergence after " + std::to_string(core.iterations) +
                      " iterations; residuals stat=" + std::to_string(r.stationarity) +
                      " eq=" + std::to_string(r.primal_eq) + " ineq=" + std::to_string(r.primal_ineq) +
                      " comp=" + std::to_string(r.complementarity);
  }
  return sol;
}

nlohmann::json qp_to_json(const QpProblemd& p) {
  auto mat = [](const Mat& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Index r = 0; r < m.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(m.cols()));
      for (Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
      rows.push_back(row);
    }
    return rows;
  };
  auto vec = [](const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"Q", mat(p.Q)}, {"q", vec(p.q)}, {"A", mat(p.A)}, {"b", vec(p.b)},
          {"G", mat(p.G)}, {"h", vec(p.h)}, {"objective_offset", p.objective_offset}};
}

}  // namespace dadnn
