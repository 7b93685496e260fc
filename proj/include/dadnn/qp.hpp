#pragma once

#include <string>
#include <string_view>

#include <json.hpp>

#include "dadnn/types.hpp"

namespace dadnn {

/// min 1/2 x'Qx + q'x  s.t.  A x = b,  G x <= h.
template <class Scalar>
struct QpProblem {
  Matrix<Scalar> Q;
  Vector<Scalar> q;
  Matrix<Scalar> A;
  Vector<Scalar> b;
  Matrix<Scalar> G;
  Vector<Scalar> h;
  Scalar objective_offset = Scalar(0);

  Eigen::Index num_vars() const { return q.size(); }
  Eigen::Index num_eq() const { return b.size(); }
  Eigen::Index num_ineq() const { return h.size(); }

  Scalar objective(const Vector<Scalar>& x) const {
    return Scalar(0.5) * x.dot(Q * x) + q.dot(x) + objective_offset;
  }
};

enum class QpStatus { kOptimal, kInfeasible, kNumericalFailure };

std::string_view to_string(QpStatus status);

template <class Scalar>
struct KktResiduals {
  Scalar stationarity = 0;     // ||Qx + q + A'lambda + G'mu||_inf
  Scalar primal_eq = 0;        // ||Ax - b||_inf
  Scalar primal_ineq = 0;      // max(0, max(Gx - h))
  Scalar complementarity = 0;  // max |mu_i (Gx - h)_i|
  Scalar dual_sign = 0;        // max(0, -min mu)

  Scalar max() const {
    using std::max;
    return max(max(max(stationarity, primal_eq), max(primal_ineq, complementarity)), dual_sign);
  }
};

template <class Scalar>
struct QpSolution {
  Vector<Scalar> x;
  Vector<Scalar> lambda;
  Vector<Scalar> mu;
  QpStatus status = QpStatus::kNumericalFailure;
  Scalar kkt_residual = 0;
  Scalar objective = 0;
  int iterations = 0;
  bool polished = false;
  std::string diagnostics;

  bool optimal() const { return status == QpStatus::kOptimal; }
};

struct QpSettings {
  double tol = 1e-8;
  int max_iter = 200;
  // After the interior-point phase, re-solve the KKT system on the identified
  // active set and keep the result when it is primal/dual feasible.
  bool polish = true;
};

using QpProblemd = QpProblem<double>;
using QpSolutiond = QpSolution<double>;

/// Residuals recomputed from the raw problem data only.
template <class Scalar>
KktResiduals<Scalar> kkt_residuals(const QpProblem<Scalar>& p, const Vector<Scalar>& x,
                                   const Vector<Scalar>& lambda, const Vector<Scalar>& mu) {
  KktResiduals<Scalar> r;
  Vector<Scalar> grad = p.Q * x + p.q;
  if (p.num_eq() > 0) grad.noalias() += p.A.transpose() * lambda;
  if (p.num_ineq() > 0) grad.noalias() += p.G.transpose() * mu;
  r.stationarity = grad.size() ? grad.cwiseAbs().maxCoeff() : Scalar(0);
  if (p.num_eq() > 0) r.primal_eq = (p.A * x - p.b).cwiseAbs().maxCoeff();
  if (p.num_ineq() > 0) {
    const Vector<Scalar> slack = p.G * x - p.h;
    r.primal_ineq = std::max(Scalar(0), slack.maxCoeff());
    r.complementarity = mu.cwiseProduct(slack).cwiseAbs().maxCoeff();
    r.dual_sign = std::max(Scalar(0), -mu.minCoeff());
  }
  return r;
}

template <class Scalar>
KktResiduals<Scalar> kkt_residuals(const QpProblem<Scalar>& p, const QpSolution<Scalar>& s) {
  return kkt_residuals(p, s.x, s.lambda, s.mu);
}

/// Dense primal-dual interior-point method (Mehrotra predictor-corrector).
QpSolutiond solve_qp(const QpProblemd& problem, const QpSettings& settings = {});

inline QpSolutiond solve_qp(const QpProblemd& problem, double tol, int max_iter) {
  QpSettings s;
  s.tol = tol;
  s.max_iter = max_iter;
  return solve_qp(problem, s);
}

/// Debug dump of (Q, q, A, b, G, h).
nlohmann::json qp_to_json(const QpProblemd& problem);

}  // namespace dadnn
