#pragma once

#include <vector>

#include "dadnn/dcopf.hpp"

namespace dadnn {

/// Linearized KKT system in complementarity form. Rows are
/// [stationarity (n); equality (m_e); mu_i (Gx - h)_i (m_i)], columns of J_x
/// are (x, lambda, mu).
struct KktSystem {
  Mat J_x;
  Mat J_z;
  int n = 0;
  int m_eq = 0;
  int m_ineq = 0;
  int n_param = 0;
};

struct SensitivityResult {
  Mat dx_dz;  // n x n_param
  double condition_estimate = 0.0;
  bool regularized = false;
  bool ok = false;
};

/// Generic assembly for a solved QP; J_z is supplied by the caller.
KktSystem build_kkt_system(const QpProblemd& p, const Vec& x, const Vec& lambda, const Vec& mu,
                           Mat J_z);

/// Residual vector I of the complementarity-form KKT conditions.
Vec kkt_residual_vector(const QpProblemd& p, const Vec& x, const Vec& lambda, const Vec& mu);

/// KKT Jacobians of the z-parameterized OPF at an optimal dispatch.
KktSystem build_kkt_jacobians(const GridCase& grid, const OpfFormulation& f, const Dispatch& d);

/// Solves J_x S = -J_z; falls back to a 1e-8 diagonal shift when the
/// (row-equilibrated) system has condition estimate above 1e12.
SensitivityResult solve_sensitivity(const KktSystem& kkt);

/// dC/dz = (2 c2 pg + c1)' dpg/dz.
Vec loss_grad_wrt_z(const GridCase& grid, const Dispatch& d, const SensitivityResult& s);

/// Relaxed OPF solve plus its cost gradient in one call.
struct CostGradient {
  Dispatch dispatch;
  Vec grad;
  bool ok = false;
  bool regularized = false;
};

CostGradient relaxed_cost_gradient(const GridCase& grid, const Vec& pd, const Vec& z,
                                   const OpfOptions& options = {});

struct FiniteDiffResult {
  Vec grad;
  std::vector<bool> reliable;             // both perturbed solves optimal
  std::vector<bool> active_set_changed;   // plus and minus solves bind different rows
};

/// Central differences of the relaxed OPF cost, 2 N_l solves.
FiniteDiffResult finite_diff_grad(const GridCase& grid, const Vec& pd, const Vec& z, double step,
                                  const OpfOptions& options = {});

/// Inequality rows whose slack is below tol (scaled by the row's rhs magnitude).
std::vector<int> active_rows(const QpProblemd& p, const Vec& x, double tol = 1e-7);

}  // namespace dadnn
