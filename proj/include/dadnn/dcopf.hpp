#pragma once

#include <vector>

#include <json.hpp>

#include "dadnn/case_model.hpp"
#include "dadnn/qp.hpp"

namespace dadnn {

enum class SwitchMode { kRelaxed, kBinary };

/// Line status vector. Relaxed values lie in [0, 1]; binary values in {0, 1}.
struct SwitchVector {
  Vec values;
  SwitchMode mode = SwitchMode::kBinary;

  static SwitchVector ones(int n_line) { return {Vec::Ones(n_line), SwitchMode::kBinary}; }
  static SwitchVector binary(Vec v);
  static SwitchVector relaxed(Vec v);

  Eigen::Index size() const { return values.size(); }
  bool closed(int line) const { return values(line) >= 0.5; }
  std::vector<bool> closed_mask() const;
  int num_open() const;
};

/// How relaxed line limits depend on z. kScaled multiplies both the flow
/// operator and the rating by z; kUnscaled keeps the rating at its nominal value.
enum class LimitForm { kScaled, kUnscaled };

struct OpfOptions {
  LimitForm limit_form = LimitForm::kScaled;
  QpSettings qp;
};

/// Row and column bookkeeping of a built OPF. Rows are -1 when dropped.
struct OpfIndexMap {
  int n_gen = 0;
  int n_theta = 0;
  std::vector<int> theta_col;         // bus -> column of theta in x, -1 for slack
  std::vector<int> line_upper_row;    // z b C theta <= limit
  std::vector<int> line_lower_row;    // -z b C theta <= limit
  std::vector<int> gen_upper_row;
  std::vector<int> gen_lower_row;
  std::vector<int> angle_upper_row;   // per bus, -1 for slack
  std::vector<int> angle_lower_row;

  int theta_offset() const { return n_gen; }
};

struct OpfFormulation {
  QpProblemd qp;
  OpfIndexMap map;
  SwitchVector z;
  LimitForm limit_form = LimitForm::kScaled;
};

OpfFormulation build_opf(const GridCase& grid, const Vec& pd, const SwitchVector& z,
                         LimitForm form = LimitForm::kScaled);

struct Dispatch {
  Vec pg;
  Vec theta;  // all buses, slack at 0; zeros when theta_applicable is false
  Vec flow;   // per line, z-masked
  double cost = 0.0;
  Vec x;
  Vec lambda;
  Vec mu;
  QpStatus status = QpStatus::kNumericalFailure;
  double kkt_residual = 0.0;
  bool theta_applicable = true;
  std::string diagnostics;

  bool optimal() const { return status == QpStatus::kOptimal; }
};

Dispatch solve_dcopf(const GridCase& grid, const Vec& pd, const SwitchVector& z,
                     const OpfOptions& options = {});

/// Solves an already built formulation.
Dispatch solve_formulation(const GridCase& grid, const OpfFormulation& f, const QpSettings& qp = {});

/// Network-free dispatch: sum(pg) = sum(pd) and generator bounds only.
Dispatch solve_ed(const GridCase& grid, const Vec& pd, const QpSettings& qp = {});

double generation_cost(const GridCase& grid, const Vec& pg);

/// dC/dpg = 2 c2 pg + c1.
Vec marginal_cost(const GridCase& grid, const Vec& pg);

struct ViolationReport {
  double max_eq_violation = 0.0;
  double max_ineq_violation = 0.0;
  bool violated = false;
  double balance = 0.0;
  double line = 0.0;
  double gen = 0.0;
  double angle = 0.0;
  Vec balance_residual;  // per bus: M pg - pd - C' diag(z b) C theta
};

ViolationReport check_feasibility(const GridCase& grid, const Vec& pd, const SwitchVector& z,
                                  const Dispatch& dispatch, double audit_tol = 1e-6);

nlohmann::json to_json(const Dispatch& d);
nlohmann::json to_json(const ViolationReport& r);

}  // namespace dadnn
