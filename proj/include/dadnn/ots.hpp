#pragma once

#include <optional>
#include <ostream>
#include <string_view>
#include <utility>
#include <vector>

#include "dadnn/dcopf.hpp"

namespace dadnn {

enum class OtsOptimality { kProved, kGapLimited, kTimeLimited, kInfeasible };

std::string_view to_string(OtsOptimality o);

struct TracePoint {
  double elapsed_s = 0.0;
  double cost = 0.0;
};

struct OtsResult {
  SwitchVector z_star;
  Dispatch dispatch;
  double objective = 0.0;
  OtsOptimality optimality = OtsOptimality::kInfeasible;
  double bound = 0.0;
  std::vector<TracePoint> incumbent_trace;
  long nodes = 0;       // topologies (enumeration) or tree nodes (branch and bound)
  long opf_solves = 0;
  double elapsed_s = 0.0;

  bool feasible() const { return optimality != OtsOptimality::kInfeasible; }
};

/// Exhaustive search over the switchable lines (all lines when empty). Among
/// equal-cost topologies, prefers more closed lines, then the lexicographically
/// smallest set of open lines.
OtsResult enumerate_ots(const GridCase& grid, const Vec& pd,
                        const std::optional<std::vector<int>>& switchable = std::nullopt,
                        const QpSettings& qp = {});

struct BnbOptions {
  double mip_gap = 1e-5;
  double time_limit = 60.0;
  QpSettings qp;
};

/// Best-first branch and bound over z with the big-M MILP relaxation at each node.
OtsResult branch_and_bound_ots(const GridCase& grid, const Vec& pd, const BnbOptions& options = {});

/// The big-M constant of each line: b * (theta_max[from] + theta_max[to]).
Vec big_m(const GridCase& grid);

/// Node relaxation with z_l fixed where lo_l == hi_l and free in [0, 1] otherwise.
/// Variables: (pg, theta without slack, flow of free lines, z of free lines).
struct NodeRelaxation {
  QpProblemd qp;
  std::vector<int> free_lines;
  int z_offset = 0;
};

NodeRelaxation build_node_relaxation(const GridCase& grid, const Vec& pd, const std::vector<int>& fixed);

void write_trace_csv(std::ostream& os, const std::vector<TracePoint>& trace);

}  // namespace dadnn
