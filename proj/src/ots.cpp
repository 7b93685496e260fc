#include "dadnn/ots.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <queue>
#include <set>

#include "dadnn/errors.hpp"

namespace dadnn {

std::string_view to_string(OtsOptimality o) {
  switch (o) {
    case OtsOptimality::kProved: return "proved";
    case OtsOptimality::kGapLimited: return "gap_limited";
    case OtsOptimality::kTimeLimited: return "time_limited";
    case OtsOptimality::kInfeasible: break;
  }
  return "infeasible";
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<int> open_lines(const Vec& z) {
  std::vector<int> out;
  for (Eigen::Index l = 0; l < z.size(); ++l)
    if (z(l) < 0.5) out.push_back(static_cast<int>(l));
  return out;
}

// Strict preference between two feasible topologies.
bool preferred(double cost_a, const std::vector<int>& open_a, double cost_b,
               const std::vector<int>& open_b) {
  const double tol = 1e-7 * std::max(1.0, std::abs(cost_b));
  if (cost_a < cost_b - tol) return true;
  if (cost_a > cost_b + tol) return false;
  if (open_a.size() != open_b.size()) return open_a.size() < open_b.size();
  return open_a < open_b;
}

}  // namespace

Vec big_m(const GridCase& g) {
  Vec m(g.n_line);
  for (int l = 0; l < g.n_line; ++l) {
    const int f = g.line_from[static_cast<std::size_t>(l)];
    const int t = g.line_to[static_cast<std::size_t>(l)];
    m(l) = g.susceptance(l) * (g.theta_max(f) - g.theta_min(t));
  }
  return m;
}

OtsResult enumerate_ots(const GridCase& g, const Vec& pd, const std::optional<std::vector<int>>& switchable,
                        const QpSettings& qp) {
  if (pd.size() != g.n_bus) throw ContractError("pd length must equal the number of buses");
  std::vector<int> lines;
  if (switchable) {
    lines = *switchable;
    for (int l : lines)
      if (l < 0 || l >= g.n_line) throw ContractError("switchable line index out of range");
  } else {
    for (int l = 0; l < g.n_line; ++l) lines.push_back(l);
  }
  if (lines.size() > 20) throw ContractError("enumeration supports at most 20 switchable lines");

  const auto t0 = Clock::now();
  OtsResult best;
  best.z_star = SwitchVector::ones(g.n_line);
  bool found = false;
  std::vector<int> best_open;

  const std::uint64_t count = std::uint64_t{1} << lines.size();
  for (std::uint64_t mask = 0; mask < count; ++mask) {
    Vec zv = Vec::Ones(g.n_line);
    for (std::size_t j = 0; j < lines.size(); ++j)
      if (mask >> j & 1U) zv(lines[j]) = 0.0;
    const auto z = SwitchVector::binary(zv);
    if (!serves_all_load(g, pd, z.closed_mask())) continue;
    ++best.nodes;
    ++best.opf_solves;
    Dispatch d = solve_dcopf(g, pd, z, {LimitForm::kScaled, qp});
    if (!d.optimal()) continue;
    const auto open = open_lines(zv);
    if (!found || preferred(d.cost, open, best.objective, best_open)) {
      found = true;
      best.objective = d.cost;
      best.z_star = z;
      best.dispatch = std::move(d);
      best_open = open;
      best.incumbent_trace.push_back({seconds_since(t0), best.objective});
    }
  }
  best.elapsed_s = seconds_since(t0);
  if (!found) {
    best.optimality = OtsOptimality::kInfeasible;
    best.incumbent_trace.clear();
    return best;
  }
  // Ties replace the incumbent without lowering cost; keep the trace monotone.
  std::vector<TracePoint> trace;
  for (const auto& p : best.incumbent_trace)
    if (trace.empty() || p.cost < trace.back().cost) trace.push_back(p);
  best.incumbent_trace = std::move(trace);
  best.optimality = OtsOptimality::kProved;
  best.bound = best.objective;
  return best;
}

NodeRelaxation build_node_relaxation(const GridCase& g, const Vec& pd, const std::vector<int>& fixed) {
  if (static_cast<int>(fixed.size()) != g.n_line) throw ContractError("fixed vector length");
  const int ng = g.n_gen, nb = g.n_bus, nt = nb - 1;

  NodeRelaxation r;
  std::vector<int> closed;
  for (int l = 0; l < g.n_line; ++l) {
    if (fixed[static_cast<std::size_t>(l)] < 0) r.free_lines.push_back(l);
    if (fixed[static_cast<std::size_t>(l)] == 1) closed.push_back(l);
  }
  const int nf = static_cast<int>(r.free_lines.size());
  const int nc = static_cast<int>(closed.size());
  const int n = ng + nt + 2 * nf;
  const int f0 = ng + nt;
  r.z_offset = f0 + nf;

  Mat Cr(g.n_line, nt);
  for (int i = 0, col = 0; i < nb; ++i)
    if (i != g.slack_index) Cr.col(col++) = g.branch_incidence.col(i);
  const Vec M = big_m(g);

  QpProblemd& p = r.qp;
  p.Q = Mat::Zero(n, n);
  p.Q.topLeftCorner(ng, ng).diagonal() = 2.0 * g.cost_coeffs.col(0);
  p.q = Vec::Zero(n);
  p.q.head(ng) = g.cost_coeffs.col(1);
  p.objective_offset = g.cost_coeffs.col(2).sum();

  // M pg - C' flow = pd
  p.A = Mat::Zero(nb, n);
  p.A.leftCols(ng) = g.gen_incidence;
  for (int l : closed)
    p.A.middleCols(ng, nt) -= g.branch_incidence.row(l).transpose() * (g.susceptance(l) * Cr.row(l));
  for (int k = 0; k < nf; ++k) p.A.col(f0 + k) = -g.branch_incidence.row(r.free_lines[k]).transpose();
  p.b = pd;

  const int mi = 2 * nc + 6 * nf + 2 * ng + 2 * nt;
  p.G = Mat::Zero(mi, n);
  p.h = Vec::Zero(mi);
  int row = 0;
  for (int l : closed) {
    p.G.block(row, ng, 1, nt) = g.susceptance(l) * Cr.row(l);
    p.h(row++) = g.line_flow_max(l);
    p.G.block(row, ng, 1, nt) = -g.susceptance(l) * Cr.row(l);
    p.h(row++) = -g.line_flow_min(l);
  }
  for (int k = 0; k < nf; ++k) {
    const int l = r.free_lines[static_cast<std::size_t>(k)];
    const int fc = f0 + k, zc = r.z_offset + k;
    // f <= fmax z,  -f <= -fmin z
    p.G(row, fc) = 1.0;
    p.G(row++, zc) = -g.line_flow_max(l);
    p.G(row, fc) = -1.0;
    p.G(row++, zc) = g.line_flow_min(l);
    // |f - b C theta| <= M (1 - z)
    p.G(row, fc) = 1.0;
    p.G.block(row, ng, 1, nt) = -g.susceptance(l) * Cr.row(l);
    p.G(row, zc) = M(l);
    p.h(row++) = M(l);
    p.G(row, fc) = -1.0;
    p.G.block(row, ng, 1, nt) = g.susceptance(l) * Cr.row(l);
    p.G(row, zc) = M(l);
    p.h(row++) = M(l);
    // 0 <= z <= 1
    p.G(row, zc) = 1.0;
    p.h(row++) = 1.0;
    p.G(row++, zc) = -1.0;
  }
  for (int k = 0; k < ng; ++k) {
    p.G(row, k) = 1.0;
    p.h(row++) = g.pg_max(k);
    p.G(row, k) = -1.0;
    p.h(row++) = -g.pg_min(k);
  }
  for (int i = 0, col = ng; i < nb; ++i) {
    if (i == g.slack_index) continue;
    p.G(row, col) = 1.0;
    p.h(row++) = g.theta_max(i);
    p.G(row, col) = -1.0;
    p.h(row++) = -g.theta_min(i);
    ++col;
  }
  return r;
}

namespace {

struct Node {
  std::vector<int> fixed;
  double lower = 0.0;
  int depth = 0;
  long seq = 0;
};

struct NodeOrder {
  bool operator()(const Node& a, const Node& b) const {
    if (a.lower != b.lower) return a.lower > b.lower;
    if (a.depth != b.depth) return a.depth < b.depth;
    return a.seq > b.seq;
  }
};

}  // namespace

OtsResult branch_and_bound_ots(const GridCase& g, const Vec& pd, const BnbOptions& opt) {
  if (pd.size() != g.n_bus) throw ContractError("pd length must equal the number of buses");
  if (!(opt.mip_gap > 0 && opt.mip_gap < 1 + 1e-12)) throw ContractError("mip_gap must lie in (0, 1]");
  if (!(opt.time_limit > 0)) throw ContractError("time_limit must be positive");

  const auto t0 = Clock::now();
  OtsResult res;
  res.z_star = SwitchVector::ones(g.n_line);
  bool have_incumbent = false;
  std::set<std::vector<int>> tried;

  auto try_topology = [&](const Vec& zv) {
    const auto open = open_lines(zv);
    if (!tried.insert(open).second) return;
    const auto z = SwitchVector::binary(zv);
    if (!serves_all_load(g, pd, z.closed_mask())) return;
    ++res.opf_solves;
    Dispatch d = solve_dcopf(g, pd, z, {LimitForm::kScaled, opt.qp});
    if (!d.optimal()) return;
    if (!have_incumbent || preferred(d.cost, open, res.objective, open_lines(res.z_star.values))) {
      const bool improved = !have_incumbent || d.cost < res.objective;
      have_incumbent = true;
      res.objective = d.cost;
      res.z_star = z;
      res.dispatch = std::move(d);
      if (improved) res.incumbent_trace.push_back({seconds_since(t0), res.objective});
    }
  };

  auto gap_closed = [&](double lower) {
    return have_incumbent &&
           res.objective - lower <= opt.mip_gap * std::max(std::abs(res.objective), 1e-10);
  };

  // Economic dispatch bounds every topology from below.
  double global_lower = -std::numeric_limits<double>::infinity();
  {
    const Dispatch ed = solve_ed(g, pd, opt.qp);
    if (ed.status == QpStatus::kInfeasible) {
      res.optimality = OtsOptimality::kInfeasible;
      res.elapsed_s = seconds_since(t0);
      return res;
    }
    if (ed.optimal()) global_lower = ed.cost;
  }
  try_topology(Vec::Ones(g.n_line));

  std::priority_queue<Node, std::vector<Node>, NodeOrder> open;
  long seq = 0;
  open.push({std::vector<int>(static_cast<std::size_t>(g.n_line), -1), global_lower, 0, seq++});
  bool root = true;

  auto finish = [&](OtsOptimality o, double bound) {
    res.optimality = have_incumbent ? o : OtsOptimality::kInfeasible;
    res.bound = std::min(bound, have_incumbent ? res.objective : bound);
    res.elapsed_s = seconds_since(t0);
    return res;
  };

  while (!open.empty()) {
    global_lower = std::max(global_lower, open.top().lower);
    if (gap_closed(global_lower)) return finish(OtsOptimality::kGapLimited, global_lower);
    if (seconds_since(t0) >= opt.time_limit) return finish(OtsOptimality::kTimeLimited, global_lower);

    Node node = open.top();
    open.pop();
    if (have_incumbent && node.lower >= res.objective) continue;

    std::vector<bool> closed(static_cast<std::size_t>(g.n_line));
    for (int l = 0; l < g.n_line; ++l) closed[static_cast<std::size_t>(l)] = node.fixed[static_cast<std::size_t>(l)] != 0;
    if (!serves_all_load(g, pd, closed)) continue;

    ++res.nodes;
    const NodeRelaxation rel = build_node_relaxation(g, pd, node.fixed);
    const QpSolutiond s = solve_qp(rel.qp, opt.qp);
    if (s.status == QpStatus::kInfeasible) {
      if (root) {
        res.optimality = OtsOptimality::kInfeasible;
        res.elapsed_s = seconds_since(t0);
        return res;
      }
      continue;
    }
    root = false;

    const auto nf = static_cast<int>(rel.free_lines.size());
    double lower = node.lower;
    int branch = -1;
    if (s.optimal()) {
      lower = std::max(lower, s.objective);
      if (have_incumbent && lower >= res.objective) continue;
      // Rounding heuristic on the relaxed switch values.
      Vec zv(g.n_line);
      double most = -1.0;
      for (int l = 0; l < g.n_line; ++l) zv(l) = node.fixed[static_cast<std::size_t>(l)];
      for (int k = 0; k < nf; ++k) {
        const double v = s.x(rel.z_offset + k);
        zv(rel.free_lines[static_cast<std::size_t>(k)]) = v >= 0.5 ? 1.0 : 0.0;
        const double frac = std::min(v, 1.0 - v);
        if (frac > 1e-6 && frac > most) {
          most = frac;
          branch = rel.free_lines[static_cast<std::size_t>(k)];
        }
      }
      try_topology(zv);
      if (branch < 0) continue;  // integral relaxation: this node is solved
    } else if (nf > 0) {
      branch = rel.free_lines.front();
    } else {
      continue;
    }

    for (int v : {1, 0}) {
      Node child{node.fixed, lower, node.depth + 1, seq++};
      child.fixed[static_cast<std::size_t>(branch)] = v;
      if (nf == 1) {
        // Leaf: evaluate directly.
        Vec zv(g.n_line);
        for (int l = 0; l < g.n_line; ++l) zv(l) = child.fixed[static_cast<std::size_t>(l)];
        try_topology(zv);
        continue;
      }
      open.push(std::move(child));
    }
  }
  return finish(OtsOptimality::kProved, have_incumbent ? res.objective : global_lower);
}

void write_trace_csv(std::ostream& os, const std::vector<TracePoint>& trace) {
  os << "elapsed_s,cost\n";
  os.precision(17);
  for (const auto& p : trace) os << p.elapsed_s << ',' << p.cost << '\n';
}

}  // namespace dadnn
