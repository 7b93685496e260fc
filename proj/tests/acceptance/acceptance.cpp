// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>

#include "dadnn/diffgrad.hpp"
#include "dadnn/pipeline.hpp"

using namespace dadnn;

namespace {

using Clock = std::chrono::steady_clock;

std::string data_path(const char* name) { return std::string(DADNN_DATA_DIR) + "/" + name; }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-12); }

Dataset scenarios(const GridCase& g, int count, double lo, double hi, std::uint64_t seed) {
  auto oracle = [&](const Vec& pd) { return solve_dcopf(g, pd, SwitchVector::ones(g.n_line)).optimal(); };
  return generate_dataset(g, count, lo, hi, seed, oracle);
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(v.size());
}

TrainConfig reference_config(std::uint64_t seed) {
  TrainConfig c;
  c.epochs = 40;
  c.batch_size = 50;
  c.lr = 5e-5;
  c.weight_decay = 1e-2;
  c.hidden_dim = 128;
  c.dropout = 0.1;
  c.seed = seed;
  return c;
}

// Shared by criteria 5, 6 and 8: the triangle3 model trained on loads in [1.00, 1.10].
struct Triangle3Run {
  GridCase grid;
  Dataset data;
  TrainResult trained;
};

const Triangle3Run& triangle3_run() {
  static const Triangle3Run run = [] {
    Triangle3Run r;
    r.grid = load_case(data_path("triangle3.m"));
    r.data = split_dataset(scenarios(r.grid, 200, 1.0, 1.1, 501), {}, 502);
    r.trained = train(r.grid, r.data, reference_config(503));
    return r;
  }();
  return run;
}

// ---------------------------------------------------------------------------

Outcome exact_oracle() {
  const auto g = load_case(data_path("triangle3.m"));
  const Vec pd = g.base_demand;
  const auto ots = enumerate_ots(g, pd);
  const auto opf = solve_dcopf(g, pd, SwitchVector::ones(3));
  const auto bnb = branch_and_bound_ots(g, pd);

  // Hand algebra: equal susceptances, so the 1-3 flow is (2 P1 + P2) / 3 and
  // the 1-2 and 2-3 flows are (P1 - P2) / 3 and (P1 + 2 P2) / 3 (MW).
  double best = std::numeric_limits<double>::infinity(), best_p1 = -1;
  for (int k = 0; k <= 1000; ++k) {
    const double p1 = 0.1 * k, p2 = 100.0 - p1;
    const bool ok = (2 * p1 + p2) / 3 <= 60.0 + 1e-9 && std::abs(p1 - p2) / 3 <= 100.0 &&
                    std::abs(p1 + 2 * p2) / 3 <= 100.0;
    const double cost = 10 * p1 + 50 * p2;
    if (ok && cost < best) {
      best = cost;
      best_p1 = p1;
    }
  }
  const double mva = g.base_mva;
  const bool ots_ok = ots.optimality == OtsOptimality::kProved && std::abs(ots.objective - 1000.0) <= 1e-6 &&
                      ots.z_star.num_open() == 1 && !ots.z_star.closed(2);
  const bool opf_ok = opf.optimal() && std::abs(opf.cost - 1800.0) <= 1e-6 &&
                      std::abs(opf.pg(0) * mva - 80.0) <= 1e-6 && std::abs(opf.pg(1) * mva - 20.0) <= 1e-6 &&
                      std::abs(opf.flow(2) * mva - (2 * 80.0 + 20.0) / 3) <= 1e-6;
  const bool grid_ok = std::abs(best - 1800.0) <= 1e-6 && std::abs(best_p1 - 80.0) <= 1e-9;
  const bool bnb_ok = bnb.feasible() && rel(bnb.objective, ots.objective) <= 1e-6;
  return {ots_ok && opf_ok && grid_ok && bnb_ok,
          fmt("OTS %.6f $/h opening line %d, DC-OPF %.6f $/h at (%.4f, %.4f) MW, grid search %.1f at P1 = %.1f, "
              "B&B %.6f",
              ots.objective, ots.z_star.closed(2) ? -1 : 2, opf.cost, opf.pg(0) * mva, opf.pg(1) * mva, best, best_p1,
              bnb.objective)};
}

Outcome bnb_matches_enumeration() {
  double worst = 0.0;
  int compared = 0;
  bool all_feasible = true;
  for (const char* name : {"triangle3.m", "case8_12.m"}) {
    const auto g = load_case(data_path(name));
    const auto ds = scenarios(g, 50, 0.9, 1.1, 601);
    for (const auto& s : ds.scenarios) {
      const auto e = enumerate_ots(g, s.pd);
      const auto b = branch_and_bound_ots(g, s.pd);
      all_feasible = all_feasible && e.feasible() && b.feasible();
      worst = std::max(worst, rel(b.objective, e.objective));
      ++compared;
    }
  }
  return {all_feasible && compared == 100 && worst <= 1e-6,
          fmt("%d loads, worst relative objective gap %.3g", compared, worst)};
}

Outcome initialization_contract() {
  double worst_z = 0.0, worst_cost = 0.0;
  int n = 0;
  Rng rng(701);
  std::normal_distribution<double> nd(0.0, 1e3);
  for (const char* name : {"triangle3.m", "case8_12.m"}) {
    const auto g = load_case(data_path(name));
    const auto model = init_network(g.n_bus, 128, g.n_line, 702);
    // Arbitrary inputs, far outside any load range.
    for (int t = 0; t < 20; ++t) {
      Vec x(g.n_bus);
      for (int i = 0; i < g.n_bus; ++i) x(i) = nd(rng);
      const Vec z = forward(model, x, ForwardMode::kEval).output;
      worst_z = std::max(worst_z, (z.array() - sigmoid(9.0)).abs().maxCoeff());
    }
    for (const auto& s : scenarios(g, 50, 0.9, 1.1, 703).scenarios) {
      const Vec z = forward(model, s.pd, ForwardMode::kEval).output;
      const auto relaxed = solve_dcopf(g, s.pd, SwitchVector::relaxed(z));
      const auto opf = solve_dcopf(g, s.pd, SwitchVector::ones(g.n_line));
      worst_cost = std::max(worst_cost, relaxed.optimal() ? rel(relaxed.cost, opf.cost) : 1.0);
      ++n;
    }
  }
  const double s9 = 0.999876605424013768;  // logistic(9) from a 30-digit evaluation
  const bool sigma_ok = std::abs(sigmoid(9.0) - s9) <= 1e-15;
  return {sigma_ok && worst_z <= 1e-15 && n == 100 && worst_cost <= 1e-3,
          fmt("sigma(9) = %.16f, max |z - sigma(9)| = %.2g, worst relaxed/DC-OPF cost gap %.3g over %d scenarios",
              sigmoid(9.0), worst_z, worst_cost, n)};
}

Outcome gradient_fidelity() {
  std::ostringstream d;
  bool pass = true;
  for (const char* name : {"triangle3.m", "case8_12.m"}) {
    const auto g = load_case(data_path(name));
    const auto ds = scenarios(g, 100, 1.0, 1.1, 801);
    const auto rows = gradient_check(g, ds.scenarios, 100, 1e-5, 802);
    int excluded = 0, failed = 0;
    double worst = 0.0;
    for (const auto& r : rows) {
      if (r.excluded) {
        ++excluded;
        continue;
      }
      worst = std::max(worst, r.rel_err);
      failed += r.rel_err > 1e-4;
    }
    const int n = static_cast<int>(rows.size());
    pass = pass && n == 100 && failed == 0 && n - excluded >= 90;
    d << g.case_id << ": " << n << " pairs, " << excluded << " excluded, worst rel err " << worst << "; ";
  }
  return {pass, d.str()};
}

Outcome end_to_end_learning() {
  const auto& run = triangle3_run();
  const auto test = run.data.with_tag(SplitTag::kTest);
  std::vector<double> dnn, ots, opf;
  for (const auto& s : test) {
    const auto r = infer(run.trained.params, run.grid, s.pd);
    dnn.push_back(r.flagged_infeasible ? std::numeric_limits<double>::infinity() : r.dispatch.cost);
    ots.push_back(enumerate_ots(run.grid, s.pd).objective);
    opf.push_back(solve_dcopf(run.grid, s.pd, SwitchVector::ones(run.grid.n_line)).cost);
  }
  const double m_dnn = mean(dnn), m_ots = mean(ots), m_opf = mean(opf);
  const bool near_ots = m_dnn <= m_ots * 1.01;
  const bool saves = m_dnn <= 0.8 * m_opf;
  return {near_ots && saves,
          fmt("test mean %.4f $/h vs OTS %.4f (%s 1%%) and DC-OPF %.4f (saving %.2f%%, needs 20%%); best epoch %d",
              m_dnn, m_ots, near_ots ? "within" : "outside", m_opf, 100 * (1 - m_dnn / m_opf), run.trained.best_epoch)};
}

Outcome feasibility_guarantee() {
  const auto& run = triangle3_run();
  int pass = 0, flagged = 0, silent = 0;
  const auto test = run.data.with_tag(SplitTag::kTest);
  for (const auto& s : test) {
    const auto r = infer(run.trained.params, run.grid, s.pd);
    if (r.flagged_infeasible) {
      ++flagged;
    } else if (check_feasibility(run.grid, s.pd, r.z_bar, r.dispatch).violated) {
      ++silent;
    } else {
      ++pass;
    }
  }
  return {silent == 0 && flagged == 0 && pass == static_cast<int>(test.size()),
          fmt("%d of %zu audited feasible at 1e-6, %d flagged, %d silent violations", pass, test.size(), flagged,
              silent)};
}

Outcome non_binding_regime() {
  const auto g = load_case(data_path("triangle3.m")).with_line_limit_scale(10.0);
  const auto ds = split_dataset(scenarios(g, 200, 1.0, 1.1, 901), {}, 902);
  const auto trained = train(g, ds, reference_config(903));
  const auto test = ds.with_tag(SplitTag::kTest);
  const auto ev = evaluate(&trained.params, g, test, parse_methods("ed,opf,ots-enum,dadnn"));
  double worst = 0.0;
  for (const auto& r : ev.rows) worst = std::max(worst, rel(r.avg_cost_k, ev.rows[0].avg_cost_k));
  int switched = 0;
  for (const auto& r : ev.details)
    if (r.method == Method::kDadnn && r.lines_open > 0) ++switched;
  const bool all_feasible = std::all_of(ev.rows.begin(), ev.rows.end(), [](const BenchRow& r) { return r.infeasible == 0; });
  return {all_feasible && worst <= 1e-4 && switched == 0,
          fmt("ED %.6f, DC-OPF %.6f, OTS %.6f, DA-DNN %.6f $1k/h (worst rel diff %.2g); %d DA-DNN topologies open a line",
              ev.rows[0].avg_cost_k, ev.rows[1].avg_cost_k, ev.rows[2].avg_cost_k, ev.rows[3].avg_cost_k, worst,
              switched)};
}

Outcome limit_sweep() {
  const auto& run = triangle3_run();
  const std::vector<double> scales{0.90, 0.95, 1.00, 1.10, 1.20, 1.30};
  const auto methods = parse_methods("ed,opf,ots-enum,dadnn");
  const auto before = model_to_json(run.trained.params);
  const auto rows = sweep_line_limits(&run.trained.params, run.grid, run.data.with_tag(SplitTag::kTest), scales, methods);
  const bool untouched = model_to_json(run.trained.params) == before;
  const std::size_t nm = methods.size();
  bool below_opf = true, monotone = true, feasible = true;
  std::ostringstream d;
  for (std::size_t s = 0; s < scales.size(); ++s) {
    const auto& opf = rows[s * nm + 1].row;
    const auto& dnn = rows[s * nm + 3].row;
    below_opf = below_opf && dnn.avg_cost_k <= opf.avg_cost_k * (1 + 1e-9);
    for (std::size_t m = 0; m < nm; ++m) {
      const auto& r = rows[s * nm + m].row;
      feasible = feasible && r.infeasible == 0 && r.eq_viol_pct == 0.0 && r.ineq_viol_pct == 0.0;
      if (s > 0) monotone = monotone && r.avg_cost_k <= rows[(s - 1) * nm + m].row.avg_cost_k * (1 + 1e-9);
    }
    d << scales[s] << ": " << opf.avg_cost_k << "/" << dnn.avg_cost_k << " ";
  }
  return {below_opf && monotone && feasible && untouched,
          fmt("DA-DNN <= DC-OPF %s, non-increasing %s, all feasible %s, model unchanged %s; DC-OPF/DA-DNN $1k/h by "
              "scale: %s",
              below_opf ? "yes" : "no", monotone ? "yes" : "no", feasible ? "yes" : "no", untouched ? "yes" : "no",
              d.str().c_str())};
}

Outcome random_init_failure() {
  const auto g = load_case(data_path("case8_12.m")).with_line_limit_scale(0.8);
  const auto ds = split_dataset(scenarios(g, 200, 0.9, 1.1, 1001), {}, 1002);
  auto first_epoch_rate = [&](InitMode mode) {
    auto cfg = reference_config(1003);
    cfg.epochs = 1;
    cfg.init = mode;
    cfg.abort_on_skip = false;
    const auto r = train(g, ds, cfg);
    return static_cast<double>(r.curve[1].skipped) / r.curve[1].samples;
  };
  const double manual = first_epoch_rate(InitMode::kManual);
  const double random = first_epoch_rate(InitMode::kRandom);
  const auto h_manual = init_histogram(init_network(g.n_bus, 128, g.n_line, 1004), ds.scenarios, 50);
  const auto h_random = init_histogram(init_network(g.n_bus, 128, g.n_line, 1004, InitMode::kRandom), ds.scenarios, 50);
  return {random > manual && h_random.occupied() > 3 && h_manual.occupied() == 1,
          fmt("first-epoch skip rate %.1f%% random vs %.1f%% manual; occupied bins %d random vs %d manual",
              100 * random, 100 * manual, h_random.occupied(), h_manual.occupied())};
}

Outcome timing_contract() {
  const auto g = load_case(data_path("case8_12.m"));
  const auto ds = split_dataset(scenarios(g, 600, 0.9, 1.1, 1101), {0.1, 0.067, 0.833}, 1102);
  auto cfg = reference_config(1103);
  const auto trained = train(g, ds, cfg);
  std::vector<LoadScenario> pool = ds.with_tag(SplitTag::kTest);
  pool.resize(std::min<std::size_t>(pool.size(), 500));

  // Each scenario is timed as the best of three runs so that scheduler
  // preemption on a shared core does not masquerade as solver variance.
  auto best_of = [](auto&& once) {
    double t = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 3; ++k) t = std::min(t, once());
    return t;
  };
  for (int i = 0; i < 20; ++i) (void)infer(trained.params, g, pool[static_cast<std::size_t>(i)].pd);  // warm caches
  std::vector<double> t;
  for (const auto& s : pool) t.push_back(best_of([&] { return infer(trained.params, g, s.pd).seconds; }));
  const double m = mean(t);
  double var = 0.0;
  for (double x : t) var += (x - m) * (x - m);
  const double cv = std::sqrt(var / static_cast<double>(t.size())) / m;

  std::vector<double> b;
  for (std::size_t i = 0; i < 50; ++i) b.push_back(best_of([&] { return branch_and_bound_ots(g, pool[i].pd).elapsed_s; }));
  const double ratio = *std::max_element(b.begin(), b.end()) / *std::min_element(b.begin(), b.end());
  return {t.size() == 500 && cv < 0.5 && ratio >= 10.0,
          fmt("DA-DNN %zu scenarios mean %.1f us, CV %.3f; B&B over 50 scenarios %.2f ms to %.2f ms (%.1fx)", t.size(),
              1e6 * m, cv, 1e3 * *std::min_element(b.begin(), b.end()), 1e3 * *std::max_element(b.begin(), b.end()),
              ratio)};
}

}  // namespace

int main() {
  constexpr double kNoBudget = std::numeric_limits<double>::infinity();
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "exact-solver oracle", 1.0, exact_oracle},
      {2, "branch and bound matches enumeration", 120.0, bnb_matches_enumeration},
      {3, "initialization contract", 30.0, initialization_contract},
      {4, "gradient fidelity", 300.0, gradient_fidelity},
      {5, "end-to-end learning", 900.0, end_to_end_learning},
      {6, "feasibility guarantee", kNoBudget, feasibility_guarantee},
      {7, "non-binding regime", kNoBudget, non_binding_regime},
      {8, "untrained-limit sweep", 300.0, limit_sweep},
      {9, "random-init failure mode", kNoBudget, random_init_failure},
      {10, "timing contract", kNoBudget, timing_contract},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    const bool in_time = secs < c.budget_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << o.detail << " ["
              << (std::isinf(c.budget_s) ? fmt("%.2f s", secs) : fmt("%.2f s of %.0f s", secs, c.budget_s)) << (in_time ? "" : ", over budget") << "]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
