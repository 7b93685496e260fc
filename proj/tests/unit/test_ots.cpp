#include <doctest.h>

#include <random>
#include <sstream>

#include "dadnn/errors.hpp"
#include "dadnn/ots.hpp"

using namespace dadnn;

namespace {

std::string data_path(const char* name) { return std::string(DADNN_DATA_DIR) + "/" + name; }

Vec random_load(const GridCase& g, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vec pd = g.base_demand;
  for (int i = 0; i < g.n_bus; ++i) pd(i) *= u(rng);
  return pd;
}

}  // namespace

TEST_CASE("big-M uses the widest angle difference") {
  const auto g = load_case(data_path("triangle3.m"));
  const Vec m = big_m(g);
  CHECK(m(0) == doctest::Approx(10 * (0.0 + 0.6)));  // 1-2, bus 1 is slack
  CHECK(m(1) == doctest::Approx(10 * 1.2));
  CHECK(m(2) == doctest::Approx(10 * 0.6));
}

TEST_CASE("triangle3 enumeration opens line 1-3") {
  const auto g = load_case(data_path("triangle3.m"));
  const auto r = enumerate_ots(g, g.base_demand);
  REQUIRE(r.feasible());
  CHECK(r.optimality == OtsOptimality::kProved);
  CHECK(r.objective == doctest::Approx(1000.0).epsilon(1e-9));
  CHECK(r.z_star.values == (Vec(3) << 1, 1, 0).finished());
  CHECK(r.nodes <= 8);
  CHECK_FALSE(check_feasibility(g, g.base_demand, r.z_star, r.dispatch).violated);
}

TEST_CASE("empty switchable set reduces to the all-closed OPF") {
  const auto g = load_case(data_path("triangle3.m"));
  const auto r = enumerate_ots(g, g.base_demand, std::vector<int>{});
  const auto d = solve_dcopf(g, g.base_demand, SwitchVector::ones(3));
  CHECK(r.objective == doctest::Approx(d.cost).epsilon(1e-12));
  CHECK(r.z_star.values == Vec::Ones(3));
  CHECK(r.nodes == 1);
}

TEST_CASE("uncongested network keeps every line closed") {
  const auto g = load_case(data_path("triangle3.m")).with_line_limit_scale(10.0);
  const auto r = enumerate_ots(g, g.base_demand);
  const auto d = solve_dcopf(g, g.base_demand, SwitchVector::ones(3));
  CHECK(r.z_star.values == Vec::Ones(3));
  CHECK(r.objective == doctest::Approx(d.cost).epsilon(1e-9));
  const auto b = branch_and_bound_ots(g, g.base_demand);
  CHECK(b.objective == doctest::Approx(d.cost).epsilon(1e-9));
}

TEST_CASE("switchable index validation") {
  const auto g = load_case(data_path("triangle3.m"));
  CHECK_THROWS_AS(enumerate_ots(g, g.base_demand, std::vector<int>{3}), ContractError);
  CHECK_THROWS_AS(branch_and_bound_ots(g, g.base_demand, {0.0, 1.0, {}}), ContractError);
  CHECK_THROWS_AS(branch_and_bound_ots(g, g.base_demand, {1e-5, 0.0, {}}), ContractError);
}

TEST_CASE("branch and bound on triangle3") {
  const auto g = load_case(data_path("triangle3.m"));
  SUBCASE("proves the enumeration optimum") {
    const auto r = branch_and_bound_ots(g, g.base_demand);
    REQUIRE(r.feasible());
    CHECK(r.objective == doctest::Approx(1000.0).epsilon(1e-9));
    CHECK(r.z_star.values == (Vec(3) << 1, 1, 0).finished());
    CHECK(r.optimality != OtsOptimality::kTimeLimited);
    CHECK(r.bound <= r.objective + 1e-9);
  }
  SUBCASE("gap of one stops at the first incumbent") {
    const auto r = branch_and_bound_ots(g, g.base_demand, {1.0, 60.0, {}});
    CHECK(r.optimality == OtsOptimality::kGapLimited);
    CHECK(r.incumbent_trace.size() == 1);
  }
  SUBCASE("vanishing time limit returns the root incumbent") {
    const auto r = branch_and_bound_ots(g, g.base_demand, {1e-5, 1e-12, {}});
    CHECK(r.optimality == OtsOptimality::kTimeLimited);
    CHECK(r.objective == doctest::Approx(1800.0).epsilon(1e-9));
  }
  SUBCASE("demand above total capacity is infeasible") {
    GridCase h = g;
    h.pg_max.setConstant(0.4);  // total capacity below demand
    CHECK(branch_and_bound_ots(h, h.base_demand).optimality == OtsOptimality::kInfeasible);
    CHECK(enumerate_ots(h, h.base_demand).optimality == OtsOptimality::kInfeasible);
  }
}

TEST_CASE("node relaxation with every line fixed closed is the plain OPF") {
  const auto g = load_case(data_path("case5_6.m"));
  const auto rel = build_node_relaxation(g, g.base_demand, std::vector<int>(6, 1));
  CHECK(rel.free_lines.empty());
  const auto s = solve_qp(rel.qp);
  const auto d = solve_dcopf(g, g.base_demand, SwitchVector::ones(6));
  REQUIRE(s.optimal());
  CHECK(s.objective == doctest::Approx(d.cost).epsilon(1e-8));
}

TEST_CASE("branch and bound agrees with enumeration on random loads") {
  for (const char* name : {"triangle3.m", "case5_6.m", "case8_12.m"}) {
    CAPTURE(name);
    const auto g = load_case(data_path(name));
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 8; ++trial) {
      const Vec pd = random_load(g, rng, 0.95, 1.1);
      const auto e = enumerate_ots(g, pd);
      const auto b = branch_and_bound_ots(g, pd);
      REQUIRE(e.feasible() == b.feasible());
      if (!e.feasible()) continue;
      CHECK(std::abs(e.objective - b.objective) <= 1e-6 * std::abs(e.objective));

      const auto opf = solve_dcopf(g, pd, SwitchVector::ones(g.n_line));
      const auto ed = solve_ed(g, pd);
      if (opf.optimal()) CHECK(e.objective <= opf.cost + 1e-9 * opf.cost);
      CHECK(ed.cost <= e.objective + 1e-7 * e.objective);
      CHECK_FALSE(check_feasibility(g, pd, b.z_star, b.dispatch).violated);

      for (std::size_t k = 1; k < b.incumbent_trace.size(); ++k) {
        CHECK(b.incumbent_trace[k].cost <= b.incumbent_trace[k - 1].cost);
        CHECK(b.incumbent_trace[k].elapsed_s >= b.incumbent_trace[k - 1].elapsed_s);
      }
    }
  }
}

TEST_CASE("trace csv") {
  std::ostringstream os;
  write_trace_csv(os, {{0.5, 10.0}, {1.0, 9.0}});
  CHECK(os.str().rfind("elapsed_s,cost\n", 0) == 0);
  CHECK(os.str().find("\n1,9\n") != std::string::npos);
}
