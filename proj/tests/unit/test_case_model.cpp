#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "dadnn/case_model.hpp"
#include "dadnn/errors.hpp"

using namespace dadnn;

namespace {

const std::string kTwoBus = R"(function mpc = two
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0  0 0 0 1 1 0 230 1 1.1 0.9;
  2 1 50 0 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 10 -10 1 100 1 100 0;
];
mpc.branch = [
  1 2 0 0.1 0 80 80 80 0 0 1;
];
mpc.gencost = [
  2 0 0 2 10 0;
];
)";

std::string data_path(const char* name) { return std::string(DADNN_DATA_DIR) + "/" + name; }

}  // namespace

TEST_CASE("parse minimal two-bus case") {
  const auto raw = parse_matpower(kTwoBus);
  CHECK(raw.name == "two");
  CHECK(raw.base_mva == 100.0);
  CHECK(raw.bus.rows() == 2);
  CHECK(raw.branch.rows() == 1);
  CHECK(raw.gen.rows() == 1);
}

TEST_CASE("missing gencost block is a structural error naming the block") {
  std::string text = kTwoBus.substr(0, kTwoBus.find("mpc.gencost"));
  try {
    parse_matpower(text);
    FAIL("expected StructuralError");
  } catch (const StructuralError& e) {
    CHECK(std::string(e.what()).find("gencost") != std::string::npos);
  }
}

TEST_CASE("malformed matrix reports the offending line") {
  std::string text = kTwoBus;
  text.replace(text.find("2 1 50"), 6, "2 1 5x");
  try {
    parse_matpower(text);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 5);
  }
  std::string ragged = kTwoBus;
  ragged.replace(ragged.find("230 1 1.1 0.9;\n];"), 14, "230 1 1.1;");
  CHECK_THROWS_AS(parse_matpower(ragged), ParseError);
}

TEST_CASE("comments and unknown fields are ignored") {
  std::string text = kTwoBus;
  text.insert(text.find("mpc.bus"), "% a comment mpc.bus = [ 9 9 ];\nmpc.bus_name = {\n 'A';\n 'B';\n};\n");
  const auto raw = parse_matpower(text);
  CHECK(raw.bus.rows() == 2);
}

TEST_CASE("triangle3 fixture round-trips through the parser") {
  const auto raw = read_matpower_file(data_path("triangle3.m"));
  CHECK(raw.bus.rows() == 3);
  CHECK(raw.gen.rows() == 2);
  CHECK(raw.branch.rows() == 3);
  CHECK(raw.gencost.rows() == 2);
}

TEST_CASE("compile: per-unit conversion and incidence") {
  const auto g = compile_case(parse_matpower(kTwoBus), 0.6);
  CHECK(g.susceptance(0) == doctest::Approx(10.0));
  CHECK(g.line_flow_max(0) == doctest::Approx(0.8));
  CHECK(g.line_flow_min(0) == -g.line_flow_max(0));
  CHECK(g.base_demand(1) == doctest::Approx(0.5));
  CHECK(g.pg_max(0) == doctest::Approx(1.0));
  CHECK(g.theta_max(0) == 0.0);  // slack
  CHECK(g.theta_max(1) == 0.6);
  // 10 $/MWh linear on a 100 MVA base: evaluate both ways at 50 MW.
  CHECK(g.cost_coeffs(0, 1) == doctest::Approx(1000.0));
  const double per_unit = g.cost_coeffs(0, 1) * 0.5;
  CHECK(per_unit == doctest::Approx(10.0 * 50.0));
}

TEST_CASE("compile: incidence sanity on triangle3") {
  const auto g = load_case(data_path("triangle3.m"));
  CHECK(g.n_bus == 3);
  CHECK(g.n_gen == 2);
  CHECK(g.n_line == 3);
  for (int l = 0; l < g.n_line; ++l) CHECK(g.branch_incidence.row(l).sum() == 0.0);
  for (int i = 0; i < g.n_bus; ++i) {
    int count = 0;
    for (int k = 0; k < g.n_gen; ++k) count += g.gen_bus[static_cast<std::size_t>(k)] == i;
    CHECK(g.gen_incidence.row(i).sum() == count);
  }
  CHECK((g.theta_max.array() == Eigen::Array3d(0, 0.6, 0.6)).all());
}

TEST_CASE("compile: quadratic cost scaling") {
  std::string text = kTwoBus;
  text.replace(text.find("2 0 0 2 10 0;"), 13, "2 0 0 3 0.02 10 5;");
  const auto g = compile_case(parse_matpower(text));
  CHECK(g.cost_coeffs(0, 0) == doctest::Approx(0.02 * 100 * 100));
  CHECK(g.cost_coeffs(0, 1) == doctest::Approx(1000));
  CHECK(g.cost_coeffs(0, 2) == doctest::Approx(5));
}

TEST_CASE("compile: error paths") {
  SUBCASE("non-positive reactance") {
    std::string text = kTwoBus;
    text.replace(text.find("1 2 0 0.1"), 9, "1 2 0 0.0");
    CHECK_THROWS_AS(compile_case(parse_matpower(text)), DataError);
  }
  SUBCASE("cubic cost") {
    std::string text = kTwoBus;
    text.replace(text.find("2 0 0 2 10 0;"), 13, "2 0 0 4 1 0 10 0;");
    CHECK_THROWS_AS(compile_case(parse_matpower(text)), UnsupportedCostError);
  }
  SUBCASE("piecewise-linear cost") {
    std::string text = kTwoBus;
    text.replace(text.find("2 0 0 2 10 0;"), 13, "1 0 0 2 10 0;");
    CHECK_THROWS_AS(compile_case(parse_matpower(text)), UnsupportedCostError);
  }
  SUBCASE("disconnected network") {
    std::string text = kTwoBus;
    text.replace(text.find("0 0 1;\n];\nmpc.gencost"), 6, "0 0 0;");
    CHECK_THROWS_AS(compile_case(parse_matpower(text)), TopologyError);
  }
  SUBCASE("two slack buses") {
    std::string text = kTwoBus;
    text.replace(text.find("2 1 50"), 6, "2 3 50");
    CHECK_THROWS_AS(compile_case(parse_matpower(text)), DataError);
  }
  SUBCASE("non-positive angle limit") {
    CHECK_THROWS_AS(compile_case(parse_matpower(kTwoBus), 0.0), ContractError);
  }
}

TEST_CASE("zero RATE_A compiles to the unlimited sentinel") {
  std::string text = kTwoBus;
  text.replace(text.find("0.1 0 80 80 80"), 14, "0.1 0 0 0 0   ");
  const auto g = compile_case(parse_matpower(text));
  CHECK(g.line_flow_max(0) == kUnlimitedFlow);
}

TEST_CASE("json case round-trip is bit-identical") {
  for (const char* name : {"triangle3.m", "case5_6.m", "case8_12.m"}) {
    const auto g = load_case(data_path(name));
    const auto back = case_from_json(nlohmann::json::parse(case_to_json(g).dump()));
    CHECK(back.gen_incidence == g.gen_incidence);
    CHECK(back.branch_incidence == g.branch_incidence);
    CHECK(back.susceptance == g.susceptance);
    CHECK(back.line_flow_max == g.line_flow_max);
    CHECK(back.pg_max == g.pg_max);
    CHECK(back.cost_coeffs == g.cost_coeffs);
    CHECK(back.base_demand == g.base_demand);
    CHECK(back.theta_max == g.theta_max);
    CHECK(back.line_from == g.line_from);
    CHECK(back.gen_bus == g.gen_bus);
  }
}

TEST_CASE("generate_dataset: degenerate interval reproduces base load") {
  const auto g = load_case(data_path("triangle3.m"));
  const auto ds = generate_dataset(g, 5, 1.0, 1.0, 42, [](const Vec&) { return true; });
  REQUIRE(ds.scenarios.size() == 5);
  for (const auto& s : ds.scenarios) CHECK(s.pd == g.base_demand);
}

TEST_CASE("generate_dataset: range, rejection and determinism") {
  const auto g = load_case(data_path("triangle3.m"));
  int calls = 0;
  auto oracle = [&](const Vec& pd) {
    ++calls;
    return pd(2) < 1.05;  // reject the upper half
  };
  const auto a = generate_dataset(g, 300, 1.0, 1.1, 9, oracle);
  CHECK(calls > 300);
  for (const auto& s : a.scenarios) {
    CHECK((s.alpha.array() >= 1.0).all());
    CHECK((s.alpha.array() <= 1.1).all());
    CHECK(s.pd(2) < 1.05);
    CHECK((s.pd - s.alpha.cwiseProduct(g.base_demand)).norm() == 0.0);
  }
  const auto b = generate_dataset(g, 300, 1.0, 1.1, 9, oracle);
  CHECK(dataset_to_jsonl(a) == dataset_to_jsonl(b));
  const auto c = generate_dataset(g, 300, 1.0, 1.1, 10, oracle);
  CHECK(dataset_to_jsonl(a) != dataset_to_jsonl(c));
}

TEST_CASE("generate_dataset: hopeless acceptance aborts") {
  const auto g = load_case(data_path("triangle3.m"));
  CHECK_THROWS_AS(generate_dataset(g, 2, 1.0, 1.1, 1, [](const Vec&) { return false; }), SamplingError);
  CHECK_THROWS_AS(generate_dataset(g, 0, 1.0, 1.1, 1, [](const Vec&) { return true; }), ContractError);
  CHECK_THROWS_AS(generate_dataset(g, 1, 1.2, 1.1, 1, [](const Vec&) { return true; }), ContractError);
}

TEST_CASE("split_dataset: counts, determinism and degenerate split") {
  const auto g = load_case(data_path("triangle3.m"));
  const auto ds = generate_dataset(g, 3000, 1.0, 1.1, 1, [](const Vec&) { return true; });
  const auto sp = split_dataset(ds, {0.5, 0.167, 0.333}, 77);
  CHECK(sp.with_tag(SplitTag::kTrain).size() == 1500);
  CHECK(sp.with_tag(SplitTag::kVal).size() == 501);
  CHECK(sp.with_tag(SplitTag::kTest).size() == 999);
  CHECK(dataset_to_jsonl(sp) == dataset_to_jsonl(split_dataset(ds, {0.5, 0.167, 0.333}, 77)));
  CHECK(dataset_to_jsonl(sp) != dataset_to_jsonl(split_dataset(ds, {0.5, 0.167, 0.333}, 78)));

  const auto all_train = split_dataset(ds, {1.0, 0.0, 0.0}, 1, true);
  CHECK(all_train.with_tag(SplitTag::kTrain).size() == 3000);
  CHECK_THROWS_AS(split_dataset(ds, {1.0, 0.0, 0.0}, 1), ContractError);
  CHECK_THROWS_AS(split_dataset(ds, {0.5, 0.2, 0.2}, 1), ContractError);
}

TEST_CASE("dataset jsonl round-trip") {
  const auto g = load_case(data_path("triangle3.m"));
  auto ds = generate_dataset(g, 10, 1.0, 1.1, 4, [](const Vec&) { return true; });
  ds = split_dataset(ds, {0.5, 0.2, 0.3}, 4);
  const auto text = dataset_to_jsonl(ds);
  const auto back = dataset_from_jsonl(text);
  REQUIRE(back.scenarios.size() == 10);
  CHECK(dataset_to_jsonl(back) == text);
  CHECK_THROWS_AS(dataset_from_jsonl("{\"id\": 1, \"pd\": [1,"), ParseError);
}
