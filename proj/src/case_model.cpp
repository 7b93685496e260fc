#include "dadnn/case_model.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <regex>
#include <sstream>

#include "dadnn/errors.hpp"

namespace dadnn {
namespace {

// MATPOWER column indices (0-based).
constexpr int kBusId = 0, kBusType = 1, kBusPd = 2;
constexpr int kGenBus = 0, kGenStatus = 7, kGenPmax = 8, kGenPmin = 9;
constexpr int kBrFrom = 0, kBrTo = 1, kBrX = 3, kBrRateA = 5, kBrStatus = 10;
constexpr int kCostModel = 0, kCostN = 3, kCostFirst = 4;

constexpr int kMinBusCols = 13, kMinGenCols = 10, kMinBranchCols = 11, kMinCostCols = 5;

std::string strip_comment(const std::string& line) {
  // '%' inside quoted strings is rare in case files; quoted content is skipped anyway.
  bool in_quote = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\'') in_quote = !in_quote;
    if (line[i] == '%' && !in_quote) return line.substr(0, i);
  }
  return line;
}

struct MatrixBlock {
  Mat values;
  int first_line = 0;
};

// Parses the body of `mpc.x = [ ... ];` where body spans lines [begin, end).
MatrixBlock parse_matrix_body(const std::vector<std::string>& lines, std::size_t begin,
                              std::size_t& end, std::size_t open_col) {
  std::vector<std::vector<double>> rows;
  std::vector<int> row_lines;
  std::vector<double> current;
  int current_line = static_cast<int>(begin) + 1;
  bool closed = false;

  auto flush = [&]() {
    if (!current.empty()) {
      rows.push_back(std::move(current));
      row_lines.push_back(current_line);
      current.clear();
    }
  };

  std::size_t li = begin;
  for (; li < lines.size() && !closed; ++li) {
    std::string s = strip_comment(lines[li]);
    std::size_t start = (li == begin) ? open_col + 1 : 0;
    std::size_t i = start;
    while (i < s.size()) {
      char c = s[i];
      if (c == ']') {
        closed = true;
        break;
      }
      if (c == ';') {
        flush();
        ++i;
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
        ++i;
        continue;
      }
      const char* p = s.c_str() + i;
      char* q = nullptr;
      double v = std::strtod(p, &q);
      if (q == p) {
        throw ParseError("unexpected token '" + s.substr(i, 12) + "' in matrix block",
                         static_cast<int>(li) + 1);
      }
      if (current.empty()) current_line = static_cast<int>(li) + 1;
      current.push_back(v);
      i += static_cast<std::size_t>(q - p);
    }
    if (!closed) flush();  // newline terminates a row too
  }
  flush();
  if (!closed) {
    throw ParseError("unterminated matrix block", static_cast<int>(begin) + 1);
  }
  end = li;

  MatrixBlock block;
  block.first_line = static_cast<int>(begin) + 1;
  if (rows.empty()) return block;
  const std::size_t cols = rows.front().size();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) {
      throw ParseError("row has " + std::to_string(rows[r].size()) + " columns, expected " +
                           std::to_string(cols),
                       row_lines[r]);
    }
  }
  block.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols; ++c)
      block.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return block;
}

// Skips an unknown `[...]` or `{...}` value, tracking nesting across lines.
std::size_t skip_bracketed(const std::vector<std::string>& lines, std::size_t begin,
                           std::size_t open_col) {
  int depth = 0;
  bool in_quote = false;
  for (std::size_t li = begin; li < lines.size(); ++li) {
    const std::string& s = lines[li];
    for (std::size_t i = (li == begin ? open_col : 0); i < s.size(); ++i) {
      char c = s[i];
      if (c == '\'') in_quote = !in_quote;
      if (in_quote) continue;
      if (c == '%') break;
      if (c == '[' || c == '{') ++depth;
      if (c == ']' || c == '}') {
        if (--depth == 0) return li + 1;
      }
    }
  }
  throw ParseError("unterminated value", static_cast<int>(begin) + 1);
}

void require_cols(const Mat& m, int min_cols, const char* block) {
  if (m.rows() > 0 && m.cols() < min_cols) {
    throw ParseError(std::string("mpc.") + block + " needs at least " + std::to_string(min_cols) +
                         " columns, found " + std::to_string(m.cols()),
                     0);
  }
}

bool is_zero(double v) { return v == 0.0; }

}  // namespace

RawCase parse_matpower(std::string_view text) {
  std::vector<std::string> lines;
  {
    std::string buf(text);
    std::istringstream in(buf);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(std::move(line));
    }
  }

  static const std::regex assign(R"(^\s*mpc\.(\w+)\s*=\s*)");
  static const std::regex func(R"(^\s*function\s+mpc\s*=\s*(\w+))");

  RawCase raw;
  bool have_base = false;
  std::map<std::string, bool> seen;

  std::size_t li = 0;
  while (li < lines.size()) {
    const std::string stripped = strip_comment(lines[li]);
    std::smatch m;
    if (std::regex_search(stripped, m, func)) {
      raw.name = m[1];
      ++li;
      continue;
    }
    if (!std::regex_search(stripped, m, assign)) {
      ++li;
      continue;
    }
    const std::string field = m[1];
    const std::size_t value_col = static_cast<std::size_t>(m.position(0) + m.length(0));
    const std::string rest = stripped.substr(value_col);

    if (field == "baseMVA") {
      const char* p = rest.c_str();
      char* q = nullptr;
      double v = std::strtod(p, &q);
      if (q == p) throw ParseError("mpc.baseMVA is not a number", static_cast<int>(li) + 1);
      raw.base_mva = v;
      have_base = true;
      ++li;
      continue;
    }

    const bool is_matrix = field == "bus" || field == "gen" || field == "branch" ||
                           field == "gencost";
    const std::size_t open = stripped.find_first_of("[{", value_col);
    if (!is_matrix) {
      li = (open == std::string::npos) ? li + 1 : skip_bracketed(lines, li, open);
      continue;
    }
    if (open == std::string::npos || stripped[open] != '[') {
      throw ParseError("mpc." + field + " is not a matrix literal", static_cast<int>(li) + 1);
    }
    std::size_t end = li;
    MatrixBlock block = parse_matrix_body(lines, li, end, open);
    if (field == "bus") raw.bus = std::move(block.values);
    if (field == "gen") raw.gen = std::move(block.values);
    if (field == "branch") raw.branch = std::move(block.values);
    if (field == "gencost") raw.gencost = std::move(block.values);
    seen[field] = true;
    li = end;
  }

  if (!have_base) throw StructuralError("missing required block mpc.baseMVA");
  for (const char* block : {"bus", "gen", "branch", "gencost"}) {
    if (!seen.count(block)) throw StructuralError(std::string("missing required block mpc.") + block);
  }
  require_cols(raw.bus, kMinBusCols, "bus");
  require_cols(raw.gen, kMinGenCols, "gen");
  require_cols(raw.branch, kMinBranchCols, "branch");
  require_cols(raw.gencost, kMinCostCols, "gencost");
  return raw;
}

RawCase read_matpower_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StructuralError("cannot open case file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RawCase raw = parse_matpower(ss.str());
  if (raw.name.empty()) raw.name = path.stem().string();
  return raw;
}

void validate_raw(const RawCase& raw) {
  if (!(raw.base_mva > 0)) throw DataError("baseMVA must be positive");
  if (raw.bus.rows() == 0) throw StructuralError("mpc.bus has no rows");

  std::map<int, int> ids;
  int slack_count = 0;
  for (Eigen::Index r = 0; r < raw.bus.rows(); ++r) {
    const int id = static_cast<int>(raw.bus(r, kBusId));
    if (!ids.emplace(id, static_cast<int>(r)).second) {
      throw DataError("duplicate bus id " + std::to_string(id));
    }
    if (raw.bus(r, kBusType) == 3) ++slack_count;
  }
  if (slack_count != 1) {
    throw DataError("expected exactly one slack bus (type 3), found " + std::to_string(slack_count));
  }
  for (Eigen::Index r = 0; r < raw.branch.rows(); ++r) {
    for (int col : {kBrFrom, kBrTo}) {
      const int id = static_cast<int>(raw.branch(r, col));
      if (!ids.count(id)) {
        throw DataError("branch " + std::to_string(r + 1) + " references unknown bus " +
                        std::to_string(id));
      }
    }
  }
  for (Eigen::Index r = 0; r < raw.gen.rows(); ++r) {
    const int id = static_cast<int>(raw.gen(r, kGenBus));
    if (!ids.count(id)) {
      throw DataError("generator " + std::to_string(r + 1) + " references unknown bus " +
                      std::to_string(id));
    }
  }
  if (raw.gencost.rows() != raw.gen.rows()) {
    throw DataError("mpc.gencost has " + std::to_string(raw.gencost.rows()) +
                    " rows for " + std::to_string(raw.gen.rows()) + " generators");
  }
}

GridCase compile_case(const RawCase& raw, double angle_limit) {
  if (!(angle_limit > 0)) throw ContractError("angle_limit must be positive");
  validate_raw(raw);

  const double base = raw.base_mva;
  GridCase g;
  g.case_id = raw.name;
  g.base_mva = base;
  g.n_bus = static_cast<int>(raw.bus.rows());

  std::map<int, int> index_of;
  g.bus_ids.resize(static_cast<std::size_t>(g.n_bus));
  g.base_demand = Vec::Zero(g.n_bus);
  for (int i = 0; i < g.n_bus; ++i) {
    const int id = static_cast<int>(raw.bus(i, kBusId));
    g.bus_ids[static_cast<std::size_t>(i)] = id;
    index_of[id] = i;
    g.base_demand(i) = raw.bus(i, kBusPd) / base;
    if (raw.bus(i, kBusType) == 3) g.slack_index = i;
  }

  // Generators (in service only) and their polynomial costs.
  std::vector<Eigen::Index> gens;
  for (Eigen::Index r = 0; r < raw.gen.rows(); ++r)
    if (raw.gen(r, kGenStatus) > 0) gens.push_back(r);
  g.n_gen = static_cast<int>(gens.size());
  g.gen_incidence = Mat::Zero(g.n_bus, g.n_gen);
  g.pg_max.resize(g.n_gen);
  g.pg_min.resize(g.n_gen);
  g.cost_coeffs = Mat::Zero(g.n_gen, 3);
  g.gen_bus.resize(gens.size());
  for (int k = 0; k < g.n_gen; ++k) {
    const Eigen::Index r = gens[static_cast<std::size_t>(k)];
    const int bus = index_of.at(static_cast<int>(raw.gen(r, kGenBus)));
    g.gen_bus[static_cast<std::size_t>(k)] = bus;
    g.gen_incidence(bus, k) = 1.0;
    g.pg_max(k) = raw.gen(r, kGenPmax) / base;
    g.pg_min(k) = raw.gen(r, kGenPmin) / base;
    if (g.pg_min(k) > g.pg_max(k)) {
      throw DataError("generator " + std::to_string(r + 1) + " has PMIN > PMAX");
    }

    const auto model = static_cast<int>(raw.gencost(r, kCostModel));
    if (model != 2) {
      throw UnsupportedCostError("generator " + std::to_string(r + 1) +
                                 ": only polynomial gencost (model 2) is supported");
    }
    const auto ncost = static_cast<int>(raw.gencost(r, kCostN));
    if (ncost > 3) {
      throw UnsupportedCostError("generator " + std::to_string(r + 1) + ": cost degree " +
                                 std::to_string(ncost - 1) + " exceeds 2");
    }
    if (ncost < 1 || raw.gencost.cols() < kCostFirst + ncost) {
      throw DataError("generator " + std::to_string(r + 1) + ": malformed gencost row");
    }
    // Coefficients are listed highest order first; rescale to per-unit power.
    for (int j = 0; j < ncost; ++j) {
      const int degree = ncost - 1 - j;
      const double c = raw.gencost(r, kCostFirst + j);
      g.cost_coeffs(k, 2 - degree) = c * std::pow(base, degree);
    }
    if (g.cost_coeffs(k, 0) < 0) {
      throw DataError("generator " + std::to_string(r + 1) + " has a concave cost");
    }
  }

  std::vector<Eigen::Index> lines;
  for (Eigen::Index r = 0; r < raw.branch.rows(); ++r)
    if (raw.branch(r, kBrStatus) != 0) lines.push_back(r);
  g.n_line = static_cast<int>(lines.size());
  g.branch_incidence = Mat::Zero(g.n_line, g.n_bus);
  g.susceptance.resize(g.n_line);
  g.line_flow_max.resize(g.n_line);
  g.line_from.resize(lines.size());
  g.line_to.resize(lines.size());
  for (int l = 0; l < g.n_line; ++l) {
    const Eigen::Index r = lines[static_cast<std::size_t>(l)];
    const int f = index_of.at(static_cast<int>(raw.branch(r, kBrFrom)));
    const int t = index_of.at(static_cast<int>(raw.branch(r, kBrTo)));
    if (f == t) throw DataError("branch " + std::to_string(r + 1) + " is a self-loop");
    const double x = raw.branch(r, kBrX);
    if (!(x > 0)) {
      throw DataError("branch " + std::to_string(r + 1) + " has non-positive reactance");
    }
    g.branch_incidence(l, f) = 1.0;
    g.branch_incidence(l, t) = -1.0;
    g.line_from[static_cast<std::size_t>(l)] = f;
    g.line_to[static_cast<std::size_t>(l)] = t;
    g.susceptance(l) = 1.0 / x;
    const double rate = raw.branch(r, kBrRateA);
    g.line_flow_max(l) = is_zero(rate) ? kUnlimitedFlow : rate / base;
  }
  g.line_flow_min = -g.line_flow_max;

  g.theta_max = Vec::Constant(g.n_bus, angle_limit);
  g.theta_max(g.slack_index) = 0.0;
  g.theta_min = -g.theta_max;

  validate_case(g);
  return g;
}

GridCase GridCase::with_line_limit_scale(double scale) const {
  if (!(scale > 0)) throw ContractError("line limit scale must be positive");
  GridCase out = *this;
  out.line_flow_max *= scale;
  out.line_flow_min *= scale;
  return out;
}

std::vector<bool> reachable_from_slack(const GridCase& grid, const std::vector<bool>& closed) {
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(grid.n_bus));
  for (int l = 0; l < grid.n_line; ++l) {
    if (!closed[static_cast<std::size_t>(l)]) continue;
    const int f = grid.line_from[static_cast<std::size_t>(l)];
    const int t = grid.line_to[static_cast<std::size_t>(l)];
    adj[static_cast<std::size_t>(f)].push_back(t);
    adj[static_cast<std::size_t>(t)].push_back(f);
  }
  std::vector<bool> seen(static_cast<std::size_t>(grid.n_bus), false);
  std::vector<int> stack{grid.slack_index};
  seen[static_cast<std::size_t>(grid.slack_index)] = true;
  while (!stack.empty()) {
    const int u = stack.back();
    stack.pop_back();
    for (int v : adj[static_cast<std::size_t>(u)]) {
      if (!seen[static_cast<std::size_t>(v)]) {
        seen[static_cast<std::size_t>(v)] = true;
        stack.push_back(v);
      }
    }
  }
  return seen;
}

bool serves_all_load(const GridCase& grid, const Vec& pd, const std::vector<bool>& closed) {
  const auto seen = reachable_from_slack(grid, closed);
  for (int i = 0; i < grid.n_bus; ++i)
    if (!seen[static_cast<std::size_t>(i)] && pd(i) != 0.0) return false;
  return true;
}

void validate_case(const GridCase& g) {
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) throw DataError(msg);
  };
  check(g.n_bus > 0, "case has no buses");
  check(g.slack_index >= 0 && g.slack_index < g.n_bus, "slack index out of range");
  check(g.gen_incidence.rows() == g.n_bus && g.gen_incidence.cols() == g.n_gen,
        "gen_incidence shape");
  check(g.branch_incidence.rows() == g.n_line && g.branch_incidence.cols() == g.n_bus,
        "branch_incidence shape");
  for (const Vec* v : {&g.susceptance, &g.line_flow_max, &g.line_flow_min})
    check(v->size() == g.n_line, "line vector length");
  for (const Vec* v : {&g.pg_max, &g.pg_min}) check(v->size() == g.n_gen, "gen vector length");
  for (const Vec* v : {&g.theta_max, &g.theta_min, &g.base_demand})
    check(v->size() == g.n_bus, "bus vector length");
  check(g.cost_coeffs.rows() == g.n_gen && g.cost_coeffs.cols() == 3, "cost_coeffs shape");

  check(g.n_line == 0 || (g.line_flow_min + g.line_flow_max).cwiseAbs().maxCoeff() == 0.0,
        "line limits must be symmetric");
  check((g.theta_min + g.theta_max).cwiseAbs().maxCoeff() == 0.0, "angle limits must be symmetric");
  check((g.pg_min.array() <= g.pg_max.array()).all(), "pg_min exceeds pg_max");
  check((g.cost_coeffs.col(0).array() >= 0).all(), "quadratic cost coefficient negative");
  check(g.n_line == 0 || (g.susceptance.array() > 0).all(), "susceptance must be positive");

  const std::vector<bool> all_closed(static_cast<std::size_t>(g.n_line), true);
  const auto seen = reachable_from_slack(g, all_closed);
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw TopologyError("network of in-service lines is disconnected");
  }
}

// ---------------------------------------------------------------------------
// JSON case format

namespace {

nlohmann::json mat_to_json(const Mat& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat mat_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
    throw ShapeError("matrix row count mismatch");
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw ShapeError("matrix column count mismatch");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

nlohmann::json vec_to_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec vec_from_json(const nlohmann::json& j, Eigen::Index n) {
  auto values = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(values.size()) != n) throw ShapeError("vector length mismatch");
  return Eigen::Map<Vec>(values.data(), n);
}

constexpr int kCaseFormatVersion = 1;

}  // namespace

nlohmann::json case_to_json(const GridCase& g) {
  nlohmann::json j;
  j["format"] = "dadnn-case";
  j["version"] = kCaseFormatVersion;
  j["case_id"] = g.case_id;
  j["base_mva"] = g.base_mva;
  j["n_bus"] = g.n_bus;
  j["n_gen"] = g.n_gen;
  j["n_line"] = g.n_line;
  j["slack_index"] = g.slack_index;
  j["bus_ids"] = g.bus_ids;
  j["gen_incidence"] = mat_to_json(g.gen_incidence);
  j["branch_incidence"] = mat_to_json(g.branch_incidence);
  j["susceptance"] = vec_to_json(g.susceptance);
  j["line_flow_max"] = vec_to_json(g.line_flow_max);
  j["line_flow_min"] = vec_to_json(g.line_flow_min);
  j["pg_max"] = vec_to_json(g.pg_max);
  j["pg_min"] = vec_to_json(g.pg_min);
  j["theta_max"] = vec_to_json(g.theta_max);
  j["theta_min"] = vec_to_json(g.theta_min);
  j["cost_coeffs"] = mat_to_json(g.cost_coeffs);
  j["base_demand"] = vec_to_json(g.base_demand);
  return j;
}

GridCase case_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != "dadnn-case") throw StructuralError("not a dadnn case file");
    if (j.at("version").get<int>() != kCaseFormatVersion)
      throw VersionError("unsupported case format version");
    GridCase g;
    g.case_id = j.value("case_id", "");
    g.base_mva = j.at("base_mva").get<double>();
    g.n_bus = j.at("n_bus").get<int>();
    g.n_gen = j.at("n_gen").get<int>();
    g.n_line = j.at("n_line").get<int>();
    g.slack_index = j.at("slack_index").get<int>();
    g.bus_ids = j.at("bus_ids").get<std::vector<int>>();
    g.gen_incidence = mat_from_json(j.at("gen_incidence"), g.n_bus, g.n_gen);
    g.branch_incidence = mat_from_json(j.at("branch_incidence"), g.n_line, g.n_bus);
    g.susceptance = vec_from_json(j.at("susceptance"), g.n_line);
    g.line_flow_max = vec_from_json(j.at("line_flow_max"), g.n_line);
    g.line_flow_min = vec_from_json(j.at("line_flow_min"), g.n_line);
    g.pg_max = vec_from_json(j.at("pg_max"), g.n_gen);
    g.pg_min = vec_from_json(j.at("pg_min"), g.n_gen);
    g.theta_max = vec_from_json(j.at("theta_max"), g.n_bus);
    g.theta_min = vec_from_json(j.at("theta_min"), g.n_bus);
    g.cost_coeffs = mat_from_json(j.at("cost_coeffs"), g.n_gen, 3);
    g.base_demand = vec_from_json(j.at("base_demand"), g.n_bus);

    g.line_from.assign(static_cast<std::size_t>(g.n_line), -1);
    g.line_to.assign(static_cast<std::size_t>(g.n_line), -1);
    for (int l = 0; l < g.n_line; ++l) {
      for (int i = 0; i < g.n_bus; ++i) {
        if (g.branch_incidence(l, i) == 1.0) g.line_from[static_cast<std::size_t>(l)] = i;
        if (g.branch_incidence(l, i) == -1.0) g.line_to[static_cast<std::size_t>(l)] = i;
      }
      if (g.line_from[static_cast<std::size_t>(l)] < 0 || g.line_to[static_cast<std::size_t>(l)] < 0)
        throw DataError("branch_incidence row " + std::to_string(l) + " is malformed");
    }
    g.gen_bus.assign(static_cast<std::size_t>(g.n_gen), -1);
    for (int k = 0; k < g.n_gen; ++k)
      for (int i = 0; i < g.n_bus; ++i)
        if (g.gen_incidence(i, k) == 1.0) g.gen_bus[static_cast<std::size_t>(k)] = i;
    validate_case(g);
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("case json: ") + e.what(), 0);
  }
}

GridCase load_case(const std::filesystem::path& path, double angle_limit) {
  if (path.extension() == ".json") {
    std::ifstream in(path);
    if (!in) throw StructuralError("cannot open case file " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("case json: ") + e.what(), 0);
    }
    return case_from_json(j);
  }
  return compile_case(read_matpower_file(path), angle_limit);
}

void save_case_json(const GridCase& grid, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw StructuralError("cannot write " + path.string());
  out << case_to_json(grid).dump(1) << '\n';
}

// ---------------------------------------------------------------------------
// Datasets

std::string_view to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::kTrain: return "train";
    case SplitTag::kVal: return "val";
    case SplitTag::kTest: return "test";
    case SplitTag::kNone: break;
  }
  return "none";
}

SplitTag split_tag_from_string(std::string_view s) {
  if (s == "train") return SplitTag::kTrain;
  if (s == "val") return SplitTag::kVal;
  if (s == "test") return SplitTag::kTest;
  if (s == "none" || s.empty()) return SplitTag::kNone;
  throw ParseError("unknown split tag '" + std::string(s) + "'", 0);
}

std::vector<LoadScenario> Dataset::with_tag(SplitTag tag) const {
  std::vector<LoadScenario> out;
  std::copy_if(scenarios.begin(), scenarios.end(), std::back_inserter(out),
               [tag](const LoadScenario& s) { return s.split == tag; });
  return out;
}

Dataset generate_dataset(const GridCase& grid, int count, double scale_min, double scale_max,
                         std::uint64_t seed, const FeasibilityOracle& opf_feasible) {
  if (count <= 0) throw ContractError("count must be positive");
  if (!(scale_min <= scale_max)) throw ContractError("scale_min must not exceed scale_max");

  Dataset ds;
  ds.case_id = grid.case_id;
  ds.seed = seed;
  ds.scenarios.reserve(static_cast<std::size_t>(count));

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto max_draws = static_cast<long long>(count) * 1000;
  long long draws = 0;
  while (static_cast<int>(ds.scenarios.size()) < count) {
    if (draws >= max_draws) {
      throw SamplingError("kept " + std::to_string(ds.scenarios.size()) + " of " +
                          std::to_string(count) + " scenarios after " + std::to_string(draws) +
                          " draws; DC-OPF acceptance rate below 0.1%");
    }
    ++draws;
    LoadScenario s;
    s.alpha.resize(grid.n_bus);
    for (int i = 0; i < grid.n_bus; ++i)
      s.alpha(i) = scale_min + (scale_max - scale_min) * unit(rng);
    s.pd = s.alpha.cwiseProduct(grid.base_demand);
    if (!opf_feasible(s.pd)) continue;
    s.scenario_id = static_cast<int>(ds.scenarios.size());
    s.opf_feasible = true;
    ds.scenarios.push_back(std::move(s));
  }
  return ds;
}

Dataset split_dataset(Dataset dataset, const SplitFractions& f, std::uint64_t seed,
                      bool allow_zero_fractions) {
  const double parts[] = {f.train, f.val, f.test};
  for (double p : parts) {
    if (p < 0 || (!allow_zero_fractions && p == 0))
      throw ContractError("split fractions must be positive");
  }
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw ContractError("split fractions must sum to 1");

  const auto n = static_cast<int>(dataset.scenarios.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  // Fisher-Yates with our own index draw so the permutation is library-independent.
  for (int i = n - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  const int n_train = std::min(n, static_cast<int>(std::lround(n * f.train)));
  const int n_val = std::min(n - n_train, static_cast<int>(std::lround(n * f.val)));
  for (int k = 0; k < n; ++k) {
    auto& s = dataset.scenarios[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];
    s.split = k < n_train ? SplitTag::kTrain : (k < n_train + n_val ? SplitTag::kVal : SplitTag::kTest);
  }
  return dataset;
}

std::string dataset_to_jsonl(const Dataset& ds) {
  std::string out;
  for (const auto& s : ds.scenarios) {
    nlohmann::json j;
    j["id"] = s.scenario_id;
    j["alpha"] = vec_to_json(s.alpha);
    j["pd"] = vec_to_json(s.pd);
    j["split"] = s.split == SplitTag::kNone ? nlohmann::json(nullptr)
                                            : nlohmann::json(std::string(to_string(s.split)));
    out += j.dump();
    out += '\n';
  }
  return out;
}

Dataset dataset_from_jsonl(std::string_view text) {
  Dataset ds;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      LoadScenario s;
      s.scenario_id = j.at("id").get<int>();
      auto pd = j.at("pd").get<std::vector<double>>();
      s.pd = Eigen::Map<Vec>(pd.data(), static_cast<Eigen::Index>(pd.size()));
      if (j.contains("alpha") && !j["alpha"].is_null()) {
        auto alpha = j["alpha"].get<std::vector<double>>();
        s.alpha = Eigen::Map<Vec>(alpha.data(), static_cast<Eigen::Index>(alpha.size()));
      }
      if (j.contains("split") && j["split"].is_string())
        s.split = split_tag_from_string(j["split"].get<std::string>());
      ds.scenarios.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("dataset: ") + e.what(), lineno);
    }
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StructuralError("cannot write " + path.string());
  out << dataset_to_jsonl(ds);
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StructuralError("cannot open dataset " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return dataset_from_jsonl(ss.str());
}

}  // namespace dadnn
