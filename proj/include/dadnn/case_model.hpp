#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dadnn/types.hpp"

namespace dadnn {

/// Numeric tables of a MATPOWER case, columns as in the v2 layout (1-based
/// MATPOWER column k lives at index k-1).
struct RawCase {
  std::string name;
  double base_mva = 0.0;
  Mat bus;
  Mat gen;
  Mat branch;
  Mat gencost;
};

/// Compiled DC network in per-unit. Lines and generators are indexed in file
/// order after dropping out-of-service rows.
struct GridCase {
  std::string case_id;
  double base_mva = 100.0;
  int n_bus = 0;
  int n_gen = 0;
  int n_line = 0;
  int slack_index = 0;

  std::vector<int> bus_ids;   // original MATPOWER bus numbers
  std::vector<int> line_from;  // bus index, derived from branch_incidence
  std::vector<int> line_to;
  std::vector<int> gen_bus;

  Mat gen_incidence;     // N_b x N_g
  Mat branch_incidence;  // N_l x N_b, +1 from, -1 to
  Vec susceptance;
  Vec line_flow_max;
  Vec line_flow_min;
  Vec pg_max;
  Vec pg_min;
  Vec theta_max;
  Vec theta_min;
  Mat cost_coeffs;  // N_g x 3: (c2, c1, c0) on per-unit power, $/h
  Vec base_demand;

  /// Copy with line_flow_max/min multiplied by scale (> 0).
  GridCase with_line_limit_scale(double scale) const;
};

// Rows of this size or larger are treated as "no limit" when RATE_A is 0.
inline constexpr double kUnlimitedFlow = 1e4;

RawCase parse_matpower(std::string_view text);
RawCase read_matpower_file(const std::filesystem::path& path);

/// Throws DataError / StructuralError when a RawCase invariant fails.
void validate_raw(const RawCase& raw);

GridCase compile_case(const RawCase& raw, double angle_limit = 0.6);

/// Throws when any GridCase invariant fails.
void validate_case(const GridCase& grid);

/// Buses reachable from the slack through lines with closed[l] == true.
std::vector<bool> reachable_from_slack(const GridCase& grid, const std::vector<bool>& closed);

/// True iff every bus with nonzero demand (and the slack) lies in the slack's island.
bool serves_all_load(const GridCase& grid, const Vec& pd, const std::vector<bool>& closed);

nlohmann::json case_to_json(const GridCase& grid);
GridCase case_from_json(const nlohmann::json& j);

/// Loads either a MATPOWER .m file or a compiled .json case.
GridCase load_case(const std::filesystem::path& path, double angle_limit = 0.6);
void save_case_json(const GridCase& grid, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Load scenarios

enum class SplitTag { kNone, kTrain, kVal, kTest };

std::string_view to_string(SplitTag tag);
SplitTag split_tag_from_string(std::string_view s);

struct LoadScenario {
  int scenario_id = 0;
  Vec alpha;
  Vec pd;
  bool opf_feasible = true;
  SplitTag split = SplitTag::kNone;
};

struct Dataset {
  std::string case_id;
  std::uint64_t seed = 0;
  std::vector<LoadScenario> scenarios;

  std::vector<LoadScenario> with_tag(SplitTag tag) const;
};

using FeasibilityOracle = std::function<bool(const Vec& pd)>;

/// Rejection-samples per-bus scale factors alpha ~ U[scale_min, scale_max]
/// until `count` scenarios pass `opf_feasible`.
Dataset generate_dataset(const GridCase& grid, int count, double scale_min, double scale_max,
                         std::uint64_t seed, const FeasibilityOracle& opf_feasible);

struct SplitFractions {
  double train = 0.5;
  double val = 0.167;
  double test = 0.333;
};

/// Seeded permutation, then contiguous train/val/test blocks of
/// round(count * fraction); the test block takes the remainder.
Dataset split_dataset(Dataset dataset, const SplitFractions& fractions, std::uint64_t seed,
                      bool allow_zero_fractions = false);

std::string dataset_to_jsonl(const Dataset& dataset);
Dataset dataset_from_jsonl(std::string_view text);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace dadnn
