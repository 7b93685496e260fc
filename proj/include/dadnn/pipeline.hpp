#pragma once

#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dadnn/case_model.hpp"
#include "dadnn/dcopf.hpp"
#include "dadnn/mlp.hpp"
#include "dadnn/ots.hpp"

namespace dadnn {

struct TrainConfig {
  int epochs = 40;
  int batch_size = 50;  // capped at the training-set size
  double lr = 5e-5;
  double weight_decay = 1e-2;
  int hidden_dim = 128;
  int hidden_layers = 3;
  double dropout = 0.1;
  std::uint64_t seed = 0;
  InitMode init = InitMode::kManual;
  OpfOptions opf;
  double threshold = 0.5;
  // Abort after the first epoch when more than this share of samples was skipped.
  double max_first_epoch_skip = 0.5;
  bool abort_on_skip = true;
};

struct EpochRecord {
  int epoch = 0;             // 0 is the pre-update evaluation
  double train_loss = 0.0;   // mean relaxed cost over used samples, $/h
  double val_cost = 0.0;     // mean relaxed cost at eval-mode z, $/h
  double val_binary_cost = 0.0;  // mean cost after binarization; inf if any val scenario is infeasible
  int skipped = 0;
  int samples = 0;
  double wall_s = 0.0;
};

struct TrainResult {
  MlpParams params;  // best validation checkpoint
  std::vector<EpochRecord> curve;
  int best_epoch = 0;
};

/// Raised when the first epoch skips too many samples (the relaxed OPF has no
/// solution at the predicted z).
class InitializationError : public std::runtime_error {
 public:
  InitializationError(const std::string& what, double skip_rate)
      : std::runtime_error(what), skip_rate_(skip_rate) {}
  double skip_rate() const { return skip_rate_; }

 private:
  double skip_rate_;
};

TrainResult train(const GridCase& grid, const std::vector<LoadScenario>& train_set,
                  const std::vector<LoadScenario>& val_set, const TrainConfig& config);
/// Uses the train and val tags of the dataset.
TrainResult train(const GridCase& grid, const Dataset& dataset, const TrainConfig& config);

/// z_bar_l = 1 iff z_l >= threshold.
SwitchVector binarize(const Vec& z, double threshold = 0.5);

struct InferenceResult {
  Vec z_relaxed;
  SwitchVector z_bar;
  Dispatch dispatch;
  ViolationReport audit;
  bool connected = true;
  bool flagged_infeasible = false;
  double seconds = 0.0;  // forward + binarize + OPF solve
};

InferenceResult infer(const MlpParams& model, const GridCase& grid, const Vec& pd, double threshold = 0.5,
                      const OpfOptions& opf = {});

enum class Method { kEd, kOpf, kOtsEnum, kOtsBnb, kDadnn };

std::string_view to_string(Method m);
Method method_from_string(std::string_view s);
std::vector<Method> parse_methods(std::string_view comma_list);

struct ScenarioResult {
  int scenario_id = 0;
  Method method = Method::kOpf;
  bool feasible = false;
  double cost = 0.0;  // $/h, NaN when infeasible
  bool eq_violated = false;
  bool ineq_violated = false;
  int lines_open = 0;
  double seconds = 0.0;
  std::string status;
};

struct BenchRow {
  Method method = Method::kOpf;
  int scenarios = 0;
  int infeasible = 0;
  double avg_cost_k = 0.0;  // over feasible scenarios, $1k/h
  double ineq_viol_pct = 0.0;
  double eq_viol_pct = 0.0;
  double time_mean_s = 0.0;
  double time_std_s = 0.0;
};

struct EvalOptions {
  OpfOptions opf;
  BnbOptions bnb;
  double threshold = 0.5;
};

struct Evaluation {
  std::vector<BenchRow> rows;             // one per method, in request order
  std::vector<ScenarioResult> details;    // sorted by (method, scenario_id)
};

/// Runs a single method on one load vector. The model is only used by kDadnn.
ScenarioResult run_method(Method m, const GridCase& grid, const LoadScenario& s, const MlpParams* model,
                          const EvalOptions& options = {});

Evaluation evaluate(const MlpParams* model, const GridCase& grid, const std::vector<LoadScenario>& scenarios,
                    const std::vector<Method>& methods, const EvalOptions& options = {});

BenchRow summarize(Method m, const std::vector<ScenarioResult>& results);

struct SweepRow {
  double scale = 1.0;
  BenchRow row;
};

/// Re-evaluates with every line limit multiplied by each scale; the model is not retrained.
std::vector<SweepRow> sweep_line_limits(const MlpParams* model, const GridCase& grid,
                                        const std::vector<LoadScenario>& scenarios,
                                        const std::vector<double>& scales, const std::vector<Method>& methods,
                                        const EvalOptions& options = {});

struct Histogram {
  std::vector<double> edges;  // bins + 1 edges over [0, 1]
  std::vector<long> counts;
  long total = 0;
  int occupied() const;
};

/// Eval-mode outputs of every scenario, all lines pooled.
Histogram init_histogram(const MlpParams& model, const std::vector<LoadScenario>& scenarios, int bins);

struct GradcheckRow {
  int sample = 0;
  int scenario_id = 0;
  Vec z;
  Vec grad;     // implicit differentiation
  Vec fd_grad;  // central differences
  double rel_err = 0.0;  // ||grad - fd|| / max(||fd||, 1)
  bool excluded = false;  // active set changes within +/- step
};

/// Draws z ~ U[0.3, 0.9999]^N_l for scenarios taken in order (cycling),
/// redrawing where the relaxed OPF has no solution, until `samples` pairs are checked.
std::vector<GradcheckRow> gradient_check(const GridCase& grid, const std::vector<LoadScenario>& scenarios,
                                         int samples, double step, std::uint64_t seed,
                                         const OpfOptions& opf = {});

// CSV emitters.
void write_curve_csv(std::ostream& os, const std::vector<EpochRecord>& curve);
void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows);
void write_scenario_csv(std::ostream& os, const std::vector<ScenarioResult>& rows);
void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);
void write_histogram_csv(std::ostream& os, const Histogram& h);
void write_gradcheck_csv(std::ostream& os, const std::vector<GradcheckRow>& rows);

}  // namespace dadnn
