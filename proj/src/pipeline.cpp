#include "dadnn/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "dadnn/diffgrad.hpp"
#include "dadnn/errors.hpp"

namespace dadnn {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

Mat stack_loads(const std::vector<LoadScenario>& set) {
  Mat m(static_cast<Eigen::Index>(set.size()), set.empty() ? 0 : set.front().pd.size());
  for (std::size_t i = 0; i < set.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = set[i].pd.transpose();
  return m;
}

struct ValStats {
  double relaxed = 0.0;
  double binary = 0.0;
};

ValStats validation(const GridCase& g, const MlpParams& p, const std::vector<LoadScenario>& val,
                    const TrainConfig& cfg) {
  ValStats v;
  if (val.empty()) return {kNaN, kNaN};
  double relaxed = 0.0, binary = 0.0;
  int n_relaxed = 0;
  bool all_feasible = true;
  for (const auto& s : val) {
    const Vec z = forward(p, s.pd, ForwardMode::kEval).output;
    const auto d = solve_dcopf(g, s.pd, SwitchVector::relaxed(z), cfg.opf);
    if (d.optimal()) {
      relaxed += d.cost;
      ++n_relaxed;
    }
    const auto r = infer(p, g, s.pd, cfg.threshold, cfg.opf);
    if (r.flagged_infeasible) all_feasible = false;
    binary += r.dispatch.cost;
  }
  v.relaxed = n_relaxed > 0 ? relaxed / n_relaxed : kNaN;
  v.binary = all_feasible ? binary / static_cast<double>(val.size()) : kInf;
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Training

TrainResult train(const GridCase& g, const std::vector<LoadScenario>& train_set,
                  const std::vector<LoadScenario>& val_set, const TrainConfig& cfg) {
  if (train_set.empty()) throw ContractError("training set is empty");
  if (cfg.epochs < 0 || cfg.batch_size <= 0 || cfg.lr < 0 || cfg.weight_decay < 0 || cfg.hidden_dim <= 0)
    throw ContractError("training configuration has a non-positive field");
  for (const auto& s : train_set)
    if (s.pd.size() != g.n_bus) throw ContractError("scenario load length does not match the case");

  TrainResult out;
  MlpParams p = init_network(g.n_bus, cfg.hidden_dim, g.n_line, cfg.seed, cfg.init, cfg.hidden_layers, cfg.dropout);
  set_input_normalization(p, stack_loads(train_set));
  auto opt = AdamWState::for_params(p, cfg.lr, cfg.weight_decay);

  Rng shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  Rng dropout_rng(cfg.seed + 1);
  const int n = static_cast<int>(train_set.size());
  const int batch = std::min(cfg.batch_size, n);

  // Epoch 0: the untrained network, no updates.
  {
    const auto t0 = Clock::now();
    EpochRecord r;
    double loss = 0.0;
    for (const auto& s : train_set) {
      const Vec z = forward(p, s.pd, ForwardMode::kEval).output;
      const auto d = solve_dcopf(g, s.pd, SwitchVector::relaxed(z), cfg.opf);
      ++r.samples;
      if (!d.optimal()) {
        ++r.skipped;
        continue;
      }
      loss += d.cost;
    }
    r.train_loss = r.samples > r.skipped ? loss / (r.samples - r.skipped) : kNaN;
    const auto v = validation(g, p, val_set, cfg);
    r.val_cost = v.relaxed;
    r.val_binary_cost = v.binary;
    r.wall_s = seconds_since(t0);
    out.curve.push_back(r);
  }
  out.params = p;
  double best = out.curve.front().val_binary_cost;

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    EpochRecord r;
    r.epoch = epoch;
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss = 0.0;
    int used_total = 0;
    for (int start = 0; start < n; start += batch) {
      const int stop = std::min(n, start + batch);
      MlpGrads acc = MlpGrads::zeros_like(p);
      int used = 0;
      for (int i = start; i < stop; ++i) {
        const auto& s = train_set[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
        ++r.samples;
        const auto trace = forward(p, s.pd, ForwardMode::kTrain, &dropout_rng);
        const auto cg = relaxed_cost_gradient(g, s.pd, trace.output, cfg.opf);
        if (!cg.ok) {
          ++r.skipped;
          continue;
        }
        acc += backward(p, trace, cg.grad);
        loss += cg.dispatch.cost;
        ++used;
      }
      if (used == 0) continue;
      acc *= 1.0 / used;
      adamw_step(p, acc, opt);
      used_total += used;
    }
    r.train_loss = used_total > 0 ? loss / used_total : kNaN;
    const auto v = validation(g, p, val_set, cfg);
    r.val_cost = v.relaxed;
    r.val_binary_cost = v.binary;
    r.wall_s = seconds_since(t0);
    out.curve.push_back(r);

    if (epoch == 1 && cfg.abort_on_skip) {
      const double rate = static_cast<double>(r.skipped) / std::max(1, r.samples);
      if (rate > cfg.max_first_epoch_skip) {
        std::ostringstream msg;
        msg << "first epoch skipped " << r.skipped << " of " << r.samples
            << " samples: the relaxed OPF had no solution at the predicted line status. "
               "Check the last-layer initialization (head bias "
            << p.layers.back().b.mean() << ", weight norm " << p.layers.back().W.norm() << ").";
        throw InitializationError(msg.str(), rate);
      }
    }
    if (v.binary < best - 1e-9 * std::abs(best)) {
      best = v.binary;
      out.params = p;
      out.best_epoch = epoch;
    }
  }
  // Without a validation set the last parameters are returned.
  if (val_set.empty()) {
    out.params = p;
    out.best_epoch = cfg.epochs;
  }
  return out;
}

TrainResult train(const GridCase& g, const Dataset& ds, const TrainConfig& cfg) {
  return train(g, ds.with_tag(SplitTag::kTrain), ds.with_tag(SplitTag::kVal), cfg);
}

// ---------------------------------------------------------------------------
// Inference

SwitchVector binarize(const Vec& z, double threshold) {
  return SwitchVector::binary((z.array() >= threshold).cast<double>().matrix());
}

InferenceResult infer(const MlpParams& model, const GridCase& g, const Vec& pd, double threshold,
                      const OpfOptions& opf) {
  check_model_shape(model, g.n_bus, g.n_line);
  if (pd.size() != g.n_bus) throw ContractError("pd length must equal the number of buses");
  InferenceResult r;
  const auto t0 = Clock::now();
  r.z_relaxed = forward(model, pd, ForwardMode::kEval).output;
  r.z_bar = binarize(r.z_relaxed, threshold);
  r.connected = serves_all_load(g, pd, r.z_bar.closed_mask());
  if (r.connected) {
    r.dispatch = solve_dcopf(g, pd, r.z_bar, opf);
  } else {
    r.dispatch.status = QpStatus::kInfeasible;
    r.dispatch.diagnostics = "predicted topology disconnects load from the slack island";
  }
  r.seconds = seconds_since(t0);

  if (r.dispatch.optimal()) {
    r.audit = check_feasibility(g, pd, r.z_bar, r.dispatch);
  } else {
    r.dispatch.pg = Vec::Constant(g.n_gen, kNaN);
    r.dispatch.theta = Vec::Constant(g.n_bus, kNaN);
    r.dispatch.cost = kNaN;
    r.audit.violated = true;
    r.audit.max_eq_violation = kInf;
    r.audit.max_ineq_violation = kInf;
  }
  r.flagged_infeasible = !r.dispatch.optimal();
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation

std::string_view to_string(Method m) {
  switch (m) {
    case Method::kEd: return "ed";
    case Method::kOpf: return "opf";
    case Method::kOtsEnum: return "ots-enum";
    case Method::kOtsBnb: return "ots-bnb";
    case Method::kDadnn: break;
  }
  return "dadnn";
}

Method method_from_string(std::string_view s) {
  for (Method m : {Method::kEd, Method::kOpf, Method::kOtsEnum, Method::kOtsBnb, Method::kDadnn})
    if (s == to_string(m)) return m;
  throw ContractError("unknown method '" + std::string(s) + "'");
}

std::vector<Method> parse_methods(std::string_view list) {
  std::vector<Method> out;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    const auto comma = list.find(',', pos);
    const auto item = list.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
    if (!item.empty()) out.push_back(method_from_string(item));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

ScenarioResult run_method(Method m, const GridCase& g, const LoadScenario& s, const MlpParams* model,
                          const EvalOptions& o) {
  ScenarioResult r;
  r.scenario_id = s.scenario_id;
  r.method = m;
  const Vec& pd = s.pd;

  auto take_dispatch = [&](const Dispatch& d, const SwitchVector& z) {
    r.status = std::string(to_string(d.status));
    r.feasible = d.optimal();
    if (!r.feasible) {
      r.cost = kNaN;
      r.eq_violated = r.ineq_violated = true;
      return;
    }
    r.cost = d.cost;
    const auto audit = check_feasibility(g, pd, z, d);
    r.eq_violated = !(audit.max_eq_violation <= 1e-6);
    r.ineq_violated = !(audit.max_ineq_violation <= 1e-6);
    r.lines_open = z.num_open();
  };

  const auto t0 = Clock::now();
  switch (m) {
    case Method::kEd: {
      const auto d = solve_ed(g, pd, o.opf.qp);
      r.seconds = seconds_since(t0);
      r.status = std::string(to_string(d.status));
      r.feasible = d.optimal();
      if (r.feasible) {
        // ED is audited against its own constraints: aggregate balance and unit limits.
        r.cost = d.cost;
        r.eq_violated = std::abs(d.pg.sum() - pd.sum()) > 1e-6;
        r.ineq_violated = ((d.pg - g.pg_max).array() > 1e-6).any() || ((g.pg_min - d.pg).array() > 1e-6).any();
      } else {
        r.cost = kNaN;
        r.eq_violated = r.ineq_violated = true;
      }
      return r;
    }
    case Method::kOpf: {
      const auto z = SwitchVector::ones(g.n_line);
      const auto d = solve_dcopf(g, pd, z, o.opf);
      r.seconds = seconds_since(t0);
      take_dispatch(d, z);
      return r;
    }
    case Method::kOtsEnum:
    case Method::kOtsBnb: {
      BnbOptions bnb = o.bnb;
      bnb.qp = o.opf.qp;
      const auto res = m == Method::kOtsEnum ? enumerate_ots(g, pd, std::nullopt, o.opf.qp)
                                             : branch_and_bound_ots(g, pd, bnb);
      r.seconds = seconds_since(t0);
      if (!res.feasible()) {
        r.status = std::string(to_string(res.optimality));
        r.cost = kNaN;
        r.eq_violated = r.ineq_violated = true;
        return r;
      }
      take_dispatch(res.dispatch, res.z_star);
      r.status = std::string(to_string(res.optimality));
      return r;
    }
    case Method::kDadnn: {
      if (model == nullptr) throw ContractError("the dadnn method needs a model");
      const auto inf = infer(*model, g, pd, o.threshold, o.opf);
      r.seconds = inf.seconds;
      r.status = inf.connected ? std::string(to_string(inf.dispatch.status)) : "disconnected";
      r.feasible = !inf.flagged_infeasible;
      r.cost = inf.dispatch.cost;
      r.eq_violated = !(inf.audit.max_eq_violation <= 1e-6);
      r.ineq_violated = !(inf.audit.max_ineq_violation <= 1e-6);
      r.lines_open = inf.z_bar.num_open();
      return r;
    }
  }
  return r;
}

BenchRow summarize(Method m, const std::vector<ScenarioResult>& results) {
  BenchRow row;
  row.method = m;
  double cost = 0.0, t = 0.0, t2 = 0.0;
  int eq = 0, ineq = 0;
  for (const auto& r : results) {
    if (r.method != m) continue;
    ++row.scenarios;
    if (r.feasible) {
      cost += r.cost;
    } else {
      ++row.infeasible;
    }
    eq += r.eq_violated;
    ineq += r.ineq_violated;
    t += r.seconds;
  }
  if (row.scenarios == 0) return row;
  const double n = row.scenarios;
  const int feasible = row.scenarios - row.infeasible;
  row.avg_cost_k = feasible > 0 ? cost / feasible / 1000.0 : kNaN;
  row.eq_viol_pct = 100.0 * eq / n;
  row.ineq_viol_pct = 100.0 * ineq / n;
  row.time_mean_s = t / n;
  for (const auto& r : results)
    if (r.method == m) t2 += (r.seconds - row.time_mean_s) * (r.seconds - row.time_mean_s);
  row.time_std_s = std::sqrt(t2 / n);
  return row;
}

Evaluation evaluate(const MlpParams* model, const GridCase& g, const std::vector<LoadScenario>& scenarios,
                    const std::vector<Method>& methods, const EvalOptions& options) {
  Evaluation ev;
  if (std::find(methods.begin(), methods.end(), Method::kDadnn) != methods.end()) {
    if (model == nullptr) throw ContractError("the dadnn method needs a model");
    check_model_shape(*model, g.n_bus, g.n_line);
  }
  for (Method m : methods)
    for (const auto& s : scenarios) ev.details.push_back(run_method(m, g, s, model, options));
  for (Method m : methods) ev.rows.push_back(summarize(m, ev.details));
  std::stable_sort(ev.details.begin(), ev.details.end(), [](const ScenarioResult& a, const ScenarioResult& b) {
    return std::make_pair(static_cast<int>(a.method), a.scenario_id) <
           std::make_pair(static_cast<int>(b.method), b.scenario_id);
  });
  return ev;
}

std::vector<SweepRow> sweep_line_limits(const MlpParams* model, const GridCase& g,
                                        const std::vector<LoadScenario>& scenarios,
                                        const std::vector<double>& scales, const std::vector<Method>& methods,
                                        const EvalOptions& options) {
  for (double s : scales)
    if (!(s > 0) || !std::isfinite(s)) throw ContractError("line-limit scales must be positive");
  std::vector<SweepRow> out;
  for (double s : scales) {
    const auto scaled = g.with_line_limit_scale(s);
    for (const auto& row : evaluate(model, scaled, scenarios, methods, options).rows) out.push_back({s, row});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Histogram and gradient check

int Histogram::occupied() const {
  return static_cast<int>(std::count_if(counts.begin(), counts.end(), [](long c) { return c > 0; }));
}

Histogram init_histogram(const MlpParams& model, const std::vector<LoadScenario>& scenarios, int bins) {
  if (bins <= 0) throw ContractError("bin count must be positive");
  Histogram h;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (int i = 0; i <= bins; ++i) h.edges.push_back(static_cast<double>(i) / bins);
  for (const auto& s : scenarios) {
    const Vec z = forward(model, s.pd, ForwardMode::kEval).output;
    for (Eigen::Index l = 0; l < z.size(); ++l) {
      const int b = std::clamp(static_cast<int>(z(l) * bins), 0, bins - 1);
      ++h.counts[static_cast<std::size_t>(b)];
      ++h.total;
    }
  }
  return h;
}

std::vector<GradcheckRow> gradient_check(const GridCase& g, const std::vector<LoadScenario>& scenarios,
                                         int samples, double step, std::uint64_t seed, const OpfOptions& opf) {
  if (scenarios.empty() || samples <= 0) return {};
  if (!(step > 0) || step >= 0.3) throw ContractError("finite-difference step must lie in (0, 0.3)");
  Rng rng(seed);
  std::uniform_real_distribution<double> uz(0.3, 1.0 - 1e-4);
  std::vector<GradcheckRow> rows;
  long draws = 0;
  const long max_draws = 100L * samples;
  std::size_t next = 0;
  while (static_cast<int>(rows.size()) < samples && draws < max_draws) {
    ++draws;
    const auto& s = scenarios[next % scenarios.size()];
    Vec z(g.n_line);
    for (int l = 0; l < g.n_line; ++l) z(l) = std::min(uz(rng), 1.0 - 2 * step);
    const auto cg = relaxed_cost_gradient(g, s.pd, z, opf);
    if (!cg.ok) continue;
    const auto fd = finite_diff_grad(g, s.pd, z, step, opf);
    if (std::find(fd.reliable.begin(), fd.reliable.end(), false) != fd.reliable.end()) continue;
    ++next;
    GradcheckRow r;
    r.sample = static_cast<int>(rows.size());
    r.scenario_id = s.scenario_id;
    r.z = z;
    r.grad = cg.grad;
    r.fd_grad = fd.grad;
    r.rel_err = (cg.grad - fd.grad).norm() / std::max(fd.grad.norm(), 1.0);
    r.excluded = std::find(fd.active_set_changed.begin(), fd.active_set_changed.end(), true) !=
                 fd.active_set_changed.end();
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

}  // namespace

void write_curve_csv(std::ostream& os, const std::vector<EpochRecord>& curve) {
  os << "epoch,train_loss,val_cost,val_binary_cost,skipped,samples,wall_s\n";
  for (const auto& r : curve)
    os << r.epoch << ',' << num(r.train_loss) << ',' << num(r.val_cost) << ',' << num(r.val_binary_cost) << ','
       << r.skipped << ',' << r.samples << ',' << num(r.wall_s) << '\n';
}

void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
  os << "method,scenarios,infeasible,avg_cost_k,ineq_viol_pct,eq_viol_pct,time_mean_s,time_std_s\n";
  for (const auto& r : rows)
    os << to_string(r.method) << ',' << r.scenarios << ',' << r.infeasible << ',' << num(r.avg_cost_k) << ','
       << num(r.ineq_viol_pct) << ',' << num(r.eq_viol_pct) << ',' << num(r.time_mean_s) << ','
       << num(r.time_std_s) << '\n';
}

void write_scenario_csv(std::ostream& os, const std::vector<ScenarioResult>& rows) {
  os << "scenario_id,method,status,feasible,cost,eq_violated,ineq_violated,lines_open,seconds\n";
  for (const auto& r : rows)
    os << r.scenario_id << ',' << to_string(r.method) << ',' << r.status << ',' << r.feasible << ','
       << num(r.cost) << ',' << r.eq_violated << ',' << r.ineq_violated << ',' << r.lines_open << ','
       << num(r.seconds) << '\n';
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "scale,method,scenarios,infeasible,avg_cost_k,ineq_viol_pct,eq_viol_pct,time_mean_s,time_std_s\n";
  for (const auto& s : rows) {
    const auto& r = s.row;
    os << num(s.scale) << ',' << to_string(r.method) << ',' << r.scenarios << ',' << r.infeasible << ','
       << num(r.avg_cost_k) << ',' << num(r.ineq_viol_pct) << ',' << num(r.eq_viol_pct) << ','
       << num(r.time_mean_s) << ',' << num(r.time_std_s) << '\n';
  }
}

void write_histogram_csv(std::ostream& os, const Histogram& h) {
  os << "bin,lo,hi,count,fraction\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    os << i << ',' << num(h.edges[i]) << ',' << num(h.edges[i + 1]) << ',' << h.counts[i] << ','
       << num(h.total > 0 ? static_cast<double>(h.counts[i]) / h.total : 0.0) << '\n';
}

void write_gradcheck_csv(std::ostream& os, const std::vector<GradcheckRow>& rows) {
  os << "sample,scenario_id,line,z,grad,fd_grad,rel_err,excluded\n";
  for (const auto& r : rows)
    for (Eigen::Index l = 0; l < r.z.size(); ++l)
      os << r.sample << ',' << r.scenario_id << ',' << l << ',' << num(r.z(l)) << ',' << num(r.grad(l)) << ','
         << num(r.fd_grad(l)) << ',' << num(r.rel_err) << ',' << r.excluded << '\n';
}

}  // namespace dadnn
