// Command-line front end: data generation, exact solvers, training and evaluation.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "dadnn/diffgrad.hpp"
#include "dadnn/errors.hpp"
#include "dadnn/pipeline.hpp"

using namespace dadnn;

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  return os;
}

std::string join(const Vec& v) {
  std::ostringstream os;
  os.precision(10);
  for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? ";" : "") << v(i);
  return os.str();
}

// Scenarios of the requested split, or all of them when the file carries no tags.
std::vector<LoadScenario> pick(const Dataset& ds, SplitTag tag) {
  auto s = ds.with_tag(tag);
  return s.empty() ? ds.scenarios : s;
}

LimitForm parse_form(const std::string& s) {
  if (s == "scaled") return LimitForm::kScaled;
  if (s == "unscaled") return LimitForm::kUnscaled;
  throw ContractError("--limit-form must be scaled or unscaled");
}

std::vector<double> parse_scales(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dispatch-aware switching: DC-OPF, exact OTS, and the learned switching model"};
  app.require_subcommand(1);

  std::string case_path, data_path, out_path, model_path, curve_path, method_name, methods_csv, scales_csv;
  std::string limit_form = "scaled", init_mode = "manual", details_path;
  int count = 0, epochs = 40, batch = 50, hidden = 128, samples = 20, bins = 50;
  double scale_min = 1.0, scale_max = 1.1, f_train = 0.5, f_val = 0.167, f_test = 0.333;
  double mip_gap = 1e-5, time_limit = 60.0, lr = 5e-5, wd = 1e-2, dropout = 0.1, threshold = 0.5, step = 1e-5;
  std::uint64_t seed = 0;

  auto* gen = app.add_subcommand("gen-data", "Sample DC-OPF-feasible load scenarios");
  gen->add_option("--case", case_path)->required();
  gen->add_option("--count", count)->required();
  gen->add_option("--scale-min", scale_min)->required();
  gen->add_option("--scale-max", scale_max)->required();
  gen->add_option("--seed", seed)->required();
  gen->add_option("--out", out_path)->required();

  auto* split = app.add_subcommand("split", "Tag scenarios train/val/test (rewrites the file)");
  split->add_option("--data", data_path)->required();
  split->add_option("--train", f_train);
  split->add_option("--val", f_val);
  split->add_option("--test", f_test);
  split->add_option("--seed", seed)->required();
  split->add_option("--out", out_path, "Write here instead of rewriting --data");

  auto* solve = app.add_subcommand("solve", "Solve every scenario with one method");
  solve->add_option("--case", case_path)->required();
  solve->add_option("--loads", data_path)->required();
  solve->add_option("--method", method_name)->required()->check(CLI::IsMember({"ed", "opf", "ots-enum", "ots-bnb"}));
  solve->add_option("--mip-gap", mip_gap);
  solve->add_option("--time-limit", time_limit);
  solve->add_option("--out", out_path)->required();

  auto* tr = app.add_subcommand("train", "Train the switching network");
  tr->add_option("--case", case_path)->required();
  tr->add_option("--data", data_path)->required();
  tr->add_option("--epochs", epochs);
  tr->add_option("--batch", batch);
  tr->add_option("--lr", lr);
  tr->add_option("--wd", wd);
  tr->add_option("--hidden", hidden);
  tr->add_option("--dropout", dropout);
  tr->add_option("--seed", seed)->required();
  tr->add_option("--out", out_path)->required();
  tr->add_option("--curve", curve_path)->required();
  tr->add_option("--limit-form", limit_form)->check(CLI::IsMember({"scaled", "unscaled"}));
  tr->add_option("--init", init_mode)->check(CLI::IsMember({"manual", "random"}));

  auto* inf = app.add_subcommand("infer", "Predict topologies and dispatch");
  inf->add_option("--model", model_path)->required();
  inf->add_option("--case", case_path)->required();
  inf->add_option("--loads", data_path)->required();
  inf->add_option("--threshold", threshold);
  inf->add_option("--out", out_path)->required();

  auto* bench = app.add_subcommand("bench", "Compare methods on the test split");
  bench->add_option("--case", case_path)->required();
  bench->add_option("--data", data_path)->required();
  bench->add_option("--model", model_path);
  bench->add_option("--methods", methods_csv)->required();
  bench->add_option("--mip-gap", mip_gap);
  bench->add_option("--time-limit", time_limit);
  bench->add_option("--out", out_path)->required();
  bench->add_option("--details", details_path, "Per-scenario CSV");

  auto* sweep = app.add_subcommand("sweep", "Evaluate under scaled line limits without retraining");
  sweep->add_option("--model", model_path)->required();
  sweep->add_option("--case", case_path)->required();
  sweep->add_option("--data", data_path)->required();
  sweep->add_option("--scales", scales_csv)->required();
  methods_csv = "ed,opf,ots-enum,dadnn";
  sweep->add_option("--methods", methods_csv);
  sweep->add_option("--out", out_path)->required();

  auto* gc = app.add_subcommand("gradcheck", "Implicit gradient vs central differences");
  gc->add_option("--case", case_path)->required();
  gc->add_option("--loads", data_path)->required();
  gc->add_option("--samples", samples);
  gc->add_option("--step", step);
  gc->add_option("--seed", seed);
  gc->add_option("--limit-form", limit_form)->check(CLI::IsMember({"scaled", "unscaled"}));
  gc->add_option("--out", out_path)->required();

  auto* hist = app.add_subcommand("init-hist", "Histogram of relaxed line status outputs");
  hist->add_option("--model", model_path)->required();
  hist->add_option("--data", data_path)->required();
  hist->add_option("--bins", bins);
  hist->add_option("--out", out_path)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const auto g = load_case(case_path);
      auto oracle = [&](const Vec& pd) { return solve_dcopf(g, pd, SwitchVector::ones(g.n_line)).optimal(); };
      save_dataset(generate_dataset(g, count, scale_min, scale_max, seed, oracle), out_path);
    } else if (split->parsed()) {
      auto ds = split_dataset(load_dataset(data_path), {f_train, f_val, f_test}, seed);
      save_dataset(ds, out_path.empty() ? data_path : out_path);
      std::cout << "train " << ds.with_tag(SplitTag::kTrain).size() << ", val " << ds.with_tag(SplitTag::kVal).size()
                << ", test " << ds.with_tag(SplitTag::kTest).size() << '\n';
    } else if (solve->parsed()) {
      const auto g = load_case(case_path);
      const auto ds = load_dataset(data_path);
      EvalOptions o;
      o.bnb.mip_gap = mip_gap;
      o.bnb.time_limit = time_limit;
      const auto m = method_from_string(method_name);
      std::vector<ScenarioResult> rows;
      for (const auto& s : ds.scenarios) rows.push_back(run_method(m, g, s, nullptr, o));
      auto os = open_out(out_path);
      write_scenario_csv(os, rows);
    } else if (tr->parsed()) {
      const auto g = load_case(case_path);
      const auto ds = load_dataset(data_path);
      if (ds.with_tag(SplitTag::kTrain).empty()) throw ContractError("dataset has no train split; run split first");
      TrainConfig cfg;
      cfg.epochs = epochs;
      cfg.batch_size = batch;
      cfg.lr = lr;
      cfg.weight_decay = wd;
      cfg.hidden_dim = hidden;
      cfg.dropout = dropout;
      cfg.seed = seed;
      cfg.opf.limit_form = parse_form(limit_form);
      cfg.init = init_mode == "random" ? InitMode::kRandom : InitMode::kManual;
      const auto res = train(g, ds, cfg);
      save_model(res.params, out_path);
      auto os = open_out(curve_path);
      write_curve_csv(os, res.curve);
      std::cout << "best epoch " << res.best_epoch << ", val cost " << res.curve[res.best_epoch].val_binary_cost
                << " $/h\n";
    } else if (inf->parsed()) {
      const auto model = load_model(model_path);
      const auto g = load_case(case_path);
      check_model_shape(model, g.n_bus, g.n_line);
      const auto ds = load_dataset(data_path);
      auto os = open_out(out_path);
      os << "scenario_id,status,cost,lines_open,z_relaxed,z_bar,violated,max_eq_violation,max_ineq_violation,seconds\n";
      os.precision(12);
      for (const auto& s : ds.scenarios) {
        const auto r = infer(model, g, s.pd, threshold);
        os << s.scenario_id << ',' << (r.connected ? std::string(to_string(r.dispatch.status)) : "disconnected")
           << ',' << r.dispatch.cost << ',' << r.z_bar.num_open() << ',' << join(r.z_relaxed) << ','
           << join(r.z_bar.values) << ',' << r.audit.violated << ',' << r.audit.max_eq_violation << ','
           << r.audit.max_ineq_violation << ',' << r.seconds << '\n';
      }
    } else if (bench->parsed()) {
      const auto g = load_case(case_path);
      const auto methods = parse_methods(methods_csv);
      std::optional<MlpParams> model;
      if (!model_path.empty()) model = load_model(model_path);
      EvalOptions o;
      o.bnb.mip_gap = mip_gap;
      o.bnb.time_limit = time_limit;
      const auto ev = evaluate(model ? &*model : nullptr, g, pick(load_dataset(data_path), SplitTag::kTest), methods, o);
      auto os = open_out(out_path);
      write_bench_csv(os, ev.rows);
      if (!details_path.empty()) {
        auto ds = open_out(details_path);
        write_scenario_csv(ds, ev.details);
      }
    } else if (sweep->parsed()) {
      const auto model = load_model(model_path);
      const auto g = load_case(case_path);
      const auto rows = sweep_line_limits(&model, g, pick(load_dataset(data_path), SplitTag::kTest),
                                          parse_scales(scales_csv), parse_methods(methods_csv));
      auto os = open_out(out_path);
      write_sweep_csv(os, rows);
    } else if (gc->parsed()) {
      const auto g = load_case(case_path);
      OpfOptions opf;
      opf.limit_form = parse_form(limit_form);
      const auto rows = gradient_check(g, load_dataset(data_path).scenarios, samples, step, seed, opf);
      auto os = open_out(out_path);
      write_gradcheck_csv(os, rows);
      int excluded = 0;
      double worst = 0.0;
      for (const auto& r : rows) {
        if (r.excluded) {
          ++excluded;
        } else {
          worst = std::max(worst, r.rel_err);
        }
      }
      std::cout << rows.size() << " pairs, " << excluded << " excluded, worst rel err " << worst << '\n';
    } else if (hist->parsed()) {
      const auto model = load_model(model_path);
      const auto h = init_histogram(model, load_dataset(data_path).scenarios, bins);
      auto os = open_out(out_path);
      write_histogram_csv(os, h);
    }
  } catch (const InitializationError& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
