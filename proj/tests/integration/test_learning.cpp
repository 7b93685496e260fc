#include <doctest.h>

#include "dadnn/errors.hpp"
#include "dadnn/pipeline.hpp"

using namespace dadnn;

namespace {

std::string data_path(const char* name) { return std::string(DADNN_DATA_DIR) + "/" + name; }

Dataset make_dataset(const GridCase& g, int count, double lo, double hi, std::uint64_t seed) {
  auto oracle = [&](const Vec& pd) { return solve_dcopf(g, pd, SwitchVector::ones(g.n_line)).optimal(); };
  return split_dataset(generate_dataset(g, count, lo, hi, seed, oracle), {}, seed + 1);
}

}  // namespace

// Loads of 92-100 MW, where opening 1-3 is both feasible and cheaper. With
// nominal (unscaled) relaxed ratings, lowering z13 relieves the 1-3 limit, so
// gradient descent can discover the switch.
TEST_CASE("training discovers the switching action on triangle3") {
  const auto g = load_case(data_path("triangle3.m"));
  const auto ds = make_dataset(g, 200, 0.92, 1.0, 1);
  TrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.seed = 1;
  cfg.opf.limit_form = LimitForm::kUnscaled;
  const auto res = train(g, ds, cfg);
  CHECK(res.best_epoch > 0);
  CHECK(res.curve.front().skipped == 0);

  const auto test = ds.with_tag(SplitTag::kTest);
  const auto ev = evaluate(&res.params, g, test, parse_methods("opf,ots-enum,dadnn"));
  const double opf = ev.rows[0].avg_cost_k, ots = ev.rows[1].avg_cost_k, dnn = ev.rows[2].avg_cost_k;
  MESSAGE("DC-OPF " << opf << ", OTS " << ots << ", DA-DNN " << dnn << " $1k/h");
  CHECK(ev.rows[2].infeasible == 0);
  CHECK(ots <= dnn + 1e-12);
  CHECK(dnn <= ots * 1.01);
  CHECK(dnn < 0.8 * opf);

  const auto base = infer(res.params, g, g.base_demand);
  CHECK(base.z_bar.values == (Vec(3) << 1, 1, 0).finished());
  CHECK(base.dispatch.cost == doctest::Approx(1000.0).epsilon(1e-7));
  CHECK_FALSE(base.audit.violated);
}

TEST_CASE("scaled form keeps the all-closed topology on the same data") {
  // With scaled ratings the relaxed cost falls as z13 rises, so training only
  // moves the network further from opening the line.
  const auto g = load_case(data_path("triangle3.m"));
  const auto ds = make_dataset(g, 60, 0.92, 1.0, 1);
  TrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.epochs = 10;
  cfg.hidden_dim = 32;
  cfg.seed = 1;
  const auto res = train(g, ds, cfg);
  CHECK(res.curve.back().train_loss <= res.curve.front().train_loss);
  const auto base = infer(res.params, g, g.base_demand);
  CHECK(base.z_bar.values == Vec::Ones(3));
}

TEST_CASE("random head initialization aborts training on a tight network") {
  const auto g = load_case(data_path("case8_12.m")).with_line_limit_scale(0.8);
  const auto ds = make_dataset(g, 60, 0.9, 1.1, 3);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.hidden_dim = 32;
  cfg.init = InitMode::kRandom;
  try {
    train(g, ds, cfg);
    FAIL("training should have aborted");
  } catch (const InitializationError& e) {
    CHECK(e.skip_rate() > 0.5);
    CHECK(std::string(e.what()).find("initialization") != std::string::npos);
  }
  cfg.init = InitMode::kManual;
  const auto ok = train(g, ds, cfg);
  CHECK(ok.curve[1].skipped == 0);
}

TEST_CASE("training is deterministic in the seed") {
  const auto g = load_case(data_path("case5_6.m"));
  const auto ds = make_dataset(g, 30, 0.95, 1.1, 7);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 5;
  cfg.hidden_dim = 16;
  cfg.lr = 1e-3;
  cfg.seed = 11;
  const auto a = train(g, ds, cfg);
  const auto b = train(g, ds, cfg);
  CHECK((model_to_json(a.params) == model_to_json(b.params)));
  REQUIRE(a.curve.size() == 3);
  for (std::size_t e = 0; e < a.curve.size(); ++e) {
    CHECK(a.curve[e].train_loss == b.curve[e].train_loss);
    CHECK(a.curve[e].val_cost == b.curve[e].val_cost);
  }
  // The loss moved, so the comparison covers updated parameters.
  CHECK(a.curve[2].train_loss != a.curve[0].train_loss);
}
