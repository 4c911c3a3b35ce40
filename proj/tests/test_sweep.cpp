// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "pbp/error.hpp"
#include "pbp/pareto.hpp"
#include "pbp/sweep.hpp"

using namespace pbp;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "pbp_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

SweepSpace tiny_space() {
  SweepSpace s;
  s.conv_layers = {0};
  s.linear_layers = {1, 2};
  s.base_width = {4};
  s.max_epochs = 6;
  s.patience_min = 2;
  s.patience_max = 3;
  return s;
}

LabeledDataset tiny_spirals() { return split(two_spirals(15, 0.05, 3), SplitRatios{}, 3); }

TrialRecord rec(std::size_t idx, ModelFormat f, std::size_t params, double acc, TrialStatus st = TrialStatus::Ok) {
  TrialRecord r;
  r.trial_index = idx;
  r.model_format = f;
  r.param_count = params;
  r.test_accuracy = acc;
  r.status = st;
  if (st == TrialStatus::Failed) r.reason = "diverged";
  return r;
}

}  // namespace

TEST_CASE("sample_config is a function of (seed, index)") {
  const SweepSpace space;
  for (std::size_t i = 0; i < 20; ++i) {
    const auto a = sample_config(space, 5, i);
    const auto b = sample_config(space, 5, i);
    CHECK(a.train.learning_rate == b.train.learning_rate);
    CHECK(a.arch.base_width == b.arch.base_width);
    CHECK(a.model_format == b.model_format);
    CHECK(a.arch.dropout_rate == b.arch.dropout_rate);
    CHECK(a.train.dendrite.has_value() == b.train.dendrite.has_value());
  }
  CHECK(sample_config(space, 5, 0).train.learning_rate != sample_config(space, 6, 0).train.learning_rate);
}

TEST_CASE("1000 samples cover every categorical value and stay in range") {
  const SweepSpace space;
  std::set<std::size_t> conv, linear, width, patience, dendrites;
  std::set<GrowthMode> growth;
  std::set<DendriteFunction> fns;
  std::set<PerforateTarget> targets;
  std::set<ModelFormat> formats;
  std::vector<double> lrs;
  for (std::size_t i = 0; i < 1000; ++i) {
    const auto c = sample_config(space, 11, i);
    conv.insert(c.arch.conv_layers);
    linear.insert(c.arch.linear_layers);
    width.insert(c.arch.base_width);
    growth.insert(c.arch.growth_mode);
    patience.insert(c.train.patience);
    formats.insert(c.model_format);
    lrs.push_back(c.train.learning_rate);
    CHECK((c.arch.dropout_rate >= 0.0 && c.arch.dropout_rate <= 0.5));
    CHECK((c.arch.noise_std >= 0.0 && c.arch.noise_std <= 0.3));
    CHECK((c.train.learning_rate >= 1e-4 && c.train.learning_rate <= 1e-1));
    if (c.model_format == ModelFormat::Traditional) {
      CHECK(!c.train.dendrite.has_value());
      CHECK(c.train.max_cycles == 0);
    } else {
      REQUIRE(c.train.dendrite.has_value());
      const auto& d = *c.train.dendrite;
      dendrites.insert(d.max_dendrites);
      fns.insert(d.forward_fn);
      targets.insert(d.perforate_target);
      CHECK(d.mode == (c.model_format == ModelFormat::CC ? DendriteMode::CC : DendriteMode::GD));
      CHECK((d.init_magnitude >= 1e-3 && d.init_magnitude <= 1e-1));
      CHECK((c.train.switch_threshold >= 1e-3 && c.train.switch_threshold <= 5e-2));
      CHECK_NOTHROW(d.validate());
    }
    CHECK_NOTHROW(c.train.validate());
    CHECK_NOTHROW(c.arch.hidden_widths());
  }
  CHECK(conv == std::set<std::size_t>{0, 1, 2, 3});
  CHECK(linear == std::set<std::size_t>{1, 2, 3});
  CHECK(width == std::set<std::size_t>{4, 8, 16, 32});
  CHECK(growth.size() == 2);
  CHECK(patience == std::set<std::size_t>{3, 4, 5, 6, 7, 8, 9, 10});
  CHECK(dendrites == std::set<std::size_t>{1, 2, 3, 4});
  CHECK(fns.size() == 3);
  CHECK(targets.size() == 2);
  CHECK(formats.size() == 3);

  std::nth_element(lrs.begin(), lrs.begin() + 500, lrs.end());
  const double median = lrs[500];
  const double analytic = std::pow(10.0, -2.5);
  CHECK(median >= 0.5 * analytic);
  CHECK(median <= 1.5 * analytic);
}

TEST_CASE("invalid spaces are rejected") {
  SweepSpace s;
  s.base_width.clear();
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = {};
  s.lr_min = 1.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = {};
  s.conv_layers = {2};
  CHECK_THROWS_AS(s.fitted_to(Shape{2}), ConfigError);
  CHECK(SweepSpace{}.fitted_to(Shape{2}).conv_layers == std::vector<std::size_t>{0});
}

TEST_CASE("CSV rows round trip") {
  const SweepSpace space;
  for (std::size_t i = 0; i < 30; ++i) {
    TrialConfig c = sample_config(space, 2, i);
    c.arch.input_shape = {2};
    c.arch.num_classes = 2;
    TrialResult res;
    res.status = i % 7 == 3 ? TrialStatus::Failed : TrialStatus::Ok;
    res.param_count = 100 + i;
    res.test_accuracy = 0.1 * static_cast<double>(i % 10) + 1.0 / 30.0;
    if (res.status == TrialStatus::Failed) res.reason = "loss, diverged \"badly\"";
    const auto r = make_record(c, res, 0.25);
    const auto back = parse_csv_row(to_csv_row(r), 2);
    CHECK(to_csv_row(back) == to_csv_row(r));
    CHECK(back.test_accuracy == r.test_accuracy);
    CHECK(back.reason == r.reason);
  }
  CHECK_THROWS_AS(parse_csv_row("1,2,3", 7), ConfigError);
  try {
    parse_csv_row("garbage", 7);
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("7") != std::string::npos);
  }
}

TEST_CASE("sweep results do not depend on parallelism") {
  const auto dir = fresh_dir("sweep_par");
  const auto data = tiny_spirals();
  const auto a = run_sweep(tiny_space(), 9, 3, data, dir / "p1.csv", {.parallelism = 1});
  const auto b = run_sweep(tiny_space(), 9, 3, data, dir / "p3.csv", {.parallelism = 3});
  CHECK(a.size() == 3);
  CHECK(canonical_rows(a) == canonical_rows(b));
  const auto reread = read_results_csv(dir / "p3.csv");
  CHECK(canonical_rows(reread) == canonical_rows(b));
}

TEST_CASE("a diverging trial is recorded as Failed and the sweep completes") {
  const auto dir = fresh_dir("sweep_fail");
  SweepOptions opt;
  opt.learning_rate_overrides[1] = 1e3;
  const auto r = run_sweep(tiny_space(), 4, 3, tiny_spirals(), dir / "r.csv", opt);
  REQUIRE(r.size() == 3);
  CHECK(r[1].status == TrialStatus::Failed);
  CHECK(!r[1].reason.empty());
  CHECK(r[0].ok());
  CHECK(r[2].ok());
}

TEST_CASE("an interrupted sweep resumes to the uninterrupted result") {
  const auto dir = fresh_dir("sweep_resume");
  const auto data = tiny_spirals();
  const auto full = run_sweep(tiny_space(), 21, 4, data, dir / "full.csv");
  SweepOptions stop;
  stop.stop_after = 2;
  const auto partial = run_sweep(tiny_space(), 21, 4, data, dir / "part.csv", stop);
  CHECK(partial.size() == 2);
  // torn trailing line from a kill mid-write
  { std::ofstream(dir / "part.csv", std::ios::app) << "3,CC,0,1"; }
  std::size_t ran = 0;
  SweepOptions count;
  count.on_trial = [&](const TrialRecord&, std::size_t, std::size_t) { ++ran; };
  const auto resumed = run_sweep(tiny_space(), 21, 4, data, dir / "part.csv", count);
  CHECK(ran == 2);
  CHECK(canonical_rows(resumed) == canonical_rows(full));
  CHECK(canonical_rows(read_results_csv(dir / "part.csv")) == canonical_rows(full));
}

TEST_CASE("an unwritable output path fails before any trial runs") {
  std::size_t ran = 0;
  SweepOptions opt;
  opt.on_trial = [&](const TrialRecord&, std::size_t, std::size_t) { ++ran; };
  CHECK_THROWS_AS(run_sweep(tiny_space(), 1, 2, tiny_spirals(), "/nonexistent_dir_pbp/x/results.csv", opt), IoError);
  CHECK(ran == 0);
  CHECK_THROWS_AS(read_results_csv("/nonexistent_dir_pbp/results.csv"), IoError);
}

TEST_CASE("pareto frontier examples") {
  {
    const std::vector<TrialRecord> r{rec(0, ModelFormat::CC, 100, 0.9), rec(1, ModelFormat::Traditional, 200, 0.8)};
    const auto f = pareto_frontier(r);
    REQUIRE(f.size() == 1);
    CHECK(f[0].param_count == 100);
    CHECK(f[0].test_accuracy == 0.9);
  }
  {
    const std::vector<TrialRecord> r{rec(0, ModelFormat::CC, 200, 0.9), rec(1, ModelFormat::Traditional, 100, 0.8)};
    const auto f = pareto_frontier(r);
    REQUIRE(f.size() == 2);
    CHECK(f[0].param_count == 100);
    CHECK(f[1].param_count == 200);
  }
  {
    const std::vector<TrialRecord> r{rec(4, ModelFormat::CC, 100, 0.9), rec(2, ModelFormat::GD, 100, 0.9)};
    const auto f = pareto_frontier(r);
    REQUIRE(f.size() == 1);
    CHECK(f[0].trial_index == 2);
  }
  {
    const std::vector<TrialRecord> r{rec(0, ModelFormat::CC, 100, 0.99, TrialStatus::Failed),
                                     rec(1, ModelFormat::GD, 300, 0.5)};
    const auto f = pareto_frontier(r);
    REQUIRE(f.size() == 1);
    CHECK(f[0].trial_index == 1);
  }
  const std::vector<TrialRecord> failed{rec(0, ModelFormat::CC, 1, 1.0, TrialStatus::Failed)};
  CHECK_THROWS_AS(pareto_frontier(failed), ConfigError);
  CHECK_THROWS_AS(pareto_frontier(std::vector<TrialRecord>{}), ConfigError);
}

TEST_CASE("pareto frontier equals the all-pairs oracle on random sets") {
  Rng rng(77);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng.below(500);
    std::vector<TrialRecord> records;
    std::vector<oracle::Point> pts;
    // coarse grids force ties on both axes
    const std::size_t param_levels = 1 + rng.below(60);
    const std::size_t acc_levels = 1 + rng.below(40);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t p = 10 + 7 * rng.below(param_levels);
      const double a = static_cast<double>(rng.below(acc_levels)) / static_cast<double>(acc_levels);
      const bool ok = rng.uniform() > 0.1 || i == 0;
      records.push_back(rec(i, static_cast<ModelFormat>(rng.below(3)), p, a, ok ? TrialStatus::Ok : TrialStatus::Failed));
      if (ok) pts.push_back({p, a, i});
    }
    const auto want = oracle::pareto(pts);
    const auto got = pareto_frontier(records);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].param_count == want[i].params);
      CHECK(got[i].test_accuracy == want[i].accuracy);
      CHECK(got[i].trial_index == want[i].index);
      if (i > 0) {
        CHECK(got[i].param_count > got[i - 1].param_count);
        CHECK(got[i].test_accuracy > got[i - 1].test_accuracy);
      }
    }
  }
}

TEST_CASE("dominance: one dendritic trial dominating everything") {
  const std::vector<TrialRecord> r{rec(0, ModelFormat::CC, 50, 0.95), rec(1, ModelFormat::Traditional, 80, 0.9),
                                   rec(2, ModelFormat::Traditional, 500, 0.7), rec(3, ModelFormat::GD, 900, 0.6)};
  const auto d = dominance_report(r);
  CHECK(d.accuracy.size() == 101);
  for (const auto& row : d.accuracy) {
    if (row.threshold <= 0.95 + 1e-12) {
      CHECK(row.winner == Winner::Dendritic);
      CHECK(row.min_params == 50u);
    } else {
      CHECK(row.winner == Winner::None);
      CHECK(!row.min_params);
    }
  }
  for (const auto& row : d.budget) {
    if (row.budget >= 50.0) CHECK(row.winner == Winner::Dendritic);
  }
  CHECK(d.dendritic_at_all_thresholds);
  CHECK(d.dendritic_at_all_budgets);
  CHECK(d.dendritic_dominates);
}

TEST_CASE("dominance: a traditional trial dominating everything") {
  const std::vector<TrialRecord> r{rec(0, ModelFormat::Traditional, 50, 0.95), rec(1, ModelFormat::CC, 80, 0.9),
                                   rec(2, ModelFormat::GD, 500, 0.7)};
  const auto d = dominance_report(r);
  CHECK(!d.dendritic_at_all_thresholds);
  CHECK(!d.dendritic_at_all_budgets);
  CHECK(!d.dendritic_dominates);
  for (const auto& row : d.accuracy)
    if (row.min_params) CHECK(row.winner == Winner::Traditional);
}

TEST_CASE("dominance rows match a hand-computed table") {
  const std::vector<TrialRecord> r{rec(0, ModelFormat::Traditional, 10, 0.5), rec(1, ModelFormat::CC, 30, 0.8),
                                   rec(2, ModelFormat::Traditional, 100, 0.9), rec(3, ModelFormat::GD, 10, 0.5),
                                   rec(4, ModelFormat::CC, 5, 0.2, TrialStatus::Failed)};
  const auto d = dominance_report(r, 0.1, 1);
  REQUIRE(d.accuracy.size() == 11);
  // thresholds 0.0 .. 0.5: 10 params, both families -> Tie
  for (int k = 0; k <= 5; ++k) {
    CHECK(d.accuracy[k].min_params == 10u);
    CHECK(d.accuracy[k].winner == Winner::Tie);
    CHECK(d.accuracy[k].trial_index == 0u);
  }
  for (int k = 6; k <= 8; ++k) {
    CHECK(d.accuracy[k].min_params == 30u);
    CHECK(d.accuracy[k].winner == Winner::Dendritic);
  }
  CHECK(d.accuracy[9].min_params == 100u);
  CHECK(d.accuracy[9].winner == Winner::Traditional);
  CHECK(d.accuracy[10].winner == Winner::None);
  // budgets 10, 100 at one per decade
  REQUIRE(d.budget.size() >= 2);
  CHECK(d.budget.front().budget == doctest::Approx(10.0));
  CHECK(d.budget.front().max_accuracy == 0.5);
  CHECK(d.budget.front().winner == Winner::Tie);
  CHECK(d.budget.back().budget == doctest::Approx(100.0));
  CHECK(d.budget.back().max_accuracy == 0.9);
  CHECK(d.budget.back().winner == Winner::Traditional);
  CHECK(!d.dendritic_dominates);
}

TEST_CASE("pareto outputs are written next to the prefix") {
  const auto dir = fresh_dir("pareto_out");
  const std::vector<TrialRecord> r{rec(0, ModelFormat::Traditional, 10, 0.5), rec(1, ModelFormat::CC, 30, 0.8)};
  write_pareto_outputs(r, (dir / "kws").string());
  for (const char* s : {"_frontier.csv", "_dominance_accuracy.csv", "_dominance_budget.csv", "_dominance_summary.csv",
                        "_plot.csv"})
    CHECK(std::filesystem::exists(dir / (std::string("kws") + s)));
  CHECK_THROWS_AS(write_pareto_outputs(r, "/nonexistent_dir_pbp/x"), IoError);
}
