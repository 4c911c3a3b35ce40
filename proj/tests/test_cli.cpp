// SPDX-License-Identifier: Apache-2.0
// Runs the built command-line tool as a subprocess.
#include <doctest.h>
#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "pbp/config_json.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "pbp_tests" / "cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Outcome pbp_run(const std::string& args, const fs::path& dir) {
  const auto out_file = dir / "stdout.txt";
  const auto err_file = dir / "stderr.txt";
  const std::string cmd =
      std::string("'") + PBP_CLI_PATH + "' " + args + " >'" + out_file.string() + "' 2>'" + err_file.string() + "'";
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  o.out = slurp(out_file);
  o.err = slurp(err_file);
  return o;
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

const std::string kTinyTrain =
    R"({"architecture": {"linear_layers": 2, "base_width": 4},
        "train": {"learning_rate": 0.1, "max_epochs": 30, "patience": 3, "max_cycles": 0}})";

const std::string kTinyCC =
    R"({"architecture": {"linear_layers": 2, "base_width": 4},
        "train": {"learning_rate": 0.1, "max_epochs": 60, "patience": 3, "max_cycles": 1,
                  "dendrite": {"mode": "cc", "max_dendrites": 1, "candidate_pool": 2, "ema_decay": 0.9}}})";

}  // namespace

TEST_CASE("cli: gen-data spirals writes 194 rows, deterministically") {
  const auto dir = scratch("gen");
  const auto a = pbp_run("gen-data spirals --out '" + (dir / "a").string() + "' --seed 4", dir);
  REQUIRE(a.code == 0);
  CHECK(a.out.find("194 samples") != std::string::npos);
  CHECK(count_lines(slurp(dir / "a" / "labels.csv")) == 1 + 194);
  // the resolved config is logged before running
  CHECK(a.err.find("\"n_per_class\": 97") != std::string::npos);
  REQUIRE(pbp_run("gen-data spirals --out '" + (dir / "b").string() + "' --seed 4", dir).code == 0);
  CHECK(slurp(dir / "a" / "features.bin") == slurp(dir / "b" / "features.bin"));
  REQUIRE(pbp_run("gen-data spirals --out '" + (dir / "c").string() + "' --seed 5", dir).code == 0);
  CHECK(slurp(dir / "a" / "features.bin") != slurp(dir / "c" / "features.bin"));
}

TEST_CASE("cli: gen-data keywords writes (1x13x49) features") {
  const auto dir = scratch("gen_kw");
  write(dir / "c.json", R"({"data": {"n_per_class": 3, "classes": 2}})");
  const auto o = pbp_run("gen-data keywords --config '" + (dir / "c.json").string() + "' --out '" +
                             (dir / "kw").string() + "'",
                         dir);
  REQUIRE(o.code == 0);
  CHECK(o.out.find("(1x13x49)") != std::string::npos);
  CHECK(count_lines(slurp(dir / "kw" / "labels.csv")) == 1 + 6);
}

TEST_CASE("cli: exit codes for I/O and config errors") {
  const auto dir = scratch("codes");
  const auto missing = pbp_run("gen-data spirals --out '" + (dir / "no" / "such" / "dir").string() + "'", dir);
  CHECK(missing.code == 1);
  CHECK(missing.err.find("error:") != std::string::npos);
  CHECK(pbp_run("gen-data bogus --out '" + (dir / "x").string() + "'", dir).code == 2);
  CHECK(pbp_run("gen-data spirals", dir).code == 2);
  CHECK(pbp_run("frobnicate", dir).code == 2);
  write(dir / "bad.json", R"({"train": {"learning_rat": 0.1}})");
  const auto unknown = pbp_run("gen-data spirals --config '" + (dir / "bad.json").string() + "' --out '" +
                                   (dir / "y").string() + "'",
                               dir);
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("learning_rat") != std::string::npos);
  write(dir / "broken.json", "{not json");
  CHECK(pbp_run("grad-check --config '" + (dir / "broken.json").string() + "'", dir).code == 2);
  CHECK(pbp_run("grad-check --config '" + (dir / "absent.json").string() + "'", dir).code == 1);
  CHECK(pbp_run("train '" + (dir / "absent").string() + "' --out '" + (dir / "t").string() + "'", dir).code == 1);
}

TEST_CASE("cli: train prints a reproducible summary for a traditional run") {
  const auto dir = scratch("train");
  REQUIRE(pbp_run("gen-data spirals --out '" + (dir / "d").string() + "'", dir).code == 0);
  write(dir / "c.json", kTinyTrain);
  const std::string args =
      "train '" + (dir / "d").string() + "' --config '" + (dir / "c.json").string() + "' --out '";
  const auto a = pbp_run(args + (dir / "t1").string() + "'", dir);
  REQUIRE(a.code == 0);
  CHECK(a.out.rfind("format=traditional param_count=", 0) == 0);
  CHECK(a.out.find("test_accuracy=") != std::string::npos);
  CHECK(fs::exists(dir / "t1" / "model.pkws"));
  CHECK(fs::exists(dir / "t1" / "trial.json"));
  const auto b = pbp_run(args + (dir / "t2").string() + "'", dir);
  CHECK(b.out == a.out);
  CHECK(slurp(dir / "t1" / "model.pkws") == slurp(dir / "t2" / "model.pkws"));
}

TEST_CASE("cli: a one-cycle CC run reports both phases in the sidecar") {
  const auto dir = scratch("train_cc");
  REQUIRE(pbp_run("gen-data spirals --out '" + (dir / "d").string() + "'", dir).code == 0);
  write(dir / "c.json", kTinyCC);
  const auto o = pbp_run(
      "train '" + (dir / "d").string() + "' --config '" + (dir / "c.json").string() + "' --out '" + (dir / "t").string() +
          "'",
      dir);
  REQUIRE(o.code == 0);
  CHECK(o.out.rfind("format=cc", 0) == 0);
  const auto j = pbp::Json::parse(slurp(dir / "t" / "trial.json"));
  const double acc = j["result"]["test_accuracy"].get<double>();
  CHECK((acc >= 0.0 && acc <= 1.0));
  bool neuron = false, dendrite = false;
  for (const auto& e : j["result"]["history"]) {
    neuron |= e["phase"] == "neuron";
    dendrite |= e["phase"] == "dendrite";
  }
  CHECK(neuron);
  CHECK(dendrite);
}

TEST_CASE("cli: a diverging train run exits 3 with a reason") {
  const auto dir = scratch("diverge");
  REQUIRE(pbp_run("gen-data spirals --out '" + (dir / "d").string() + "'", dir).code == 0);
  write(dir / "c.json", R"({"train": {"learning_rate": 1000.0, "max_epochs": 20}})");
  const auto o = pbp_run(
      "train '" + (dir / "d").string() + "' --config '" + (dir / "c.json").string() + "' --out '" + (dir / "t").string() +
          "'",
      dir);
  CHECK(o.code == 3);
  CHECK(o.err.find("trial failed:") != std::string::npos);
}

TEST_CASE("cli: sweep then pareto") {
  const auto dir = scratch("sweep");
  write(dir / "c.json", R"({"data": {"n_per_class": 20},
      "sweep": {"space": {"linear_layers": [1, 2], "base_width": [4], "max_epochs": 5, "patience": [2, 3]}}})");
  const std::string cfg = " --config '" + (dir / "c.json").string() + "'";
  REQUIRE(pbp_run("gen-data spirals --out '" + (dir / "d").string() + "'" + cfg, dir).code == 0);
  const auto s = pbp_run("sweep '" + (dir / "d").string() + "' -n 4 --parallelism 2 --out '" +
                             (dir / "r.csv").string() + "'" + cfg,
                         dir);
  REQUIRE(s.code == 0);
  CHECK(s.out.find("trial 4/4 done (") != std::string::npos);
  CHECK(count_lines(slurp(dir / "r.csv")) == 5);

  const auto p = pbp_run("pareto '" + (dir / "r.csv").string() + "' --out '" + (dir / "rep").string() + "'", dir);
  REQUIRE(p.code == 0);
  CHECK(p.out.find("frontier: ") == 0);
  // thresholds 0.00 .. 1.00 plus a header
  CHECK(count_lines(slurp(dir / "rep_dominance_accuracy.csv")) == 102);

  const auto unwritable =
      pbp_run("sweep '" + (dir / "d").string() + "' -n 1 --out '" + (dir / "no" / "r.csv").string() + "'" + cfg, dir);
  CHECK(unwritable.code == 1);
}

TEST_CASE("cli: pareto on hand-made and malformed CSVs") {
  const auto dir = scratch("pareto");
  const auto header = std::string(pbp::results_csv_header());
  // two rows: reuse the library's own row format
  pbp::TrialRecord a, b;
  a.trial_index = 0;
  a.model_format = pbp::ModelFormat::CC;
  a.param_count = 100;
  a.test_accuracy = 0.9;
  b.trial_index = 1;
  b.param_count = 200;
  b.test_accuracy = 0.8;
  write(dir / "two.csv", header + "\n" + pbp::to_csv_row(a) + "\n" + pbp::to_csv_row(b) + "\n");
  const auto o = pbp_run("pareto '" + (dir / "two.csv").string() + "' --out '" + (dir / "two").string() + "'", dir);
  REQUIRE(o.code == 0);
  CHECK(o.out.find("frontier: 1 points") != std::string::npos);
  CHECK(count_lines(slurp(dir / "two_frontier.csv")) == 2);

  write(dir / "bad.csv", header + "\n" + pbp::to_csv_row(a) + "\nthis,is,not,a,row\n");
  const auto bad = pbp_run("pareto '" + (dir / "bad.csv").string() + "' --out '" + (dir / "bad").string() + "'", dir);
  CHECK(bad.code == 2);
  CHECK(bad.err.find("line 3") != std::string::npos);

  b.status = pbp::TrialStatus::Failed;
  b.reason = "diverged";
  write(dir / "none.csv", header + "\n" + pbp::to_csv_row(b) + "\n");
  CHECK(pbp_run("pareto '" + (dir / "none.csv").string() + "' --out '" + (dir / "none").string() + "'", dir).code == 2);
}

TEST_CASE("cli: grad-check passes on the default KWS-shaped model") {
  const auto dir = scratch("gc");
  const auto o = pbp_run("grad-check", dir);
  CHECK(o.code == 0);
  CHECK(o.out.find(" PASS") != std::string::npos);
  CHECK(o.out.find("max_relative_error=") != std::string::npos);
}
