// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "pbp/cli.hpp"
#include "pbp/digest.hpp"
#include "pbp/error.hpp"
#include "pbp/grad_check.hpp"
#include "pbp/pareto.hpp"
#include "pbp/tensor_io.hpp"

namespace pbp::cli {

namespace fs = std::filesystem;

namespace {

template <class T>
void read_key(const Json& j, const char* scope, const char* key, T& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    if constexpr (std::is_unsigned_v<T>) {
      if (!it->is_number_unsigned()) throw ConfigError("");
    }
    out = it->template get<T>();
  } catch (const std::exception&) {
    throw ConfigError(std::string(scope) + "." + key + ": wrong type (" + it->dump() + ")");
  }
}

void reject_unknown(const Json& j, const char* scope, std::initializer_list<const char*> known) {
  if (!j.is_object()) throw ConfigError(std::string(scope) + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      throw ConfigError(std::string(scope) + ": unknown key '" + key + "'");
    }
  }
}

}  // namespace

Json to_json(const CliConfig& c) {
  return Json{{"data",
               {{"kind", c.data.kind},
                {"n_per_class", c.data.n_per_class},
                {"classes", c.data.classes},
                {"noise_level", c.data.noise_level},
                {"noise_std", c.data.noise_std},
                {"seed", c.data.seed},
                {"split", pbp::to_json(c.data.split)},
                {"mfcc", pbp::to_json(c.data.mfcc)}}},
              {"architecture", pbp::to_json(c.architecture)},
              {"train", pbp::to_json(c.train)},
              {"sweep",
               {{"n_trials", c.sweep.n_trials},
                {"seed", c.sweep.seed},
                {"parallelism", c.sweep.parallelism},
                {"space", pbp::to_json(c.sweep.space)}}},
              {"grad_check",
               {{"architecture", pbp::to_json(c.grad_check.architecture)},
                {"batch_size", c.grad_check.batch_size},
                {"epsilon", c.grad_check.epsilon},
                {"seed", c.grad_check.seed},
                {"tolerance", c.grad_check.tolerance}}}};
}

CliConfig config_from_json(const Json& j, CliConfig c) {
  reject_unknown(j, "config", {"data", "architecture", "train", "sweep", "grad_check"});
  if (const auto it = j.find("data"); it != j.end()) {
    const Json& d = *it;
    reject_unknown(d, "data", {"kind", "n_per_class", "classes", "noise_level", "noise_std", "seed", "split", "mfcc"});
    read_key(d, "data", "kind", c.data.kind);
    read_key(d, "data", "n_per_class", c.data.n_per_class);
    read_key(d, "data", "classes", c.data.classes);
    read_key(d, "data", "noise_level", c.data.noise_level);
    read_key(d, "data", "noise_std", c.data.noise_std);
    read_key(d, "data", "seed", c.data.seed);
    if (d.contains("split")) c.data.split = split_from_json(d["split"], c.data.split);
    if (d.contains("mfcc")) c.data.mfcc = mfcc_from_json(d["mfcc"], c.data.mfcc);
  }
  if (j.contains("architecture")) c.architecture = architecture_from_json(j["architecture"], c.architecture);
  if (j.contains("train")) c.train = train_from_json(j["train"], c.train);
  if (const auto it = j.find("sweep"); it != j.end()) {
    const Json& s = *it;
    reject_unknown(s, "sweep", {"n_trials", "seed", "parallelism", "space"});
    read_key(s, "sweep", "n_trials", c.sweep.n_trials);
    read_key(s, "sweep", "seed", c.sweep.seed);
    read_key(s, "sweep", "parallelism", c.sweep.parallelism);
    if (s.contains("space")) c.sweep.space = sweep_space_from_json(s["space"], c.sweep.space);
  }
  if (const auto it = j.find("grad_check"); it != j.end()) {
    const Json& g = *it;
    reject_unknown(g, "grad_check", {"architecture", "batch_size", "epsilon", "seed", "tolerance"});
    if (g.contains("architecture")) {
      c.grad_check.architecture = architecture_from_json(g["architecture"], c.grad_check.architecture);
    }
    read_key(g, "grad_check", "batch_size", c.grad_check.batch_size);
    read_key(g, "grad_check", "epsilon", c.grad_check.epsilon);
    read_key(g, "grad_check", "seed", c.grad_check.seed);
    read_key(g, "grad_check", "tolerance", c.grad_check.tolerance);
  }
  return c;
}

CliConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config '" + path + "'");
  Json j;
  try {
    j = Json::parse(f);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> parallelism;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

void make_out_dir(const fs::path& dir) {
  std::error_code ec;
  if (fs::is_directory(dir, ec)) return;
  if (!fs::create_directory(dir, ec) || ec) {
    throw IoError("cannot create output directory '" + dir.string() + "'" + (ec ? ": " + ec.message() : ""));
  }
}

int cmd_gen_data(const std::string& kind, const CliConfig& c, const fs::path& out_dir, std::ostream& out) {
  LabeledDataset ds;
  if (kind == "keywords") {
    ds = keywords_dataset(c.data.n_per_class, c.data.classes, c.data.noise_level, c.data.seed, c.data.mfcc);
  } else if (kind == "spirals") {
    ds = two_spirals(c.data.n_per_class, c.data.noise_std, c.data.seed);
  } else {
    throw ConfigError("gen-data: unknown kind '" + kind + "' (expected keywords or spirals)");
  }
  ds = split(ds, c.data.split, c.data.seed);
  make_out_dir(out_dir);
  save_dataset(ds, out_dir);
  out << "wrote " << ds.size() << " samples (" << kind << ", features " << shape_string(ds.sample_shape())
      << ") to " << out_dir.string() << '\n';
  return kExitOk;
}

LabeledDataset load_split_dataset(const fs::path& dir, const CliConfig& c) {
  LabeledDataset ds = load_dataset(dir);
  const bool unsplit = std::any_of(ds.splits.begin(), ds.splits.end(), [](Split s) { return s == Split::Unassigned; });
  return unsplit ? split(ds, c.data.split, c.data.seed) : ds;
}

int cmd_train(const fs::path& data_dir, const CliConfig& c, const fs::path& out_dir, std::ostream& out,
              std::ostream& err) {
  const LabeledDataset ds = load_split_dataset(data_dir, c);
  const ArchitectureSpec spec = fit_to(c.architecture, ds);
  make_out_dir(out_dir);
  TrialRun run = train_trial(spec, ds, c.train);
  const TrialResult& r = run.result;

  Json sidecar{{"config", {{"architecture", pbp::to_json(spec)}, {"train", pbp::to_json(c.train)}}},
               {"data_dir", data_dir.string()},
               {"result", pbp::to_json(r)}};
  write_text(out_dir / "trial.json", sidecar.dump(2) + "\n");
  if (r.status != TrialStatus::Ok) {
    err << "trial failed: " << r.reason << '\n';
    out << "format=" << format_name(r.model_format) << " status=failed\n";
    return kExitNumerical;
  }
  save_network(run.model, out_dir / "model.pkws");
  const std::vector<NamedTensor> norm{{"standardize.mean", run.standardizer.mean, false},
                                      {"standardize.scale", run.standardizer.scale, false}};
  write_tensor_file(out_dir / "standardizer.pkws", norm);
  out << "format=" << format_name(r.model_format) << " param_count=" << r.param_count
      << " test_accuracy=" << format_double(r.test_accuracy) << " val_accuracy=" << format_double(r.val_accuracy_at_best)
      << " cycles=" << r.cycles_completed << " epochs=" << r.epochs_run << '\n';
  return kExitOk;
}

int cmd_sweep(const fs::path& data_dir, const CliConfig& c, const fs::path& out_csv, std::ostream& out) {
  const LabeledDataset ds = load_split_dataset(data_dir, c);
  SweepOptions opts;
  opts.parallelism = c.sweep.parallelism;
  opts.on_trial = [&](const TrialRecord& r, std::size_t done, std::size_t total) {
    out << "trial " << done << "/" << total << " done (" << format_name(r.model_format) << ", " << r.param_count
        << ", " << (r.ok() ? format_double(r.test_accuracy) : "failed") << ")" << std::endl;
  };
  const auto records = run_sweep(c.sweep.space, c.sweep.seed, c.sweep.n_trials, ds, out_csv, opts);
  std::size_t failed = 0;
  for (const auto& r : records) failed += !r.ok();
  out << records.size() << " trials in " << out_csv.string() << " (" << failed << " failed)\n";
  return kExitOk;
}

int cmd_pareto(const fs::path& in_csv, const std::string& prefix, std::ostream& out) {
  const auto records = read_results_csv(in_csv);
  write_pareto_outputs(records, prefix);
  const auto frontier = pareto_frontier(records);
  const auto rep = dominance_report(records);
  out << "frontier: " << frontier.size() << " points; dendritic_dominates=" << (rep.dendritic_dominates ? "true" : "false")
      << '\n';
  return kExitOk;
}

int cmd_grad_check(const CliConfig& c, std::ostream& out) {
  const auto& g = c.grad_check;
  const Network net = build_network(g.architecture, g.seed);
  Rng rng(derive_seed(g.seed, stream::kData));
  Shape shape = g.architecture.input_shape;
  shape.insert(shape.begin(), g.batch_size);
  Tensor batch(shape);
  for (auto& v : batch.data()) v = rng.uniform(-2.0, 2.0);
  std::vector<std::size_t> labels(g.batch_size);
  for (auto& l : labels) l = static_cast<std::size_t>(rng.below(g.architecture.num_classes));
  const auto report = grad_check(net, batch, labels, g.epsilon, Mode::Train, g.seed);
  const bool pass = report.max_relative_error <= g.tolerance;
  out << "params=" << param_count(net) << " checked=" << report.checked << " kinks_skipped=" << report.kinks_skipped
      << " max_relative_error=" << report.max_relative_error << " worst=" << report.worst << ' '
      << (pass ? "PASS" : "FAIL") << '\n';
  return pass ? kExitOk : kExitNumerical;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Perforated backpropagation experiments", "pbp"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON config file");
    sub->add_option("--seed", common.seed, "Seed override");
    sub->add_option("--parallelism", common.parallelism, "Worker threads (sweep)");
  };

  std::string kind, data_dir, in_csv;
  std::optional<std::size_t> n_trials;
  auto* gen = app.add_subcommand("gen-data", "Generate a dataset directory");
  gen->add_option("kind", kind, "keywords or spirals")->required();
  gen->add_option("--out", common.out, "Output directory")->required();
  add_common(gen);
  auto* train = app.add_subcommand("train", "Train one trial");
  train->add_option("data_dir", data_dir, "Dataset directory")->required();
  train->add_option("--out", common.out, "Output directory")->required();
  add_common(train);
  auto* sweep = app.add_subcommand("sweep", "Random-search sweep");
  sweep->add_option("data_dir", data_dir, "Dataset directory")->required();
  sweep->add_option("--out", common.out, "Results CSV")->required();
  sweep->add_option("-n,--trials", n_trials, "Number of trials");
  add_common(sweep);
  auto* pareto = app.add_subcommand("pareto", "Frontier and dominance report from a results CSV");
  pareto->add_option("in_csv", in_csv, "Results CSV")->required();
  pareto->add_option("--out", common.out, "Output prefix")->required();
  add_common(pareto);
  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of a random model");
  add_common(gc);
  gc->add_option("--out", common.out, "Unused");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    app.exit(e, out, err);
    return kExitConfig;
  }

  try {
    CliConfig c = common.config_path.empty() ? CliConfig{} : load_config(common.config_path);
    if (common.seed) {
      c.data.seed = c.train.seed = c.sweep.seed = c.grad_check.seed = *common.seed;
    }
    if (common.parallelism) c.sweep.parallelism = *common.parallelism;
    if (n_trials) c.sweep.n_trials = *n_trials;
    if (gen->parsed()) c.data.kind = kind;
    err << to_json(c).dump(2) << std::endl;

    if (gen->parsed()) return cmd_gen_data(kind, c, common.out, out);
    if (train->parsed()) return cmd_train(data_dir, c, common.out, out, err);
    if (sweep->parsed()) return cmd_sweep(data_dir, c, common.out, out);
    if (pareto->parsed()) return cmd_pareto(in_csv, common.out, out);
    return cmd_grad_check(c, out);
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}

}  // namespace pbp::cli
