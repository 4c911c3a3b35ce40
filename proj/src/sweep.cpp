// SPDX-License-Identifier: Apache-2.0
#include "pbp/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "pbp/config_json.hpp"
#include "pbp/error.hpp"

namespace pbp {

namespace {

template <class T>
void require_choices(const std::vector<T>& v, const char* name) {
  if (v.empty()) throw ConfigError(std::string("space.") + name + ": needs at least one choice");
}

void require_range(double lo, double hi, const char* name) {
  if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
    throw ConfigError(std::string("space.") + name + ": expected finite min <= max");
  }
}

template <class T>
T pick(Rng& rng, const std::vector<T>& choices) {
  return choices[static_cast<std::size_t>(rng.below(choices.size()))];
}

std::size_t max_conv_layers(const Shape& input) {
  if (input.size() != 3) return 0;
  std::size_t h = input[1], w = input[2], n = 0;
  while (h >= 4 && w >= 4) {
    h = (h - 2) / 2;
    w = (w - 2) / 2;
    ++n;
  }
  return n;
}

}  // namespace

void SweepSpace::validate() const {
  require_choices(conv_layers, "conv_layers");
  require_choices(linear_layers, "linear_layers");
  require_choices(base_width, "base_width");
  require_choices(growth_mode, "growth_mode");
  require_choices(forward_fn, "forward_fn");
  require_choices(perforate_target, "perforate_target");
  require_choices(model_format, "model_format");
  for (auto v : linear_layers)
    if (v == 0) throw ConfigError("space.linear_layers: choices must be >= 1");
  for (auto v : base_width)
    if (v == 0) throw ConfigError("space.base_width: choices must be >= 1");
  require_range(dropout_min, dropout_max, "dropout");
  if (dropout_min < 0.0 || dropout_max >= 1.0) throw ConfigError("space.dropout: must lie in [0, 1)");
  require_range(noise_min, noise_max, "noise_std");
  if (noise_min < 0.0) throw ConfigError("space.noise_std: must be >= 0");
  require_range(lr_min, lr_max, "learning_rate");
  if (lr_min <= 0.0) throw ConfigError("space.learning_rate: must be > 0");
  if (patience_min == 0 || patience_min > patience_max) throw ConfigError("space.patience: expected 1 <= min <= max");
  if (max_dendrites_min == 0 || max_dendrites_min > max_dendrites_max) {
    throw ConfigError("space.max_dendrites: expected 1 <= min <= max");
  }
  require_range(switch_threshold_min, switch_threshold_max, "switch_threshold");
  if (switch_threshold_min <= 0.0) throw ConfigError("space.switch_threshold: must be > 0");
  require_range(init_magnitude_min, init_magnitude_max, "init_magnitude");
  if (init_magnitude_min < 0.0) throw ConfigError("space.init_magnitude: must be >= 0");
  if (batch_size == 0 || max_epochs == 0 || candidate_pool == 0) {
    throw ConfigError("space: batch_size, max_epochs and candidate_pool must be >= 1");
  }
  if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw ConfigError("space.ema_decay: must be in (0, 1)");
}

SweepSpace SweepSpace::fitted_to(const Shape& input_shape) const {
  SweepSpace s = *this;
  const std::size_t limit = max_conv_layers(input_shape);
  std::erase_if(s.conv_layers, [&](std::size_t c) { return c > limit; });
  if (s.conv_layers.empty()) {
    throw ConfigError("space.conv_layers: no choice fits input " + shape_string(input_shape) + " (at most " +
                      std::to_string(limit) + " conv layers)");
  }
  return s;
}

TrialConfig sample_config(const SweepSpace& space, std::uint64_t sweep_seed, std::size_t trial_index) {
  space.validate();
  Rng rng(derive_seed(derive_seed(sweep_seed, stream::kSweep), trial_index));
  TrialConfig c;
  c.trial_index = trial_index;
  c.model_format = pick(rng, space.model_format);
  c.arch.conv_layers = pick(rng, space.conv_layers);
  c.arch.linear_layers = pick(rng, space.linear_layers);
  c.arch.base_width = pick(rng, space.base_width);
  c.arch.growth_mode = pick(rng, space.growth_mode);
  c.arch.dropout_rate = rng.uniform(space.dropout_min, space.dropout_max);
  c.arch.noise_std = rng.uniform(space.noise_min, space.noise_max);
  auto& t = c.train;
  t.learning_rate = std::exp(rng.uniform(std::log(space.lr_min), std::log(space.lr_max)));
  t.patience = space.patience_min + static_cast<std::size_t>(rng.below(space.patience_max - space.patience_min + 1));
  DendriteConfig d;
  d.max_dendrites =
      space.max_dendrites_min + static_cast<std::size_t>(rng.below(space.max_dendrites_max - space.max_dendrites_min + 1));
  t.switch_threshold = rng.uniform(space.switch_threshold_min, space.switch_threshold_max);
  d.init_magnitude = rng.uniform(space.init_magnitude_min, space.init_magnitude_max);
  d.forward_fn = pick(rng, space.forward_fn);
  d.perforate_target = pick(rng, space.perforate_target);
  t.seed = rng.next();
  t.batch_size = space.batch_size;
  t.max_epochs = space.max_epochs;
  d.candidate_pool = space.candidate_pool;
  d.ema_decay = space.ema_decay;
  d.eq4_literal = space.eq4_literal;
  if (c.model_format != ModelFormat::Traditional) {
    d.mode = c.model_format == ModelFormat::CC ? DendriteMode::CC : DendriteMode::GD;
    t.dendrite = d;
    t.max_cycles = d.max_dendrites;
  }
  return c;
}

TrialRecord make_record(const TrialConfig& c, const TrialResult& result, double wall_time_s) {
  TrialRecord r;
  r.trial_index = c.trial_index;
  r.model_format = c.model_format;
  r.conv_layers = c.arch.conv_layers;
  r.linear_layers = c.arch.linear_layers;
  r.base_width = c.arch.base_width;
  r.growth_mode = c.arch.growth_mode;
  r.dropout = c.arch.dropout_rate;
  r.noise_std = c.arch.noise_std;
  r.learning_rate = c.train.learning_rate;
  r.patience = c.train.patience;
  r.switch_threshold = c.train.switch_threshold;
  if (c.train.dendrite) {
    r.max_dendrites = c.train.dendrite->max_dendrites;
    r.init_magnitude = c.train.dendrite->init_magnitude;
    r.forward_fn = c.train.dendrite->forward_fn;
    r.perforate_target = c.train.dendrite->perforate_target;
  }
  r.param_count = result.param_count;
  r.test_accuracy = result.test_accuracy;
  r.status = result.status;
  r.reason = result.reason;
  r.wall_time_s = wall_time_s;
  return r;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string_view results_csv_header() {
  return "trial_index,model_format,conv_layers,linear_layers,base_width,growth_mode,dropout,noise_std,"
         "learning_rate,patience,max_dendrites,switch_threshold,init_magnitude,forward_fn,perforate_target,"
         "param_count,test_accuracy,status,wall_time_s,reason";
}

namespace {

constexpr std::size_t kColumns = 20;

std::string quote(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '\n' || c == '\r') c = ' ';
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_fields(std::string_view line, std::size_t line_number) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"' && out.back().empty()) {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  if (quoted) throw ConfigError("results csv line " + std::to_string(line_number) + ": unterminated quote");
  return out;
}

template <class T>
T parse_number(const std::string& s, const char* column, std::size_t line_number) {
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("results csv line " + std::to_string(line_number) + ": bad " + column + " '" + s + "'");
  }
  return v;
}

template <class F>
auto parse_enum_field(F&& parse, const std::string& s, const char* column, std::size_t line_number) {
  try {
    return parse(s);
  } catch (const ConfigError&) {
    throw ConfigError("results csv line " + std::to_string(line_number) + ": bad " + column + " '" + s + "'");
  }
}

}  // namespace

std::string to_csv_row(const TrialRecord& r) {
  std::ostringstream o;
  auto opt = [](const auto& v, auto&& fmt) { return v ? std::string(fmt(*v)) : std::string(); };
  o << r.trial_index << ',' << format_name(r.model_format) << ',' << r.conv_layers << ',' << r.linear_layers << ','
    << r.base_width << ',' << growth_name(r.growth_mode) << ',' << format_double(r.dropout) << ','
    << format_double(r.noise_std) << ',' << format_double(r.learning_rate) << ',' << r.patience << ','
    << opt(r.max_dendrites, [](std::size_t v) { return std::to_string(v); }) << ','
    << format_double(r.switch_threshold) << ',' << opt(r.init_magnitude, format_double) << ','
    << opt(r.forward_fn, function_name) << ',' << opt(r.perforate_target, target_name) << ',' << r.param_count
    << ',' << format_double(r.test_accuracy) << ',' << (r.ok() ? "ok" : "failed") << ','
    << format_double(r.wall_time_s) << ',' << quote(r.reason);
  return o.str();
}

TrialRecord parse_csv_row(std::string_view line, std::size_t n) {
  const auto f = split_fields(line, n);
  if (f.size() != kColumns) {
    throw ConfigError("results csv line " + std::to_string(n) + ": expected " + std::to_string(kColumns) +
                      " fields, found " + std::to_string(f.size()));
  }
  TrialRecord r;
  r.trial_index = parse_number<std::size_t>(f[0], "trial_index", n);
  r.model_format = parse_enum_field(parse_format, f[1], "model_format", n);
  r.conv_layers = parse_number<std::size_t>(f[2], "conv_layers", n);
  r.linear_layers = parse_number<std::size_t>(f[3], "linear_layers", n);
  r.base_width = parse_number<std::size_t>(f[4], "base_width", n);
  r.growth_mode = parse_enum_field(parse_growth, f[5], "growth_mode", n);
  r.dropout = parse_number<double>(f[6], "dropout", n);
  r.noise_std = parse_number<double>(f[7], "noise_std", n);
  r.learning_rate = parse_number<double>(f[8], "learning_rate", n);
  r.patience = parse_number<std::size_t>(f[9], "patience", n);
  if (!f[10].empty()) r.max_dendrites = parse_number<std::size_t>(f[10], "max_dendrites", n);
  r.switch_threshold = parse_number<double>(f[11], "switch_threshold", n);
  if (!f[12].empty()) r.init_magnitude = parse_number<double>(f[12], "init_magnitude", n);
  if (!f[13].empty()) r.forward_fn = parse_enum_field(parse_function, f[13], "forward_fn", n);
  if (!f[14].empty()) r.perforate_target = parse_enum_field(parse_target, f[14], "perforate_target", n);
  r.param_count = parse_number<std::size_t>(f[15], "param_count", n);
  r.test_accuracy = parse_number<double>(f[16], "test_accuracy", n);
  if (f[17] == "ok") {
    r.status = TrialStatus::Ok;
  } else if (f[17] == "failed") {
    r.status = TrialStatus::Failed;
  } else {
    throw ConfigError("results csv line " + std::to_string(n) + ": bad status '" + f[17] + "'");
  }
  r.wall_time_s = parse_number<double>(f[18], "wall_time_s", n);
  r.reason = f[19];
  if (r.ok() && !(r.test_accuracy >= 0.0 && r.test_accuracy <= 1.0)) {
    throw ConfigError("results csv line " + std::to_string(n) + ": test_accuracy outside [0, 1]");
  }
  return r;
}

namespace {

struct CsvContents {
  std::vector<TrialRecord> records;
  bool torn_tail = false;
  std::string intact;  // text up to the last complete line
};

CsvContents read_csv_text(const std::string& text) {
  CsvContents out;
  std::size_t pos = 0, line_number = 0;
  while (pos < text.size()) {
    const std::size_t end = text.find('\n', pos);
    ++line_number;
    if (end == std::string::npos) {
      out.torn_tail = true;
      break;
    }
    std::string_view line(text.data() + pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line_number == 1) {
      if (line != results_csv_header()) throw ConfigError("results csv line 1: unexpected header");
    } else if (!line.empty()) {
      out.records.push_back(parse_csv_row(line, line_number));
    }
    pos = end + 1;
    out.intact.assign(text, 0, pos);
  }
  return out;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

}  // namespace

std::vector<TrialRecord> read_results_csv(const std::filesystem::path& path) {
  const std::string text = slurp(path);
  if (text.empty()) throw ConfigError("results csv: '" + path.string() + "' is empty");
  auto contents = read_csv_text(text);
  if (contents.torn_tail) {
    // A final line without a newline is accepted when it parses.
    const std::size_t start = text.rfind('\n') == std::string::npos ? 0 : text.rfind('\n') + 1;
    std::string_view tail(text.data() + start, text.size() - start);
    if (start == 0) {
      if (tail != results_csv_header()) throw ConfigError("results csv line 1: unexpected header");
    } else {
      contents.records.push_back(parse_csv_row(tail, static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) + 1));
    }
  }
  std::sort(contents.records.begin(), contents.records.end(),
            [](const TrialRecord& a, const TrialRecord& b) { return a.trial_index < b.trial_index; });
  return contents.records;
}

std::vector<std::string> canonical_rows(std::span<const TrialRecord> records) {
  std::vector<std::string> rows;
  for (TrialRecord r : records) {
    r.wall_time_s = 0.0;
    rows.push_back(to_csv_row(r));
  }
  std::sort(rows.begin(), rows.end());
  return rows;
}

std::vector<TrialRecord> run_sweep(const SweepSpace& space, std::uint64_t sweep_seed, std::size_t n_trials,
                                   const LabeledDataset& data, const std::filesystem::path& out_path,
                                   const SweepOptions& options) {
  if (n_trials == 0) throw ConfigError("sweep: n_trials must be >= 1");
  space.validate();
  data.validate();
  const SweepSpace fitted = space.fitted_to(data.sample_shape());

  // Resume from whatever a previous run left behind.
  std::set<std::size_t> done;
  bool need_header = true;
  std::error_code ec;
  if (std::filesystem::exists(out_path, ec) && std::filesystem::file_size(out_path, ec) > 0) {
    const std::string text = slurp(out_path);
    const auto contents = read_csv_text(text);
    for (const auto& r : contents.records) done.insert(r.trial_index);
    need_header = contents.intact.empty();
    if (contents.torn_tail) {
      std::ofstream rewrite(out_path, std::ios::binary | std::ios::trunc);
      if (!rewrite) throw IoError("sweep: cannot write '" + out_path.string() + "'");
      rewrite << contents.intact;
      if (!rewrite) throw IoError("sweep: cannot write '" + out_path.string() + "'");
    }
  }
  std::ofstream out(out_path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("sweep: cannot open '" + out_path.string() + "' for writing");
  if (need_header) {
    out << results_csv_header() << '\n';
    out.flush();
    if (!out) throw IoError("sweep: write failed for '" + out_path.string() + "'");
  }

  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < n_trials; ++i)
    if (!done.count(i)) pending.push_back(i);

  std::atomic<std::size_t> next{0};
  std::mutex writer;
  std::size_t written = 0;
  bool halted = false;
  std::exception_ptr io_failure;
  const std::size_t total = n_trials;
  std::size_t completed = done.size();

  auto worker = [&] {
    for (;;) {
      const std::size_t slot = next.fetch_add(1);
      if (slot >= pending.size()) return;
      {
        std::lock_guard lock(writer);
        if (halted) return;
      }
      TrialConfig config = sample_config(fitted, sweep_seed, pending[slot]);
      config.arch = fit_to(config.arch, data);
      if (const auto it = options.learning_rate_overrides.find(config.trial_index);
          it != options.learning_rate_overrides.end()) {
        config.train.learning_rate = it->second;
      }
      const auto t0 = std::chrono::steady_clock::now();
      TrialResult result;
      try {
        result = train_trial(config.arch, data, config.train).result;
      } catch (const std::exception& e) {
        result = TrialResult{};
        result.status = TrialStatus::Failed;
        result.reason = e.what();
        result.model_format = config.model_format;
      }
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const TrialRecord record = make_record(config, result, wall);

      std::lock_guard lock(writer);
      if (halted) return;
      out << to_csv_row(record) << '\n';
      out.flush();
      if (!out) {
        io_failure = std::make_exception_ptr(IoError("sweep: write failed for '" + out_path.string() + "'"));
        halted = true;
        return;
      }
      ++written;
      ++completed;
      if (options.on_trial) options.on_trial(record, completed, total);
      if (options.stop_after && written >= *options.stop_after) halted = true;
    }
  };

  const std::size_t n_workers = std::max<std::size_t>(1, std::min(options.parallelism, pending.size()));
  if (!pending.empty()) {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < n_workers; ++i) pool.emplace_back(worker);
  }
  out.close();
  if (io_failure) std::rethrow_exception(io_failure);
  return read_results_csv(out_path);
}

}  // namespace pbp
