// SPDX-License-Identifier: Apache-2.0
#include "pbp/config_json.hpp"

#include <set>

#include "pbp/digest.hpp"
#include "pbp/error.hpp"

namespace pbp {

namespace {

template <class E, std::size_t N>
E parse_enum(std::string_view what, std::string_view s, const std::array<E, N>& values,
             std::string_view (*name)(E)) {
  for (E v : values)
    if (name(v) == s) return v;
  std::string options;
  for (E v : values) options += (options.empty() ? "" : ", ") + std::string(name(v));
  throw ConfigError(std::string(what) + ": unknown value '" + std::string(s) + "' (expected one of " + options + ")");
}

// Reads keys off one JSON object, rejecting any it was not asked about.
class Fields {
 public:
  Fields(const Json& j, std::string scope) : j_(j), scope_(std::move(scope)) {
    if (!j.is_object()) throw ConfigError(scope_ + ": expected a JSON object");
  }
  ~Fields() = default;

  template <class T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_unsigned_v<T>) {
        if (!it->is_number_unsigned()) throw ConfigError("");
      }
      out = it->template get<T>();
    } catch (const std::exception&) {
      throw ConfigError(scope_ + "." + key + ": wrong type (" + it->dump() + ")");
    }
  }

  template <class E, std::size_t N>
  void read_enum(const char* key, E& out, const std::array<E, N>& values, std::string_view (*name)(E)) {
    std::string s;
    read(key, s);
    if (j_.contains(key)) out = parse_enum(scope_ + "." + key, s, values, name);
  }

  template <class E, std::size_t N>
  void read_enum_list(const char* key, std::vector<E>& out, const std::array<E, N>& values,
                      std::string_view (*name)(E)) {
    std::vector<std::string> s;
    read(key, s);
    if (!j_.contains(key)) return;
    out.clear();
    for (const auto& v : s) out.push_back(parse_enum(scope_ + "." + key, v, values, name));
  }

  const Json* sub(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(scope_ + ": unknown key '" + key + "'");
    }
  }

  const std::string& scope() const { return scope_; }

 private:
  const Json& j_;
  std::string scope_;
  std::set<std::string> seen_;
};

constexpr std::array kGrowth{GrowthMode::Uniform, GrowthMode::Doubling};
constexpr std::array kFunctions{DendriteFunction::Tanh, DendriteFunction::Relu, DendriteFunction::Sigmoid};
constexpr std::array kModes{DendriteMode::CC, DendriteMode::GD};
constexpr std::array kTargets{PerforateTarget::LinearOnly, PerforateTarget::LinearAndConv};
constexpr std::array kFormats{ModelFormat::Traditional, ModelFormat::GD, ModelFormat::CC};

template <class E>
Json names(const std::vector<E>& values, std::string_view (*name)(E)) {
  Json a = Json::array();
  for (E v : values) a.push_back(name(v));
  return a;
}

}  // namespace

std::string_view growth_name(GrowthMode m) { return m == GrowthMode::Uniform ? "uniform" : "doubling"; }
std::string_view function_name(DendriteFunction f) {
  switch (f) {
    case DendriteFunction::Tanh: return "tanh";
    case DendriteFunction::Relu: return "relu";
    case DendriteFunction::Sigmoid: return "sigmoid";
  }
  return "tanh";
}
std::string_view mode_name(DendriteMode m) { return m == DendriteMode::CC ? "cc" : "gd"; }
std::string_view target_name(PerforateTarget t) {
  return t == PerforateTarget::LinearOnly ? "linear_only" : "linear_and_conv";
}
GrowthMode parse_growth(std::string_view s) { return parse_enum("growth_mode", s, kGrowth, growth_name); }
DendriteFunction parse_function(std::string_view s) { return parse_enum("forward_fn", s, kFunctions, function_name); }
DendriteMode parse_mode(std::string_view s) { return parse_enum("mode", s, kModes, mode_name); }
PerforateTarget parse_target(std::string_view s) { return parse_enum("perforate_target", s, kTargets, target_name); }

Json to_json(const ArchitectureSpec& s) {
  return Json{{"conv_layers", s.conv_layers},   {"linear_layers", s.linear_layers},
              {"base_width", s.base_width},     {"growth_mode", growth_name(s.growth_mode)},
              {"dropout_rate", s.dropout_rate}, {"noise_std", s.noise_std},
              {"input_shape", s.input_shape},   {"num_classes", s.num_classes}};
}

Json to_json(const DendriteConfig& c) {
  return Json{{"max_dendrites", c.max_dendrites},
              {"candidate_pool", c.candidate_pool},
              {"init_magnitude", c.init_magnitude},
              {"forward_fn", function_name(c.forward_fn)},
              {"mode", mode_name(c.mode)},
              {"perforate_target", target_name(c.perforate_target)},
              {"ema_decay", c.ema_decay},
              {"eq4_literal", c.eq4_literal}};
}

Json to_json(const TrainConfig& c) {
  return Json{{"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size},
              {"patience", c.patience},
              {"switch_threshold", c.switch_threshold},
              {"max_cycles", c.max_cycles},
              {"max_epochs", c.max_epochs},
              {"seed", c.seed},
              {"standardize", c.standardize},
              {"dendrite", c.dendrite ? to_json(*c.dendrite) : Json(nullptr)}};
}

Json to_json(const MfccConfig& c) {
  return Json{{"sample_rate", c.sample_rate},     {"frame_length", c.frame_length},
              {"frame_step", c.frame_step},       {"n_mel_filters", c.n_mel_filters},
              {"n_coefficients", c.n_coefficients}, {"fft_size", c.fft_size},
              {"pre_emphasis", c.pre_emphasis},   {"low_hz", c.low_hz},
              {"high_hz", c.high_hz},             {"log_floor", c.log_floor}};
}

Json to_json(const SplitRatios& r) { return Json{{"train", r.train}, {"val", r.val}, {"test", r.test}}; }

Json to_json(const SweepSpace& s) {
  Json growth = Json::array();
  for (auto g : s.growth_mode) growth.push_back(growth_name(g));
  return Json{{"conv_layers", s.conv_layers},
              {"linear_layers", s.linear_layers},
              {"base_width", s.base_width},
              {"growth_mode", growth},
              {"dropout", {s.dropout_min, s.dropout_max}},
              {"noise_std", {s.noise_min, s.noise_max}},
              {"learning_rate", {s.lr_min, s.lr_max}},
              {"patience", {s.patience_min, s.patience_max}},
              {"max_dendrites", {s.max_dendrites_min, s.max_dendrites_max}},
              {"switch_threshold", {s.switch_threshold_min, s.switch_threshold_max}},
              {"init_magnitude", {s.init_magnitude_min, s.init_magnitude_max}},
              {"forward_fn", names(s.forward_fn, function_name)},
              {"perforate_target", names(s.perforate_target, target_name)},
              {"model_format", names(s.model_format, format_name)},
              {"batch_size", s.batch_size},
              {"max_epochs", s.max_epochs},
              {"candidate_pool", s.candidate_pool},
              {"ema_decay", s.ema_decay},
              {"eq4_literal", s.eq4_literal}};
}

Json to_json(const TrialResult& r) {
  Json history = Json::array();
  for (const auto& e : r.history) {
    history.push_back(Json{{"epoch", e.epoch},
                           {"phase", phase_name(e.phase)},
                           {"cycle", e.cycle},
                           {"train_loss", e.train_loss},
                           {"val_accuracy", e.val_accuracy},
                           {"metric", e.metric}});
  }
  Json events = Json::array();
  for (const auto& e : r.events) {
    events.push_back(Json{{"after_epoch", e.after_epoch}, {"event", event_name(e.kind)}, {"detail", e.detail}});
  }
  Json digests = Json::array();
  for (const auto& d : r.dendrite_phase_digests) digests.push_back(Json{{"entry", d.entry}, {"exit", d.exit}});
  return Json{{"status", r.status == TrialStatus::Ok ? "ok" : "failed"},
              {"reason", r.reason},
              {"model_format", format_name(r.model_format)},
              {"param_count", r.param_count},
              {"test_accuracy", r.test_accuracy},
              {"val_accuracy_at_best", r.val_accuracy_at_best},
              {"epochs_run", r.epochs_run},
              {"best_epoch", r.best_epoch},
              {"cycles_completed", r.cycles_completed},
              {"config_digest", r.config_digest},
              {"checkpoint_digest", r.checkpoint_digest},
              {"evaluated_digest", r.evaluated_digest},
              {"best_val_by_cycle", r.best_val_by_cycle},
              {"dendrite_phase_digests", digests},
              {"events", events},
              {"history", history}};
}

ArchitectureSpec architecture_from_json(const Json& j, ArchitectureSpec s) {
  Fields f(j, "architecture");
  f.read("conv_layers", s.conv_layers);
  f.read("linear_layers", s.linear_layers);
  f.read("base_width", s.base_width);
  f.read_enum("growth_mode", s.growth_mode, kGrowth, growth_name);
  f.read("dropout_rate", s.dropout_rate);
  f.read("noise_std", s.noise_std);
  f.read("input_shape", s.input_shape);
  f.read("num_classes", s.num_classes);
  f.finish();
  return s;
}

DendriteConfig dendrite_from_json(const Json& j, DendriteConfig c) {
  Fields f(j, "dendrite");
  f.read("max_dendrites", c.max_dendrites);
  f.read("candidate_pool", c.candidate_pool);
  f.read("init_magnitude", c.init_magnitude);
  f.read_enum("forward_fn", c.forward_fn, kFunctions, function_name);
  f.read_enum("mode", c.mode, kModes, mode_name);
  f.read_enum("perforate_target", c.perforate_target, kTargets, target_name);
  f.read("ema_decay", c.ema_decay);
  f.read("eq4_literal", c.eq4_literal);
  f.finish();
  return c;
}

TrainConfig train_from_json(const Json& j, TrainConfig c) {
  Fields f(j, "train");
  f.read("learning_rate", c.learning_rate);
  f.read("batch_size", c.batch_size);
  f.read("patience", c.patience);
  f.read("switch_threshold", c.switch_threshold);
  f.read("max_cycles", c.max_cycles);
  f.read("max_epochs", c.max_epochs);
  f.read("seed", c.seed);
  f.read("standardize", c.standardize);
  if (const Json* d = f.sub("dendrite")) {
    if (d->is_null()) {
      c.dendrite.reset();
    } else {
      c.dendrite = dendrite_from_json(*d, c.dendrite.value_or(DendriteConfig{}));
    }
  }
  f.finish();
  return c;
}

MfccConfig mfcc_from_json(const Json& j, MfccConfig c) {
  Fields f(j, "mfcc");
  f.read("sample_rate", c.sample_rate);
  f.read("frame_length", c.frame_length);
  f.read("frame_step", c.frame_step);
  f.read("n_mel_filters", c.n_mel_filters);
  f.read("n_coefficients", c.n_coefficients);
  f.read("fft_size", c.fft_size);
  f.read("pre_emphasis", c.pre_emphasis);
  f.read("low_hz", c.low_hz);
  f.read("high_hz", c.high_hz);
  f.read("log_floor", c.log_floor);
  f.finish();
  return c;
}

SplitRatios split_from_json(const Json& j, SplitRatios r) {
  Fields f(j, "split");
  f.read("train", r.train);
  f.read("val", r.val);
  f.read("test", r.test);
  f.finish();
  return r;
}

SweepSpace sweep_space_from_json(const Json& j, SweepSpace s) {
  Fields f(j, "space");
  auto range = [&](const char* key, auto& lo, auto& hi) {
    std::vector<std::decay_t<decltype(lo)>> v;
    f.read(key, v);
    if (!j.contains(key)) return;
    if (v.size() != 2) throw ConfigError("space." + std::string(key) + ": expected [min, max]");
    lo = v[0];
    hi = v[1];
  };
  f.read("conv_layers", s.conv_layers);
  f.read("linear_layers", s.linear_layers);
  f.read("base_width", s.base_width);
  f.read_enum_list("growth_mode", s.growth_mode, kGrowth, growth_name);
  range("dropout", s.dropout_min, s.dropout_max);
  range("noise_std", s.noise_min, s.noise_max);
  range("learning_rate", s.lr_min, s.lr_max);
  range("patience", s.patience_min, s.patience_max);
  range("max_dendrites", s.max_dendrites_min, s.max_dendrites_max);
  range("switch_threshold", s.switch_threshold_min, s.switch_threshold_max);
  range("init_magnitude", s.init_magnitude_min, s.init_magnitude_max);
  f.read_enum_list("forward_fn", s.forward_fn, kFunctions, function_name);
  f.read_enum_list("perforate_target", s.perforate_target, kTargets, target_name);
  f.read_enum_list("model_format", s.model_format, kFormats, format_name);
  f.read("batch_size", s.batch_size);
  f.read("max_epochs", s.max_epochs);
  f.read("candidate_pool", s.candidate_pool);
  f.read("ema_decay", s.ema_decay);
  f.read("eq4_literal", s.eq4_literal);
  f.finish();
  return s;
}

std::string config_digest(const ArchitectureSpec& spec, const TrainConfig& config) {
  return sha256_hex(Json{{"architecture", to_json(spec)}, {"train", to_json(config)}}.dump());
}

}  // namespace pbp
