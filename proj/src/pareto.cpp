// SPDX-License-Identifier: Apache-2.0
#include "pbp/pareto.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "pbp/error.hpp"

namespace pbp {

std::string_view winner_name(Winner w) {
  switch (w) {
    case Winner::None: return "none";
    case Winner::Dendritic: return "dendritic";
    case Winner::Traditional: return "traditional";
    case Winner::Tie: return "tie";
  }
  return "none";
}

namespace {

std::vector<const TrialRecord*> ok_records(std::span<const TrialRecord> records) {
  std::vector<const TrialRecord*> ok;
  for (const auto& r : records)
    if (r.ok()) ok.push_back(&r);
  if (ok.empty()) throw ConfigError("pareto: no successful trials");
  return ok;
}

// Family of every record in `group`.
Winner family(const std::vector<const TrialRecord*>& group) {
  bool dendritic = false, traditional = false;
  for (const auto* r : group) (r->dendritic() ? dendritic : traditional) = true;
  if (dendritic && traditional) return Winner::Tie;
  if (dendritic) return Winner::Dendritic;
  return traditional ? Winner::Traditional : Winner::None;
}

}  // namespace

std::vector<FrontierPoint> pareto_frontier(std::span<const TrialRecord> records) {
  auto ok = ok_records(records);
  std::sort(ok.begin(), ok.end(), [](const TrialRecord* a, const TrialRecord* b) {
    if (a->param_count != b->param_count) return a->param_count < b->param_count;
    if (a->test_accuracy != b->test_accuracy) return a->test_accuracy > b->test_accuracy;
    return a->trial_index < b->trial_index;
  });
  std::vector<FrontierPoint> out;
  double best = -std::numeric_limits<double>::infinity();
  for (const auto* r : ok) {
    if (r->test_accuracy > best) {
      out.push_back({r->param_count, r->test_accuracy, r->trial_index, r->model_format});
      best = r->test_accuracy;
    }
  }
  return out;
}

DominanceReport dominance_report(std::span<const TrialRecord> records, double step, std::size_t per_decade) {
  const double inv = 1.0 / step;
  const auto steps = static_cast<std::size_t>(std::llround(inv));
  if (!(step > 0.0) || steps == 0 || std::abs(inv - static_cast<double>(steps)) > 1e-9 * inv) {
    throw ConfigError("dominance: step must divide 1 evenly");
  }
  if (per_decade == 0) throw ConfigError("dominance: per_decade must be >= 1");
  std::vector<const TrialRecord*> ok;
  for (const auto& r : records)
    if (r.ok()) ok.push_back(&r);

  DominanceReport rep;
  for (std::size_t k = 0; k <= steps; ++k) {
    AccuracyRow row;
    row.threshold = static_cast<double>(k) / static_cast<double>(steps);
    std::vector<const TrialRecord*> reach;
    for (const auto* r : ok)
      if (r->test_accuracy >= row.threshold) reach.push_back(r);
    if (!reach.empty()) {
      std::size_t p = std::numeric_limits<std::size_t>::max();
      for (const auto* r : reach) p = std::min(p, r->param_count);
      std::erase_if(reach, [&](const TrialRecord* r) { return r->param_count != p; });
      const auto* pick = *std::min_element(reach.begin(), reach.end(), [](const TrialRecord* a, const TrialRecord* b) {
        if (a->test_accuracy != b->test_accuracy) return a->test_accuracy > b->test_accuracy;
        return a->trial_index < b->trial_index;
      });
      row.min_params = p;
      row.trial_index = pick->trial_index;
      row.model_format = pick->model_format;
      row.winner = family(reach);
    }
    rep.accuracy.push_back(row);
  }

  if (!ok.empty()) {
    std::size_t lo = std::numeric_limits<std::size_t>::max(), hi = 0;
    for (const auto* r : ok) {
      lo = std::min(lo, r->param_count);
      hi = std::max(hi, r->param_count);
    }
    const auto first = static_cast<long>(std::floor(std::log10(static_cast<double>(std::max<std::size_t>(lo, 1)))));
    const auto last = static_cast<long>(std::ceil(std::log10(static_cast<double>(std::max<std::size_t>(hi, 1)))));
    const long n = (last - first) * static_cast<long>(per_decade);
    for (long i = 0; i <= n; ++i) {
      BudgetRow row;
      row.budget = std::pow(10.0, static_cast<double>(first) + static_cast<double>(i) / static_cast<double>(per_decade));
      std::vector<const TrialRecord*> within;
      for (const auto* r : ok)
        if (static_cast<double>(r->param_count) <= row.budget * (1.0 + 1e-12)) within.push_back(r);
      if (!within.empty()) {
        double a = -1.0;
        for (const auto* r : within) a = std::max(a, r->test_accuracy);
        std::erase_if(within, [&](const TrialRecord* r) { return r->test_accuracy != a; });
        const auto* pick = *std::min_element(within.begin(), within.end(), [](const TrialRecord* x, const TrialRecord* y) {
          if (x->param_count != y->param_count) return x->param_count < y->param_count;
          return x->trial_index < y->trial_index;
        });
        row.max_accuracy = a;
        row.trial_index = pick->trial_index;
        row.model_format = pick->model_format;
        row.winner = family(within);
      }
      rep.budget.push_back(row);
    }
  }

  auto all_dendritic = [](const auto& rows) {
    bool any = false;
    for (const auto& r : rows) {
      if (r.winner == Winner::None) continue;
      any = true;
      if (r.winner != Winner::Dendritic) return false;
    }
    return any;
  };
  rep.dendritic_at_all_thresholds = all_dendritic(rep.accuracy);
  rep.dendritic_at_all_budgets = all_dendritic(rep.budget);
  rep.dendritic_dominates = rep.dendritic_at_all_thresholds && rep.dendritic_at_all_budgets;
  return rep;
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("pareto: cannot write '" + path + "'");
  return f;
}

void close_out(std::ofstream& f, const std::string& path) {
  f.close();
  if (!f) throw IoError("pareto: write failed for '" + path + "'");
}

template <class T, class F>
std::string opt(const std::optional<T>& v, F&& fmt) {
  return v ? std::string(fmt(*v)) : std::string();
}

std::string count(std::size_t v) { return std::to_string(v); }

}  // namespace

void write_pareto_outputs(std::span<const TrialRecord> records, const std::string& prefix) {
  const auto frontier = pareto_frontier(records);
  const auto rep = dominance_report(records);

  {
    const std::string path = prefix + "_frontier.csv";
    auto f = open_out(path);
    f << "param_count,test_accuracy,trial_index,model_format\n";
    for (const auto& p : frontier) {
      f << p.param_count << ',' << format_double(p.test_accuracy) << ',' << p.trial_index << ','
        << format_name(p.model_format) << '\n';
    }
    close_out(f, path);
  }
  {
    const std::string path = prefix + "_dominance_accuracy.csv";
    auto f = open_out(path);
    f << "threshold,min_params,trial_index,model_format,winner\n";
    for (const auto& r : rep.accuracy) {
      f << format_double(r.threshold) << ',' << opt(r.min_params, count) << ',' << opt(r.trial_index, count) << ','
        << opt(r.model_format, format_name) << ',' << winner_name(r.winner) << '\n';
    }
    close_out(f, path);
  }
  {
    const std::string path = prefix + "_dominance_budget.csv";
    auto f = open_out(path);
    f << "budget,max_accuracy,trial_index,model_format,winner\n";
    for (const auto& r : rep.budget) {
      f << format_double(r.budget) << ',' << opt(r.max_accuracy, format_double) << ',' << opt(r.trial_index, count)
        << ',' << opt(r.model_format, format_name) << ',' << winner_name(r.winner) << '\n';
    }
    close_out(f, path);
  }
  {
    std::size_t ok = 0, dendritic = 0;
    for (const auto& r : records) {
      ok += r.ok();
      dendritic += r.ok() && r.dendritic();
    }
    const std::string path = prefix + "_dominance_summary.csv";
    auto f = open_out(path);
    f << "key,value\n";
    f << "dendritic_at_all_thresholds," << (rep.dendritic_at_all_thresholds ? "true" : "false") << '\n';
    f << "dendritic_at_all_budgets," << (rep.dendritic_at_all_budgets ? "true" : "false") << '\n';
    f << "dendritic_dominates," << (rep.dendritic_dominates ? "true" : "false") << '\n';
    f << "ok_trials," << ok << '\n';
    f << "dendritic_trials," << dendritic << '\n';
    f << "traditional_trials," << ok - dendritic << '\n';
    f << "frontier_points," << frontier.size() << '\n';
    close_out(f, path);
  }
  {
    const std::string path = prefix + "_plot.csv";
    auto f = open_out(path);
    f << "param_count,accuracy,format\n";
    for (const auto& r : records)
      if (r.ok()) f << r.param_count << ',' << format_double(r.test_accuracy) << ',' << format_name(r.model_format) << '\n';
    close_out(f, path);
  }
}

}  // namespace pbp
