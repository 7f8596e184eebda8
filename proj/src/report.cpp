#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "opttune/error.hpp"
#include "opttune/jsonio.hpp"
#include "opttune/taskman.hpp"

namespace opttune {

namespace fs = std::filesystem;
using nlohmann::json;

double aggregate_cost(const std::map<std::string, std::vector<double>>& costs_by_problem) {
  if (costs_by_problem.empty()) throw ValidationError("records", "no records to aggregate");
  std::vector<double> means;
  for (const auto& [problem, costs] : costs_by_problem) {
    if (costs.empty()) throw ValidationError(problem, "no records for problem");
    double sum = 0.0;
    for (double c : costs) sum += c;
    means.push_back(sum / static_cast<double>(costs.size()));
  }
  if (means.size() == 1) return means.front();
  double log_sum = 0.0;
  for (double m : means) log_sum += std::log(m + 1.0);
  return std::exp(log_sum / static_cast<double>(means.size())) - 1.0;
}

double aggregate_cost(std::span<const EvaluationRecord> records) {
  std::map<std::string, std::vector<double>> by_problem;
  for (const auto& r : records) by_problem[r.instance].push_back(r.penalized_cost);
  return aggregate_cost(by_problem);
}

double speedup_ratio(double t_default, double t_tuned) {
  if (t_default < 0.0 || t_tuned < 0.0) throw ValidationError("speedup", "times must be >= 0");
  if (t_default == t_tuned) return 1.0;
  if (t_tuned == 0.0) return std::numeric_limits<double>::infinity();
  return t_default / t_tuned;
}

namespace {
constexpr std::array<double, 4> kBucketEdges{2.0, 4.0, 32.0, 100.0};
}

SpeedupBuckets speedup_buckets(std::span<const double> ratios) {
  SpeedupBuckets b;
  for (double r : ratios) {
    const auto k = static_cast<std::size_t>(std::upper_bound(kBucketEdges.begin(), kBucketEdges.end(), r) -
                                            kBucketEdges.begin());
    ++b.counts[k];
    ++b.total;
  }
  return b;
}

double SpeedupBuckets::fraction_at_least(double threshold) const {
  const auto it = std::find(kBucketEdges.begin(), kBucketEdges.end(), threshold);
  if (it == kBucketEdges.end()) throw ValidationError("threshold", "not a bucket edge");
  if (total == 0) return 0.0;
  std::size_t n = 0;
  for (auto k = static_cast<std::size_t>(it - kBucketEdges.begin()) + 1; k < counts.size(); ++k) n += counts[k];
  return static_cast<double>(n) / static_cast<double>(total);
}

std::vector<SolvablePoint> solvable_curve(std::span<const std::pair<double, double>> default_tuned,
                                          std::span<const double> budgets) {
  std::vector<SolvablePoint> out;
  for (double budget : budgets) {
    SolvablePoint p{budget, 0, 0};
    for (const auto& [d, t] : default_tuned) {
      if (d <= budget) ++p.default_count;
      if (t <= budget) ++p.tuned_count;
    }
    out.push_back(p);
  }
  return out;
}

// ------------------------------------------------------------------ history

json history_entry_to_json(const HistoryEntry& e) {
  return json{{"seq", e.seq},
              {"config_id", e.config_id},
              {"params", e.params},
              {"instance", e.instance},
              {"run", e.run},
              {"seed", e.seed},
              {"rerun", e.rerun},
              {"status", to_string(e.status)},
              {"cap_seconds", e.cap_seconds},
              {"penalized_cost", e.penalized_cost},
              {"exit_code", e.exit_code ? json(*e.exit_code) : json(nullptr)},
              {"metrics", e.metrics}};
}

HistoryEntry history_entry_from_json(const json& j) {
  HistoryEntry e;
  e.seq = j.at("seq").get<std::uint64_t>();
  e.config_id = j.at("config_id").get<std::string>();
  e.params = j.at("params");
  e.instance = j.at("instance").get<std::string>();
  e.run = j.at("run").get<int>();
  e.seed = j.at("seed").get<std::uint64_t>();
  e.rerun = j.at("rerun").get<bool>();
  e.status = parse_eval_status(j.at("status").get<std::string>());
  e.cap_seconds = j.at("cap_seconds").get<double>();
  e.penalized_cost = j.at("penalized_cost").get<double>();
  if (!j.at("exit_code").is_null()) e.exit_code = j["exit_code"].get<int>();
  e.metrics = j.value("metrics", json::object());
  return e;
}

HistoryEntry history_entry_from_record(std::uint64_t seq, const EvaluationRecord& r) {
  HistoryEntry e;
  e.seq = seq;
  e.config_id = r.config_id;
  e.params = config_to_json(r.config);
  e.instance = r.instance;
  e.run = r.run;
  e.seed = r.seed;
  e.rerun = r.rerun;
  e.status = r.status;
  e.cap_seconds = r.cap_seconds;
  e.penalized_cost = r.penalized_cost;
  e.exit_code = r.exit_code;
  e.metrics = json::object();
  for (const auto& [name, m] : r.metrics.metrics)
    if (m.value) e.metrics[name] = std::visit([](const auto& v) { return json(v); }, *m.value);
  return e;
}

std::vector<HistoryEntry> read_history(const fs::path& history_file) {
  std::vector<HistoryEntry> out;
  std::ifstream in(history_file, std::ios::binary);
  if (!in) return out;
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) break;  // interrupted final write
    ++line_no;
    const std::string_view line(text.data() + pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(history_file.string() + ": " + e.what(), line_no, 1);
    }
    out.push_back(history_entry_from_json(j));
  }
  return out;
}

// ------------------------------------------------------------------- report

namespace {

struct ConfigResult {
  json params;
  std::map<std::pair<std::string, int>, const HistoryEntry*> runs;
};

}  // namespace

TuningReport compute_report(std::span<const HistoryEntry> history, const std::string& default_config_id,
                            const std::vector<std::string>& problems, int runs_per_config) {
  std::vector<std::string> order;
  std::map<std::string, ConfigResult> configs;
  for (const auto& e : history) {
    auto [it, inserted] = configs.try_emplace(e.config_id);
    if (inserted) {
      order.push_back(e.config_id);
      it->second.params = e.params;
    }
    auto& slot = it->second.runs[{e.instance, e.run}];
    if (!slot || e.rerun || !slot->rerun) slot = &e;
  }

  auto complete = [&](const ConfigResult& c) {
    for (const auto& p : problems)
      for (int r = 0; r < runs_per_config; ++r)
        if (!c.runs.count({p, r})) return false;
    return true;
  };
  auto problem_means = [&](const ConfigResult& c) {
    std::map<std::string, std::vector<double>> costs;
    for (const auto& p : problems)
      for (int r = 0; r < runs_per_config; ++r) costs[p].push_back(c.runs.at({p, r})->penalized_cost);
    return costs;
  };
  auto all_ok = [](const ConfigResult& c) {
    return std::all_of(c.runs.begin(), c.runs.end(),
                       [](const auto& kv) { return kv.second->status == EvalStatus::ok; });
  };

  const auto dit = configs.find(default_config_id);
  if (dit == configs.end() || !complete(dit->second))
    throw Error("baseline configuration " + default_config_id + " has no complete result");

  TuningReport rep;
  rep.default_config_id = default_config_id;
  rep.t_default = aggregate_cost(problem_means(dit->second));
  rep.best_config_id = default_config_id;
  rep.best_params = dit->second.params;
  rep.t_tuned = rep.t_default;
  bool have_ok = all_ok(dit->second);
  for (const auto& id : order) {
    const auto& c = configs.at(id);
    if (id == default_config_id || !complete(c) || !all_ok(c)) continue;
    const double cost = aggregate_cost(problem_means(c));
    if (!have_ok || cost < rep.t_tuned) {
      have_ok = true;
      rep.best_config_id = id;
      rep.best_params = c.params;
      rep.t_tuned = cost;
    }
  }
  const bool best_is_default = rep.best_config_id == default_config_id;
  rep.speedup = best_is_default ? 1.0 : speedup_ratio(rep.t_default, rep.t_tuned);

  const auto default_costs = problem_means(dit->second);
  const auto best_costs = problem_means(configs.at(rep.best_config_id));
  std::vector<double> ratios;
  std::vector<std::pair<double, double>> pairs;
  for (const auto& p : problems) {
    InstanceResult ir;
    ir.instance = p;
    ir.t_default = aggregate_cost(std::map<std::string, std::vector<double>>{{p, default_costs.at(p)}});
    ir.t_tuned = aggregate_cost(std::map<std::string, std::vector<double>>{{p, best_costs.at(p)}});
    ir.speedup = best_is_default ? 1.0 : speedup_ratio(ir.t_default, ir.t_tuned);
    ratios.push_back(ir.speedup);
    pairs.emplace_back(ir.t_default, ir.t_tuned);
    rep.per_instance.push_back(std::move(ir));
  }
  rep.buckets = speedup_buckets(ratios);
  static constexpr std::array<double, 7> kBudgets{1.0, 10.0, 60.0, 300.0, 900.0, 3600.0, 4000.0};
  rep.solvable = solvable_curve(pairs, kBudgets);
  rep.evaluations = history.size();
  rep.distinct_configs = configs.size();
  return rep;
}

namespace {
json finite_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }
}  // namespace

json report_to_json(const TuningReport& r) {
  json per = json::array();
  for (const auto& i : r.per_instance)
    per.push_back({{"instance", i.instance},
                   {"t_default", i.t_default},
                   {"t_tuned", i.t_tuned},
                   {"speedup", finite_or_null(i.speedup)}});
  json curve = json::array();
  for (const auto& p : r.solvable)
    curve.push_back({{"budget", p.budget}, {"default", p.default_count}, {"tuned", p.tuned_count}});
  return json{{"task_id", r.task_id},
              {"solver", r.solver},
              {"objective", r.objective},
              {"default_config_id", r.default_config_id},
              {"best_config_id", r.best_config_id},
              {"best_params", r.best_params},
              {"t_default", r.t_default},
              {"t_tuned", r.t_tuned},
              {"speedup", finite_or_null(r.speedup)},
              {"per_instance", std::move(per)},
              {"speedup_buckets",
               {{"edges", kBucketEdges}, {"counts", r.buckets.counts}, {"total", r.buckets.total}}},
              {"solvable", std::move(curve)},
              {"evaluations", r.evaluations},
              {"distinct_configs", r.distinct_configs},
              {"wallclock_seconds", r.wallclock_seconds},
              {"termination_reason", r.reason ? json(std::string(to_string(*r.reason))) : json(nullptr)}};
}

}  // namespace opttune
