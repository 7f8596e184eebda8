#include "opttune/search.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "opttune/error.hpp"

namespace opttune {
namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double standard_normal(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

/// Gaussian step in unit space at a scale drawn from {0.2, 0.05, 0.01}.
double local_step(Rng& rng) {
  static constexpr double kScales[] = {0.2, 0.05, 0.01};
  const double scale = kScales[uniform_index(rng, 3)];
  return scale * standard_normal(rng);
}

double as_double(const ParamValue& v) {
  return std::holds_alternative<double>(v) ? std::get<double>(v) : static_cast<double>(std::get<std::int64_t>(v));
}

bool mutable_param(const ParamDef& def) {
  switch (def.kind) {
    case ParamKind::boolean: return true;
    case ParamKind::categorical: return def.choices.size() > 1;
    default: return def.hi > def.lo;
  }
}

std::vector<ParamValue> grid_axis(const ParamDef& def, std::size_t levels) {
  std::vector<ParamValue> axis;
  switch (def.kind) {
    case ParamKind::boolean: return {false, true};
    case ParamKind::categorical:
      for (const auto& c : def.choices) axis.emplace_back(c);
      return axis;
    default: break;
  }
  const std::size_t n = std::max<std::size_t>(levels, 1);
  for (std::size_t k = 0; k < n; ++k) {
    const double u = n == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(n - 1);
    ParamValue v = from_unit(def, u);
    if (std::find(axis.begin(), axis.end(), v) == axis.end()) axis.push_back(std::move(v));
  }
  return axis;
}

SurrogateOptions model_options(const SearchOptions& options, std::uint64_t salt) {
  SurrogateOptions so;
  so.trees = std::max<std::size_t>(1, options.ensemble_size);
  so.seed = splitmix(options.seed ^ salt);
  return so;
}

struct Candidate {
  ParamConfig config;
  std::vector<double> x;
  Prediction prediction;
  double ei = 0.0;
  std::uint64_t key = 0;
};

void rank(std::vector<Candidate>& pool) {
  std::sort(pool.begin(), pool.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(b.ei, b.prediction.stddev, a.key) < std::tie(a.ei, a.prediction.stddev, b.key);
  });
}

}  // namespace

std::string_view to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::random: return "random";
    case Strategy::grid: return "grid";
    case Strategy::surrogate: return "surrogate";
  }
  return "?";
}

Strategy parse_strategy(std::string_view text) {
  if (text == "random") return Strategy::random;
  if (text == "grid") return Strategy::grid;
  if (text == "surrogate") return Strategy::surrogate;
  throw ValidationError("strategy", "expected random, grid or surrogate, got '" + std::string(text) + "'");
}

SearchState::SearchState(ParamSpace space, SearchOptions options)
    : space_(std::move(space)), options_(options), grid_cursor_(space_.size(), 0) {}

const Aggregate* SearchState::find(const std::string& config_id) const {
  for (const auto& a : history_)
    if (a.config.id() == config_id) return &a;
  return nullptr;
}

ParamConfig mutate(const ParamSpace& space, const ParamConfig& config, Rng& rng) {
  std::vector<const ParamDef*> active;
  for (const auto& def : space.params())
    if (config.get(def.name) && mutable_param(def)) active.push_back(&def);
  if (active.empty()) return config;

  const ParamDef& def = *active[uniform_index(rng, active.size())];
  ParamConfig::Map values = config.values();
  ParamValue& v = values[def.name];
  switch (def.kind) {
    case ParamKind::boolean: v = !std::get<bool>(v); break;
    case ParamKind::categorical: {
      const auto& current = std::get<std::string>(v);
      std::vector<std::string> others;
      for (const auto& c : def.choices)
        if (c != current) others.push_back(c);
      v = others[uniform_index(rng, others.size())];
      break;
    }
    default: {
      ParamValue next = v;
      for (int attempt = 0; attempt < 8 && next == v; ++attempt) {
        if (uniform01(rng) < 0.5) {
          const double u = std::clamp(to_unit(def, as_double(v)) + local_step(rng), 0.0, 1.0);
          next = from_unit(def, u);
        } else {
          next = sample_value(def, rng);
        }
      }
      v = next;
    }
  }
  return resolve(space, std::move(values), &rng);
}

Surrogate fit_surrogate(const ParamSpace& space, const std::vector<Aggregate>& history,
                        const SurrogateOptions& options) {
  std::vector<TrainingRow> rows;
  rows.reserve(history.size());
  for (const auto& a : history) rows.push_back({encode(space, a.config), std::log1p(std::max(0.0, a.cost)), 1.0});
  return Surrogate::fit(std::move(rows), options);
}

std::optional<double> predicted_cost(const SearchState& state, const ParamConfig& config) {
  if (state.history().empty()) return std::nullopt;
  const Surrogate model = fit_surrogate(state.space(), state.history(), model_options(state.options(), 0));
  const auto x = encode(state.space(), config);
  return std::expm1(model.predict(x).mean);
}

std::vector<ParamConfig> acquire(const Surrogate& model, const SearchState& state,
                                 const std::vector<Aggregate>& observations, std::size_t batch, std::uint64_t seed) {
  const ParamSpace& space = state.space();
  const SearchOptions& opt = state.options();
  if (batch == 0 || state.history().empty()) return {};
  Rng rng(seed);

  const Aggregate* base = state.incumbent();
  double best = INFINITY;
  for (const auto& a : state.history()) {
    if (!base && a.cost < best) base = &a;
    best = std::min(best, a.cost);
  }
  if (state.incumbent()) best = state.incumbent()->cost;
  const double best_y = std::log1p(std::max(0.0, best));

  std::vector<ParamConfig> pool;
  for (std::size_t i = 0; i < opt.random_candidates; ++i) pool.push_back(sample_one(space, rng));
  for (std::size_t i = 0; i < opt.mutation_candidates; ++i) pool.push_back(mutate(space, base->config, rng));

  // Coarse level: pick the most promising categorical/boolean signatures.
  std::vector<std::size_t> discrete_slots, numeric_params;
  for (std::size_t i = 0; i < space.size(); ++i) {
    const auto& def = space.params()[i];
    if (def.numeric()) {
      numeric_params.push_back(i);
    } else {
      for (std::size_t s = 0; s < def.width(); ++s) discrete_slots.push_back(space.slot_offset(i) + s);
    }
  }
  auto signature = [&](const std::vector<double>& x) {
    std::vector<double> sig;
    sig.reserve(discrete_slots.size());
    for (auto s : discrete_slots) sig.push_back(x[s]);
    return sig;
  };

  if (!discrete_slots.empty() && !numeric_params.empty()) {
    std::vector<TrainingRow> rows;
    for (const auto& a : observations)
      rows.push_back({signature(encode(space, a.config)), std::log1p(std::max(0.0, a.cost)), 1.0});
    const Surrogate coarse = Surrogate::fit(std::move(rows), model_options(opt, seed ^ 0xC0A25EULL));

    std::map<std::vector<double>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < pool.size(); ++i) groups[signature(encode(space, pool[i]))].push_back(i);
    std::vector<std::tuple<double, double, std::uint64_t, const std::vector<double>*>> scored;
    for (const auto& [sig, members] : groups) {
      const Prediction p = coarse.predict(sig);
      scored.emplace_back(expected_improvement(best_y, p.mean, p.stddev), p.stddev, rng(), &sig);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      return std::tie(std::get<0>(b), std::get<1>(b), std::get<2>(a)) <
             std::tie(std::get<0>(a), std::get<1>(a), std::get<2>(b));
    });
    const std::size_t keep = std::min(scored.size(), std::max<std::size_t>(2 * batch, 5));

    // Fine level: numeric refinements within the kept signatures.
    const std::size_t per_group = std::max<std::size_t>(1, pool.size() / std::max<std::size_t>(keep, 1));
    std::vector<ParamConfig> refined;
    for (std::size_t k = 0; k < keep; ++k) {
      const auto& members = groups[*std::get<3>(scored[k])];
      for (auto m : members) refined.push_back(pool[m]);
      for (std::size_t r = 0; r < per_group; ++r) {
        ParamConfig::Map values = pool[members[uniform_index(rng, members.size())]].values();
        for (auto i : numeric_params) {
          const auto& def = space.params()[i];
          auto it = values.find(def.name);
          if (it == values.end()) continue;
          if (uniform01(rng) < 0.5) {
            const double u = std::clamp(to_unit(def, as_double(it->second)) + local_step(rng), 0.0, 1.0);
            it->second = from_unit(def, u);
          } else {
            it->second = sample_value(def, rng);
          }
        }
        refined.push_back(resolve(space, std::move(values), &rng));
      }
    }
    pool = std::move(refined);
  }

  std::vector<Candidate> ranked;
  std::set<std::string> seen;
  for (const auto& a : observations) seen.insert(a.config.id());
  for (auto& c : pool) {
    if (state.proposed(c.id()) || !seen.insert(c.id()).second) continue;
    Candidate cand{std::move(c), {}, {}, 0.0, rng()};
    cand.x = encode(space, cand.config);
    cand.prediction = model.predict(cand.x);
    cand.ei = expected_improvement(best_y, cand.prediction.mean, cand.prediction.stddev);
    ranked.push_back(std::move(cand));
  }
  rank(ranked);
  std::vector<ParamConfig> out;
  for (std::size_t i = 0; i < ranked.size() && out.size() < batch; ++i) out.push_back(std::move(ranked[i].config));
  return out;
}

std::vector<ParamConfig> propose(SearchState& state, std::size_t batch) {
  const ParamSpace& space = state.space_;
  const SearchOptions& opt = state.options_;
  const std::uint64_t call_seed = splitmix(opt.seed * 0x9E3779B97F4A7C15ULL + ++state.calls_);
  Rng rng(call_seed);
  std::vector<ParamConfig> out;
  std::set<std::string> taken;
  auto take = [&](ParamConfig c) {
    if (out.size() >= batch || state.proposed(c.id()) || !taken.insert(c.id()).second) return;
    out.push_back(std::move(c));
  };

  if (batch == 0) return out;
  take(default_config(space));

  auto random_fill = [&] {
    for (std::size_t attempt = 0; out.size() < batch && attempt < 100 * batch; ++attempt) take(sample_one(space, rng));
    if (out.size() < batch) {
      if (auto all = enumerate(space, 100000)) {
        for (auto& c : *all) take(std::move(c));
      }
    }
  };

  switch (opt.strategy) {
    case Strategy::random: random_fill(); break;
    case Strategy::grid: {
      std::vector<std::vector<ParamValue>> axes;
      for (const auto& def : space.params()) axes.push_back(grid_axis(def, opt.grid_levels));
      auto& cursor = state.grid_cursor_;
      while (out.size() < batch && !state.grid_done_) {
        ParamConfig::Map values;
        for (std::size_t i = 0; i < axes.size(); ++i) values[space.params()[i].name] = axes[i][cursor[i]];
        take(resolve(space, std::move(values)));
        std::size_t i = 0;
        for (; i < cursor.size(); ++i) {
          if (++cursor[i] < axes[i].size()) break;
          cursor[i] = 0;
        }
        if (i == cursor.size()) state.grid_done_ = true;
      }
      break;
    }
    case Strategy::surrogate: {
      if (out.size() < batch && !state.history_.empty()) {
        std::vector<Aggregate> observed = state.history_;
        Surrogate model = fit_surrogate(space, observed, model_options(opt, call_seed));
        auto believe = [&](const ParamConfig& c) {
          observed.push_back({c, std::expm1(model.predict(encode(space, c)).mean), false, 0.0});
        };
        for (const auto& [id, c] : state.pending_) believe(c);
        for (std::uint64_t k = 1; out.size() < batch; ++k) {
          if (observed.size() > state.history_.size())
            model = fit_surrogate(space, observed, model_options(opt, splitmix(call_seed + k)));
          auto next = acquire(model, state, observed, 1, splitmix(call_seed ^ k));
          if (next.empty()) break;
          const auto before = out.size();
          take(std::move(next.front()));
          if (out.size() == before) break;
          believe(out.back());
        }
      }
      random_fill();
      break;
    }
  }
  for (const auto& c : out) {
    state.proposed_.insert(c.id());
    state.pending_.emplace(c.id(), c);
  }
  return out;
}

void update(SearchState& state, const Aggregate& aggregate) {
  const std::string& id = aggregate.config.id();
  if (!state.proposed(id)) throw ValidationError(id, "configuration was never proposed");
  state.pending_.erase(id);
  auto it = std::find_if(state.history_.begin(), state.history_.end(),
                         [&](const Aggregate& a) { return a.config.id() == id; });
  std::size_t index;
  if (it != state.history_.end()) {
    if (it->all_ok) throw ValidationError(id, "configuration already has a successful result");
    *it = aggregate;
    index = static_cast<std::size_t>(it - state.history_.begin());
  } else {
    state.history_.push_back(aggregate);
    index = state.history_.size() - 1;
  }
  if (aggregate.all_ok && (!state.incumbent_ || aggregate.cost < state.history_[*state.incumbent_].cost))
    state.incumbent_ = index;
}

double next_cap(const SearchState& state, double max_eval_time) {
  if (!(max_eval_time > 0.0)) throw ValidationError("max-eval-time", "must be > 0");
  const Aggregate* inc = state.incumbent();
  if (!state.options().adaptive_capping || !inc) return max_eval_time;
  const double cap = std::max(state.options().min_cap_seconds, state.options().capping_factor * inc->max_run_seconds);
  return std::min(max_eval_time, cap);
}

}  // namespace opttune
