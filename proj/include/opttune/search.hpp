#pragma once

// Proposal strategies (random, grid, surrogate with expected improvement),
// the incumbent, and the adaptive evaluation cap.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "opttune/paramspace.hpp"
#include "opttune/surrogate.hpp"

namespace opttune {

enum class Strategy { random, grid, surrogate };

std::string_view to_string(Strategy strategy);
Strategy parse_strategy(std::string_view text);

struct SearchOptions {
  Strategy strategy = Strategy::surrogate;
  std::uint64_t seed = 0;
  std::size_t ensemble_size = 32;
  std::size_t random_candidates = 500;
  std::size_t mutation_candidates = 500;
  double capping_factor = 2.0;
  double min_cap_seconds = 1.0;
  bool adaptive_capping = true;
  /// Numeric axes of the grid strategy are quantized to this many levels.
  std::size_t grid_levels = 5;
};

/// Result of evaluating one configuration on every problem and run.
struct Aggregate {
  ParamConfig config;
  double cost = 0.0;              // aggregated penalized cost
  bool all_ok = false;            // every run finished with status ok
  double max_run_seconds = 0.0;   // slowest single run (for capping)
};

class SearchState {
 public:
  SearchState(ParamSpace space, SearchOptions options);

  const ParamSpace& space() const { return space_; }
  const SearchOptions& options() const { return options_; }
  const std::vector<Aggregate>& history() const { return history_; }
  /// Best all-ok entry, or null before the first successful configuration.
  const Aggregate* incumbent() const { return incumbent_ ? &history_[*incumbent_] : nullptr; }
  std::size_t distinct_count() const { return history_.size(); }

  bool proposed(const std::string& config_id) const { return proposed_.count(config_id) != 0; }
  std::size_t proposed_count() const { return proposed_.size(); }
  const Aggregate* find(const std::string& config_id) const;

  /// Registers a configuration as issued (e.g. a baseline chosen outside propose()).
  void mark_proposed(const ParamConfig& config) {
    proposed_.insert(config.id());
    pending_.emplace(config.id(), config);
  }
  /// Issued configurations without a recorded result yet, by id.
  const std::map<std::string, ParamConfig>& pending() const { return pending_; }

 private:
  friend std::vector<ParamConfig> propose(SearchState&, std::size_t);
  friend void update(SearchState&, const Aggregate&);

  ParamSpace space_;
  SearchOptions options_;
  std::vector<Aggregate> history_;
  std::optional<std::size_t> incumbent_;
  std::set<std::string> proposed_;
  std::map<std::string, ParamConfig> pending_;
  std::vector<std::size_t> grid_cursor_;
  bool grid_done_ = false;
  std::uint64_t calls_ = 0;
};

/// Next batch of never-proposed configurations; the default configuration comes
/// first. The surrogate strategy picks one at a time, treating pending and
/// already picked configurations as observed at their predicted cost. Returns fewer than `batch` only when the space (or grid) is exhausted.
std::vector<ParamConfig> propose(SearchState& state, std::size_t batch);

/// Records an evaluated configuration. The incumbent changes only on a strictly
/// lower cost from an all-ok aggregate. A configuration may be recorded again
/// only to replace a failed entry (capped re-run). Throws for unknown ids.
void update(SearchState& state, const Aggregate& aggregate);

/// Per-evaluation cap: capping_factor x incumbent runtime, floored at
/// min_cap_seconds and never above max_eval_time.
double next_cap(const SearchState& state, double max_eval_time);

/// Fits the ensemble on log(1 + cost) of the history. Throws on empty history.
Surrogate fit_surrogate(const ParamSpace& space, const std::vector<Aggregate>& history, const SurrogateOptions& options);

/// Cost predicted by a surrogate fit on the current history (back-transformed).
std::optional<double> predicted_cost(const SearchState& state, const ParamConfig& config);

/// Ranks a candidate pool (random samples plus one-parameter mutations of the
/// incumbent) by expected improvement, choosing categorical/boolean values
/// with a coarse model first and then numeric values with the full model.
/// `observations` is what `model` was fit on: the history plus pending
/// configurations at their predicted cost. Candidates among them are skipped.
std::vector<ParamConfig> acquire(const Surrogate& model, const SearchState& state,
                                 const std::vector<Aggregate>& observations, std::size_t batch, std::uint64_t seed);

/// Changes one active parameter of `config` (newly active children are sampled).
ParamConfig mutate(const ParamSpace& space, const ParamConfig& config, Rng& rng);

}  // namespace opttune
