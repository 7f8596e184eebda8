#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "opttune/error.hpp"
#include "opttune/mock_solver.hpp"
#include "opttune/search.hpp"
#include "testkit.hpp"

namespace opttune {
namespace {

MockSolverSpec bundled() { return load_mock_spec(testkit::data_dir() / "mocksolver.spec"); }

ParamSpace finite_space() {
  return parse_space(nlohmann::json::parse(R"({
    "solver": "s", "version": "1",
    "parameters": [
      {"name": "a", "kind": "categorical", "domain": ["x", "y", "z"], "default": "x"},
      {"name": "b", "kind": "boolean", "default": false},
      {"name": "c", "kind": "integer", "domain": [1, 2], "default": 1}
    ]})"));
}

Aggregate ok(const ParamConfig& c, double cost) { return {c, cost, true, cost}; }

// In-process tuning loop on the noiseless mock runtime surface.
double tune(Strategy strategy, std::uint64_t seed, std::size_t budget) {
  const auto spec = bundled();
  SearchOptions o;
  o.strategy = strategy;
  o.seed = seed;
  SearchState state(spec.space, o);
  while (state.distinct_count() < budget) {
    const auto batch = propose(state, std::min<std::size_t>(4, budget - state.distinct_count()));
    if (batch.empty()) break;
    for (const auto& c : batch) update(state, ok(c, mock_runtime(spec, c, 0)));
  }
  return state.incumbent()->cost;
}

TEST(Search, DefaultComesFirst) {
  for (auto s : {Strategy::random, Strategy::grid, Strategy::surrogate}) {
    SearchOptions o;
    o.strategy = s;
    SearchState state(bundled().space, o);
    const auto batch = propose(state, 3);
    ASSERT_EQ(batch.size(), 3u);
    EXPECT_EQ(batch.front(), default_config(state.space())) << to_string(s);
  }
}

TEST(Search, NeverReproposesAndExhaustsFiniteSpaces) {
  for (auto s : {Strategy::random, Strategy::grid, Strategy::surrogate}) {
    SearchOptions o;
    o.strategy = s;
    SearchState state(finite_space(), o);
    std::set<std::string> seen;
    while (true) {
      const auto batch = propose(state, 5);
      if (batch.empty()) break;
      for (const auto& c : batch) {
        EXPECT_TRUE(seen.insert(c.id()).second) << to_string(s);
        update(state, ok(c, 1.0 + static_cast<double>(seen.size())));
      }
    }
    EXPECT_EQ(seen.size(), 12u) << to_string(s);
  }
}

TEST(Search, GridCoversQuantizedAxes) {
  SearchOptions o;
  o.strategy = Strategy::grid;
  o.grid_levels = 3;
  auto space = parse_space(nlohmann::json::parse(R"({
    "solver": "s", "version": "1",
    "parameters": [
      {"name": "r", "kind": "real", "domain": [0, 1], "default": 0.5},
      {"name": "b", "kind": "boolean", "default": true}
    ]})"));
  SearchState state(space, o);
  std::set<std::string> values;
  for (const auto& c : propose(state, 100)) values.insert(format_value(*c.get("r")) + format_value(*c.get("b")));
  EXPECT_EQ(values, (std::set<std::string>{"0false", "0true", "0.5false", "0.5true", "1false", "1true"}));
}

TEST(Search, IncumbentOnlyMovesOnStrictImprovement) {
  SearchState state(finite_space(), {});
  const auto batch = propose(state, 4);
  update(state, ok(batch[0], 5.0));
  EXPECT_EQ(state.incumbent()->config, batch[0]);
  update(state, ok(batch[1], 5.0));
  EXPECT_EQ(state.incumbent()->config, batch[0]);
  update(state, {batch[2], 1.0, false, 0.5});
  EXPECT_EQ(state.incumbent()->config, batch[0]);
  update(state, ok(batch[3], 4.0));
  EXPECT_EQ(state.incumbent()->config, batch[3]);
}

TEST(Search, FailedEntriesMayBeReplacedOnce) {
  SearchState state(finite_space(), {});
  const auto batch = propose(state, 2);
  update(state, {batch[0], 20.0, false, 2.0});
  update(state, ok(batch[0], 3.0));
  EXPECT_EQ(state.distinct_count(), 1u);
  EXPECT_EQ(state.incumbent()->cost, 3.0);
  EXPECT_THROW(update(state, ok(batch[0], 2.0)), ValidationError);
  Rng rng(1);
  EXPECT_THROW(update(state, ok(sample_one(state.space(), rng), 1.0)), ValidationError);
}

TEST(Search, NextCapFollowsIncumbent) {
  SearchOptions o;
  o.capping_factor = 2.0;
  o.min_cap_seconds = 1.0;
  SearchState state(finite_space(), o);
  EXPECT_DOUBLE_EQ(next_cap(state, 60.0), 60.0);
  const auto batch = propose(state, 3);
  update(state, ok(batch[0], 10.0));
  EXPECT_DOUBLE_EQ(next_cap(state, 60.0), 20.0);
  EXPECT_DOUBLE_EQ(next_cap(state, 15.0), 15.0);
  update(state, ok(batch[1], 0.2));
  EXPECT_DOUBLE_EQ(next_cap(state, 60.0), 1.0);
  EXPECT_THROW(next_cap(state, 0.0), ValidationError);

  o.adaptive_capping = false;
  SearchState fixed(finite_space(), o);
  update(fixed, ok(propose(fixed, 1)[0], 0.5));
  EXPECT_DOUBLE_EQ(next_cap(fixed, 60.0), 60.0);
}

TEST(Search, MutateChangesOneActiveParameter) {
  const auto space = bundled().space;
  Rng rng(4);
  const auto base = default_config(space);
  for (int i = 0; i < 200; ++i) {
    const auto m = mutate(space, base, rng);
    EXPECT_NO_THROW(space.validate(m));
    EXPECT_NE(m, base);
    int changed = 0;
    for (const auto& [name, value] : base.values())
      if (!m.get(name) || *m.get(name) != value) ++changed;
    EXPECT_EQ(changed, 1);
  }
}

TEST(Search, ProposalsAreSeedDeterministic) {
  auto run = [](std::uint64_t seed) {
    SearchOptions o;
    o.seed = seed;
    SearchState state(bundled().space, o);
    std::vector<std::string> ids;
    for (int round = 0; round < 6; ++round)
      for (const auto& c : propose(state, 3)) {
        ids.push_back(c.id());
        update(state, ok(c, mock_runtime(bundled(), c, 0)));
      }
    return ids;
  };
  EXPECT_EQ(run(3), run(3));
  EXPECT_NE(run(3), run(4));
}

TEST(Search, SurrogateBeatsRandomOnMockSurface) {
  std::vector<double> s, r;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    s.push_back(tune(Strategy::surrogate, seed, 60));
    r.push_back(tune(Strategy::random, seed, 60));
  }
  std::sort(s.begin(), s.end());
  std::sort(r.begin(), r.end());
  EXPECT_LT(s[2], r[2]);
}

TEST(Search, PredictedCostTracksHistory) {
  const auto spec = bundled();
  SearchState state(spec.space, {});
  EXPECT_FALSE(predicted_cost(state, default_config(spec.space)));
  for (const auto& c : propose(state, 20)) update(state, ok(c, mock_runtime(spec, c, 0)));
  const auto p = predicted_cost(state, spec.optimum);
  ASSERT_TRUE(p);
  EXPECT_GT(*p, 0.0);
}

TEST(Search, TracksPendingConfigurations) {
  const auto spec = bundled();
  SearchState state(spec.space, {});
  for (const auto& c : propose(state, 6)) update(state, ok(c, mock_runtime(spec, c, 0)));
  const auto batch = propose(state, 4);
  ASSERT_EQ(batch.size(), 4u);
  EXPECT_EQ(state.pending().size(), 4u);
  std::set<std::string> ids;
  for (const auto& c : batch) ids.insert(c.id());
  EXPECT_EQ(ids.size(), 4u);
  update(state, ok(batch[0], 1.0));
  EXPECT_EQ(state.pending().size(), 3u);
  EXPECT_FALSE(state.pending().count(batch[0].id()));
  for (const auto& c : propose(state, 2)) EXPECT_FALSE(ids.count(c.id()));
  EXPECT_EQ(state.pending().size(), 5u);
}

TEST(Search, StrategyNames) {
  for (auto s : {Strategy::random, Strategy::grid, Strategy::surrogate}) EXPECT_EQ(parse_strategy(to_string(s)), s);
  EXPECT_THROW(parse_strategy("annealing"), ValidationError);
}

}  // namespace
}  // namespace opttune
