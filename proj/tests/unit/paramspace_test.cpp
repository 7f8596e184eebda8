#include <gtest/gtest.h>

#include <set>

#include "opttune/error.hpp"
#include "opttune/paramspace.hpp"
#include "testkit.hpp"

namespace opttune {
namespace {

using nlohmann::json;

ParamSpace mock_space() { return load_space(testkit::data_dir() / "mocksolver.params"); }

json small_doc() {
  return json::parse(R"({
    "solver": "s", "version": "1",
    "parameters": [
      {"name": "mode", "kind": "categorical", "domain": ["a", "b"], "default": "a"},
      {"name": "depth", "kind": "integer", "domain": [1, 4], "default": 2,
       "condition": {"parent": "mode", "equals": "b"}},
      {"name": "flag", "kind": "boolean", "default": false}
    ]})");
}

TEST(ParamSpace, LoadsBundledDescriptor) {
  const auto space = mock_space();
  EXPECT_EQ(space.solver(), "mocksolver");
  EXPECT_EQ(space.size(), 8u);
  // 4 + 3 one-hot slots and six scalar slots
  EXPECT_EQ(space.encoding_width(), 13u);
  const auto* tol = space.find("tolerance");
  ASSERT_NE(tol, nullptr);
  EXPECT_EQ(tol->scale, Scale::log);
}

TEST(ParamSpace, DefaultConfigIdIsFrozenDigest) {
  const auto config = default_config(mock_space());
  EXPECT_EQ(ParamConfig::canonical_text(config.values()),
            "branch_depth=i:8\ncuts=c:on\nheuristics=b:true\npresolve=b:true\nstrategy=c:auto\nthreads=i:1\n"
            "tolerance=r:1e-06\n");
  EXPECT_EQ(config.id(), "f2b71e7810cc408d");
  // cut_strength is inactive unless cuts == aggressive
  EXPECT_EQ(config.get("cut_strength"), nullptr);
}

TEST(ParamSpace, RejectsInvalidDescriptors) {
  auto bad = [](const char* name, auto mutate) {
    json doc = small_doc();
    mutate(doc);
    try {
      parse_space(doc);
      ADD_FAILURE() << "accepted: " << doc.dump();
    } catch (const ValidationError& e) {
      EXPECT_EQ(e.subject(), name);
    }
  };
  bad("depth", [](json& d) { d["parameters"][1]["default"] = 9; });
  bad("depth", [](json& d) { d["parameters"][1]["domain"] = json::array({5, 1}); });
  bad("depth", [](json& d) { d["parameters"][1]["condition"]["parent"] = "nope"; });
  bad("depth", [](json& d) { d["parameters"][1]["condition"]["equals"] = "z"; });
  bad("mode", [](json& d) { d["parameters"][0]["domain"] = json::array({"a", "a"}); });
  bad("mode", [](json& d) { d["parameters"][0]["kind"] = "enum"; });
  bad("flag", [](json& d) { d["parameters"].push_back(d["parameters"][2]); });
  bad("depth", [](json& d) {
    d["parameters"][1]["scale"] = "log";
    d["parameters"][1]["domain"] = json::array({0, 4});
  });
}

TEST(ParamSpace, RejectsConditionCycles) {
  json doc = small_doc();
  doc["parameters"][0]["condition"] = {{"parent", "flag"}, {"equals", true}};
  doc["parameters"][2]["condition"] = {{"parent", "mode"}, {"equals", "b"}};
  EXPECT_THROW(parse_space(doc), ValidationError);
}

TEST(ParamSpace, SamplesStayInDomainAndRespectConditions) {
  const auto space = mock_space();
  for (const auto& c : sample(space, 7, 500)) {
    EXPECT_NO_THROW(space.validate(c));
    const bool aggressive = std::get<std::string>(*c.get("cuts")) == "aggressive";
    EXPECT_EQ(c.get("cut_strength") != nullptr, aggressive);
  }
}

TEST(ParamSpace, SamplingIsSeedDeterministic) {
  const auto space = mock_space();
  const auto a = sample(space, 42, 50);
  const auto b = sample(space, 42, 50);
  const auto c = sample(space, 43, 50);
  ASSERT_EQ(a.size(), 50u);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(ParamSpace, LogScaleSamplesSpreadOverDecades) {
  const auto space = mock_space();
  const auto& tol = *space.find("tolerance");
  Rng rng(3);
  int below = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i)
    if (std::get<double>(sample_value(tol, rng)) < 1e-6) ++below;
  // half of the six decades lie below 1e-6
  EXPECT_NEAR(static_cast<double>(below) / n, 0.5, 0.04);
}

TEST(ParamSpace, EncodeDecodeRoundTrip) {
  const auto space = mock_space();
  for (const auto& c : sample(space, 11, 300)) {
    const auto v = encode(space, c);
    ASSERT_EQ(v.size(), space.encoding_width());
    for (double x : v) EXPECT_TRUE(x == kInactiveSlot || (x >= 0.0 && x <= 1.0));
    EXPECT_EQ(decode(space, v), c);
  }
}

TEST(ParamSpace, InactiveSlotsHoldSentinel) {
  const auto space = mock_space();
  const auto v = encode(space, default_config(space));
  const auto i = *space.index_of("cut_strength");
  EXPECT_EQ(v[space.slot_offset(i)], kInactiveSlot);
}

TEST(ParamSpace, IntegerFromUnitRoundsTiesDown) {
  ParamDef d;
  d.name = "n";
  d.kind = ParamKind::integer;
  d.lo = 0;
  d.hi = 2;
  EXPECT_EQ(std::get<std::int64_t>(from_unit(d, 0.25)), 0);
  EXPECT_EQ(std::get<std::int64_t>(from_unit(d, 0.26)), 1);
  EXPECT_EQ(std::get<std::int64_t>(from_unit(d, 0.75)), 1);
  EXPECT_EQ(std::get<std::int64_t>(from_unit(d, 1.5)), 2);
}

TEST(ParamSpace, ValidateRejectsBadAssignments) {
  const auto space = parse_space(small_doc());
  EXPECT_NO_THROW(space.validate(ParamConfig({{"mode", std::string("a")}, {"flag", true}})));
  EXPECT_THROW(space.validate(ParamConfig({{"mode", std::string("a")}})), ValidationError);
  EXPECT_THROW(space.validate(ParamConfig({{"mode", std::string("a")}, {"flag", true}, {"depth", std::int64_t{2}}})),
               ValidationError);
  EXPECT_THROW(space.validate(ParamConfig({{"mode", std::string("b")}, {"flag", true}, {"depth", std::int64_t{7}}})),
               ValidationError);
  EXPECT_THROW(space.validate(ParamConfig({{"mode", std::string("c")}, {"flag", true}})), ValidationError);
}

TEST(ParamSpace, EnumeratesFiniteSpaces) {
  const auto space = parse_space(small_doc());
  EXPECT_EQ(space.finite_size(100), std::optional<std::size_t>(10));
  const auto all = enumerate(space, 100);
  ASSERT_TRUE(all);
  std::set<std::string> ids;
  for (const auto& c : *all) ids.insert(c.id());
  EXPECT_EQ(ids.size(), 10u);
  EXPECT_FALSE(enumerate(space, 9));
  EXPECT_FALSE(mock_space().finite_size(1000000));
}

TEST(ParamSpace, RestrictKeepsNamedParameters) {
  const auto space = mock_space().restrict_to({"threads", "presolve"});
  EXPECT_EQ(space.size(), 2u);
  EXPECT_THROW(mock_space().restrict_to({"bogus"}), ValidationError);
}

TEST(ParamSpace, ConfigJsonRoundTrip) {
  const auto space = mock_space();
  for (const auto& c : sample(space, 5, 50)) EXPECT_EQ(config_from_json(space, config_to_json(c)), c);
  EXPECT_THROW(config_from_json(space, json{{"threads", 99}}), ValidationError);
}

TEST(ParamSpace, SpaceJsonRoundTrip) {
  const auto space = mock_space();
  const auto again = parse_space(space_to_json(space));
  EXPECT_EQ(space_to_json(again), space_to_json(space));
  EXPECT_EQ(again.encoding_width(), space.encoding_width());
}

TEST(ParamSpace, ConfigIdIgnoresInsertionOrder) {
  ParamConfig::Map a{{"x", std::int64_t{1}}, {"y", true}};
  ParamConfig::Map b;
  b.emplace("y", true);
  b.emplace("x", std::int64_t{1});
  EXPECT_EQ(ParamConfig(a).id(), ParamConfig(b).id());
  EXPECT_NE(ParamConfig(a).id(), ParamConfig({{"x", std::int64_t{2}}, {"y", true}}).id());
}

TEST(ParamSpace, CanonicalRealRoundTripsThroughText) {
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const double x = canonical_real(uniform01(rng) * 1e3);
    EXPECT_EQ(std::stod(format_value(x)), x);
    EXPECT_EQ(canonical_real(x), x);
  }
}

}  // namespace
}  // namespace opttune
