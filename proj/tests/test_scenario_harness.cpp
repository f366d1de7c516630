#include <gtest/gtest.h>

#include "support.hpp"

using namespace warden;
using namespace warden::testing;
using harness::Column;
using harness::Level;
using policy::Mode;

namespace {

const std::vector<harness::ScenarioSpec>& scenarios() {
  static const auto all = harness::load_scenarios(scenarios_dir());
  return all;
}

const harness::ScenarioSpec& scenario(const std::string& name) {
  for (const auto& s : scenarios())
    if (s.name == name) return s;
  throw std::runtime_error("no scenario " + name);
}

policy::PolicyConfig with_mode(Mode mode) {
  auto p = repo_policy();
  p.mode = mode;
  return p;
}

harness::CapabilityFixture table2() {
  return harness::load_capability_fixture(scenarios_dir() / "expected" / "table2.json");
}

nlohmann::json a1_doc() {
  std::ifstream in(scenarios_dir() / "A1.json");
  return nlohmann::json::parse(in);
}

}  // namespace

TEST(Scenarios, CanonicalSetIsPresent) {
  std::vector<std::string> names;
  for (const auto& s : scenarios()) names.push_back(s.name);
  EXPECT_EQ(names, (std::vector<std::string>{"A1", "A2", "A3", "A4", "A5", "A6"}));
  const auto allow = repo_policy().allow;
  for (const auto& s : scenarios()) EXPECT_NO_THROW(harness::validate_attacker(s, allow)) << s.name;
}

TEST(Scenarios, LegacyMatrixMatchesTranscription) {
  const auto fixture = table2();
  EXPECT_EQ(fixture.rows.size(), 6u);
  for (bool silent : {false, true}) {
    const auto m = harness::capability_matrix(scenarios(), with_mode(Mode::kLegacy), silent, &fixture);
    EXPECT_TRUE(m.mismatches.empty()) << "silent=" << silent;
    EXPECT_EQ(m.rows, fixture.rows);
    EXPECT_EQ(m.threat_models, fixture.threat_models);
  }
}

TEST(Scenarios, HardenedMatrixIsEmpty) {
  const auto m = harness::capability_matrix(scenarios(), with_mode(Mode::kHardened), false, nullptr);
  EXPECT_TRUE(m.mismatches.empty());
  for (const auto& [name, row] : m.rows) EXPECT_TRUE(row.all_none()) << name;
}

TEST(Scenarios, IncognitoFixRemovesExactlyTheIncognitoCells) {
  auto p = with_mode(Mode::kLegacy);
  p.fixes.fix_incognito_targets = true;
  const auto fixture = table2();
  const auto m = harness::capability_matrix(scenarios(), p, false, &fixture);
  const std::vector<harness::Mismatch> expected = {
      {"A2", "evalTabs", Level::kPartial, Level::kNone},
      {"A2", "interceptTabs", Level::kPartial, Level::kNone},
      {"A5", "evalTabs", Level::kPartial, Level::kNone},
      {"A5", "interceptTabs", Level::kPartial, Level::kNone},
  };
  EXPECT_EQ(m.mismatches, expected);
}

TEST(Scenarios, ExpectationsHoldForEveryModeAndFlagSetting) {
  for (const auto& s : scenarios()) {
    for (auto mode : {Mode::kLegacy, Mode::kHardened}) {
      for (bool silent : {false, true}) {
        const auto outcome = harness::run_scenario(s, harness::scenario_policy(s, with_mode(mode), silent));
        const auto check = harness::check_expectation(outcome, s);
        EXPECT_TRUE(check.matches) << s.name << " " << policy::to_string(mode) << " silent=" << silent << ": "
                                   << (check.problems.empty() ? "" : check.problems.front());
      }
    }
  }
}

TEST(Scenarios, ViolationsMatchTranscriptionUnderBothInfobarSettings) {
  const auto fixture = harness::load_violation_fixture(scenarios_dir() / "expected" / "table3.json");
  for (const auto& s : scenarios()) {
    for (bool silent : {false, true}) {
      const auto outcome = harness::run_scenario(s, harness::scenario_policy(s, with_mode(Mode::kLegacy), silent));
      EXPECT_EQ(outcome.violated, fixture.expected(s.name, silent)) << s.name << " silent=" << silent;
    }
  }
  // Listing alone shows no infobar, so A1's runtime cell does not depend on the flag.
  EXPECT_TRUE(fixture.expected("A1", false).contains(policy::Sr::kSr01Runtime));
  EXPECT_FALSE(fixture.expected("A2", false).contains(policy::Sr::kSr01Runtime));
  EXPECT_TRUE(fixture.expected("A2", true).contains(policy::Sr::kSr01Runtime));
}

TEST(Scenarios, HardenedStopsAtTheFirstRelevantStep) {
  const std::map<std::string, std::pair<int, policy::Reason>> expected = {
      {"A2", {1, policy::Reason::kIncognitoDenied}}, {"A3", {1, policy::Reason::kUntrustedOrigin}},
      {"A4", {0, policy::Reason::kUntrustedOrigin}}, {"A5", {1, policy::Reason::kUntrustedOrigin}},
      {"A6", {0, policy::Reason::kUntrustedOrigin}},
  };
  for (const auto& s : scenarios()) {
    const auto outcome = harness::run_scenario(s, harness::scenario_policy(s, with_mode(Mode::kHardened), false));
    const auto fd = harness::first_denied(outcome);
    auto it = expected.find(s.name);
    if (it == expected.end()) {
      EXPECT_FALSE(fd) << s.name;
      continue;
    }
    ASSERT_TRUE(fd) << s.name;
    EXPECT_EQ(fd->step, it->second.first) << s.name;
    EXPECT_EQ(fd->reason, it->second.second) << s.name;
    const auto& step = outcome.steps.at(fd->step);
    bool audited = false;
    for (const auto& r : outcome.audit) {
      if (r.seq >= step.audit_begin && r.seq <= step.audit_end && r.decision == policy::Verdict::kDeny &&
          r.reason == fd->reason)
        audited = true;
    }
    EXPECT_TRUE(audited) << s.name;
  }
}

TEST(Scenarios, RunsAreDeterministicAndSerializable) {
  for (const auto& s : scenarios()) {
    const auto p = harness::scenario_policy(s, with_mode(Mode::kLegacy), false);
    const auto a = harness::run_scenario(s, p);
    const auto b = harness::run_scenario(s, p);
    EXPECT_EQ(a, b) << s.name;
    EXPECT_EQ(harness::to_json(a).dump(), harness::to_json(b).dump());
    const auto back = harness::outcome_from_json(nlohmann::json::parse(harness::to_json(a).dump()));
    EXPECT_EQ(back, a) << s.name;
  }
}

TEST(Scenarios, A5NeedsTheChromeUrlsFlag) {
  const auto& s = scenario("A5");
  auto p = with_mode(Mode::kLegacy);  // scenario flag not applied
  const auto outcome = harness::run_scenario(s, p);
  EXPECT_EQ(outcome.capability[Column::kEvalExtensions], Level::kNone);
  EXPECT_EQ(outcome.capability[Column::kInterceptExtensions], Level::kNone);
  bool restricted = false;
  for (const auto& step : outcome.steps) restricted |= step.reason == policy::Reason::kRestrictedUrl;
  EXPECT_TRUE(restricted);
  EXPECT_FALSE(harness::check_expectation(outcome, s).matches);
}

TEST(Scenarios, IncognitoScriptInjectionIsRefused) {
  const auto outcome = harness::run_scenario(scenario("A4"), harness::scenario_policy(scenario("A4"), with_mode(Mode::kLegacy), false));
  const auto& last = outcome.steps.back();
  EXPECT_EQ(last.op, "evalViaScriptingApi");
  EXPECT_FALSE(last.ok);
  EXPECT_EQ(last.reason, policy::Reason::kUnknownTarget);
}

TEST(Scenarios, ManualConsentIsRejected) {
  EXPECT_THROW(harness::run_scenario(scenario("A1"), repo_policy(), {broker::ConsentMode::kManual}), std::exception);
}

TEST(ScenarioSchema, RejectsMalformedFiles) {
  auto expect_bad = [](nlohmann::json doc, const char* why) {
    EXPECT_THROW(harness::parse_scenario(doc), world::SchemaError) << why;
  };
  auto d = a1_doc();
  d["extra"] = 1;
  expect_bad(d, "unknown key");
  d = a1_doc();
  d.erase("name");
  expect_bad(d, "missing name");
  d = a1_doc();
  d["steps"].push_back({{"op", "teleport"}});
  expect_bad(d, "unknown op");
  d = a1_doc();
  d["steps"].push_back({{"op", "sendCommand"}, {"session", "ghost"}, {"method", "Runtime.evaluate"}});
  expect_bad(d, "undeclared session");
  d = a1_doc();
  d["steps"].push_back({{"op", "attach"}, {"targetId", "t1"}, {"tabId", 1}, {"as", "x"}});
  expect_bad(d, "both targetId and tabId");
  d = a1_doc();
  d["flags"] = {{"turbo", true}};
  expect_bad(d, "unknown flag");
  d = a1_doc();
  d["world"]["tabs"][0]["url"] = 5;
  expect_bad(d, "bad world");
  d = a1_doc();
  d["expects"]["legacy"]["capability"]["listTabs"] = "Most";
  expect_bad(d, "bad level");
}

TEST(ScenarioSchema, ThreatModelMustMatchAttackerOrigin) {
  auto doc = a1_doc();
  doc["attacker"]["origin"] = "sideloaded-unpacked";
  doc["attacker"]["installPath"] = "/home/u/x";
  const auto spec = harness::parse_scenario(doc);
  EXPECT_THROW(harness::validate_attacker(spec, repo_policy().allow), world::SchemaError);

  auto tmb = a1_doc();
  tmb["threatModel"] = "TMB";
  EXPECT_THROW(harness::validate_attacker(harness::parse_scenario(tmb), repo_policy().allow), world::SchemaError);
}

TEST(Capability, LevelsAndVectors) {
  EXPECT_EQ(harness::parse_level("●"), Level::kFull);
  EXPECT_EQ(harness::parse_level("Partial"), Level::kPartial);
  EXPECT_EQ(harness::parse_level("○"), Level::kNone);
  EXPECT_FALSE(harness::parse_level("x"));
  harness::CapabilityVector v;
  EXPECT_TRUE(v.all_none());
  v.raise(Column::kEvalTabs, Level::kPartial);
  v.raise(Column::kEvalTabs, Level::kNone);
  EXPECT_EQ(v[Column::kEvalTabs], Level::kPartial);
  v.raise(Column::kEvalTabs, Level::kFull);
  EXPECT_EQ(v[Column::kEvalTabs], Level::kFull);
  EXPECT_EQ(harness::capability_from_json(nlohmann::json::parse(harness::to_json(v).dump())), v);
}

TEST(Capability, FixtureMarksAreNormalised) {
  const auto f = table2();
  EXPECT_EQ(f.rows.at("A4")[Column::kEvalTabs], Level::kFull);
  EXPECT_EQ(f.threat_models.at("A1"), "TMA");
  EXPECT_EQ(f.threat_models.at("A6"), "TMB");
  EXPECT_EQ(f.caption.rfind("SUMMARY OF ATTACKS AND THEIR CAPABILITIES.", 0), 0u);
}

TEST(SrReport, UsesInstallAndAllowRecordsOnly) {
  broker::AuditRecord install;
  install.extension_id = "a";
  install.action = "install";
  install.violated = {policy::Sr::kSr01Install};
  broker::AuditRecord deny;
  deny.extension_id = "a";
  deny.action = "attach";
  deny.decision = policy::Verdict::kDeny;
  deny.violated = {policy::Sr::kSr04};
  broker::AuditRecord other = install;
  other.extension_id = "b";
  other.violated = {policy::Sr::kSr02};
  EXPECT_EQ(harness::sr_report({install, deny, other}, "a"), (policy::SrSet{policy::Sr::kSr01Install}));
}

TEST(Matrix, RendersAndSerializes) {
  const auto fixture = table2();
  const auto m = harness::capability_matrix(scenarios(), with_mode(Mode::kLegacy), false, &fixture);
  const auto text = harness::render_matrix(m);
  EXPECT_NE(text.find("A6"), std::string::npos);
  EXPECT_NE(text.find("●"), std::string::npos);
  const auto j = harness::to_json(m);
  EXPECT_EQ(j["rows"].size(), 6u);
  EXPECT_TRUE(j["mismatches"].empty());
}
