#pragma once

// Scenario files drive an attacker extension through the broker; outcomes
// are reduced to a capability vector (the attack/capability table) and a set
// of violated security requirements derived from the audit log.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "warden/debugger_broker.hpp"
#include "warden/policy_engine.hpp"

namespace warden::harness {

enum class Level { kNone, kPartial, kFull };

enum class Column {
  kListTabs,
  kEvalTabs,
  kInterceptTabs,
  kListExtensions,
  kEvalExtensions,
  kInterceptExtensions,
  kStealCookies,
  kStealCardsPasswords,
  kChangeSettingsFlags,
  kRecordTraces,
};

inline constexpr std::size_t kColumnCount = 10;
inline constexpr std::array<std::string_view, kColumnCount> kColumnNames = {
    "listTabs",       "evalTabs",      "interceptTabs",      "listExtensions",      "evalExtensions",
    "interceptExtensions", "stealCookies", "stealCardsPasswords", "changeSettingsFlags", "recordTraces"};

std::string_view to_string(Level level);       // None / Partial / Full
std::string_view symbol(Level level);          // ○ / ◐ / ●
std::optional<Level> parse_level(std::string_view text);  // accepts either form

struct CapabilityVector {
  std::array<Level, kColumnCount> cells{};

  Level& operator[](Column c) { return cells[static_cast<std::size_t>(c)]; }
  Level operator[](Column c) const { return cells[static_cast<std::size_t>(c)]; }
  // Keeps the stronger of the two levels.
  void raise(Column c, Level level);
  bool all_none() const;
  bool operator==(const CapabilityVector&) const = default;
};

nlohmann::ordered_json to_json(const CapabilityVector& v);
CapabilityVector capability_from_json(const nlohmann::json& doc);

struct FirstDenied {
  int step = 0;
  policy::Reason reason = policy::Reason::kNone;
};

struct Expectation {
  CapabilityVector capability;
  policy::SrSet violated;         // infobars enabled
  policy::SrSet violated_silent;  // --silent-debugger-extension-api
  std::optional<FirstDenied> first_denied;
};

struct ScenarioSpec {
  std::string name;
  std::string threat_model;  // TMA or TMB
  nlohmann::json world;
  nlohmann::json attacker;
  policy::Flags flags;
  std::vector<nlohmann::json> steps;
  std::map<policy::Mode, Expectation> expects;
};

// Throws world::SchemaError.
ScenarioSpec parse_scenario(const nlohmann::json& doc);
ScenarioSpec load_scenario(const std::filesystem::path& path);
// Canonical A1..A6 from a directory, in name order.
std::vector<ScenarioSpec> load_scenarios(const std::filesystem::path& dir);

// Threat-model consistency of the attacker against the configured allowlists.
void validate_attacker(const ScenarioSpec& spec, const identity::AllowlistConfig& allow);

struct StepResult {
  int index = 0;
  std::string op;
  bool ok = true;
  std::optional<policy::Reason> reason;  // set when the broker refused
  std::string error;
  nlohmann::json detail;  // op-specific result summary
  std::int64_t audit_begin = 0;  // audit seq range produced by this step
  std::int64_t audit_end = 0;

  bool operator==(const StepResult&) const = default;
};

struct Outcome {
  std::string scenario;
  policy::Mode mode = policy::Mode::kLegacy;
  policy::Flags flags;
  CapabilityVector capability;
  policy::SrSet violated;
  std::vector<broker::AuditRecord> audit;
  std::vector<StepResult> steps;

  bool operator==(const Outcome& o) const;
};

nlohmann::ordered_json to_json(const Outcome& outcome);
Outcome outcome_from_json(const nlohmann::json& doc);

struct RunOptions {
  broker::ConsentMode consent = broker::ConsentMode::kAutoDeny;
};

// Fresh world and broker per run, simulated clock. Step failures are
// recorded, not fatal.
Outcome run_scenario(const ScenarioSpec& spec, const policy::PolicyConfig& policy, RunOptions options = {});

// Policy for a matrix/acceptance run: |base| with the scenario's declared
// flags; |silent| forces the infobar-suppression flag on.
policy::PolicyConfig scenario_policy(const ScenarioSpec& spec, policy::PolicyConfig base, bool silent);

// Reduce the audit log of |attacker| to violated SRs.
policy::SrSet sr_report(const std::vector<broker::AuditRecord>& audit, const std::string& attacker);

// First step refused by policy (protocol errors do not count).
std::optional<FirstDenied> first_denied(const Outcome& outcome);

struct ExpectationCheck {
  bool matches = true;
  std::vector<std::string> problems;
};

ExpectationCheck check_expectation(const Outcome& outcome, const ScenarioSpec& spec);

// Checked-in transcription of the attack/capability table.
struct CapabilityFixture {
  std::string caption;
  std::map<std::string, std::string> threat_models;
  std::map<std::string, CapabilityVector> rows;
};

CapabilityFixture load_capability_fixture(const std::filesystem::path& path);

// Checked-in transcription of the SR-violation table; "×" always violated,
// "×‡" only with infobars suppressed.
struct ViolationFixture {
  std::string caption;
  std::map<std::string, std::array<std::string, 5>> rows;

  policy::SrSet expected(const std::string& scenario, bool silent) const;
};

ViolationFixture load_violation_fixture(const std::filesystem::path& path);

struct Mismatch {
  std::string scenario;
  std::string column;
  Level expected = Level::kNone;
  Level actual = Level::kNone;

  bool operator==(const Mismatch&) const = default;
};

struct MatrixResult {
  std::map<std::string, CapabilityVector> rows;
  std::map<std::string, std::string> threat_models;
  std::vector<Mismatch> mismatches;
};

// Runs every scenario under |base| (scenario flags applied) and diffs against
// |expected|; without a fixture the expected matrix is all-None.
MatrixResult capability_matrix(const std::vector<ScenarioSpec>& scenarios, const policy::PolicyConfig& base,
                               bool silent, const CapabilityFixture* expected);

std::string render_matrix(const MatrixResult& matrix);
nlohmann::ordered_json to_json(const MatrixResult& matrix);

}  // namespace warden::harness
