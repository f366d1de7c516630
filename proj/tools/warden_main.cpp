// warden: extension ID derivation, manifest audit, attack scenarios, capability
// matrix, and the broker control server.
//
// Exit codes: 0 success / all match, 1 findings or mismatches, 2 usage or
// schema error.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <iterator>
#include <pthread.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "warden/control_server.hpp"
#include "warden/debugger_broker.hpp"
#include "warden/extension_identity.hpp"
#include "warden/policy_engine.hpp"
#include "warden/scenario_harness.hpp"
#include "warden/world.hpp"

#ifndef WARDEN_DEFAULT_CONFIG
#define WARDEN_DEFAULT_CONFIG "config/policy.json"
#endif
#ifndef WARDEN_DEFAULT_SCENARIOS
#define WARDEN_DEFAULT_SCENARIOS "scenarios"
#endif

namespace {

namespace fs = std::filesystem;
using namespace warden;
using nlohmann::json;

constexpr int kOk = 0;
constexpr int kFindings = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

policy::PolicyConfig load_config(const std::string& explicit_path) {
  if (!explicit_path.empty()) return policy::load_policy(explicit_path);
  if (const char* env = std::getenv("WARDEN_CONFIG"); env && *env) return policy::load_policy(env);
  if (fs::exists(WARDEN_DEFAULT_CONFIG)) return policy::load_policy(WARDEN_DEFAULT_CONFIG);
  return {};
}

fs::path config_dir(const std::string& explicit_path) {
  if (!explicit_path.empty()) return fs::path(explicit_path).parent_path();
  if (const char* env = std::getenv("WARDEN_CONFIG"); env && *env) return fs::path(env).parent_path();
  return fs::path(WARDEN_DEFAULT_CONFIG).parent_path();
}

policy::Mode parse_mode_or_throw(const std::string& text) {
  auto mode = policy::parse_mode(text);
  if (!mode) throw UsageError("--policy must be legacy or hardened");
  return *mode;
}

void apply_fixes(policy::PolicyConfig& policy, const std::vector<std::string>& fixes) {
  for (const auto& f : fixes) {
    if (!policy::apply_fix(policy.fixes, f)) throw UsageError("unknown --fix " + f);
  }
}

// --- id ----------------------------------------------------------------------

int cmd_id(const std::string& key_file, const std::string& path) {
  if (key_file.empty() == path.empty()) throw UsageError("exactly one of --key or --path is required");
  if (!key_file.empty()) {
    std::ifstream in(key_file, std::ios::binary);
    if (!in) throw UsageError("cannot read key file " + key_file);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::cout << identity::derive_id_from_key(bytes).str() << "\n";
  } else {
    std::cout << identity::derive_id_from_path(path).str() << "\n";
  }
  return kOk;
}

// --- audit -------------------------------------------------------------------

int cmd_audit(const std::string& source, const std::string& allowlist, const std::string& origin_text,
              const policy::PolicyConfig& config) {
  identity::ExtensionOrigin origin = fs::is_directory(source) ? identity::ExtensionOrigin::kSideloadedUnpacked
                                                              : identity::ExtensionOrigin::kSideloadedZip;
  if (!origin_text.empty()) {
    auto parsed = identity::parse_origin(origin_text);
    if (!parsed) throw UsageError("unknown --origin " + origin_text);
    origin = *parsed;
  }
  const identity::AllowlistConfig allow = allowlist.empty() ? config.allow : identity::load_allowlist(allowlist);
  const auto record = identity::load_extension(source, origin);
  const auto findings = identity::detect_impersonation(record, allow);
  int high = 0;
  bool clone = false;
  for (const auto& f : findings) {
    std::cout << identity::to_json(f).dump() << "\n";
    if (f.severity == identity::Severity::kHigh) ++high;
    if (f.code.rfind("CLONE_", 0) == 0) clone = true;
  }
  std::cerr << record.id.str() << ": " << findings.size() << " finding(s), " << high << " high\n";
  return clone ? kFindings : kOk;
}

// --- run ---------------------------------------------------------------------

void print_outcome(const harness::Outcome& o, const harness::ExpectationCheck& check) {
  std::cout << "scenario " << o.scenario << " under " << policy::to_string(o.mode) << "\n";
  for (const auto& s : o.steps) {
    std::cout << "  [" << s.index << "] " << s.op << " ";
    if (s.ok) {
      std::cout << "ok";
    } else {
      std::cout << "FAILED";
      if (s.reason) std::cout << " " << policy::to_string(*s.reason);
      if (!s.error.empty()) std::cout << ": " << s.error;
    }
    std::cout << "\n";
  }
  std::cout << "capability:";
  for (std::size_t i = 0; i < harness::kColumnCount; ++i)
    std::cout << " " << harness::kColumnNames[i] << "=" << harness::to_string(o.capability.cells[i]);
  std::cout << "\nviolated SRs: " << policy::to_json(o.violated).dump() << "\n";
  if (check.matches) {
    std::cout << "expectation: match\n";
  } else {
    std::cout << "expectation: MISMATCH\n";
    for (const auto& p : check.problems) std::cout << "  " << p << "\n";
  }
}

struct RunArgs {
  std::string scenario;
  std::string mode;
  bool extensions_on_chrome_urls = false;
  bool silent = false;
  std::vector<std::string> fixes;
  bool json_out = false;
  std::string consent = "auto-deny";
};

int cmd_run(const RunArgs& args, policy::PolicyConfig policy) {
  const auto spec = harness::load_scenario(args.scenario);
  if (!args.mode.empty()) policy.mode = parse_mode_or_throw(args.mode);
  // Flags come from the command line (on top of the config), not from the
  // scenario file: the run reproduces exactly what the operator enabled.
  policy.flags.extensions_on_chrome_urls |= args.extensions_on_chrome_urls;
  policy.flags.silent_debugger_extension_api |= args.silent;
  apply_fixes(policy, args.fixes);
  auto consent = broker::parse_consent_mode(args.consent);
  if (!consent || *consent == broker::ConsentMode::kManual) throw UsageError("--consent must be auto-allow or auto-deny");

  const auto outcome = harness::run_scenario(spec, policy, {*consent});
  const auto check = harness::check_expectation(outcome, spec);
  if (args.json_out) {
    std::cout << harness::to_json(outcome).dump(2) << "\n";
    for (const auto& p : check.problems) std::cerr << "mismatch: " << p << "\n";
  } else {
    print_outcome(outcome, check);
  }
  return check.matches ? kOk : kFindings;
}

// --- matrix ------------------------------------------------------------------

struct MatrixArgs {
  std::string mode;
  std::string fixture;
  std::string scenarios = WARDEN_DEFAULT_SCENARIOS;
  bool silent = false;
  std::vector<std::string> fixes;
  bool json_out = false;
};

int cmd_matrix(const MatrixArgs& args, policy::PolicyConfig policy) {
  if (!args.mode.empty()) policy.mode = parse_mode_or_throw(args.mode);
  apply_fixes(policy, args.fixes);
  const auto scenarios = harness::load_scenarios(args.scenarios);
  if (scenarios.empty()) throw UsageError("no scenarios in " + args.scenarios);

  // Legacy is compared with the transcribed table; Hardened must be all-None.
  std::optional<harness::CapabilityFixture> fixture;
  if (policy.mode == policy::Mode::kLegacy) {
    const fs::path path =
        args.fixture.empty() ? fs::path(args.scenarios) / "expected" / "table2.json" : fs::path(args.fixture);
    fixture = harness::load_capability_fixture(path);
  }
  const auto matrix = harness::capability_matrix(scenarios, policy, args.silent, fixture ? &*fixture : nullptr);
  if (args.json_out)
    std::cout << harness::to_json(matrix).dump(2) << "\n";
  else
    std::cout << harness::render_matrix(matrix);
  std::cerr << matrix.mismatches.size() << " mismatching cell(s)\n";
  return matrix.mismatches.empty() ? kOk : kFindings;
}

// --- serve -------------------------------------------------------------------

struct ServeArgs {
  std::string listen = "127.0.0.1:9339";
  std::string mode;
  std::string world;
  std::string consent = "manual";
  std::string audit_log;
  std::int64_t consent_timeout_ms = 30'000;
};

int cmd_serve(const ServeArgs& args, policy::PolicyConfig policy, const fs::path& base_dir) {
  if (!args.mode.empty()) policy.mode = parse_mode_or_throw(args.mode);
  auto consent = broker::parse_consent_mode(args.consent);
  if (!consent) throw UsageError("--consent must be manual, auto-allow or auto-deny");
  const auto [host, port] = server::parse_listen(args.listen);

  json world_doc = json::object();
  if (!args.world.empty()) {
    std::ifstream in(args.world);
    if (!in) throw UsageError("cannot read world file " + args.world);
    world_doc = json::parse(in);
  }

  // Block termination signals before any thread starts so sigwait owns them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  broker::BrokerOptions options;
  options.consent = *consent;
  options.consent_timeout = std::chrono::milliseconds(args.consent_timeout_ms);
  if (!args.audit_log.empty()) options.audit_log = args.audit_log;
  broker::Broker broker(world::build_world(world_doc), policy, options);

  server::ControlServer srv(broker, {host, port, base_dir});
  try {
    srv.start();
  } catch (const std::exception& e) {
    std::cerr << "warden: cannot listen on " << args.listen << ": " << e.what() << "\n";
    return kUsage;
  }
  std::cout << "listening on " << host << ":" << srv.port() << std::endl;
  std::cerr << "policy " << policy::to_string(policy.mode) << ", consent " << broker::to_string(*consent) << "\n";

  int sig = 0;
  sigwait(&signals, &sig);
  std::cerr << "shutting down\n";
  srv.stop();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"warden - DevTools session broker and extension attack harness"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "Policy config file (default: $WARDEN_CONFIG or built-in path)");

  std::string key_file, id_path;
  auto* id = app.add_subcommand("id", "Derive an extension ID from a public key or an install path");
  id->add_option("--key", key_file, "File holding the DER-encoded public key");
  id->add_option("--path", id_path, "Absolute install path of an unpacked extension");

  std::string audit_source, audit_allowlist, audit_origin;
  auto* audit = app.add_subcommand("audit", "Check an extension directory or zip for allowlist impersonation");
  audit->add_option("source", audit_source, "Extension directory or .zip")->required();
  audit->add_option("--allowlist", audit_allowlist, "Allowlist file (default: from config)");
  audit->add_option("--origin", audit_origin, "store-signed | sideloaded-unpacked | sideloaded-zip | component");

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Run one attack scenario");
  run->add_option("--scenario", run_args.scenario, "Scenario JSON file")->required();
  run->add_option("--policy", run_args.mode, "legacy | hardened");
  run->add_flag("--extensions-on-chrome-urls", run_args.extensions_on_chrome_urls);
  run->add_flag("--silent-debugger-extension-api", run_args.silent);
  run->add_option("--fix", run_args.fixes, "Enable a Legacy fix (incognito-targets, interstitial-attach)");
  run->add_flag("--json", run_args.json_out, "Print the outcome as JSON");
  run->add_option("--consent", run_args.consent, "auto-allow | auto-deny");

  MatrixArgs matrix_args;
  auto* matrix = app.add_subcommand("matrix", "Run all scenarios and compare the capability matrix");
  matrix->add_option("--policy", matrix_args.mode, "legacy | hardened");
  matrix->add_option("--fixture", matrix_args.fixture, "Expected capability table (Legacy)");
  matrix->add_option("--scenarios", matrix_args.scenarios, "Directory of scenario files");
  matrix->add_flag("--silent-debugger-extension-api", matrix_args.silent);
  matrix->add_option("--fix", matrix_args.fixes, "Enable a Legacy fix");
  matrix->add_flag("--json", matrix_args.json_out);

  ServeArgs serve_args;
  auto* serve = app.add_subcommand("serve", "Run the broker with the HTTP/WebSocket control API");
  serve->add_option("--listen", serve_args.listen, "host:port (port 0 picks one)");
  serve->add_option("--policy", serve_args.mode, "legacy | hardened");
  serve->add_option("--world", serve_args.world, "World description JSON");
  serve->add_option("--consent", serve_args.consent, "manual | auto-allow | auto-deny");
  serve->add_option("--audit-log", serve_args.audit_log, "Append audit records as JSONL");
  serve->add_option("--consent-timeout-ms", serve_args.consent_timeout_ms);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (id->parsed()) return cmd_id(key_file, id_path);
    const policy::PolicyConfig config = load_config(config_path);
    if (audit->parsed()) return cmd_audit(audit_source, audit_allowlist, audit_origin, config);
    if (run->parsed()) return cmd_run(run_args, config);
    if (matrix->parsed()) return cmd_matrix(matrix_args, config);
    if (serve->parsed()) return cmd_serve(serve_args, config, config_dir(config_path));
  } catch (const UsageError& e) {
    std::cerr << "warden: " << e.what() << "\n";
    return kUsage;
  } catch (const world::SchemaError& e) {
    std::cerr << "warden: schema error: " << e.what() << "\n";
    return kUsage;
  } catch (const identity::IdentityError& e) {
    std::cerr << "warden: " << e.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "warden: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "warden: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
