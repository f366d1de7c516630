// Prints one PASS/FAIL line per acceptance criterion; exits non-zero on any FAIL.

#include <chrono>
#include <functional>
#include <iostream>
#include <random>

#include "support.hpp"

using namespace warden;
using namespace warden::testing;

namespace {

struct Check {
  bool ok = true;
  std::vector<std::string> notes;

  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      notes.push_back(what);
    }
  }
};

std::string describe_reason(const std::optional<policy::Reason>& r) {
  return r ? std::string(policy::to_string(*r)) : "none";
}

policy::PolicyConfig with_mode(policy::Mode mode) {
  auto p = repo_policy();
  p.mode = mode;
  return p;
}

const std::vector<harness::ScenarioSpec>& scenarios() {
  static const auto all = harness::load_scenarios(scenarios_dir());
  return all;
}

Check capability_matrix_equivalence(std::string& summary) {
  Check c;
  const auto fixture = harness::load_capability_fixture(scenarios_dir() / "expected" / "table2.json");
  const auto start = std::chrono::steady_clock::now();
  const auto m = harness::capability_matrix(scenarios(), with_mode(policy::Mode::kLegacy), false, &fixture);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::size_t cells = 0, equal = 0;
  for (const auto& [name, expected] : fixture.rows) {
    auto it = m.rows.find(name);
    for (std::size_t i = 0; i < harness::kColumnCount; ++i) {
      ++cells;
      if (it != m.rows.end() && it->second.cells[i] == expected.cells[i]) ++equal;
    }
  }
  c.expect(fixture.rows.size() == 6 && cells == 60, "fixture is not 6x10");
  c.expect(equal == cells && m.mismatches.empty(), std::to_string(m.mismatches.size()) + " mismatching cells");
  c.expect(m.rows.size() == fixture.rows.size(), "row count differs");
  c.expect(secs < 5.0, "took " + std::to_string(secs) + " s");
  std::ostringstream s;
  s << equal << "/" << cells << " cells in " << secs << " s";
  summary = s.str();
  return c;
}

Check violation_equivalence(std::string& summary) {
  Check c;
  const auto fixture = harness::load_violation_fixture(scenarios_dir() / "expected" / "table3.json");
  int rows = 0;
  for (const auto& s : scenarios()) {
    for (bool silent : {false, true}) {
      const auto o = harness::run_scenario(s, harness::scenario_policy(s, with_mode(policy::Mode::kLegacy), silent));
      c.expect(o.violated == fixture.expected(s.name, silent),
               s.name + " silent=" + (silent ? "on" : "off") + " got " + policy::to_json(o.violated).dump());
      ++rows;
    }
  }
  // Flag-dependent cells flip; A1's runtime cell stays put.
  c.expect(fixture.expected("A1", false) == fixture.expected("A1", true), "A1 depends on the flag");
  bool any_flip = false;
  for (const auto& s : scenarios()) any_flip |= fixture.expected(s.name, false) != fixture.expected(s.name, true);
  c.expect(any_flip, "no flag-dependent cell in fixture");
  summary = std::to_string(rows) + " scenario x flag rows";
  return c;
}

Check hardened_suppression(std::string& summary) {
  Check c;
  const auto m = harness::capability_matrix(scenarios(), with_mode(policy::Mode::kHardened), false, nullptr);
  for (const auto& [name, row] : m.rows) c.expect(row.all_none(), name + " keeps a capability");
  c.expect(m.rows.size() == 6, "expected 6 rows");

  const std::map<std::string, std::pair<int, policy::Reason>> expected = {
      {"A2", {1, policy::Reason::kIncognitoDenied}}, {"A3", {1, policy::Reason::kUntrustedOrigin}},
      {"A4", {0, policy::Reason::kUntrustedOrigin}}, {"A5", {1, policy::Reason::kUntrustedOrigin}},
      {"A6", {0, policy::Reason::kUntrustedOrigin}},
  };
  int blocked = 0;
  for (const auto& s : scenarios()) {
    const auto o = harness::run_scenario(s, harness::scenario_policy(s, with_mode(policy::Mode::kHardened), false));
    const auto fd = harness::first_denied(o);
    auto it = expected.find(s.name);
    if (it == expected.end()) {
      // Listing alone stays within a filtered, legitimate view.
      c.expect(!fd, s.name + " unexpectedly denied");
      continue;
    }
    if (!fd) {
      c.expect(false, s.name + " was never denied");
      continue;
    }
    ++blocked;
    c.expect(fd->step == it->second.first && fd->reason == it->second.second,
             s.name + " first denied at step " + std::to_string(fd->step) + " " +
                 std::string(policy::to_string(fd->reason)));
    const auto& step = o.steps.at(fd->step);
    bool audited = false;
    for (const auto& r : o.audit)
      audited |= r.seq >= step.audit_begin && r.seq <= step.audit_end && r.decision == policy::Verdict::kDeny &&
                 r.reason == fd->reason;
    c.expect(audited, s.name + " has no Deny audit record");
  }
  summary = "all-None matrix, " + std::to_string(blocked) + " scenarios blocked with audited reasons";
  return c;
}

Check decision_table_fidelity(std::string& summary) {
  Check c;
  const auto cells = evaluate_decision_table();
  int ok = 0;
  for (const auto& r : cells) {
    if (r.ok())
      ++ok;
    else
      c.expect(false, row_label(*r.row) + ": attach " + r.attach + " script " + r.script);
  }
  c.expect(cells.size() == 42, "table has " + std::to_string(cells.size()) + " rows");
  const auto a = incognito_asymmetry();
  c.expect(a.by_tab == "UNKNOWN_TARGET" && a.by_tab_message == "No tab with given id.", "byTabId: " + a.by_tab);
  c.expect(a.by_target == "Allow{SR02}", "byTargetId: " + a.by_target);
  c.expect(a.by_target_fixed == "INCOGNITO_DENIED", "byTargetId fixed: " + a.by_target_fixed);
  summary = std::to_string(ok) + "/" + std::to_string(cells.size()) + " cells, incognito asymmetry";
  return c;
}

std::string base64(const std::vector<std::uint8_t>& key) {
  static const std::string kAlphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  for (std::size_t j = 0; j < key.size(); j += 3) {
    std::uint32_t n = key[j] << 16;
    if (j + 1 < key.size()) n |= key[j + 1] << 8;
    if (j + 2 < key.size()) n |= key[j + 2];
    out.push_back(kAlphabet[(n >> 18) & 63]);
    out.push_back(kAlphabet[(n >> 12) & 63]);
    out.push_back(j + 1 < key.size() ? kAlphabet[(n >> 6) & 63] : '=');
    out.push_back(j + 2 < key.size() ? kAlphabet[n & 63] : '=');
  }
  return out;
}

Check id_derivation(std::string& summary) {
  Check c;
  auto bytes = [](std::string_view s) { return std::vector<std::uint8_t>(s.begin(), s.end()); };
  // sha256sum of the input, first 32 hex digits mapped 0-f -> a-p.
  const std::pair<std::string, std::string> keys[] = {
      {"test", "jpignaibiiemhngfjkcpokkamffknabf"},
      {"hello", "cmpcenlkfplakdaocgoidlckmfljocjo"},
      {"abc", "lkhibglpipabmpokebebeanofnkocccd"},
  };
  const std::pair<std::string, std::string> paths[] = {
      {"/home/u/ext", "bmpmpagbnbipmonbmkjbffhmgcaejjdm"},
      {"/home/u/ext2", "kdaanibadfmeaedimpggpnoinlldnijd"},
  };
  int vectors = 0;
  for (const auto& [in, id] : keys) {
    c.expect(identity::derive_id_from_key(bytes(in)).str() == id, "key vector " + in);
    ++vectors;
  }
  for (const auto& [in, id] : paths) {
    c.expect(identity::derive_id_from_path(in).str() == id, "path vector " + in);
    ++vectors;
  }
  std::ifstream der(source_dir() / "tests" / "data" / "test.der", std::ios::binary);
  const std::vector<std::uint8_t> der_bytes((std::istreambuf_iterator<char>(der)), std::istreambuf_iterator<char>());
  c.expect(identity::derive_id_from_key(der_bytes).str() == "jpignaibiiemhngfjkcpokkamffknabf", "key file vector");
  ++vectors;
  // Real RSA public keys from manifest "key" fields.
  const std::pair<std::string, std::string> manifest_keys[] = {
      {"MIGfMA0GCSqGSIb3DQEBAQUAA4GNADCBiQKBgQDEGBi/oD7Y1/Y16w3+gee/95/EUpRZ2U6c+8orV5ei+3CRsBsoXI/DPGBauZ3rWQ47aQnfoG00"
       "sXigFdJA2NhNK9OgmRA2evnsRRbjYm2BG1tWpaLsgQPPus3PyczbDCvhFu8k24wzFyEtxLrfxAGBseBPb9QrCz7B4k2QgxD/CwIDAQAB",
       "pdicdencfiineoijpljfmapjbdogmodp"},
      {"MIGfMA0GCSqGSIb3DQEBAQUAA4GNADCBiQKBgQDbwDC8j1RW4B20frzv72YFnUh+cWzmKh9by9rv+QVNBJ98O6/snv55869cm6KCa3Q+/MhOpM"
       "B5ft3NI/IFrjBEmukZ29Rs4scqSnZ89gNkv4m7+z0CjmStSOZjNVTwv4TT1z2omtROb9xd74D1AtePNliNqkGWpDS7al+CWCpzQQIDAQAB",
       "khjdpfnhibccbhfoamikdomcpleobfoo"},
  };
  for (const auto& [key, id] : manifest_keys) {
    c.expect(identity::derive_id_from_key(identity::decode_base64(key)).str() == id, "manifest key vector " + id);
    ++vectors;
  }

  std::mt19937 rng(7);
  std::uniform_int_distribution<int> byte(0, 255);
  int props = 0;
  for (int i = 0; i < 1000 && c.ok; ++i) {
    std::vector<std::uint8_t> key(std::uniform_int_distribution<int>(1, 300)(rng));
    for (auto& b : key) b = static_cast<std::uint8_t>(byte(rng));
    const auto id = identity::derive_id_from_key(key);
    const std::string s = id.str();
    c.expect(s.size() == 32 && s.find_first_not_of("abcdefghijklmnop") == std::string::npos, "bad shape " + s);
    const nlohmann::json manifest = {{"manifest_version", 3}, {"name", "n"}, {"version", "1"}, {"key", base64(key)}};
    const auto a = identity::make_record(manifest, identity::ExtensionOrigin::kSideloadedUnpacked,
                                         "/home/a/" + std::to_string(i));
    const auto b = identity::make_record(manifest, identity::ExtensionOrigin::kSideloadedZip,
                                         "/tmp/o/" + std::to_string(i) + ".zip");
    const auto st = identity::make_record(manifest, identity::ExtensionOrigin::kStoreSigned, std::nullopt);
    c.expect(a.id == id && b.id == id && st.id == id, "key does not dominate path at case " + std::to_string(i));
    ++props;
  }
  summary = std::to_string(vectors) + " oracle vectors, " + std::to_string(props) + " property cases";
  return c;
}

Check chain_integrity(std::string& summary) {
  Check c;
  const auto intact = run_chain(ChainVariant::kIntact);
  c.expect(intact.escalated && !intact.refused, "intact chain did not escalate (" + describe_reason(intact.refused) + ")");
  const auto unlisted = run_chain(ChainVariant::kNotAllowlisted);
  c.expect(!unlisted.escalated && unlisted.refused == policy::Reason::kBrowserTargetDenied,
           "non-allowlisted ID: " + describe_reason(unlisted.refused));
  const auto via_api = run_chain(ChainVariant::kSessionIdViaDebugger);
  c.expect(!via_api.escalated && via_api.refused == policy::Reason::kSessionIdForbidden,
           "sessionId via debugger API: " + describe_reason(via_api.refused));
  const auto message = run_chain(ChainVariant::kSendMessageToTarget);
  c.expect(!message.escalated, "sendMessageToTarget escalated");
  summary = "intact escalates; 3 broken variants refused";
  return c;
}

Check infobar_and_codec(std::string& summary) {
  Check c;
  const auto t = infobar_trace();
  c.expect(t.legacy_reattached, "legacy re-attach after cancel failed");
  c.expect(t.hardened_immediate == policy::Reason::kReattachCooldown,
           "right after cancel: " + describe_reason(t.hardened_immediate));
  c.expect(t.hardened_at_4999 == policy::Reason::kReattachCooldown, "no cooldown at 4999 ms");
  c.expect(t.hardened_at_5000, "re-attach at 5000 ms failed");
  c.expect(t.hardened_denial_audited, "cooldown denial not audited");

  std::mt19937 rng(20220503);
  auto ident = [&](bool alpha_only) {
    static const std::string alpha = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";
    static const std::string alnum = alpha + "0123456789";
    const std::string& set = alpha_only ? alpha : alnum;
    std::string out;
    for (int i = std::uniform_int_distribution<int>(1, 10)(rng); i > 0; --i)
      out.push_back(set[std::uniform_int_distribution<std::size_t>(0, set.size() - 1)(rng)]);
    return out;
  };
  auto object = [&] {
    cdp::Json o = cdp::Json::object();
    for (int i = std::uniform_int_distribution<int>(0, 4)(rng); i > 0; --i) {
      switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
        case 0: o[ident(false)] = std::uniform_int_distribution<std::int64_t>(-1'000'000, 1'000'000)(rng); break;
        case 1: o[ident(false)] = ident(false) + " \"q\" \\ \né"; break;
        case 2: o[ident(false)] = cdp::Json::array({nullptr, true, 1.5}); break;
        default: o[ident(false)] = cdp::Json{{"nested", ident(false)}};
      }
    }
    return o;
  };
  int round_trips = 0;
  for (int i = 0; i < 2000; ++i) {
    const std::string method = ident(true) + "." + ident(false);
    const std::int64_t id = std::uniform_int_distribution<std::int64_t>(1, INT64_MAX)(rng);
    std::optional<std::string> session;
    if (i % 3 == 0) session = ident(false);
    cdp::CdpMessage m;
    switch (i % 4) {
      case 0: m = cdp::CdpMessage::command(id, method, object(), session); break;
      case 1: m = cdp::CdpMessage::event(method, object(), session); break;
      case 2: m = cdp::CdpMessage::success(id, object(), session); break;
      default: m = cdp::CdpMessage::failure(id, -32000 - i % 700, ident(false), session);
    }
    try {
      const std::string wire = cdp::serialize_message(m);
      const auto back = cdp::parse_message(wire);
      if (back == m && cdp::serialize_message(back) == wire)
        ++round_trips;
      else
        c.expect(false, "round trip differs: " + wire);
    } catch (const std::exception& e) {
      c.expect(false, std::string("round trip threw: ") + e.what());
    }
  }

  std::uniform_int_distribution<int> byte(0, 255);
  int fuzzed = 0;
  for (int i = 0; i < 5000; ++i) {
    std::string wire = cdp::serialize_message(cdp::CdpMessage::command(i + 1, "Runtime.evaluate", object()));
    for (int e = std::uniform_int_distribution<int>(1, 4)(rng); e > 0 && !wire.empty(); --e) {
      const std::size_t pos = std::uniform_int_distribution<std::size_t>(0, wire.size() - 1)(rng);
      switch (e % 3) {
        case 0: wire[pos] = static_cast<char>(byte(rng)); break;
        case 1: wire.erase(pos, 1); break;
        default: wire.insert(pos, 1, static_cast<char>(byte(rng)));
      }
    }
    try {
      const auto m = cdp::parse_message(wire);
      if (!(cdp::parse_message(cdp::serialize_message(m)) == m)) c.expect(false, "unstable reparse: " + wire);
    } catch (const cdp::CodecError&) {
    } catch (const std::exception& e) {
      c.expect(false, std::string("fuzz escaped: ") + e.what());
    }
    ++fuzzed;
  }
  summary = "infobar trace ok, " + std::to_string(round_trips) + " round trips, " + std::to_string(fuzzed) +
            " fuzz cases";
  return c;
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Check(std::string&)>> criteria[] = {
      {"capability-matrix-equivalence", capability_matrix_equivalence},
      {"sr-violation-equivalence", violation_equivalence},
      {"hardened-suppression", hardened_suppression},
      {"decision-table-fidelity", decision_table_fidelity},
      {"extension-id-derivation", id_derivation},
      {"proxy-chain-integrity", chain_integrity},
      {"infobar-model-and-codec", infobar_and_codec},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    std::string summary;
    Check c;
    try {
      c = run(summary);
    } catch (const std::exception& e) {
      c.expect(false, std::string("threw: ") + e.what());
    }
    std::cout << (c.ok ? "PASS " : "FAIL ") << name;
    if (!summary.empty()) std::cout << " - " << summary;
    std::cout << "\n";
    for (const auto& n : c.notes) std::cout << "    " << n << "\n";
    if (!c.ok) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
