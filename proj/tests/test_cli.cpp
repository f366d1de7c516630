#include <gtest/gtest.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <string>
#include <vector>

#include "httplib.h"
#include "support.hpp"
#include "warden/control_server.hpp"

using namespace warden;
using namespace warden::testing;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
};

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

// Runs the CLI from the source tree so its default config and scenario
// paths resolve; stderr is discarded.
RunResult cli(const std::vector<std::string>& args) {
  std::string cmd = "cd " + quote(source_dir().string()) + " && env -u WARDEN_CONFIG " + quote(WARDEN_CLI);
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " 2>/dev/null";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

struct Child {
  pid_t pid = -1;
  FILE* out = nullptr;
};

Child spawn_serve(const std::vector<std::string>& extra) {
  // Everything the child needs is prepared before fork: the parent may
  // already run threads, so the child only calls async-signal-safe functions.
  const std::string dir = source_dir().string();
  std::vector<std::string> args{WARDEN_CLI, "serve"};
  args.insert(args.end(), extra.begin(), extra.end());
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  int fds[2];
  if (pipe(fds) != 0) return {};
  const pid_t pid = fork();
  if (pid == 0) {
    dup2(fds[1], STDOUT_FILENO);
    close(fds[0]);
    close(fds[1]);
    if (chdir(dir.c_str()) != 0) _exit(127);
    execv(WARDEN_CLI, argv.data());
    _exit(127);
  }
  close(fds[1]);
  return {pid, fdopen(fds[0], "r")};
}

int wait_exit(pid_t pid) {
  int status = 0;
  waitpid(pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Cli, IdDerivation) {
  auto r = cli({"id", "--key", "tests/data/test.der"});
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_EQ(r.out, "jpignaibiiemhngfjkcpokkamffknabf\n");
  r = cli({"id", "--path", "/home/u/ext"});
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_EQ(r.out, "bmpmpagbnbipmonbmkjbffhmgcaejjdm\n");
  EXPECT_EQ(cli({"id"}).exit_code, 2);
  EXPECT_EQ(cli({"id", "--key", "tests/data/test.der", "--path", "/x"}).exit_code, 2);
  EXPECT_EQ(cli({"id", "--path", "relative/dir"}).exit_code, 2);
  EXPECT_EQ(cli({"id", "--key", "tests/data/missing.der"}).exit_code, 2);
}

TEST(Cli, AuditExitCodes) {
  auto clone = cli({"audit", "tests/data/clone_screen_reader"});
  EXPECT_EQ(clone.exit_code, 1);
  EXPECT_NE(clone.out.find("CLONE_SCRIPTING_ALLOWLIST"), std::string::npos);
  EXPECT_EQ(cli({"audit", "tests/data/clone_deflated.zip"}).exit_code, 1);
  EXPECT_EQ(cli({"audit", "tests/data/benign"}).exit_code, 0);
  EXPECT_EQ(cli({"audit", "tests/data/no_manifest"}).exit_code, 2);
  EXPECT_EQ(cli({"audit", "tests/data/benign", "--origin", "martian"}).exit_code, 2);
}

TEST(Cli, RunAndMatrix) {
  for (const char* a : {"A1", "A2", "A3", "A4", "A5", "A6"}) {
    std::vector<std::string> args{"run", "--scenario", std::string("scenarios/") + a + ".json"};
    if (std::string(a) == "A5") args.push_back("--extensions-on-chrome-urls");
    EXPECT_EQ(cli(args).exit_code, 0) << a;
  }
  auto json_run = cli({"run", "--scenario", "scenarios/A2.json", "--json"});
  EXPECT_EQ(json_run.exit_code, 0);
  EXPECT_EQ(nlohmann::json::parse(json_run.out)["scenario"], "A2");
  EXPECT_EQ(cli({"run", "--scenario", "scenarios/A1.json", "--consent", "manual"}).exit_code, 2);
  EXPECT_EQ(cli({"run", "--scenario", "scenarios/A1.json", "--policy", "strict"}).exit_code, 2);

  EXPECT_EQ(cli({"matrix"}).exit_code, 0);
  EXPECT_EQ(cli({"matrix", "--silent-debugger-extension-api"}).exit_code, 0);
  EXPECT_EQ(cli({"matrix", "--policy", "hardened"}).exit_code, 0);
  EXPECT_EQ(cli({"matrix", "--fix", "incognito-targets"}).exit_code, 1);
  EXPECT_EQ(cli({"matrix", "--fix", "everything"}).exit_code, 2);
  EXPECT_EQ(cli({"matrix", "--scenarios", "tests/data/benign"}).exit_code, 2);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(cli({}).exit_code, 2);
  EXPECT_EQ(cli({"frobnicate"}).exit_code, 2);
  EXPECT_EQ(cli({"matrix", "--bogus"}).exit_code, 2);
  EXPECT_EQ(cli({"--help"}).exit_code, 0);
  EXPECT_EQ(cli({"--config", "tests/data/missing.json", "matrix"}).exit_code, 2);
}

TEST(Cli, ServeAnswersAndStopsOnSigterm) {
  Child child = spawn_serve({"--listen", "127.0.0.1:0", "--consent", "auto-deny"});
  ASSERT_GT(child.pid, 0);
  char line[256] = {};
  ASSERT_NE(fgets(line, sizeof line, child.out), nullptr);
  const std::string text(line);
  ASSERT_EQ(text.rfind("listening on 127.0.0.1:", 0), 0u) << text;
  const int port = std::stoi(text.substr(std::string("listening on 127.0.0.1:").size()));

  httplib::Client http("127.0.0.1", port);
  auto res = http.Get("/api/policy");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(nlohmann::json::parse(res->body)["mode"], "legacy");

  kill(child.pid, SIGTERM);
  EXPECT_EQ(wait_exit(child.pid), 0);
  fclose(child.out);
}

TEST(Cli, ServeReportsBindFailure) {
  broker::Broker b(world::build_world(nlohmann::json::object()), policy::PolicyConfig{});
  server::ControlServer holder(b, {"127.0.0.1", 0, {}});
  holder.start();
  Child child = spawn_serve({"--listen", "127.0.0.1:" + std::to_string(holder.port())});
  ASSERT_GT(child.pid, 0);
  EXPECT_EQ(wait_exit(child.pid), 2);
  fclose(child.out);
}
