// Scenario runner for the characteristic-method pipeline: load an INI
// scenario, resolve it against the subcommand, execute, and report the
// artifacts written under the output directory.
//
// Exit codes: 0 success, 1 invariant failure reported by the task itself,
// 2 usage or configuration error, 3 numerical failure inside a solver.
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hjc/config.hpp"
#include "hjc/io.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  long long seed = -1;
  int threads = 0;
  std::vector<std::string> tol_overrides;
};

void add_common(CLI::App* sub, CommonFlags& flags) {
  sub->add_option("--config", flags.config_path, "scenario file (INI)")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("--out", flags.out_dir, "output directory (overrides [output] dir)");
  sub->add_option("--seed", flags.seed, "sampling seed (overrides [output] seed)");
  sub->add_option("--threads", flags.threads, "worker threads (overrides [output] threads)");
  sub->add_option("--tol-override", flags.tol_overrides,
                  "KEY=VALUE tolerance override, repeatable");
}

int run(const CommonFlags& flags, const std::string& expected_task) {
  hjc::Ini ini = hjc::Ini::parse_file(flags.config_path);
  if (!flags.out_dir.empty()) ini.set("output", "dir", flags.out_dir);
  if (flags.seed >= 0) ini.set("output", "seed", std::to_string(flags.seed));
  if (flags.threads > 0) ini.set("output", "threads", std::to_string(flags.threads));
  for (const std::string& kv : flags.tol_overrides) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      std::fprintf(stderr, "error: --tol-override expects KEY=VALUE, got '%s'\n", kv.c_str());
      return 2;
    }
    ini.set("tolerances", kv.substr(0, eq), kv.substr(eq + 1));
  }

  hjc::ScenarioConfig cfg = hjc::resolve_scenario(ini);
  if (cfg.task != expected_task) {
    std::fprintf(stderr,
                 "error: %s declares task '%s' but the '%s' subcommand runs '%s'; "
                 "invoke the matching subcommand\n",
                 flags.config_path.c_str(), cfg.task.c_str(),
                 expected_task == "value-map"      ? "value"
                 : expected_task == "classify-map" ? "classify"
                                                   : expected_task.c_str(),
                 expected_task.c_str());
    return 2;
  }

  hjc::RunResult result = hjc::run_scenario(cfg);
  std::printf("%s\n", result.summary.c_str());
  for (const auto& [key, val] : result.stats)
    std::printf("  %s = %s\n", key.c_str(), hjc::format_double(val).c_str());
  for (const std::string& f : result.files)
    std::printf("wrote %s/%s\n", cfg.out_dir.c_str(), f.c_str());
  return result.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"characteristic-method toolkit for first-order front evolution"};
  app.require_subcommand(1);

  // subcommand name -> task the scenario file must declare
  const std::vector<std::pair<std::string, std::string>> tasks = {
      {"value", "value-map"},           {"classify", "classify-map"},
      {"trace-char", "trace-char"},     {"conjugate-scan", "conjugate-scan"},
      {"trace-singular", "trace-singular"}, {"oracle", "oracle"},
      {"report", "report"}};
  const std::vector<std::string> descriptions = {
      "tabulate the variational value over a spatial grid",
      "classify grid points by multiplicity and fold degeneracy",
      "integrate one characteristic with its variational system",
      "locate first fold times over a grid of seeds",
      "trace a singular curve from a point of the interface",
      "run the monotone finite-difference solver, optionally flagging kinks",
      "compare a traced curve against flagged grid cells"};

  std::vector<CommonFlags> flags(tasks.size());
  for (size_t i = 0; i < tasks.size(); ++i) {
    CLI::App* sub = app.add_subcommand(tasks[i].first, descriptions[i]);
    add_common(sub, flags[i]);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  for (size_t i = 0; i < tasks.size(); ++i) {
    if (!app.get_subcommands().empty() &&
        app.get_subcommands().front()->get_name() == tasks[i].first) {
      try {
        return run(flags[i], tasks[i].second);
      } catch (const hjc::PreconditionError& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return 2;
      } catch (const hjc::NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
      } catch (const std::exception& e) {
        std::fprintf(stderr, "failure: %s\n", e.what());
        return 3;
      }
    }
  }
  std::fprintf(stderr, "error: no subcommand selected\n");
  return 2;
}
