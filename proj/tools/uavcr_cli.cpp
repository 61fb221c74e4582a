// Command-line front end: generate | train | evaluate | baseline.
//
// Exit codes: 0 success, 2 usage error, 3 runtime or training error.

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "uavcr/uavcr.hpp"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

struct CommonFlags {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> checkpoint;
  std::optional<std::string> save_checkpoint;
  std::optional<int> episodes;
  std::optional<int> agents;
  std::optional<int> count;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_file, "JSON config file (unknown keys are rejected)");
  cmd->add_option("--seed", f.seed, "master seed (run.seed)");
  cmd->add_option("--out", f.out, "output directory (run.out_dir)");
  cmd->add_option("--checkpoint", f.checkpoint, "checkpoint to load (run.checkpoint_in)");
  cmd->add_option("--save-checkpoint", f.save_checkpoint, "checkpoint to write (run.checkpoint_out)");
  cmd->add_option("--episodes", f.episodes, "training episodes (run.episodes) or evaluation episodes (run.eval_episodes)");
  cmd->add_option("--agents", f.agents, "UAVs per scenario (run.agents)");
  cmd->add_option("--count", f.count, "scenario files to write (run.count)");
  cmd->add_option("--set", f.sets, "dotted override, e.g. --set dgn.hidden_dim=64");
  cmd->allow_extras();
}

// Remaining "--a.b=value" / "--a.b value" tokens become dotted overrides.
void collect_dotted(const std::vector<std::string>& extras, std::vector<std::pair<std::string, std::string>>& out) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& tok = extras[i];
    if (tok.rfind("--", 0) != 0 || tok.find('.') == std::string::npos) {
      throw uavcr::UsageError("unrecognised argument: " + tok);
    }
    const std::string body = tok.substr(2);
    const auto eq = body.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else if (i + 1 < extras.size()) {
      out.emplace_back(body, extras[++i]);
    } else {
      throw uavcr::UsageError("missing value for " + tok);
    }
  }
}

uavcr::RunConfig resolve(const std::string& command, const CommonFlags& f, const std::vector<std::string>& extras) {
  nlohmann::json doc = uavcr::config_to_json(uavcr::RunConfig{});
  if (!f.config_file.empty()) {
    std::ifstream in(f.config_file);
    if (!in) throw uavcr::UsageError("cannot open config file " + f.config_file);
    nlohmann::json file;
    try {
      file = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw uavcr::UsageError(std::string("config file is not valid JSON: ") + e.what());
    }
    doc = uavcr::config_to_json(uavcr::config_from_json(file));
  }
  auto set = [&](const std::string& key, const nlohmann::json& v) { uavcr::apply_override(doc, key, v.dump()); };
  if (f.seed) set("run.seed", *f.seed);
  if (f.out) set("run.out_dir", *f.out);
  if (f.checkpoint) set("run.checkpoint_in", *f.checkpoint);
  if (f.save_checkpoint) set("run.checkpoint_out", *f.save_checkpoint);
  if (f.episodes) set(command == "train" ? "run.episodes" : "run.eval_episodes", *f.episodes);
  if (f.agents) set("run.agents", *f.agents);
  if (f.count) set("run.count", *f.count);

  std::vector<std::pair<std::string, std::string>> overrides;
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw uavcr::UsageError("--set expects key=value, got " + s);
    overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  collect_dotted(extras, overrides);
  for (const auto& [k, v] : overrides) uavcr::apply_override(doc, k, v);

  uavcr::RunConfig cfg = uavcr::config_from_json(doc);
  try {
    cfg.validate();
  } catch (const uavcr::DomainError& e) {
    throw uavcr::UsageError(e.what());
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-UAV conflict resolution with graph-convolutional Q-learning"};
  app.set_version_flag("--version", uavcr::version_string());
  app.require_subcommand(1);

  CommonFlags flags;
  auto* gen = app.add_subcommand("generate", "write compound-conflict scenario files and validate them");
  auto* train = app.add_subcommand("train", "train the network, writing metrics.csv and a checkpoint");
  auto* eval = app.add_subcommand("evaluate", "greedy rollouts of a checkpoint with a JSON report");
  auto* base = app.add_subcommand("baseline", "unmitigated (hold heading) rollouts with a JSON report");
  auto* dump = app.add_subcommand("config", "print the resolved configuration as JSON");
  for (auto* c : {gen, train, eval, base, dump}) add_common(c, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  CLI::App* cmd = app.get_subcommands().front();
  try {
    const uavcr::RunConfig cfg = resolve(cmd->get_name(), flags, cmd->remaining());
    if (cmd == gen) {
      const auto summary = uavcr::cmd_generate(cfg, std::cout);
      return summary.failed == 0 ? 0 : kExitRuntime;
    }
    if (cmd == train) uavcr::cmd_train(cfg, std::cout);
    if (cmd == eval) uavcr::cmd_evaluate(cfg, std::cout);
    if (cmd == base) uavcr::cmd_baseline(cfg, std::cout);
    if (cmd == dump) std::cout << uavcr::config_to_json(cfg).dump(2) << '\n';
    return 0;
  } catch (const uavcr::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
