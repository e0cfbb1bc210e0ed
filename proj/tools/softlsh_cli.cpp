// softlsh: data generation, attention runs, ranking and theory sweeps.

#include "softlsh/harness.hpp"
#include "softlsh/io.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using softlsh::RunConfig;

void add_common(CLI::App& app, RunConfig& c) {
  app.add_option("--n", c.n, "number of keys N");
  app.add_option("--d", c.d, "head dimension d");
  app.add_option("--p", c.p, "hyperplanes per table P");
  app.add_option("--l", c.l, "number of tables L");
  app.add_option("--tau", c.tau, "soft-hash temperature");
  app.add_option("--k", c.k, "token budget (0 = N/10)");
  app.add_option("--mode", c.mode, "logit mode")->check(CLI::IsMember({"exact", "soft-count"}));
  app.add_option("--sink", c.sink, "sink tokens (-1 = default)");
  app.add_option("--window", c.window, "local window tokens (-1 = default)");
  app.add_flag("--scaled", c.scaled, "scale exact logits by 1/sqrt(d)");
  app.add_option("--m", c.m, "samples M");
  app.add_option("--seed", c.seed, "master seed")->envname("SOCKET_SEED");
  app.add_option("--seeds", c.seeds, "number of seeds for rank-eval");
  app.add_option("--out", c.out, "output path");
  app.add_option("--threads", c.threads, "worker threads (0 = runtime default)");
  app.add_option("--format", c.format, "output format")->check(CLI::IsMember({"csv", "json"}));
  app.add_option("--kv", c.kv_path, "SKT1 key/value file");
  app.add_option("--mask", c.mask_path, "mask sidecar (N bytes of 0/1)");
  app.add_option("--index-out", c.index_out, "write the SKTI bucket index here");
  app.add_option("--query", c.query, "query source: gaussian | row:<i> | file:<path>");
  app.add_option("--queries", c.queries, "number of Gaussian queries");
  app.add_option("--bins", c.bins, "histogram bins");
  app.add_option("--hist-k", c.hist_k, "k whose histogram is exported");
  app.add_option("--k-grid", c.k_grid, "k values")->delimiter(',');
  app.add_option("--l-grid", c.l_grid, "L values")->delimiter(',');
  app.add_option("--m-grid", c.m_grid, "M values")->delimiter(',');
  app.add_option("--tau-grid", c.tau_grid, "temperatures")->delimiter(',');
  app.add_option("--replicas", c.replicas, "replicas per sweep point");
  app.add_option("--mc-tables", c.mc_tables, "Monte-Carlo tables for population quantities");
  app.add_option("--mc-pairs", c.mc_pairs, "Monte-Carlo keys for the correlation experiment");
  app.add_option("--delta", c.delta, "failure probability");
  app.add_option("--instances", c.instances, "random instances");
  app.add_option("--repeats", c.repeats, "benchmark repeats");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"softlsh: soft-LSH sparse attention toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", softlsh::harness::code_version());

  RunConfig cfg;
  std::string replay_path;
  std::string replay_out;
  int replay_threads = 0;

  struct Entry {
    const char* name;
    const char* help;
  };
  for (const Entry& e : {Entry{"gen", "write a standard-Gaussian SKT1 key/value file"},
                         Entry{"attend", "score, select and attend; compare against dense attention"},
                         Entry{"rank-eval", "soft vs hard ranking quality over a k grid"},
                         Entry{"bench", "per-phase timings"}}) {
    auto* sub = app.add_subcommand(e.name, e.help);
    add_common(*sub, cfg);
    sub->callback([&cfg, name = std::string(e.name)] { cfg.command = name; });
  }
  auto* theory = app.add_subcommand("theory", "empirical checks of the error decomposition");
  add_common(*theory, cfg);
  theory->add_option("what", cfg.subcommand, "sweep-l | sweep-m | sweep-tau | corr | triangle")
      ->required()
      ->check(CLI::IsMember({"sweep-l", "sweep-m", "sweep-tau", "corr", "triangle"}));
  theory->callback([&cfg] { cfg.command = "theory"; });

  auto* replay = app.add_subcommand("replay", "re-run the config embedded in a result envelope");
  replay->add_option("envelope", replay_path, "result envelope (JSON)")->required()->check(CLI::ExistingFile);
  replay->add_option("--out", replay_out, "output path");
  replay->add_option("--threads", replay_threads, "worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : softlsh::harness::kBadInput;
  }

  try {
    if (replay->parsed()) {
      const auto text = softlsh::read_file(replay_path);
      const auto envelope = nlohmann::json::parse(text.begin(), text.end());
      cfg = envelope.at("config").get<RunConfig>();
      cfg.out = replay_out;
      cfg.threads = replay_threads;
    }
    const auto outcome = softlsh::harness::run(cfg);
    softlsh::harness::emit(cfg, outcome, std::cout);
    if (outcome.exit_code != 0) {
      for (const auto& c : outcome.envelope.at("checks")) {
        if (!c.at("passed").get<bool>()) {
          std::cerr << "check failed: " << c.at("name").get<std::string>() << " (" << c.at("detail").get<std::string>()
                    << ")\n";
        }
      }
    }
    return outcome.exit_code;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: bad JSON: " << e.what() << '\n';
    return softlsh::harness::kBadInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return softlsh::harness::exit_code_for(e);
  }
}
