#pragma once

// Command implementations behind the softlsh CLI. Each command returns its
// result envelope; files named by RunConfig::out are written only after the
// whole computation succeeded.

#include "softlsh/run_config.hpp"

#include <json.hpp>

#include <exception>
#include <ostream>
#include <utility>
#include <vector>
#include <string>

namespace softlsh::harness {

enum ExitCode : int { kSuccess = 0, kCheckFailed = 1, kBadInput = 2, kIoFailure = 3 };

struct Artifact {
  std::string path;
  std::string contents;
};

struct Outcome {
  int exit_code = kSuccess;
  nlohmann::json envelope;
  std::string csv;  // row data for --format csv
  std::vector<std::pair<std::string, std::string>> extra_csv;  // (path suffix, rows)
  std::vector<Artifact> artifacts;  // binary outputs (SKT1, SKTI)
};

Outcome cmd_gen(const RunConfig& cfg);
Outcome cmd_attend(const RunConfig& cfg);
Outcome cmd_rank_eval(const RunConfig& cfg);
Outcome cmd_theory(const RunConfig& cfg);
Outcome cmd_bench(const RunConfig& cfg);

/// Dispatches on cfg.command and applies cfg.threads.
Outcome run(const RunConfig& cfg);

/// Writes the outcome: with --out the envelope (json) or the CSV plus
/// <out>.json (csv) go to files, otherwise to `stdout_stream`.
void emit(const RunConfig& cfg, const Outcome& outcome, std::ostream& stdout_stream);

/// Exit code for an exception escaping a command.
int exit_code_for(const std::exception& e);

std::string code_version();

}  // namespace softlsh::harness
