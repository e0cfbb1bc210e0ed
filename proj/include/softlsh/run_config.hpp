#pragma once

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace softlsh {

inline constexpr const char* kFormatVersion = "softlsh-run/1";

/// Every parameter a CLI run can take. Serializes to one JSON document that
/// is embedded in each output, so a run can be replayed from its envelope.
struct RunConfig {
  std::string command;     // gen | attend | rank-eval | theory | bench
  std::string subcommand;  // theory: sweep-l | sweep-m | sweep-tau | corr | triangle

  long long n = 4096;
  long long d = 128;
  int p = 8;
  int l = 60;
  double tau = 0.5;
  long long k = 0;  // 0 = N/10
  std::string mode = "exact";
  long long sink = -1;    // -1 = command default
  long long window = -1;  // -1 = command default
  bool scaled = false;
  long long m = 256;
  std::uint64_t seed = 0;
  int seeds = 20;
  int threads = 0;  // 0 = runtime default
  std::string format = "json";
  std::string out;

  std::string kv_path;
  std::string mask_path;
  std::string index_out;
  std::string query = "gaussian";  // gaussian | row:<i> | file:<path>
  int queries = 1;

  int bins = 50;
  long long hist_k = 128;
  std::vector<long long> k_grid{16, 32, 64, 128, 256};
  std::vector<int> l_grid{8, 16, 32, 64, 128, 256, 512};
  std::vector<long long> m_grid{8, 16, 32, 64, 128, 256, 512, 1024};
  std::vector<double> tau_grid{0.01, 0.1, 0.5, 1.0, 10.0, 100.0};
  int replicas = 20;
  long long mc_tables = 65536;
  long long mc_pairs = 100000;
  double delta = 0.1;
  int instances = 1;
  int repeats = 5;

  std::string format_version = kFormatVersion;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

}  // namespace softlsh
