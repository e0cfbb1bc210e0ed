#include "softlsh/run_config.hpp"

namespace softlsh {

#define SOFTLSH_CONFIG_FIELDS(X)                                                                                  \
  X(command) X(subcommand) X(n) X(d) X(p) X(l) X(tau) X(k) X(mode) X(sink) X(window) X(scaled) X(m) X(seed)        \
  X(seeds) X(format) X(kv_path) X(mask_path) X(index_out) X(query) X(queries) X(bins) X(hist_k) \
  X(k_grid) X(l_grid) X(m_grid) X(tau_grid) X(replicas) X(mc_tables) X(mc_pairs) X(delta) X(instances)            \
  X(repeats) X(format_version)

// threads and out are execution details: they never change results and are
// reported under the envelope's runtime section instead.
void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json::object();
#define X(field) j[#field] = c.field;
  SOFTLSH_CONFIG_FIELDS(X)
#undef X
}

// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, RunConfig& c) {
#define X(field) \
  if (j.contains(#field)) j.at(#field).get_to(c.field);
  SOFTLSH_CONFIG_FIELDS(X)
#undef X
}

}  // namespace softlsh
