#include "softlsh/harness.hpp"

#include "softlsh/attention.hpp"
#include "softlsh/format.hpp"
#include "softlsh/io.hpp"
#include "softlsh/metrics.hpp"
#include "softlsh/theory.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#ifndef SOFTLSH_VERSION
#define SOFTLSH_VERSION "unknown"
#endif

namespace softlsh::harness {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

json checks_json(const std::vector<Check>& checks) {
  json out = json::array();
  for (const auto& c : checks) out.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  return out;
}

bool all_passed(const std::vector<Check>& checks) {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

Outcome finish(const RunConfig& cfg, json results, const std::vector<Check>& checks, json timings) {
  Outcome out;
  out.envelope = {{"format_version", cfg.format_version},
                  {"code_version", code_version()},
                  {"command", cfg.command},
                  {"config", cfg},
                  {"results", std::move(results)},
                  {"checks", checks_json(checks)},
                  {"passed", all_passed(checks)},
                  {"timings", std::move(timings)}};
  out.exit_code = all_passed(checks) ? kSuccess : kCheckFailed;
  return out;
}

Index resolve_k(const RunConfig& cfg, Index n) {
  if (cfg.k < 0) throw ParameterError("k must be positive");
  const Index k = cfg.k == 0 ? std::max<Index>(1, n / 10) : static_cast<Index>(cfg.k);
  if (k > n) throw ParameterError("budget k=" + std::to_string(k) + " exceeds cache size N=" + std::to_string(n));
  return k;
}

// Emulation default: up to 64 sink and 64 window tokens, never more than half
// the budget between them.
SelectionConfig selection_for(const RunConfig& cfg, Index k) {
  SelectionConfig sel;
  sel.k = k;
  sel.logit_mode = parse_logit_mode(cfg.mode);
  sel.sink_tokens = cfg.sink >= 0 ? static_cast<Index>(cfg.sink) : std::min<Index>(64, k / 4);
  sel.local_window = cfg.window >= 0 ? static_cast<Index>(cfg.window) : std::min<Index>(64, k / 4);
  sel.scaled = cfg.scaled;
  return sel;
}

KvCache<float> load_cache(const RunConfig& cfg) {
  KvCache<float> cache = cfg.kv_path.empty()
                             ? generate_gaussian_kv(static_cast<Index>(cfg.n), static_cast<Index>(cfg.d), cfg.seed)
                             : read_kv(cfg.kv_path);
  if (!cfg.mask_path.empty()) {
    cache = KvCache<float>::from(std::move(cache.keys), std::move(cache.values), read_mask(cfg.mask_path, cache.size()));
  }
  return cache;
}

// Queries as rows of a d-column matrix.
MatrixXf load_queries(const RunConfig& cfg, const KvCache<float>& cache) {
  const std::string& src = cfg.query;
  if (src == "gaussian") {
    if (cfg.queries < 1) throw ParameterError("query count must be positive");
    MatrixXf q(cfg.queries, cache.dim());
    for (Index i = 0; i < q.rows(); ++i) {
      Rng rng(derive_seed(derive_seed(cfg.seed, 2), static_cast<std::uint64_t>(i)));
      for (Index c = 0; c < q.cols(); ++c) q(i, c) = static_cast<float>(rng.normal());
    }
    return q;
  }
  if (src.rfind("row:", 0) == 0) {
    long long row = -1;
    try {
      row = std::stoll(src.substr(4));
    } catch (const std::exception&) {
      throw ParameterError("bad query row '" + src + "'");
    }
    if (row < 0 || row >= cache.size()) throw ParameterError("query row " + std::to_string(row) + " out of range");
    return cache.keys.row(row);
  }
  if (src.rfind("file:", 0) == 0) {
    const auto file = read_kv(src.substr(5));
    require_dims(file.dim(), cache.dim(), "query file dimension");
    if (file.size() == 0) throw FormatError("query file holds no rows");
    return file.keys;
  }
  throw ParameterError("unknown query source '" + src + "' (gaussian, row:<i>, file:<path>)");
}

std::string csv_header(const RunConfig& cfg) {
  return "# softlsh " + code_version() + " " + cfg.format_version + " config=" + json(cfg).dump() + "\n";
}

}  // namespace

std::string code_version() { return SOFTLSH_VERSION; }

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e)) return kIoFailure;
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return kIoFailure;
  return kBadInput;
}

Outcome cmd_gen(const RunConfig& cfg) {
  if (cfg.out.empty()) throw ParameterError("gen needs --out");
  if (cfg.n < 1 || cfg.d < 1) throw ParameterError("gen needs N >= 1 and d >= 1");
  const auto start = Clock::now();
  const auto cache = generate_gaussian_kv(static_cast<Index>(cfg.n), static_cast<Index>(cfg.d), cfg.seed);
  const auto bytes = encode_skt1(cache.keys, cache.values);
  Outcome out = finish(cfg, {{"path", cfg.out}, {"bytes", bytes.size()}, {"n", cfg.n}, {"d", cfg.d}}, {},
                       {{"generate", seconds_since(start)}});
  out.artifacts.push_back({cfg.out, std::string(bytes.begin(), bytes.end())});
  return out;
}

Outcome cmd_attend(const RunConfig& cfg) {
  const auto t_load = Clock::now();
  const auto cache = load_cache(cfg);
  const MatrixXf queries = load_queries(cfg, cache);
  const double load_time = seconds_since(t_load);

  const Index n = cache.size();
  const Index k = resolve_k(cfg, n);
  const SelectionConfig sel = selection_for(cfg, k);
  const SoftHashConfig soft{cfg.tau};
  soft.validate();
  if (cache.valid_count() == 0) throw SelectionError("no selectable keys: every position is masked");

  const auto t_prefill = Clock::now();
  const LshParams params{cfg.p, cfg.l, static_cast<int>(cache.dim()), derive_seed(cfg.seed, 3)};
  const auto tables = build_tables<float>(params);
  const auto assignment = hash_keys(tables, cache);
  const double prefill_time = seconds_since(t_prefill);

  double score_time = 0.0, select_time = 0.0, attend_time = 0.0, dense_time = 0.0;
  json rows = json::array();
  std::vector<Check> checks;
  std::ostringstream csv;
  csv << "query,relative_error,hard_relative_error,selected,precision,jaccard,ndcg,mass_above_cutoff\n";
  for (Index qi = 0; qi < queries.rows(); ++qi) {
    const VectorXf q = queries.row(qi).transpose();
    auto t = Clock::now();
    const auto scores = soft_score<float>(soft_bucket_probs(tables, q, soft), assignment);
    score_time += seconds_since(t);

    t = Clock::now();
    const auto ranked = masked_value_scores(scores, cache);
    const IndexList chosen = select_indices(ranked, sel);
    select_time += seconds_since(t);

    t = Clock::now();
    const auto sparse = sparse_attention(q, cache, scores, sel);
    attend_time += seconds_since(t);

    t = Clock::now();
    const auto dense = dense_attention(q, cache, cfg.scaled);
    dense_time += seconds_since(t);

    const auto hard =
        sparse_attention(q, cache, score_set_from_counts<float>(hard_score(hash_query(tables, q), assignment), cfg.l), sel);
    const double dense_norm = dense.output.norm();
    const double rel = (sparse.output - dense.output).norm() / dense_norm;
    const double hard_rel = (hard.output - dense.output).norm() / dense_norm;

    // Ground truth: exact dot products; masked keys rank last.
    VectorXd truth = cache.keys.cast<double>() * q.cast<double>();
    for (Index j = 0; j < n; ++j) {
      if (!cache.valid(j)) truth(j) = -std::numeric_limits<double>::infinity();
    }
    const Index valid_k = std::min<Index>(k, cache.valid_count());
    RankingInstance inst{truth, {}, exact_top_k(truth, valid_k)};
    // Method ranking: the selected set ordered by its selection score.
    inst.method_ranking = chosen;
    std::stable_sort(inst.method_ranking.begin(), inst.method_ranking.end(),
                     [&](Index a, Index b) { return ranked.value(a) > ranked.value(b); });
    const auto report = evaluate_ranking(inst, cfg.bins);

    rows.push_back({{"query", qi},
                    {"relative_error", rel},
                    {"hard_relative_error", hard_rel},
                    {"selected", sparse.selected.size()},
                    {"precision", report.precision},
                    {"jaccard", report.jaccard},
                    {"ndcg", report.ndcg},
                    {"mass_above_cutoff", report.selection.mass_above_cutoff}});
    csv << qi << ',' << format_double(rel) << ',' << format_double(hard_rel) << ',' << sparse.selected.size() << ','
        << format_double(report.precision) << ',' << format_double(report.jaccard) << ',' << format_double(report.ndcg)
        << ',' << format_double(report.selection.mass_above_cutoff) << '\n';
    if (k == n && sel.logit_mode == LogitMode::exact) {
      checks.push_back({"full_budget_matches_dense_q" + std::to_string(qi), rel <= 1e-6,
                        "relative_error=" + format_double(rel)});
    }
  }

  json results = {{"n", n},
                  {"d", cache.dim()},
                  {"k", k},
                  {"sink_tokens", sel.sink_tokens},
                  {"local_window", sel.local_window},
                  {"masked", n - cache.valid_count()},
                  {"queries", rows}};
  Outcome out = finish(cfg, results, checks,
                       {{"load", load_time},
                        {"prefill", prefill_time},
                        {"score", score_time},
                        {"select", select_time},
                        {"attend", attend_time},
                        {"dense", dense_time}});
  out.csv = csv.str();
  if (!cfg.index_out.empty()) {
    const auto bytes = encode_index(assignment);
    out.artifacts.push_back({cfg.index_out, std::string(bytes.begin(), bytes.end())});
  }
  return out;
}

Outcome cmd_rank_eval(const RunConfig& cfg) {
  const Index n = static_cast<Index>(cfg.n);
  if (cfg.seeds < 1) throw ParameterError("rank-eval needs at least one seed");
  if (cfg.k_grid.empty()) throw ParameterError("k grid is empty");
  for (long long k : cfg.k_grid) {
    if (k < 1 || k > n) throw ParameterError("k=" + std::to_string(k) + " outside [1, N=" + std::to_string(n) + "]");
  }
  const SoftHashConfig soft{cfg.tau};
  soft.validate();
  const auto start = Clock::now();

  struct Row {
    std::string method;
    long long k;
    int seed;
    MetricReport report;
  };
  const auto seeds = static_cast<std::size_t>(cfg.seeds);
  const auto grid = cfg.k_grid.size();
  std::vector<Row> rows(seeds * grid * 2);

#pragma omp parallel for schedule(dynamic)
  for (int s = 0; s < cfg.seeds; ++s) {
    const std::uint64_t inst_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(s));
    const auto cache = generate_gaussian_kv(n, static_cast<Index>(cfg.d), inst_seed);
    VectorXf q(cache.dim());
    Rng rng(derive_seed(inst_seed, 2));
    for (Index c = 0; c < q.size(); ++c) q(c) = static_cast<float>(rng.normal());
    const auto tables = build_tables<float>({cfg.p, cfg.l, static_cast<int>(cfg.d), derive_seed(inst_seed, 3)});
    const auto assignment = hash_keys(tables, cache);
    const auto soft_scores = soft_score<float>(soft_bucket_probs(tables, q, soft), assignment);
    const Eigen::VectorXi hard_counts = hard_score(hash_query(tables, q), assignment);
    const VectorXd truth = cache.keys.cast<double>() * q.cast<double>();
    const auto soft_rank = masked_scores<float>(soft_scores.w_hat, cache.mask);
    const auto hard_rank = masked_scores<float>(hard_counts, cache.mask);
    for (std::size_t g = 0; g < grid; ++g) {
      const auto k = static_cast<Index>(cfg.k_grid[g]);
      const IndexList truth_top = exact_top_k(truth, k);
      const std::size_t base = (static_cast<std::size_t>(s) * grid + g) * 2;
      rows[base] = {"soft", k, s, evaluate_ranking({truth, top_k(soft_rank, k), truth_top}, cfg.bins)};
      rows[base + 1] = {"hard", k, s, evaluate_ranking({truth, top_k(hard_rank, k), truth_top}, cfg.bins)};
    }
  }

  std::ostringstream csv;
  csv << "method,k,seed,ndcg,precision,jaccard,mass_above_cutoff,cutoff\n";
  json row_json = json::array();
  for (const auto& r : rows) {
    csv << r.method << ',' << r.k << ',' << r.seed << ',' << format_double(r.report.ndcg) << ','
        << format_double(r.report.precision) << ',' << format_double(r.report.jaccard) << ','
        << format_double(r.report.selection.mass_above_cutoff) << ',' << format_double(r.report.selection.cutoff)
        << '\n';
    row_json.push_back({{"method", r.method},
                        {"k", r.k},
                        {"seed", r.seed},
                        {"ndcg", r.report.ndcg},
                        {"precision", r.report.precision},
                        {"jaccard", r.report.jaccard},
                        {"mass_above_cutoff", r.report.selection.mass_above_cutoff},
                        {"cutoff", r.report.selection.cutoff}});
  }

  // Means and standard errors per (method, k), aggregated in seed order.
  const char* metric_names[] = {"ndcg", "precision", "jaccard", "mass_above_cutoff"};
  auto metric = [](const MetricReport& m, int i) {
    switch (i) {
      case 0:
        return m.ndcg;
      case 1:
        return m.precision;
      case 2:
        return m.jaccard;
      default:
        return m.selection.mass_above_cutoff;
    }
  };
  json summary = json::array();
  std::vector<Check> checks;
  for (std::size_t g = 0; g < grid; ++g) {
    double means[2][4] = {};
    double ses[2][4] = {};
    for (int method = 0; method < 2; ++method) {
      for (int i = 0; i < 4; ++i) {
        double sum = 0.0, sum_sq = 0.0;
        for (std::size_t s = 0; s < seeds; ++s) {
          const double x = metric(rows[(s * grid + g) * 2 + static_cast<std::size_t>(method)].report, i);
          sum += x;
          sum_sq += x * x;
        }
        const double ns = static_cast<double>(seeds);
        means[method][i] = sum / ns;
        ses[method][i] =
            seeds > 1 ? std::sqrt(std::max(0.0, (sum_sq / ns - means[method][i] * means[method][i]) / (ns - 1.0))) : 0.0;
      }
      json entry = {{"method", method == 0 ? "soft" : "hard"}, {"k", cfg.k_grid[g]}};
      for (int i = 0; i < 4; ++i) {
        entry[std::string(metric_names[i]) + "_mean"] = means[method][i];
        entry[std::string(metric_names[i]) + "_se"] = ses[method][i];
      }
      summary.push_back(entry);
    }
    for (int i = 0; i < 3; ++i) {
      checks.push_back({std::string("soft_ge_hard_") + metric_names[i] + "_k" + std::to_string(cfg.k_grid[g]),
                        means[0][i] >= means[1][i],
                        "soft=" + format_double(means[0][i]) + " hard=" + format_double(means[1][i])});
    }
    if (cfg.k_grid[g] == 128) {
      checks.push_back({"soft_gt_hard_mass_above_cutoff_k128", means[0][3] > means[1][3],
                        "soft=" + format_double(means[0][3]) + " hard=" + format_double(means[1][3])});
    }
  }

  // Histograms of the selected keys' true scores for the first seed at hist_k.
  std::ostringstream hist_csv;
  hist_csv << "method,k,bin_left,bin_right,count\n";
  json hist_json = json::array();
  for (std::size_t g = 0; g < grid; ++g) {
    if (cfg.k_grid[g] != cfg.hist_k) continue;
    for (int method = 0; method < 2; ++method) {
      const auto& r = rows[g * 2 + static_cast<std::size_t>(method)];
      const auto& h = r.report.selection.histogram;
      for (std::size_t b = 0; b < h.counts.size(); ++b) {
        hist_csv << r.method << ',' << r.k << ',' << format_double(h.edges[b]) << ',' << format_double(h.edges[b + 1])
                 << ',' << h.counts[b] << '\n';
        hist_json.push_back({{"method", r.method},
                             {"k", r.k},
                             {"bin_left", h.edges[b]},
                             {"bin_right", h.edges[b + 1]},
                             {"count", h.counts[b]}});
      }
    }
  }

  json results = {{"summary", summary}};
  if (cfg.format == "json") {
    results["rows"] = row_json;
    results["histogram"] = hist_json;
  }
  Outcome out = finish(cfg, results, checks, {{"total", seconds_since(start)}});
  out.csv = csv.str();
  out.extra_csv.push_back({".hist.csv", hist_csv.str()});
  return out;
}

namespace {

InstanceConfig instance_config(const RunConfig& cfg, std::uint64_t seed) {
  return {static_cast<Index>(cfg.n), static_cast<Index>(cfg.d), cfg.p, cfg.tau, seed};
}

json sweep_json(const SweepReport& report, bool with_rows) {
  json j = {{"params", report.params},
            {"mean_errors", report.mean_errors},
            {"slope", report.fit.slope},
            {"slope_ci", {report.fit.ci_low, report.fit.ci_high}},
            {"slope_window", {kSlopeLow, kSlopeHigh}}};
  if (!report.required_tables.empty()) {
    json met = json::array();
    for (std::size_t i = 0; i < report.params.size(); ++i) met.push_back(report.params[i] >= report.required_tables[i]);
    j["theorem_precondition"] = {{"required_L", report.required_tables}, {"satisfied", met}};
  }
  if (with_rows) {
    json rows = json::array();
    for (const auto& r : report.rows) {
      rows.push_back({{"swept_param", r.swept_param},
                      {"value", r.value},
                      {"replica", r.replica},
                      {"error_l2", r.error_l2},
                      {"target_kind", to_string(r.target_kind)},
                      {"v_spectral_norm", r.v_spectral_norm},
                      {"realized_Z", r.realized_z},
                      {"realized_Z_tau", r.realized_z_tau},
                      {"realized_B", r.realized_b},
                      {"seed", r.seed}});
    }
    j["rows"] = rows;
  }
  return j;
}

json wall_times(const SweepReport& report) {
  json j = json::array();
  for (const auto& r : report.rows) j.push_back(r.wall_time);
  return j;
}

}  // namespace

Outcome cmd_theory(const RunConfig& cfg) {
  const auto start = Clock::now();
  const bool inline_rows = cfg.format == "json";
  const std::string& sub = cfg.subcommand;
  if (sub == "sweep-l") {
    LSweepConfig sc;
    sc.table_counts = cfg.l_grid;
    sc.replicas = cfg.replicas;
    sc.mc_tables = cfg.mc_tables;
    sc.delta = cfg.delta;
    const auto report = sweep_tables(instance_config(cfg, cfg.seed), sc);
    Outcome out = finish(cfg, sweep_json(report, inline_rows), report.checks,
                         {{"total", seconds_since(start)}, {"rows", wall_times(report)}});
    out.csv = sweep_csv(report.rows, true);
    return out;
  }
  if (sub == "sweep-m") {
    MSweepConfig sc;
    sc.sample_counts = cfg.m_grid;
    sc.tables = cfg.l;
    sc.replicas = cfg.replicas;
    sc.delta = cfg.delta;
    const auto report = sweep_samples(instance_config(cfg, cfg.seed), sc);
    Outcome out = finish(cfg, sweep_json(report, inline_rows), report.checks,
                         {{"total", seconds_since(start)}, {"rows", wall_times(report)}});
    out.csv = sweep_csv(report.rows, true);
    return out;
  }
  if (sub == "sweep-tau") {
    if (cfg.instances < 1) throw ParameterError("instance count must be positive");
    std::vector<Check> checks;
    std::ostringstream csv;
    json per_instance = json::array();
    for (int i = 0; i < cfg.instances; ++i) {
      const auto report =
          sweep_temperature(instance_config(cfg, derive_seed(cfg.seed, static_cast<std::uint64_t>(i))), cfg.tau_grid,
                            cfg.mc_tables);
      const std::string body = tau_csv(report.rows);
      const auto newline = body.find('\n');
      if (i == 0) csv << "instance," << body.substr(0, newline + 1);
      std::istringstream lines(body.substr(newline + 1));
      for (std::string line; std::getline(lines, line);) csv << i << ',' << line << '\n';
      json rows = json::array();
      for (const auto& r : report.rows) {
        rows.push_back({{"tau", r.tau},
                        {"epsilon_tau", r.epsilon},
                        {"epsilon_se", r.epsilon_se},
                        {"bias_error", r.bias_error},
                        {"bound", r.bound},
                        {"realized_B", r.realized_b},
                        {"realized_Z", r.realized_z},
                        {"realized_Z_tau", r.realized_z_tau},
                        {"v_spectral_norm", r.v_spectral_norm},
                        {"bound_holds", r.bound_holds}});
      }
      per_instance.push_back({{"instance", i}, {"rows", rows}});
      for (auto c : report.checks) {
        c.name += "_instance" + std::to_string(i);
        checks.push_back(std::move(c));
      }
    }
    Outcome out = finish(cfg, {{"instances", per_instance}}, checks, {{"total", seconds_since(start)}});
    out.csv = csv.str();
    return out;
  }
  if (sub == "corr") {
    const auto exact = correlation_experiment(cfg.p, static_cast<Index>(cfg.d), cfg.mc_pairs, cfg.seed, true);
    const auto approx = correlation_experiment(cfg.p, static_cast<Index>(cfg.d), cfg.mc_pairs, cfg.seed, false);
    auto to_json = [](const CorrelationExperiment& e) {
      return json{{"gamma_hard", e.gamma_hard},       {"gamma_soft", e.gamma_soft},
                  {"se_hard", e.se_hard},             {"se_soft", e.se_soft},
                  {"predicted_hard", e.predicted_hard}, {"predicted_soft", e.predicted_soft},
                  {"mc_pairs", e.mc_pairs},           {"hyperplanes", e.hyperplanes},
                  {"d", e.d},                         {"orthonormal", e.orthonormal}};
    };
    std::vector<Check> checks{
        {"hard_matches_closed_form", std::abs(exact.gamma_hard - exact.predicted_hard) <= 3.0 * exact.se_hard,
         "empirical=" + format_double(exact.gamma_hard) + " predicted=" + format_double(exact.predicted_hard)},
        {"soft_matches_closed_form", std::abs(exact.gamma_soft - exact.predicted_soft) <= 3.0 * exact.se_soft,
         "empirical=" + format_double(exact.gamma_soft) + " predicted=" + format_double(exact.predicted_soft)},
        {"hard_le_soft", exact.gamma_hard <= exact.gamma_soft + 3.0 * std::hypot(exact.se_hard, exact.se_soft),
         "hard=" + format_double(exact.gamma_hard) + " soft=" + format_double(exact.gamma_soft)}};
    std::ostringstream csv;
    csv << "configuration,gamma_hard,se_hard,predicted_hard,gamma_soft,se_soft,predicted_soft\n";
    for (const auto* e : {&exact, &approx}) {
      csv << (e->orthonormal ? "orthonormal" : "gaussian") << ',' << format_double(e->gamma_hard) << ','
          << format_double(e->se_hard) << ',' << format_double(e->predicted_hard) << ',' << format_double(e->gamma_soft)
          << ',' << format_double(e->se_soft) << ',' << format_double(e->predicted_soft) << '\n';
    }
    Outcome out = finish(cfg, {{"orthonormal", to_json(exact)}, {"gaussian_report_only", to_json(approx)}}, checks,
                         {{"total", seconds_since(start)}});
    out.csv = csv.str();
    return out;
  }
  if (sub == "triangle") {
    if (cfg.instances < 1) throw ParameterError("instance count must be positive");
    TriangleConfig tc{cfg.l, cfg.m, cfg.mc_tables};
    std::ostringstream csv;
    csv << "instance,total,sampling,finite_tables,bias,holds\n";
    json rows = json::array();
    long long violations = 0;
    for (int i = 0; i < cfg.instances; ++i) {
      const auto inst = instance_config(cfg, derive_seed(cfg.seed, static_cast<std::uint64_t>(i)));
      const auto r = triangle_report(make_instance(inst), inst, tc);
      violations += r.holds ? 0 : 1;
      csv << i << ',' << format_double(r.total) << ',' << format_double(r.sampling) << ','
          << format_double(r.finite_tables) << ',' << format_double(r.bias) << ',' << (r.holds ? 1 : 0) << '\n';
      rows.push_back({{"instance", i},
                      {"total", r.total},
                      {"sampling", r.sampling},
                      {"finite_tables", r.finite_tables},
                      {"bias", r.bias},
                      {"holds", r.holds}});
    }
    Outcome out = finish(cfg, {{"rows", rows}},
                         {{"triangle_inequality", violations == 0, "violations=" + std::to_string(violations)}},
                         {{"total", seconds_since(start)}});
    out.csv = csv.str();
    return out;
  }
  throw ParameterError("unknown theory subcommand '" + sub + "' (sweep-l, sweep-m, sweep-tau, corr, triangle)");
}

Outcome cmd_bench(const RunConfig& cfg) {
  const auto cache = load_cache(cfg);
  const Index n = cache.size();
  const Index k = resolve_k(cfg, n);
  const SelectionConfig sel = selection_for(cfg, k);
  const SoftHashConfig soft{cfg.tau};
  soft.validate();
  if (cfg.repeats < 1) throw ParameterError("repeats must be positive");
  const MatrixXf queries = load_queries(cfg, cache);
  const VectorXf q = queries.row(0).transpose();
  const LshParams params{cfg.p, cfg.l, static_cast<int>(cache.dim()), derive_seed(cfg.seed, 3)};

  std::vector<double> prefill, score, select, attend, dense;
  std::size_t selected_count = 0;
  long long selected_sum = 0;
  for (int rep = 0; rep < cfg.repeats; ++rep) {
    auto t = Clock::now();
    const auto tables = build_tables<float>(params);
    const auto assignment = hash_keys(tables, cache);
    prefill.push_back(seconds_since(t));

    t = Clock::now();
    const auto scores = soft_score<float>(soft_bucket_probs(tables, q, soft), assignment);
    score.push_back(seconds_since(t));

    t = Clock::now();
    const IndexList chosen = select_indices(masked_value_scores(scores, cache), sel);
    select.push_back(seconds_since(t));

    t = Clock::now();
    const auto sparse = sparse_attention(q, cache, scores, sel);
    attend.push_back(seconds_since(t));

    t = Clock::now();
    const auto reference = dense_attention(q, cache, cfg.scaled);
    dense.push_back(seconds_since(t));

    selected_count = chosen.size();
    selected_sum = 0;
    for (Index j : chosen) selected_sum += j;
  }

  // Validation pass: full budget, exact logits, no forced tokens.
  const auto tables = build_tables<float>(params);
  const auto scores = soft_score<float>(soft_bucket_probs(tables, q, soft), hash_keys(tables, cache));
  SelectionConfig full;
  full.k = cache.valid_count();
  full.scaled = cfg.scaled;
  const auto sparse = sparse_attention(q, cache, scores, full);
  const auto reference = dense_attention(q, cache, cfg.scaled);
  const double validation = (sparse.output - reference.output).norm() / reference.output.norm();

  const long long scoring_bytes = 2LL * cfg.l + 4;
  const long long full_key_bytes = 2LL * cache.dim();
  const double score_median = median(score);
  json results = {{"n", n},
                  {"d", cache.dim()},
                  {"p", cfg.p},
                  {"l", cfg.l},
                  {"k", k},
                  {"selected", selected_count},
                  {"selected_index_sum", selected_sum},
                  {"bytes_per_key_scoring", scoring_bytes},
                  {"bytes_per_key_full_key", full_key_bytes},
                  {"validation_relative_error", validation}};
  json timings = {{"repeats", cfg.repeats},
                  {"prefill", median(prefill)},
                  {"score", score_median},
                  {"select", median(select)},
                  {"attend", median(attend)},
                  {"dense", median(dense)},
                  {"keys_per_second_scored", score_median > 0.0 ? static_cast<double>(n) / score_median : 0.0}};
  Outcome out = finish(cfg, results,
                       {{"full_budget_matches_dense", validation <= 1e-6,
                         "relative_error=" + format_double(validation)}},
                       timings);
  std::ostringstream csv;
  csv << "phase,median_seconds\n";
  for (const char* phase : {"prefill", "score", "select", "attend", "dense"}) {
    csv << phase << ',' << format_double(timings[phase].get<double>()) << '\n';
  }
  out.csv = csv.str();
  return out;
}

Outcome run(const RunConfig& cfg) {
  if (cfg.format != "json" && cfg.format != "csv") throw ParameterError("format must be json or csv");
  if (cfg.threads < 0) throw ParameterError("threads must be >= 0");
#ifdef _OPENMP
  if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
#endif
  Outcome out;
  if (cfg.command == "gen") {
    out = cmd_gen(cfg);
  } else if (cfg.command == "attend") {
    out = cmd_attend(cfg);
  } else if (cfg.command == "rank-eval") {
    out = cmd_rank_eval(cfg);
  } else if (cfg.command == "theory") {
    out = cmd_theory(cfg);
  } else if (cfg.command == "bench") {
    out = cmd_bench(cfg);
  } else {
    throw ParameterError("unknown command '" + cfg.command + "'");
  }
  int threads = 1;
#ifdef _OPENMP
  threads = omp_get_max_threads();
#endif
  out.envelope["runtime"] = {{"threads", threads}, {"out", cfg.out}};
  return out;
}

void emit(const RunConfig& cfg, const Outcome& outcome, std::ostream& stdout_stream) {
  // Everything is rendered first so a failure cannot leave half the files behind.
  std::vector<Artifact> files = outcome.artifacts;
  std::string to_stdout;
  const std::string envelope_text = outcome.envelope.dump(2) + "\n";
  if (cfg.format == "csv" && !outcome.csv.empty()) {
    const std::string header = csv_header(cfg);
    if (cfg.out.empty()) {
      to_stdout = header + outcome.csv;
    } else {
      files.push_back({cfg.out, header + outcome.csv});
      files.push_back({cfg.out + ".json", envelope_text});
      for (const auto& [suffix, text] : outcome.extra_csv) files.push_back({cfg.out + suffix, header + text});
    }
  } else if (cfg.command == "gen") {
    to_stdout = envelope_text;
  } else if (cfg.out.empty()) {
    to_stdout = envelope_text;
  } else {
    files.push_back({cfg.out, envelope_text});
  }
  for (const auto& f : files) write_file(f.path, f.contents);
  stdout_stream << to_stdout;
}

}  // namespace softlsh::harness
