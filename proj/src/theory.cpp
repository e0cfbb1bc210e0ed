#include "softlsh/theory.hpp"

#include "softlsh/format.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

namespace softlsh {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

MatrixXd gaussian_matrix(Index rows, Index cols, std::uint64_t seed) {
  Rng rng(seed);
  MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index c = 0; c < cols; ++c) m(i, c) = rng.normal();
  return m;
}

bool all_passed(const std::vector<Check>& checks) {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0;
}

std::string slope_detail(const SlopeFit& fit) {
  return "slope=" + format_double(fit.slope) + " ci=[" + format_double(fit.ci_low) + ", " + format_double(fit.ci_high) +
         "] window=[" + format_double(kSlopeLow) + ", " + format_double(kSlopeHigh) + "]";
}

Check slope_check(const SlopeFit& fit) {
  return {"slope_ci_intersects_window", fit.ci_high >= kSlopeLow && fit.ci_low <= kSlopeHigh, slope_detail(fit)};
}

}  // namespace

TheoryInstance make_instance(const InstanceConfig& cfg) {
  if (cfg.n < 1 || cfg.d < 1) throw ParameterError("instance needs N >= 1 and d >= 1");
  MatrixXd keys = gaussian_matrix(cfg.n, cfg.d, derive_seed(cfg.seed, 0));
  MatrixXd values = gaussian_matrix(cfg.n, cfg.d, derive_seed(cfg.seed, 1));
  VectorXd q = gaussian_matrix(cfg.d, 1, derive_seed(cfg.seed, 2));
  return {KvCache<double>::from(std::move(keys), std::move(values)), std::move(q)};
}

double spectral_norm(const MatrixXd& v, double rel_tol, int max_iter) {
  if (v.size() == 0) return 0.0;
  VectorXd x = VectorXd::Ones(v.cols()) / std::sqrt(static_cast<double>(v.cols()));
  // Ones can be orthogonal to the top singular vector; mix in a fixed perturbation.
  for (Index i = 0; i < x.size(); ++i) x(i) += 1e-3 * std::sin(static_cast<double>(i) + 1.0);
  x.normalize();
  double lambda = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    VectorXd y = v.transpose() * (v * x);
    const double next = y.norm();
    if (next == 0.0) return 0.0;
    x = y / next;
    if (it > 0 && std::abs(next - lambda) <= 0.5 * rel_tol * next) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return std::sqrt(lambda);
}

const char* to_string(TargetKind kind) {
  switch (kind) {
    case TargetKind::angular:
      return "y*";
    case TargetKind::population:
      return "y_tau";
    case TargetKind::finite_table:
      return "y_tau_L";
  }
  return "?";
}

bool SweepReport::passed() const { return all_passed(checks); }
bool TauReport::passed() const { return all_passed(checks); }

double loglog_slope(const std::vector<double>& params, const std::vector<double>& mean_errors) {
  const auto n = static_cast<double>(params.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double x = std::log(params[i]);
    const double y = std::log(mean_errors[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

SlopeFit fit_loglog_slope(const std::vector<double>& params, const std::vector<std::vector<double>>& errors,
                          int resamples, std::uint64_t seed) {
  if (params.size() < 2 || params.size() != errors.size()) throw ParameterError("slope fit needs >= 2 sweep points");
  SlopeFit fit;
  std::vector<double> means;
  for (const auto& e : errors) means.push_back(mean(e));
  fit.slope = loglog_slope(params, means);
  if (resamples < 1) {
    fit.ci_low = fit.ci_high = fit.slope;
    return fit;
  }
  Rng rng(seed);
  std::vector<double> slopes;
  slopes.reserve(static_cast<std::size_t>(resamples));
  std::vector<double> boot(params.size());
  for (int b = 0; b < resamples; ++b) {
    for (std::size_t i = 0; i < errors.size(); ++i) {
      double s = 0.0;
      for (std::size_t r = 0; r < errors[i].size(); ++r) s += errors[i][rng.next() % errors[i].size()];
      boot[i] = s / static_cast<double>(errors[i].size());
    }
    slopes.push_back(loglog_slope(params, boot));
  }
  std::sort(slopes.begin(), slopes.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(slopes.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, slopes.size() - 1);
    return slopes[lo] + (pos - static_cast<double>(lo)) * (slopes[hi] - slopes[lo]);
  };
  fit.ci_low = quantile(0.025);
  fit.ci_high = quantile(0.975);
  return fit;
}

SweepReport sweep_tables(const InstanceConfig& inst, const LSweepConfig& cfg) {
  if (cfg.table_counts.size() < 4) throw ParameterError("L sweep needs at least 4 points");
  if (!std::is_sorted(cfg.table_counts.begin(), cfg.table_counts.end()) ||
      std::adjacent_find(cfg.table_counts.begin(), cfg.table_counts.end()) != cfg.table_counts.end() ||
      cfg.table_counts.front() < 1) {
    throw ParameterError("L values must be positive and strictly increasing");
  }
  if (cfg.replicas < 2) throw ParameterError("L sweep needs at least 2 replicas");
  const SoftHashConfig soft{inst.tau};
  soft.validate();

  const auto instance = make_instance(inst);
  const auto& cache = instance.cache;
  const auto pop = population_estimate(instance.query, cache, soft, inst.hyperplanes, cfg.mc_tables,
                                       derive_seed(inst.seed, 100));
  const double vnorm = spectral_norm(cache.values);
  const double z_angular = angular_attention(instance.query, cache, inst.hyperplanes).normalizer;

  const auto points = cfg.table_counts.size();
  const auto reps = static_cast<std::size_t>(cfg.replicas);
  SweepReport report;
  report.rows.resize(points * reps);
  std::vector<double> z_dev(points * reps);

#pragma omp parallel for schedule(dynamic)
  for (long long job = 0; job < static_cast<long long>(points * reps); ++job) {
    const auto start = Clock::now();
    const auto i = static_cast<std::size_t>(job) / reps;
    const auto r = static_cast<std::size_t>(job) % reps;
    const std::uint64_t seed = derive_seed(derive_seed(inst.seed, 200 + i), r);
    const LshParams params{inst.hyperplanes, cfg.table_counts[i], static_cast<int>(inst.d), seed};
    const auto tables = build_tables<double>(params);
    const auto assignment = hash_keys(tables, cache);
    const auto scores = soft_score<double>(soft_bucket_probs(tables, instance.query, soft), assignment);
    const VectorXd y = finite_table_output(scores, cache);

    auto& row = report.rows[static_cast<std::size_t>(job)];
    row.swept_param = "L";
    row.value = cfg.table_counts[i];
    row.replica = static_cast<Index>(r);
    row.error_l2 = (y - pop.output).norm();
    row.target_kind = TargetKind::population;
    row.v_spectral_norm = vnorm;
    row.realized_z = z_angular;
    row.realized_z_tau = pop.z_tau;
    row.realized_b = max_bucket_occupancy(assignment);
    row.seed = seed;
    z_dev[static_cast<std::size_t>(job)] = std::abs(scores.z_tilde - pop.z_tau);
    row.wall_time = seconds_since(start);
  }

  std::vector<std::vector<double>> errors(points);
  long long z_inside = 0;
  for (std::size_t job = 0; job < report.rows.size(); ++job) {
    const auto& row = report.rows[job];
    errors[job / reps].push_back(row.error_l2);
    const double radius = static_cast<double>(row.realized_b) * std::sqrt(std::log(4.0 / cfg.delta) / (2.0 * row.value));
    z_inside += z_dev[job] <= radius ? 1 : 0;
  }
  for (std::size_t i = 0; i < points; ++i) {
    report.params.push_back(cfg.table_counts[i]);
    report.mean_errors.push_back(mean(errors[i]));
    Index b = 0;
    for (std::size_t r = 0; r < reps; ++r) b = std::max(b, report.rows[i * reps + r].realized_b);
    const auto bd = static_cast<double>(b);
    report.required_tables.push_back(2.0 * bd * bd * std::log(8.0 / cfg.delta) / (pop.z_tau * pop.z_tau));
  }
  report.fit = fit_loglog_slope(report.params, errors, cfg.bootstrap, derive_seed(inst.seed, 900));

  report.checks.push_back(slope_check(report.fit));
  const double mc_error = pop.standard_errors.output.norm();
  const double smallest = *std::min_element(report.mean_errors.begin(), report.mean_errors.end());
  report.checks.push_back({"population_mc_error_below_10pct", mc_error <= 0.1 * smallest,
                           "mc_se_norm=" + format_double(mc_error) + " smallest_mean_error=" + format_double(smallest)});
  const double spread = stddev(errors.front());
  report.checks.push_back({"error_varies_across_tables", spread > 0.0, "sd_at_first_L=" + format_double(spread)});
  const double frac = static_cast<double>(z_inside) / static_cast<double>(report.rows.size());
  report.checks.push_back({"z_tilde_concentration", frac >= 1.0 - cfg.delta,
                           "fraction_within_hoeffding_radius=" + format_double(frac)});
  return report;
}

SweepReport sweep_samples(const InstanceConfig& inst, const MSweepConfig& cfg) {
  if (cfg.sample_counts.size() < 4) throw ParameterError("M sweep needs at least 4 points");
  if (!std::is_sorted(cfg.sample_counts.begin(), cfg.sample_counts.end()) ||
      std::adjacent_find(cfg.sample_counts.begin(), cfg.sample_counts.end()) != cfg.sample_counts.end() ||
      cfg.sample_counts.front() < 1) {
    throw ParameterError("M values must be positive and strictly increasing");
  }
  if (cfg.replicas < 2) throw ParameterError("M sweep needs at least 2 replicas");
  const SoftHashConfig soft{inst.tau};
  soft.validate();

  const auto instance = make_instance(inst);
  const auto& cache = instance.cache;
  const LshParams params{inst.hyperplanes, cfg.tables, static_cast<int>(inst.d), derive_seed(inst.seed, 300)};
  const auto tables = build_tables<double>(params);
  const auto assignment = hash_keys(tables, cache);
  const auto scores = soft_score<double>(soft_bucket_probs(tables, instance.query, soft), assignment);
  const VectorXd y_l = finite_table_output(scores, cache);
  const double vnorm = spectral_norm(cache.values);
  const double z_angular = angular_attention(instance.query, cache, inst.hyperplanes).normalizer;
  const Index b = max_bucket_occupancy(assignment);

  const auto points = cfg.sample_counts.size();
  const auto reps = static_cast<std::size_t>(cfg.replicas);
  SweepReport report;
  report.rows.resize(points * reps);

#pragma omp parallel for schedule(dynamic)
  for (long long job = 0; job < static_cast<long long>(points * reps); ++job) {
    const auto start = Clock::now();
    const auto i = static_cast<std::size_t>(job) / reps;
    const auto r = static_cast<std::size_t>(job) % reps;
    const std::uint64_t seed = derive_seed(derive_seed(inst.seed, 400 + i), r);
    const auto sampler = make_sampler(scores, cache, cfg.sample_counts[i], seed);
    const VectorXd t = sample_estimator(scores, cache, sampler);
    auto& row = report.rows[static_cast<std::size_t>(job)];
    row.swept_param = "M";
    row.value = static_cast<double>(cfg.sample_counts[i]);
    row.replica = static_cast<Index>(r);
    row.error_l2 = (t - y_l).norm();
    row.target_kind = TargetKind::finite_table;
    row.v_spectral_norm = vnorm;
    row.realized_z = z_angular;
    row.realized_z_tau = scores.z_tilde;
    row.realized_b = b;
    row.seed = seed;
    row.wall_time = seconds_since(start);
  }

  std::vector<std::vector<double>> errors(points);
  long long violations = 0;
  for (std::size_t job = 0; job < report.rows.size(); ++job) {
    const auto& row = report.rows[job];
    errors[job / reps].push_back(row.error_l2);
    const double bound = vnorm * std::sqrt(8.0 * std::log(2.0 / cfg.delta) / row.value);
    violations += row.error_l2 > bound ? 1 : 0;
  }
  for (std::size_t i = 0; i < points; ++i) {
    report.params.push_back(static_cast<double>(cfg.sample_counts[i]));
    report.mean_errors.push_back(mean(errors[i]));
  }
  report.fit = fit_loglog_slope(report.params, errors, cfg.bootstrap, derive_seed(inst.seed, 901));
  report.checks.push_back(slope_check(report.fit));

  const double n = static_cast<double>(report.rows.size());
  const double rate = static_cast<double>(violations) / n;
  const double allowed = cfg.delta + 3.0 * std::sqrt(cfg.delta * (1.0 - cfg.delta) / n);
  report.checks.push_back({"sampling_tail_bound", rate <= allowed,
                           "violation_rate=" + format_double(rate) + " allowed=" + format_double(allowed)});
  if (report.params.back() >= 512.0 * report.params.front()) {
    const double first = report.mean_errors.front();
    const double last = report.mean_errors.back();
    report.checks.push_back({"large_m_decay", last <= first / 10.0,
                             "mean_error_first=" + format_double(first) + " last=" + format_double(last)});
  }
  return report;
}

TauRow bias_bound(const TheoryInstance& instance, double tau, int hyperplanes, long long mc_tables, std::uint64_t seed) {
  const auto& cache = instance.cache;
  const auto angular = angular_attention(instance.query, cache, hyperplanes);
  const auto pop = population_estimate(instance.query, cache, SoftHashConfig{tau}, hyperplanes, mc_tables, seed);
  TauRow row;
  row.tau = tau;
  row.epsilon = pop.epsilon_tau;
  row.epsilon_se = pop.standard_errors.epsilon_tau;
  row.bias_error = (pop.output - angular.output).norm();
  row.realized_b = pop.max_bucket_occupancy;
  row.realized_z = angular.normalizer;
  row.realized_z_tau = pop.z_tau;
  row.v_spectral_norm = spectral_norm(cache.values);
  const auto b = static_cast<double>(row.realized_b);
  row.bound = 2.0 * b * (1.0 / row.realized_z_tau + std::sqrt(b) / (row.realized_z * row.realized_z_tau)) * row.epsilon *
              row.v_spectral_norm;
  row.bound_holds = row.bias_error <= row.bound;
  return row;
}

TauReport sweep_temperature(const InstanceConfig& inst, const std::vector<double>& taus, long long mc_tables) {
  if (taus.size() < 2) throw ParameterError("temperature sweep needs at least 2 values");
  if (!std::is_sorted(taus.begin(), taus.end()) || taus.front() <= 0.0) {
    throw ParameterError("temperatures must be positive and increasing");
  }
  if (taus.back() / taus.front() < 100.0) throw ParameterError("temperature grid must span at least two decades");
  const auto instance = make_instance(inst);
  TauReport report;
  for (double tau : taus) report.rows.push_back(bias_bound(instance, tau, inst.hyperplanes, mc_tables, derive_seed(inst.seed, 500)));

  bool monotone = true;
  std::string detail;
  for (std::size_t i = 1; i < report.rows.size(); ++i) {
    const auto& a = report.rows[i - 1];
    const auto& b = report.rows[i];
    const double slack = 3.0 * std::hypot(a.epsilon_se, b.epsilon_se);
    if (b.epsilon < a.epsilon - slack) {
      monotone = false;
      detail += "drop at tau=" + format_double(b.tau) + "; ";
    }
  }
  report.checks.push_back({"epsilon_nondecreasing_in_tau", monotone, detail.empty() ? "ok" : detail});

  long long violations = 0;
  for (const auto& row : report.rows) violations += row.bound_holds ? 0 : 1;
  report.checks.push_back({"bias_bound_holds", violations == 0, "violations=" + std::to_string(violations)});

  const double uniform_limit = 1.0 - std::ldexp(1.0, -inst.hyperplanes);
  for (const auto& row : report.rows) {
    if (row.tau >= 100.0) {
      report.checks.push_back({"epsilon_high_tau_limit", std::abs(row.epsilon - uniform_limit) <= 1e-2,
                               "tau=" + format_double(row.tau) + " eps=" + format_double(row.epsilon) +
                                   " limit=" + format_double(uniform_limit)});
    }
  }
  return report;
}

std::pair<double, double> pearson(const VectorXd& x, const VectorXd& y) {
  require_dims(y.size(), x.size(), "pearson");
  const auto n = static_cast<double>(x.size());
  const double mx = x.mean();
  const double my = y.mean();
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    sxy += (x(i) - mx) * (y(i) - my);
    sxx += (x(i) - mx) * (x(i) - mx);
    syy += (y(i) - my) * (y(i) - my);
  }
  const double r = sxy / std::sqrt(sxx * syy);
  return {r, (1.0 - r * r) / std::sqrt(n - 1.0)};
}

CorrelationExperiment correlation_experiment(int hyperplanes, Index d, long long mc_pairs, std::uint64_t seed,
                                             bool orthonormal) {
  if (hyperplanes < 1) throw ParameterError("hyperplanes must be >= 1");
  if (hyperplanes > d) throw ParameterError("correlation experiment needs P <= d");
  if (mc_pairs < 3) throw ParameterError("correlation experiment needs at least 3 keys");
  VectorXd q = gaussian_matrix(d, 1, derive_seed(seed, 0));
  q.normalize();
  MatrixXd w = gaussian_matrix(hyperplanes, d, derive_seed(seed, 1));
  for (Index i = 0; i < w.rows(); ++i) {
    if (orthonormal) {
      for (Index j = 0; j < i; ++j) w.row(i) -= w.row(i).dot(w.row(j)) * w.row(j);
    }
    w.row(i).normalize();
  }
  const VectorXd wq = w * q;
  VectorXd s_hard(hyperplanes);
  VectorXd s_soft(hyperplanes);
  for (Index i = 0; i < hyperplanes; ++i) {
    s_hard(i) = wq(i) >= 0.0 ? 1.0 : -1.0;
    s_soft(i) = std::tanh(wq(i));
  }

  VectorXd x(mc_pairs), y_hard(mc_pairs), y_soft(mc_pairs);
  Rng rng(derive_seed(seed, 2));
  VectorXd k(d);
  for (long long m = 0; m < mc_pairs; ++m) {
    for (Index c = 0; c < d; ++c) k(c) = rng.normal();
    x(m) = q.dot(k);
    const VectorXd wk = w * k;
    double yh = 0.0, ys = 0.0;
    for (Index i = 0; i < hyperplanes; ++i) {
      const double sign = wk(i) >= 0.0 ? 1.0 : -1.0;
      yh += sign * s_hard(i);
      ys += sign * s_soft(i);
    }
    y_hard(m) = yh;
    y_soft(m) = ys;
  }

  CorrelationExperiment out;
  std::tie(out.gamma_hard, out.se_hard) = pearson(x, y_hard);
  std::tie(out.gamma_soft, out.se_soft) = pearson(x, y_soft);
  const double c = std::sqrt(2.0 / std::numbers::pi);
  out.predicted_hard = c / std::sqrt(static_cast<double>(hyperplanes)) * wq.lpNorm<1>();
  out.predicted_soft = c * wq.dot(s_soft) / s_soft.norm();
  out.mc_pairs = mc_pairs;
  out.hyperplanes = hyperplanes;
  out.d = d;
  out.orthonormal = orthonormal;
  return out;
}

TriangleReport triangle_report(const TheoryInstance& instance, const InstanceConfig& inst, const TriangleConfig& cfg) {
  const auto& cache = instance.cache;
  const SoftHashConfig soft{inst.tau};
  const auto angular = angular_attention(instance.query, cache, inst.hyperplanes);
  const auto pop = population_estimate(instance.query, cache, soft, inst.hyperplanes, cfg.mc_tables,
                                       derive_seed(inst.seed, 600));
  const LshParams params{inst.hyperplanes, cfg.tables, static_cast<int>(cache.dim()), derive_seed(inst.seed, 601)};
  const auto tables = build_tables<double>(params);
  const auto scores = soft_score<double>(soft_bucket_probs(tables, instance.query, soft), hash_keys(tables, cache));
  const VectorXd y_l = finite_table_output(scores, cache);
  const VectorXd t = sample_estimator(scores, cache, make_sampler(scores, cache, cfg.samples, derive_seed(inst.seed, 602)));

  TriangleReport r;
  r.total = (t - angular.output).norm();
  r.sampling = (t - y_l).norm();
  r.finite_tables = (y_l - pop.output).norm();
  r.bias = (pop.output - angular.output).norm();
  const double sum = r.sampling + r.finite_tables + r.bias;
  // Floating-point slack only; the inequality is exact in real arithmetic.
  r.holds = r.total <= sum * (1.0 + 1e-12);
  return r;
}

std::string sweep_csv(const std::vector<SweepResult>& rows, bool include_timing) {
  std::ostringstream out;
  out << "swept_param,value,replica,error_l2,target_kind,v_spectral_norm,realized_Z,realized_Z_tau,realized_B,seed";
  if (include_timing) out << ",wall_time";
  out << '\n';
  for (const auto& r : rows) {
    out << r.swept_param << ',' << format_double(r.value) << ',' << r.replica << ',' << format_double(r.error_l2) << ','
        << to_string(r.target_kind) << ',' << format_double(r.v_spectral_norm) << ',' << format_double(r.realized_z)
        << ',' << format_double(r.realized_z_tau) << ',' << r.realized_b << ',' << r.seed;
    if (include_timing) out << ',' << format_double(r.wall_time);
    out << '\n';
  }
  return out.str();
}

std::string tau_csv(const std::vector<TauRow>& rows) {
  std::ostringstream out;
  out << "tau,epsilon_tau,epsilon_se,bias_error,bound,realized_B,realized_Z,realized_Z_tau,v_spectral_norm,bound_holds\n";
  for (const auto& r : rows) {
    out << format_double(r.tau) << ',' << format_double(r.epsilon) << ',' << format_double(r.epsilon_se) << ','
        << format_double(r.bias_error) << ',' << format_double(r.bound) << ',' << r.realized_b << ','
        << format_double(r.realized_z) << ',' << format_double(r.realized_z_tau) << ','
        << format_double(r.v_spectral_norm) << ',' << (r.bound_holds ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace softlsh
