#pragma once

// Attention outputs: dense reference, top-k sparse attention, the angular
// target and the soft-count estimators built on it.

#include "softlsh/soft_scoring.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

namespace softlsh {

struct DenseResult {
  VectorXd output;
  VectorXd weights;
};

/// softmax(K q) V over the valid keys. No 1/sqrt(d) scaling unless `scaled`.
template <typename Scalar, typename Derived>
DenseResult dense_attention(const Eigen::MatrixBase<Derived>& q, const KvCache<Scalar>& cache, bool scaled = false) {
  require_dims(q.size(), cache.dim(), "dense_attention");
  if (cache.size() == 0) throw ParameterError("dense_attention: empty cache");
  VectorXd logits = cache.keys.template cast<double>() * q.template cast<double>();
  if (scaled) logits /= std::sqrt(static_cast<double>(cache.dim()));
  double top = -std::numeric_limits<double>::infinity();
  for (Index j = 0; j < logits.size(); ++j) {
    if (cache.valid(j)) top = std::max(top, logits(j));
  }
  if (top == -std::numeric_limits<double>::infinity()) {
    throw SelectionError("dense_attention: every position is masked");
  }
  VectorXd weights(logits.size());
  for (Index j = 0; j < logits.size(); ++j) weights(j) = cache.valid(j) ? std::exp(logits(j) - top) : 0.0;
  weights /= weights.sum();
  VectorXd output = cache.values.template cast<double>().transpose() * weights;
  return {std::move(output), std::move(weights)};
}

enum class LogitMode { exact, soft_count };

inline const char* to_string(LogitMode mode) { return mode == LogitMode::exact ? "exact" : "soft-count"; }
inline LogitMode parse_logit_mode(const std::string& s) {
  if (s == "exact") return LogitMode::exact;
  if (s == "soft-count") return LogitMode::soft_count;
  throw ParameterError("unknown logit mode '" + s + "' (expected exact or soft-count)");
}

struct SelectionConfig {
  Index k = 0;
  LogitMode logit_mode = LogitMode::exact;
  Index sink_tokens = 0;
  Index local_window = 0;
  bool scaled = false;  // 1/sqrt(d) on exact logits
};

/// Indices of the `k` largest selectable scores, best first. Ties go to the
/// smaller index. Entries flagged in `skip` are ignored.
template <typename Scalar>
IndexList top_k(const ValueScores<Scalar>& scores, Index k, const std::vector<std::uint8_t>* skip = nullptr) {
  IndexList pool;
  pool.reserve(static_cast<std::size_t>(scores.size()));
  for (Index j = 0; j < scores.size(); ++j) {
    if (!scores.selectable[static_cast<std::size_t>(j)]) continue;
    if (skip && (*skip)[static_cast<std::size_t>(j)]) continue;
    pool.push_back(j);
  }
  k = std::min<Index>(k, static_cast<Index>(pool.size()));
  auto better = [&](Index a, Index b) {
    if (scores.score(a) != scores.score(b)) return scores.score(a) > scores.score(b);
    return a < b;
  };
  std::partial_sort(pool.begin(), pool.begin() + k, pool.end(), better);
  pool.resize(static_cast<std::size_t>(k));
  return pool;
}

/// Sink tokens, local window, then the best remaining scores up to k.
/// Returned in ascending index order.
template <typename Scalar>
IndexList select_indices(const ValueScores<Scalar>& scores, const SelectionConfig& sel) {
  if (sel.k <= 0) throw SelectionError("token budget k must be positive");
  if (sel.sink_tokens < 0 || sel.local_window < 0 || sel.sink_tokens + sel.local_window > sel.k) {
    throw ParameterError("sink + local window must fit in the budget k");
  }
  const Index selectable = scores.selectable_count();
  if (selectable == 0) throw SelectionError("no selectable keys: every position is masked");
  if (sel.k > selectable) {
    throw SelectionError("budget k=" + std::to_string(sel.k) + " exceeds the " + std::to_string(selectable) +
                         " selectable keys");
  }
  const Index n = scores.size();
  std::vector<std::uint8_t> forced(static_cast<std::size_t>(n), 0);
  Index forced_count = 0;
  auto force = [&](Index j) {
    if (scores.selectable[static_cast<std::size_t>(j)] && !forced[static_cast<std::size_t>(j)]) {
      forced[static_cast<std::size_t>(j)] = 1;
      ++forced_count;
    }
  };
  for (Index j = 0; j < std::min(sel.sink_tokens, n); ++j) force(j);
  for (Index j = std::max<Index>(0, n - sel.local_window); j < n; ++j) force(j);
  IndexList picked = top_k(scores, sel.k - forced_count, &forced);
  for (Index j = 0; j < n; ++j) {
    if (forced[static_cast<std::size_t>(j)]) picked.push_back(j);
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

struct SparseResult {
  VectorXd output;
  IndexList selected;  // ascending
  VectorXd weights;    // aligned with `selected`
};

/// Top-k attention over value-aware soft scores. Both logit modes select the
/// same set; they differ only in how the selected keys are weighted.
template <typename Scalar, typename Derived>
SparseResult sparse_attention(const Eigen::MatrixBase<Derived>& q, const KvCache<Scalar>& cache,
                              const SoftScoreSet<Scalar>& scores, const SelectionConfig& sel) {
  require_dims(q.size(), cache.dim(), "sparse_attention");
  require_dims(scores.size(), cache.size(), "sparse_attention scores");
  SparseResult out;
  out.selected = select_indices(masked_value_scores(scores, cache), sel);
  const auto count = static_cast<Index>(out.selected.size());
  VectorXd logits(count);
  const VectorXd qd = q.template cast<double>();
  const double scale = sel.scaled ? 1.0 / std::sqrt(static_cast<double>(cache.dim())) : 1.0;
  for (Index i = 0; i < count; ++i) {
    const Index j = out.selected[static_cast<std::size_t>(i)];
    logits(i) = sel.logit_mode == LogitMode::exact ? scale * cache.keys.row(j).template cast<double>().dot(qd)
                                                   : static_cast<double>(scores.w_hat(j));
  }
  const double top = logits.maxCoeff();
  out.weights = (logits.array() - top).exp().matrix();
  out.weights /= out.weights.sum();
  out.output = VectorXd::Zero(cache.dim());
  for (Index i = 0; i < count; ++i) {
    out.output += out.weights(i) * cache.values.row(out.selected[static_cast<std::size_t>(i)]).template cast<double>().transpose();
  }
  return out;
}

/// Angular kernel w = (1 - angle(q, k)/pi)^P and the attention it induces.
struct AngularTarget {
  VectorXd kernel_weights;
  double normalizer = 0.0;
  VectorXd distribution;
  VectorXd output;
};

inline double angular_kernel_weight(double cosine, int hyperplanes) {
  const double c = std::clamp(cosine, -1.0, 1.0);
  return std::pow(1.0 - std::acos(c) / std::numbers::pi, hyperplanes);
}

template <typename Scalar, typename Derived>
AngularTarget angular_attention(const Eigen::MatrixBase<Derived>& q, const KvCache<Scalar>& cache, int hyperplanes) {
  require_dims(q.size(), cache.dim(), "angular_attention");
  if (hyperplanes < 1) throw ParameterError("hyperplanes must be >= 1");
  const VectorXd qd = q.template cast<double>();
  const double qn = qd.norm();
  if (qn == 0.0) throw DomainError("angular_attention: query has zero norm");
  AngularTarget t{VectorXd(cache.size()), 0.0, {}, {}};
  for (Index j = 0; j < cache.size(); ++j) {
    const VectorXd k = cache.keys.row(j).template cast<double>().transpose();
    const double kn = k.norm();
    if (kn == 0.0) throw DomainError("angular_attention: key " + std::to_string(j) + " has zero norm");
    t.kernel_weights(j) = angular_kernel_weight(qd.dot(k) / (qn * kn), hyperplanes);
  }
  for (Index j = 0; j < cache.size(); ++j) t.normalizer += t.kernel_weights(j);
  t.distribution = t.normalizer > 0.0 ? VectorXd(t.kernel_weights / t.normalizer) : VectorXd::Zero(cache.size());
  t.output = cache.values.template cast<double>().transpose() * t.distribution;
  return t;
}

/// y_{tau,L} = sum_j a~_j v_j, accumulated in index order.
template <typename Scalar>
VectorXd finite_table_output(const SoftScoreSet<Scalar>& scores, const KvCache<Scalar>& cache) {
  require_dims(scores.size(), cache.size(), "finite_table_output");
  assert(scores.z_tilde > 0.0);
  VectorXd out = VectorXd::Zero(cache.dim());
  for (Index j = 0; j < cache.size(); ++j) out += scores.a_tilde(j) * cache.values.row(j).template cast<double>().transpose();
  return out;
}

struct PopulationStandardErrors {
  VectorXd w_tau;
  double z_tau = 0.0;
  double epsilon_tau = 0.0;
  VectorXd output;  // per component, ratio-estimator linearization
};

/// Monte-Carlo estimate of the single-table (population) soft-count quantities.
struct PopulationEstimate {
  VectorXd w_tau;
  double z_tau = 0.0;
  VectorXd a_tau;
  VectorXd output;
  double epsilon_tau = 0.0;
  long long mc_tables = 0;
  Index max_bucket_occupancy = 0;  // over the sampled tables
  PopulationStandardErrors standard_errors;
};

namespace detail {
PopulationEstimate population_estimate_impl(const VectorXd& q, const MatrixXd& keys, const MatrixXd& values,
                                            const SoftHashConfig& cfg, int hyperplanes, long long mc_tables,
                                            std::uint64_t seed);
}

/// Averages per-table soft scores and 1 - p(b_q | q) over `mc_tables` fresh
/// tables. Table t is table t of build_tables({P, ., d, seed}).
template <typename Scalar, typename Derived>
PopulationEstimate population_estimate(const Eigen::MatrixBase<Derived>& q, const KvCache<Scalar>& cache,
                                       const SoftHashConfig& cfg, int hyperplanes, long long mc_tables,
                                       std::uint64_t seed) {
  require_dims(q.size(), cache.dim(), "population_estimate");
  return detail::population_estimate_impl(q.template cast<double>(), cache.keys.template cast<double>(),
                                          cache.values.template cast<double>(), cfg, hyperplanes, mc_tables, seed);
}

struct SamplerConfig {
  long long samples = 1;  // M
  std::uint64_t seed = 0;
  VectorXd sampling_probs;
};

/// p_j proportional to a~_j ||v_j||.
template <typename Scalar>
SamplerConfig make_sampler(const SoftScoreSet<Scalar>& scores, const KvCache<Scalar>& cache, long long samples,
                           std::uint64_t seed) {
  require_dims(scores.size(), cache.size(), "make_sampler");
  if (samples < 1) throw ParameterError("sample count M must be >= 1");
  VectorXd p(cache.size());
  double total = 0.0;
  for (Index j = 0; j < cache.size(); ++j) {
    p(j) = scores.a_tilde(j) * static_cast<double>(cache.value_norms(j));
    total += p(j);
  }
  if (!(total > 0.0)) throw DomainError("sampling distribution is degenerate: every a~_j ||v_j|| is zero");
  p /= total;
  return {samples, seed, std::move(p)};
}

/// T(q) = (1/M) sum_m (a~_J / p_J) v_J with J_m drawn i.i.d. from the
/// sampler's distribution by inverse CDF over the index order: draw
/// u = Rng(seed).uniform() * cdf_N and take the first j with cdf_j > u.
template <typename Scalar>
VectorXd sample_estimator(const SoftScoreSet<Scalar>& scores, const KvCache<Scalar>& cache, const SamplerConfig& sampler) {
  require_dims(scores.size(), cache.size(), "sample_estimator");
  require_dims(sampler.sampling_probs.size(), cache.size(), "sample_estimator probabilities");
  if (sampler.samples < 1) throw ParameterError("sample count M must be >= 1");
  std::vector<double> cdf(static_cast<std::size_t>(cache.size()));
  double acc = 0.0;
  for (Index j = 0; j < cache.size(); ++j) {
    acc += sampler.sampling_probs(j);
    cdf[static_cast<std::size_t>(j)] = acc;
  }
  if (!(acc > 0.0)) throw DomainError("sampling distribution is degenerate: every p_j is zero");
  Rng rng(sampler.seed);
  VectorXd sum = VectorXd::Zero(cache.dim());
  for (long long m = 0; m < sampler.samples; ++m) {
    const double u = rng.uniform() * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    if (it == cdf.end()) --it;  // u rounding onto acc
    while (sampler.sampling_probs(it - cdf.begin()) == 0.0) --it;
    const Index j = it - cdf.begin();
    sum += (scores.a_tilde(j) / sampler.sampling_probs(j)) * cache.values.row(j).template cast<double>().transpose();
  }
  return sum / static_cast<double>(sampler.samples);
}

}  // namespace softlsh
