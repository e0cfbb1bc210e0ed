#pragma once

// Soft bucket distributions of a query and the collision scores they induce.
//
// For table l the query is squashed to u = tanh(W q) / sqrt(d) and bucket r
// (corner c_r in {-1,+1}^P, bit i of r set <=> c_{r,i} = +1) gets probability
// softmax_r(u . c_r / tau). The logits are linear in the corner coordinates,
// so the softmax factorizes:
//
//   p(r) = prod_i sigmoid(2 u_i c_{r,i} / tau).
//
// Every routine here uses the product form; soft_bucket_probs_bruteforce keeps
// the 2^P-term enumeration around as a reference.

#include "softlsh/lsh.hpp"

#include <cassert>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace softlsh {

struct SoftHashConfig {
  double tau = 0.5;

  void validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) {
      throw ParameterError("temperature must be positive and finite, got " + std::to_string(tau));
    }
  }
};

/// Per-table soft bucket probabilities of one query. Kept in double.
struct SoftBucketDistribution {
  double tau = 0.0;
  int hyperplanes = 0;
  MatrixXd probs;     // L x R
  MatrixXd squashed;  // L x P, u^(l)(q)

  int tables() const { return static_cast<int>(squashed.rows()); }
};

template <typename Scalar>
struct SoftScoreSet {
  Vector<Scalar> w_hat;    // sum over tables, in [0, L]
  Vector<Scalar> w_tilde;  // w_hat / L
  double z_tilde = 0.0;    // sum_j w_tilde_j, fixed index order
  VectorXd a_tilde;        // w_tilde / z_tilde
  int tables = 0;

  Index size() const { return w_hat.size(); }
};

/// Masked, value-norm weighted scores. Entries with selectable == 0 behave as
/// negative infinity: no top-k ever picks them.
template <typename Scalar>
struct ValueScores {
  Vector<Scalar> score;
  std::vector<std::uint8_t> selectable;

  Index size() const { return score.size(); }
  Index selectable_count() const {
    Index n = 0;
    for (auto s : selectable) n += s ? 1 : 0;
    return n;
  }
  double value(Index j) const {
    return selectable[static_cast<std::size_t>(j)] ? static_cast<double>(score(j))
                                                   : -std::numeric_limits<double>::infinity();
  }
};

template <typename T>
T logistic(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

namespace detail {

// Per-coordinate factors sigmoid(+2u_i/tau) and sigmoid(-2u_i/tau).
template <typename Scalar>
struct CornerFactors {
  Matrix<Scalar> plus;   // L x P
  Matrix<Scalar> minus;  // L x P
};

template <typename Scalar>
CornerFactors<Scalar> corner_factors(const SoftBucketDistribution& dist) {
  const MatrixXd scaled = dist.squashed * (2.0 / dist.tau);
  CornerFactors<Scalar> f{Matrix<Scalar>(scaled.rows(), scaled.cols()), Matrix<Scalar>(scaled.rows(), scaled.cols())};
  for (Index l = 0; l < scaled.rows(); ++l) {
    for (Index i = 0; i < scaled.cols(); ++i) {
      f.plus(l, i) = static_cast<Scalar>(logistic(scaled(l, i)));
      f.minus(l, i) = static_cast<Scalar>(logistic(-scaled(l, i)));
    }
  }
  return f;
}

// Product over coordinates, ascending i.
template <typename Scalar>
Scalar corner_probability(const CornerFactors<Scalar>& f, Index table, std::uint32_t bucket) {
  Scalar p(1);
  for (Index i = 0; i < f.plus.cols(); ++i) p *= ((bucket >> i) & 1U) ? f.plus(table, i) : f.minus(table, i);
  return p;
}

template <typename Scalar>
void squash(const HashTableSet<Scalar>& tables, const VectorXd& projected, MatrixXd& squashed) {
  const int p = tables.hyperplanes();
  const double scale = 1.0 / std::sqrt(static_cast<double>(tables.dim()));
  squashed.resize(tables.tables(), p);
  for (int l = 0; l < tables.tables(); ++l) {
    for (int i = 0; i < p; ++i) squashed(l, i) = scale * std::tanh(projected(Index{l} * p + i));
  }
}

}  // namespace detail

/// Soft bucket distribution of q in every table (factorized evaluation).
template <typename Scalar, typename Derived>
SoftBucketDistribution soft_bucket_probs(const HashTableSet<Scalar>& tables, const Eigen::MatrixBase<Derived>& q,
                                         const SoftHashConfig& cfg) {
  cfg.validate();
  require_dims(q.size(), tables.dim(), "soft_bucket_probs");
  const int p = tables.hyperplanes();
  const Index r_count = Index{1} << p;
  SoftBucketDistribution dist{cfg.tau, p, MatrixXd(tables.tables(), r_count), {}};
  const VectorXd projected = (tables.projections * q.template cast<Scalar>()).template cast<double>();
  detail::squash(tables, projected, dist.squashed);
  const auto f = detail::corner_factors<double>(dist);
  for (int l = 0; l < tables.tables(); ++l) {
    auto row = dist.probs.row(l);
    // Doubling build; entry r ends up with factors multiplied in ascending i,
    // the same order corner_probability uses.
    row(0) = 1.0;
    for (int i = 0; i < p; ++i) {
      const Index half = Index{1} << i;
      for (Index r = 0; r < half; ++r) {
        row(r + half) = row(r) * f.plus(l, i);
        row(r) *= f.minus(l, i);
      }
    }
  }
  return dist;
}

/// Reference path: explicit softmax over all 2^P corners, max-subtracted,
/// denominators in double.
template <typename Scalar, typename Derived>
MatrixXd soft_bucket_probs_bruteforce(const HashTableSet<Scalar>& tables, const Eigen::MatrixBase<Derived>& q,
                                      const SoftHashConfig& cfg) {
  cfg.validate();
  require_dims(q.size(), tables.dim(), "soft_bucket_probs_bruteforce");
  const int p = tables.hyperplanes();
  const Index r_count = Index{1} << p;
  const VectorXd projected = (tables.projections * q.template cast<Scalar>()).template cast<double>();
  MatrixXd squashed;
  detail::squash(tables, projected, squashed);
  MatrixXd probs(tables.tables(), r_count);
  VectorXd logits(r_count);
  for (int l = 0; l < tables.tables(); ++l) {
    for (Index r = 0; r < r_count; ++r) {
      double x = 0.0;
      for (int i = 0; i < p; ++i) x += squashed(l, i) * (((r >> i) & 1) ? 1.0 : -1.0);
      logits(r) = x / cfg.tau;
    }
    const double top = logits.maxCoeff();
    double denom = 0.0;
    for (Index r = 0; r < r_count; ++r) denom += std::exp(logits(r) - top);
    for (Index r = 0; r < r_count; ++r) probs(l, r) = std::exp(logits(r) - top) / denom;
  }
  return probs;
}

/// p(bucket | q) in table l via the O(P) product.
inline double bucket_probability(const SoftBucketDistribution& dist, int table, std::uint32_t bucket) {
  double p = 1.0;
  for (int i = 0; i < dist.hyperplanes; ++i) {
    const double x = 2.0 * dist.squashed(table, i) / dist.tau;
    p *= logistic(((bucket >> i) & 1U) ? x : -x);
  }
  return p;
}

/// argmax_r p(r | q) in table l. Ties resolve toward the larger id, so a zero
/// squashed coordinate maps to bit 1 exactly as hash_query does.
inline std::uint32_t dominant_bucket(const SoftBucketDistribution& dist, int table) {
  const auto row = dist.probs.row(table);
  Index best = 0;
  for (Index r = 1; r < row.size(); ++r) {
    if (row(r) >= row(best)) best = r;
  }
  return static_cast<std::uint32_t>(best);
}

/// Number of tables in which each key shares the query's bucket.
inline Eigen::VectorXi hard_score(const std::vector<BucketId>& query_buckets, const BucketAssignment& assignment) {
  require_dims(static_cast<Index>(query_buckets.size()), assignment.tables(), "hard_score table count");
  const Index n = assignment.size();
  Eigen::VectorXi scores(n);
#pragma omp parallel for schedule(static)
  for (Index j = 0; j < n; ++j) {
    int count = 0;
    for (int l = 0; l < assignment.tables(); ++l) count += assignment.ids(j, l) == query_buckets[static_cast<std::size_t>(l)];
    scores(j) = count;
  }
  return scores;
}

template <typename Scalar = float>
SoftScoreSet<Scalar> soft_score(const SoftBucketDistribution& dist, const BucketAssignment& assignment) {
  require_dims(assignment.tables(), dist.tables(), "soft_score table count");
  require_dims(assignment.hyperplanes, dist.hyperplanes, "soft_score hyperplanes");
  const auto f = detail::corner_factors<Scalar>(dist);
  const Index n = assignment.size();
  const int num_tables = assignment.tables();
  SoftScoreSet<Scalar> out{Vector<Scalar>(n), Vector<Scalar>(n), 0.0, VectorXd(n), num_tables};
#pragma omp parallel for schedule(static)
  for (Index j = 0; j < n; ++j) {
    Scalar sum(0);
    for (int l = 0; l < num_tables; ++l) sum += detail::corner_probability(f, l, assignment.ids(j, l));
    out.w_hat(j) = sum;
    out.w_tilde(j) = sum / static_cast<Scalar>(num_tables);
  }
  double z = 0.0;
  for (Index j = 0; j < n; ++j) z += static_cast<double>(out.w_tilde(j));
  assert(n == 0 || z > 0.0);
  out.z_tilde = z;
  for (Index j = 0; j < n; ++j) out.a_tilde(j) = static_cast<double>(out.w_tilde(j)) / z;
  return out;
}

/// Wraps integer collision counts in a score set so hard-LSH selection can go
/// through the same attention path. a_tilde is zero when no key collides.
template <typename Scalar>
SoftScoreSet<Scalar> score_set_from_counts(const Eigen::VectorXi& counts, int tables) {
  const Index n = counts.size();
  SoftScoreSet<Scalar> out{counts.cast<Scalar>(), counts.cast<Scalar>() / static_cast<Scalar>(tables), 0.0,
                           VectorXd::Zero(n), tables};
  for (Index j = 0; j < n; ++j) out.z_tilde += static_cast<double>(out.w_tilde(j));
  if (out.z_tilde > 0.0) {
    for (Index j = 0; j < n; ++j) out.a_tilde(j) = static_cast<double>(out.w_tilde(j)) / out.z_tilde;
  }
  return out;
}

/// ||v_j|| * w_hat_j for valid keys; masked keys are never selectable.
template <typename Scalar>
ValueScores<Scalar> masked_value_scores(const SoftScoreSet<Scalar>& scores, const KvCache<Scalar>& cache) {
  require_dims(scores.size(), cache.size(), "masked_value_scores");
  ValueScores<Scalar> out{Vector<Scalar>(scores.size()), cache.mask};
  for (Index j = 0; j < scores.size(); ++j) {
    out.score(j) = cache.valid(j) ? cache.value_norms(j) * scores.w_hat(j) : Scalar(0);
  }
  return out;
}

/// Unweighted variant used for pure key ranking: scores as given, mask applied.
template <typename Scalar, typename Derived>
ValueScores<Scalar> masked_scores(const Eigen::MatrixBase<Derived>& scores, const std::vector<std::uint8_t>& mask) {
  require_dims(static_cast<Index>(mask.size()), scores.size(), "masked_scores");
  return {scores.template cast<Scalar>(), mask};
}

}  // namespace softlsh
