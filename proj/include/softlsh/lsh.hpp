#pragma once

// Signed-random-projection hash tables over a key/value cache.

#include "softlsh/rng.hpp"
#include "softlsh/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace softlsh {

inline constexpr int kMaxHyperplanes = 16;

struct LshParams {
  int hyperplanes = 8;  // P
  int tables = 60;      // L
  int dim = 0;          // d
  std::uint64_t seed = 0;

  std::uint32_t buckets() const { return std::uint32_t{1} << hyperplanes; }  // R = 2^P

  void validate() const {
    if (hyperplanes < 1 || hyperplanes > kMaxHyperplanes) {
      throw ParameterError("hyperplanes per table must be in [1, 16], got " + std::to_string(hyperplanes));
    }
    if (tables < 1) throw ParameterError("table count must be positive, got " + std::to_string(tables));
    if (dim < 1) throw ParameterError("dimension must be positive, got " + std::to_string(dim));
  }
};

using BucketId = std::uint16_t;
using BucketMatrix = Eigen::Matrix<BucketId, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// L Gaussian projection matrices of shape P x d, stacked into one (L*P) x d
/// matrix so that hashing N keys is a single GEMM. Rows [l*P, (l+1)*P) belong
/// to table l.
template <typename Scalar>
struct HashTableSet {
  LshParams params;
  Matrix<Scalar> projections;

  int hyperplanes() const { return params.hyperplanes; }
  int tables() const { return params.tables; }
  int dim() const { return params.dim; }

  auto table(int l) const { return projections.middleRows(Index{l} * params.hyperplanes, params.hyperplanes); }
};

/// Bucket id of every key in every table, N x L.
struct BucketAssignment {
  int hyperplanes = 0;
  BucketMatrix ids;

  Index size() const { return ids.rows(); }
  int tables() const { return static_cast<int>(ids.cols()); }
};

template <typename Scalar>
struct KvCache {
  Matrix<Scalar> keys;    // N x d
  Matrix<Scalar> values;  // N x d
  Vector<Scalar> value_norms;
  std::vector<std::uint8_t> mask;  // 1 = valid

  Index size() const { return keys.rows(); }
  Index dim() const { return keys.cols(); }
  bool valid(Index j) const { return mask[static_cast<std::size_t>(j)] != 0; }
  Index valid_count() const { return static_cast<Index>(std::count(mask.begin(), mask.end(), std::uint8_t{1})); }

  static KvCache from(Matrix<Scalar> keys, Matrix<Scalar> values, std::vector<std::uint8_t> mask = {}) {
    if (keys.rows() != values.rows()) {
      throw DimensionError("keys and values must have the same number of rows (" + std::to_string(keys.rows()) +
                           " vs " + std::to_string(values.rows()) + ")");
    }
    if (mask.empty()) mask.assign(static_cast<std::size_t>(keys.rows()), 1);
    require_dims(static_cast<Index>(mask.size()), keys.rows(), "mask length");
    KvCache cache{std::move(keys), std::move(values), {}, std::move(mask)};
    cache.value_norms = cache.values.template cast<double>().rowwise().norm().template cast<Scalar>();
    return cache;
  }
};

namespace detail {

// bit i = 1 iff projection row i >= 0, LSB first; sign(0) counts as +.
template <typename Derived>
BucketId encode_signs(const Eigen::DenseBase<Derived>& projected) {
  BucketId id = 0;
  for (Index i = 0; i < projected.size(); ++i) {
    if (projected(i) >= 0) id = static_cast<BucketId>(id | (BucketId{1} << i));
  }
  return id;
}

}  // namespace detail

/// Samples tables first_table .. first_table + L - 1. Table l draws its P*d
/// entries row-major from Rng(derive_seed(seed, l)).normal().
template <typename Scalar = double>
HashTableSet<Scalar> build_tables(const LshParams& params, std::uint64_t first_table = 0) {
  params.validate();
  HashTableSet<Scalar> set{params, Matrix<Scalar>(Index{params.tables} * params.hyperplanes, params.dim)};
#pragma omp parallel for schedule(static)
  for (int l = 0; l < params.tables; ++l) {
    Rng rng(derive_seed(params.seed, first_table + static_cast<std::uint64_t>(l)));
    auto block = set.projections.middleRows(Index{l} * params.hyperplanes, params.hyperplanes);
    for (Index i = 0; i < block.rows(); ++i) {
      for (Index c = 0; c < block.cols(); ++c) block(i, c) = static_cast<Scalar>(rng.normal());
    }
  }
  return set;
}

template <typename Scalar, typename Derived>
BucketAssignment hash_rows(const HashTableSet<Scalar>& tables, const Eigen::MatrixBase<Derived>& rows) {
  require_dims(rows.cols(), tables.dim(), "hash_keys");
  const int p = tables.hyperplanes();
  const int num_tables = tables.tables();
  BucketAssignment out{p, BucketMatrix(rows.rows(), num_tables)};
  constexpr Index kChunk = 4096;
  const Index n = rows.rows();
#pragma omp parallel for schedule(static)
  for (Index start = 0; start < n; start += kChunk) {
    const Index len = std::min(kChunk, n - start);
    const Matrix<Scalar> projected = rows.middleRows(start, len) * tables.projections.transpose();
    for (Index j = 0; j < len; ++j) {
      for (int l = 0; l < num_tables; ++l) {
        out.ids(start + j, l) = detail::encode_signs(projected.row(j).segment(Index{l} * p, p));
      }
    }
  }
  return out;
}

template <typename Scalar>
BucketAssignment hash_keys(const HashTableSet<Scalar>& tables, const KvCache<Scalar>& cache) {
  require_dims(cache.dim(), tables.dim(), "hash_keys");
  return hash_rows(tables, cache.keys);
}

/// Hard bucket of q in each table.
template <typename Scalar, typename Derived>
std::vector<BucketId> hash_query(const HashTableSet<Scalar>& tables, const Eigen::MatrixBase<Derived>& q) {
  require_dims(q.size(), tables.dim(), "hash_query");
  const Vector<Scalar> projected = tables.projections * q.template cast<Scalar>();
  std::vector<BucketId> ids(static_cast<std::size_t>(tables.tables()));
  const int p = tables.hyperplanes();
  for (int l = 0; l < tables.tables(); ++l) ids[static_cast<std::size_t>(l)] = detail::encode_signs(projected.segment(Index{l} * p, p));
  return ids;
}

/// Number of keys in each bucket of table l.
std::vector<Index> bucket_occupancy(const BucketAssignment& assignment, int table);
/// Largest bucket occupancy over all tables (the realized occupancy bound B).
Index max_bucket_occupancy(const BucketAssignment& assignment);

struct CollisionEstimate {
  double probability = 0.0;
  double standard_error = 0.0;
};

/// Monte-Carlo collision frequency of (q, k) over `trials` fresh single
/// tables of P hyperplanes. Trial t draws its rows from
/// Rng(derive_seed(seed, t)); a trial stops drawing at the first hyperplane
/// that separates q and k, which leaves the collision event unchanged.
template <typename DerivedQ, typename DerivedK>
CollisionEstimate collision_probability_mc(const Eigen::MatrixBase<DerivedQ>& q, const Eigen::MatrixBase<DerivedK>& k,
                                           int hyperplanes, long long trials, std::uint64_t seed) {
  require_dims(k.size(), q.size(), "collision_probability_mc");
  if (trials < 1) throw ParameterError("trials must be >= 1");
  if (hyperplanes < 1) throw ParameterError("hyperplanes must be >= 1");
  const VectorXd qd = q.template cast<double>();
  const VectorXd kd = k.template cast<double>();
  const Index d = qd.size();
  long long hits = 0;
#pragma omp parallel for schedule(static) reduction(+ : hits)
  for (long long t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
    bool collide = true;
    for (int i = 0; i < hyperplanes && collide; ++i) {
      double dq = 0.0;
      double dk = 0.0;
      for (Index c = 0; c < d; ++c) {
        const double w = rng.normal();
        dq += w * qd(c);
        dk += w * kd(c);
      }
      collide = (dq >= 0) == (dk >= 0);
    }
    hits += collide ? 1 : 0;
  }
  const double p = static_cast<double>(hits) / static_cast<double>(trials);
  return {p, std::sqrt(p * (1.0 - p) / static_cast<double>(trials))};
}

}  // namespace softlsh
