#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "softlsh/lsh.hpp"

#include <cmath>
#include <numbers>

using namespace softlsh;

namespace {

MatrixXd gaussian(Index rows, Index cols, std::uint64_t seed) {
  Rng rng(seed);
  MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index c = 0; c < cols; ++c) m(i, c) = rng.normal();
  return m;
}

// Naive bucket id: one dot product per hyperplane.
BucketId naive_bucket(const HashTableSet<double>& t, int l, const VectorXd& x) {
  BucketId id = 0;
  for (int i = 0; i < t.hyperplanes(); ++i) {
    double dot = 0.0;
    for (Index c = 0; c < x.size(); ++c) dot += t.projections(Index{l} * t.hyperplanes() + i, c) * x(c);
    if (dot >= 0.0) id |= static_cast<BucketId>(1u << i);
  }
  return id;
}

}  // namespace

TEST_CASE("parameter validation") {
  CHECK_THROWS_AS(LshParams({0, 4, 8, 0}).validate(), ParameterError);
  CHECK_THROWS_AS(LshParams({17, 4, 8, 0}).validate(), ParameterError);
  CHECK_THROWS_AS(LshParams({4, 0, 8, 0}).validate(), ParameterError);
  CHECK_THROWS_AS(LshParams({4, 4, 0, 0}).validate(), ParameterError);
  CHECK_NOTHROW(LshParams({16, 1, 1, 0}).validate());
  CHECK(LshParams({8, 1, 1, 0}).buckets() == 256);
}

TEST_CASE("sign encoding is LSB first with sign(0) = +") {
  Eigen::Vector3d v(1.0, -1.0, 0.0);
  CHECK(detail::encode_signs(v) == 0b101);
  Eigen::Vector4d all_neg(-1, -2, -3, -4);
  CHECK(detail::encode_signs(all_neg) == 0);
}

TEST_CASE("tables draw from per-table streams") {
  const LshParams params{3, 5, 4, 77};
  const auto tables = build_tables<double>(params);
  REQUIRE(tables.projections.rows() == 15);
  for (int l = 0; l < 5; ++l) {
    Rng rng(derive_seed(77, static_cast<std::uint64_t>(l)));
    for (Index i = 0; i < 3; ++i)
      for (Index c = 0; c < 4; ++c) CHECK(tables.table(l)(i, c) == rng.normal());
  }
  // Table 3 does not depend on how many tables were built or where the set starts.
  const auto single = build_tables<double>({3, 1, 4, 77}, 3);
  CHECK(single.projections == tables.table(3));
  const auto more = build_tables<double>({3, 9, 4, 77});
  CHECK(more.projections.topRows(15) == tables.projections);
}

TEST_CASE("hashing matches per-hyperplane dot products, across chunk boundaries") {
  const Index n = 5000;  // > one 4096-row chunk
  const LshParams params{6, 7, 12, 5};
  const auto tables = build_tables<double>(params);
  const auto cache = KvCache<double>::from(gaussian(n, 12, 1), gaussian(n, 12, 2));
  const auto a = hash_keys(tables, cache);
  REQUIRE(a.size() == n);
  REQUIRE(a.tables() == 7);
  for (Index j = 0; j < n; j += 37) {
    for (int l = 0; l < 7; ++l) REQUIRE(a.ids(j, l) == naive_bucket(tables, l, cache.keys.row(j).transpose()));
  }
  const VectorXd q = cache.keys.row(4500).transpose();
  const auto qb = hash_query(tables, q);
  for (int l = 0; l < 7; ++l) CHECK(qb[static_cast<std::size_t>(l)] == a.ids(4500, l));
}

TEST_CASE("float tables hash like their own projections") {
  const auto tables = build_tables<float>({8, 4, 16, 9});
  const MatrixXf keys = gaussian(50, 16, 3).cast<float>();
  const auto a = hash_rows(tables, keys);
  for (Index j = 0; j < 50; ++j) {
    const VectorXf p = tables.projections * keys.row(j).transpose();
    for (int l = 0; l < 4; ++l) CHECK(a.ids(j, l) == detail::encode_signs(p.segment(l * 8, 8)));
  }
}

TEST_CASE("dimension mismatches are rejected") {
  const auto tables = build_tables<double>({4, 2, 8, 0});
  CHECK_THROWS_AS(hash_query(tables, VectorXd::Ones(7)), DimensionError);
  CHECK_THROWS_AS(hash_rows(tables, MatrixXd::Ones(3, 9)), DimensionError);
  CHECK_THROWS_AS(KvCache<double>::from(MatrixXd::Ones(3, 2), MatrixXd::Ones(4, 2)), DimensionError);
  CHECK_THROWS_AS(KvCache<double>::from(MatrixXd::Ones(3, 2), MatrixXd::Ones(3, 2), {1, 1}), DimensionError);
}

TEST_CASE("cache value norms and mask") {
  MatrixXd v(2, 2);
  v << 3, 4, 0, 0;
  const auto cache = KvCache<double>::from(MatrixXd::Ones(2, 2), v, {1, 0});
  CHECK(cache.value_norms(0) == 5.0);
  CHECK(cache.value_norms(1) == 0.0);
  CHECK(cache.valid(0));
  CHECK_FALSE(cache.valid(1));
  CHECK(cache.valid_count() == 1);
}

TEST_CASE("bucket occupancy") {
  BucketAssignment a{2, BucketMatrix(5, 2)};
  a.ids << 0, 1, 0, 1, 3, 1, 0, 2, 2, 1;
  const auto occ0 = bucket_occupancy(a, 0);
  REQUIRE(occ0.size() == 4);
  CHECK(occ0[0] == 3);
  CHECK(occ0[2] == 1);
  CHECK(occ0[3] == 1);
  CHECK(max_bucket_occupancy(a) == 4);  // table 1: four keys in bucket 1
}

TEST_CASE("Monte-Carlo collision frequency matches (1 - theta/pi)^P") {
  const VectorXd q = gaussian(8, 1, 10);
  const VectorXd k = q + 0.8 * gaussian(8, 1, 11);
  const double theta = std::acos(q.dot(k) / (q.norm() * k.norm()));
  for (int p : {1, 3}) {
    const auto est = collision_probability_mc(q, k, p, 40000, 99);
    const double expected = std::pow(1.0 - theta / std::numbers::pi, p);
    CHECK(std::abs(est.probability - expected) <= 4.0 * std::sqrt(expected * (1 - expected) / 40000));
  }
  CHECK(collision_probability_mc(q, q, 8, 100, 1).probability == 1.0);
  CHECK(collision_probability_mc(q, VectorXd(-q), 1, 100, 1).probability == 0.0);
  CHECK_THROWS_AS(collision_probability_mc(q, k, 1, 0, 1), ParameterError);
}
