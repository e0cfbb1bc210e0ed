#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "softlsh/attention.hpp"

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

// softmax over an explicit index set, summed term by term.
VectorXd naive_attention(const MatrixXd& k, const MatrixXd& v, const VectorXd& q, const IndexList& idx) {
  double top = -INFINITY;
  for (Index j : idx) top = std::max(top, k.row(j).dot(q));
  double den = 0.0;
  VectorXd num = VectorXd::Zero(v.cols());
  for (Index j : idx) {
    const double e = std::exp(k.row(j).dot(q) - top);
    den += e;
    num += e * v.row(j).transpose();
  }
  return num / den;
}

ValueScores<double> plain(std::vector<double> s, std::vector<std::uint8_t> mask = {}) {
  if (mask.empty()) mask.assign(s.size(), 1);
  return {Eigen::Map<VectorXd>(s.data(), static_cast<Index>(s.size())), mask};
}

}  // namespace

TEST_CASE("dense attention matches the textbook softmax") {
  const MatrixXd k = gaussian(50, 6, 1);
  const MatrixXd v = gaussian(50, 6, 2);
  const VectorXd q = gaussian(6, 1, 3);
  const auto cache = KvCache<double>::from(k, v);
  IndexList all(50);
  for (Index j = 0; j < 50; ++j) all[static_cast<std::size_t>(j)] = j;
  CHECK((dense_attention(q, cache).output - naive_attention(k, v, q, all)).norm() <= 1e-13);
  const auto scaled = dense_attention(q, cache, true);
  CHECK((scaled.output - naive_attention(k / std::sqrt(6.0), v, q, all)).norm() <= 1e-13);
  CHECK(scaled.weights.sum() == doctest::Approx(1.0));
}

TEST_CASE("dense attention ignores masked keys") {
  const MatrixXd k = gaussian(10, 4, 1);
  const MatrixXd v = gaussian(10, 4, 2);
  const VectorXd q = gaussian(4, 1, 3);
  std::vector<std::uint8_t> mask{1, 0, 1, 1, 0, 1, 1, 1, 1, 0};
  IndexList valid;
  for (Index j = 0; j < 10; ++j)
    if (mask[static_cast<std::size_t>(j)]) valid.push_back(j);
  const auto r = dense_attention(q, KvCache<double>::from(k, v, mask));
  CHECK((r.output - naive_attention(k, v, q, valid)).norm() <= 1e-13);
  CHECK(r.weights(1) == 0.0);
  CHECK_THROWS_AS(dense_attention(q, KvCache<double>::from(k, v, std::vector<std::uint8_t>(10, 0))), SelectionError);
}

TEST_CASE("top-k breaks ties toward the smaller index") {
  const auto s = plain({1, 3, 3, 2, 3});
  CHECK(top_k(s, 2) == IndexList{1, 2});
  CHECK(top_k(s, 4) == IndexList{1, 2, 4, 3});
}

TEST_CASE("selection errors") {
  const auto s = plain({1, 2, 3, 4});
  CHECK_THROWS_AS(select_indices(s, {0}), SelectionError);
  CHECK_THROWS_AS(select_indices(s, {5}), SelectionError);
  CHECK_THROWS_AS(select_indices(plain({1, 2}, {0, 0}), {1}), SelectionError);
  CHECK_THROWS_AS(select_indices(plain({1, 2, 3}, {1, 0, 1}), {3}), SelectionError);
  SelectionConfig too_many{2};
  too_many.sink_tokens = 2;
  too_many.local_window = 1;
  CHECK_THROWS_AS(select_indices(s, too_many), ParameterError);
}

TEST_CASE("sink and window tokens are always kept") {
  const auto s = plain({0, 9, 8, 0, 7, 0, 0, 0});
  SelectionConfig sel{4};
  sel.sink_tokens = 1;
  sel.local_window = 1;
  CHECK(select_indices(s, sel) == IndexList{0, 1, 2, 7});
  // Masked positions are never forced.
  const auto masked = plain({0, 9, 8, 0, 7, 0, 0, 0}, {0, 1, 1, 1, 1, 1, 1, 1});
  CHECK(select_indices(masked, sel) == IndexList{1, 2, 4, 7});
}

TEST_CASE("full budget in exact mode equals dense attention") {
  const Index n = 257;
  const auto cache = KvCache<float>::from(gaussian(n, 16, 1).cast<float>(), gaussian(n, 16, 2).cast<float>());
  const auto tables = build_tables<float>({8, 10, 16, 3});
  const VectorXf q = gaussian(16, 1, 4).cast<float>();
  const auto scores = soft_score<float>(soft_bucket_probs(tables, q, {0.5}), hash_keys(tables, cache));
  SelectionConfig sel{n};
  const auto sparse = sparse_attention(q, cache, scores, sel);
  const auto dense = dense_attention(q, cache);
  CHECK(sparse.selected.size() == static_cast<std::size_t>(n));
  CHECK((sparse.output - dense.output).norm() / dense.output.norm() <= 1e-12);
}

TEST_CASE("sparse attention weights the selected set") {
  const Index n = 100;
  const MatrixXd k = gaussian(n, 8, 1);
  const MatrixXd v = gaussian(n, 8, 2);
  const auto cache = KvCache<double>::from(k, v);
  const auto tables = build_tables<double>({6, 20, 8, 3});
  const VectorXd q = gaussian(8, 1, 4);
  const auto scores = soft_score<double>(soft_bucket_probs(tables, q, {0.5}), hash_keys(tables, cache));
  SelectionConfig sel{10};
  const auto exact = sparse_attention(q, cache, scores, sel);
  const IndexList expect = [&] {
    IndexList t = top_k(masked_value_scores(scores, cache), 10);
    std::sort(t.begin(), t.end());
    return t;
  }();
  CHECK(exact.selected == expect);
  CHECK((exact.output - naive_attention(k, v, q, expect)).norm() <= 1e-13);

  sel.logit_mode = LogitMode::soft_count;
  const auto soft = sparse_attention(q, cache, scores, sel);
  CHECK(soft.selected == expect);
  double den = 0.0;
  VectorXd num = VectorXd::Zero(8);
  for (Index j : expect) {
    den += std::exp(scores.w_hat(j));
    num += std::exp(scores.w_hat(j)) * v.row(j).transpose();
  }
  CHECK((soft.output - num / den).norm() <= 1e-12);
}

TEST_CASE("logit mode names") {
  CHECK(parse_logit_mode("exact") == LogitMode::exact);
  CHECK(parse_logit_mode("soft-count") == LogitMode::soft_count);
  CHECK(std::string(to_string(LogitMode::soft_count)) == "soft-count");
  CHECK_THROWS_AS(parse_logit_mode("soft"), ParameterError);
}

TEST_CASE("angular kernel") {
  CHECK(angular_kernel_weight(1.0, 8) == 1.0);
  CHECK(angular_kernel_weight(-1.0, 3) == 0.0);
  CHECK(angular_kernel_weight(0.0, 1) == doctest::Approx(0.5));
  for (double c : {-0.7, 0.1, 0.9}) {
    const double w1 = angular_kernel_weight(c, 1);
    CHECK(w1 == doctest::Approx(1.0 - std::acos(c) / std::numbers::pi));
    CHECK(angular_kernel_weight(c, 5) == doctest::Approx(std::pow(w1, 5)).epsilon(1e-15));
  }
  CHECK(angular_kernel_weight(1.0 + 1e-15, 2) == 1.0);
}

TEST_CASE("angular attention") {
  const MatrixXd k = gaussian(30, 5, 1);
  const MatrixXd v = gaussian(30, 5, 2);
  const VectorXd q = gaussian(5, 1, 3);
  const auto t = angular_attention(q, KvCache<double>::from(k, v), 4);
  VectorXd expect = VectorXd::Zero(5);
  double z = 0.0;
  for (Index j = 0; j < 30; ++j) {
    const double w = std::pow(1.0 - std::acos(k.row(j).dot(q) / (k.row(j).norm() * q.norm())) / std::numbers::pi, 4);
    z += w;
    expect += w * v.row(j).transpose();
  }
  CHECK(t.normalizer == doctest::Approx(z));
  CHECK((t.output - expect / z).norm() <= 1e-13);
  CHECK_THROWS_AS(angular_attention(VectorXd::Zero(5), KvCache<double>::from(k, v), 4), DomainError);
  MatrixXd k0 = k;
  k0.row(3).setZero();
  CHECK_THROWS_AS(angular_attention(q, KvCache<double>::from(k0, v), 4), DomainError);
}

TEST_CASE("population estimate averages single-table quantities") {
  const Index n = 40;
  const auto cache = KvCache<double>::from(gaussian(n, 6, 1), gaussian(n, 6, 2));
  const VectorXd q = gaussian(6, 1, 3);
  const SoftHashConfig cfg{0.5};
  const long long t = 150;  // spans three 64-table batches
  const auto pop = population_estimate(q, cache, cfg, 4, t, 17);

  // Oracle: the same tables scored in one go.
  const auto tables = build_tables<double>({4, static_cast<int>(t), 6, 17});
  const auto dist = soft_bucket_probs(tables, q, cfg);
  const auto assignment = hash_keys(tables, cache);
  const auto s = soft_score<double>(dist, assignment);
  CHECK((pop.w_tau - s.w_tilde).cwiseAbs().maxCoeff() <= 1e-13);
  CHECK(pop.z_tau == doctest::Approx(s.z_tilde).epsilon(1e-13));
  const auto hard = hash_query(tables, q);
  double eps = 0.0;
  for (int l = 0; l < t; ++l) eps += 1.0 - dist.probs(l, hard[static_cast<std::size_t>(l)]);
  CHECK(pop.epsilon_tau == doctest::Approx(eps / t).epsilon(1e-12));
  CHECK(pop.max_bucket_occupancy == max_bucket_occupancy(assignment));
  CHECK((pop.output - cache.values.transpose() * (pop.w_tau / pop.z_tau)).norm() <= 1e-12);
  CHECK(pop.standard_errors.output.size() == 6);
  CHECK(pop.standard_errors.z_tau > 0.0);
  CHECK_THROWS_AS(population_estimate(q, cache, cfg, 4, 99, 17), ParameterError);
}

TEST_CASE("finite-table output and sampler") {
  const Index n = 60;
  const auto cache = KvCache<double>::from(gaussian(n, 5, 1), gaussian(n, 5, 2));
  const auto tables = build_tables<double>({4, 8, 5, 3});
  const VectorXd q = gaussian(5, 1, 4);
  const auto scores = soft_score<double>(soft_bucket_probs(tables, q, {0.5}), hash_keys(tables, cache));
  const VectorXd y = finite_table_output(scores, cache);
  CHECK((y - cache.values.transpose() * scores.a_tilde).norm() <= 1e-13);

  const auto sampler = make_sampler(scores, cache, 16, 5);
  for (Index j = 0; j < n; ++j) {
    CHECK(sampler.sampling_probs(j) ==
          doctest::Approx(scores.a_tilde(j) * cache.value_norms(j) / (scores.a_tilde.array() * cache.value_norms.array()).sum()));
  }
  CHECK(sample_estimator(scores, cache, sampler) == sample_estimator(scores, cache, sampler));

  // Unbiased: mean over many independent draws lands near y_{tau,L}.
  const int reps = 4000;
  VectorXd sum = VectorXd::Zero(5), sum_sq = VectorXd::Zero(5);
  for (int r = 0; r < reps; ++r) {
    const VectorXd t = sample_estimator(scores, cache, make_sampler(scores, cache, 16, derive_seed(9, r)));
    sum += t;
    sum_sq += t.cwiseProduct(t);
  }
  const VectorXd mean = sum / reps;
  const VectorXd se = ((sum_sq / reps - mean.cwiseProduct(mean)) / (reps - 1)).cwiseSqrt();
  for (Index c = 0; c < 5; ++c) CHECK(std::abs(mean(c) - y(c)) <= 4.0 * se(c));

  CHECK_THROWS_AS(make_sampler(scores, cache, 0, 1), ParameterError);
  const auto zero_v = KvCache<double>::from(cache.keys, MatrixXd::Zero(n, 5));
  CHECK_THROWS_AS(make_sampler(scores, zero_v, 4, 1), DomainError);
}

TEST_CASE("importance weights reproduce the target when every draw is proportional") {
  // One-hot a~ with unit value: every draw returns v exactly.
  MatrixXd v(3, 2);
  v << 1, 0, 0, 2, 3, 4;
  const auto cache = KvCache<double>::from(MatrixXd::Ones(3, 2), v);
  SoftScoreSet<double> s{VectorXd::Zero(3), VectorXd::Zero(3), 1.0, VectorXd::Zero(3), 1};
  s.a_tilde(1) = 1.0;
  const VectorXd t = sample_estimator(s, cache, make_sampler(s, cache, 10, 0));
  CHECK((t - v.row(1).transpose()).norm() <= 1e-15);
}
