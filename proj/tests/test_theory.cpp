#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "softlsh/theory.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <numbers>

using namespace softlsh;

TEST_CASE("instances are deterministic and use streams 0, 1, 2") {
  const InstanceConfig cfg{20, 4, 4, 0.5, 8};
  const auto a = make_instance(cfg);
  const auto b = make_instance(cfg);
  CHECK(a.cache.keys == b.cache.keys);
  CHECK(a.query == b.query);
  Rng q(derive_seed(8, 2));
  for (Index c = 0; c < 4; ++c) CHECK(a.query(c) == q.normal());
  CHECK_THROWS_AS(make_instance({0, 4, 4, 0.5, 0}), ParameterError);
}

TEST_CASE("spectral norm agrees with the SVD") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto inst = make_instance({40, 12, 4, 0.5, seed});
    const MatrixXd& v = inst.cache.values;
    Eigen::JacobiSVD<MatrixXd> svd(v);
    CHECK(spectral_norm(v) == doctest::Approx(svd.singularValues()(0)).epsilon(1e-6));
  }
  MatrixXd rank_one = VectorXd::LinSpaced(5, 1, 5) * Eigen::RowVector3d(1, -2, 2);
  CHECK(spectral_norm(rank_one) == doctest::Approx(std::sqrt(55.0) * 3.0).epsilon(1e-9));
  CHECK(spectral_norm(MatrixXd::Zero(3, 3)) == 0.0);
}

TEST_CASE("log-log slope") {
  std::vector<double> x{8, 16, 32, 64};
  std::vector<double> y;
  for (double v : x) y.push_back(3.0 / std::sqrt(v));
  CHECK(loglog_slope(x, y) == doctest::Approx(-0.5).epsilon(1e-12));

  std::vector<std::vector<double>> reps;
  Rng rng(1);
  for (double v : x) {
    std::vector<double> r;
    for (int i = 0; i < 30; ++i) r.push_back(std::pow(v, -0.5) * (1.0 + 0.1 * rng.normal()));
    reps.push_back(r);
  }
  const auto fit = fit_loglog_slope(x, reps, 500, 2);
  CHECK(fit.ci_low <= fit.slope);
  CHECK(fit.slope <= fit.ci_high);
  CHECK(fit.ci_low <= -0.5);
  CHECK(fit.ci_high >= -0.5);
  const auto again = fit_loglog_slope(x, reps, 500, 2);
  CHECK(again.ci_low == fit.ci_low);
  CHECK_THROWS_AS(fit_loglog_slope({1}, {{1.0}}, 10, 0), ParameterError);
}

TEST_CASE("pearson") {
  VectorXd x = VectorXd::LinSpaced(10, 0, 9);
  const auto [r, se] = pearson(x, 2.0 * x.array() + 1.0);
  CHECK(r == doctest::Approx(1.0));
  CHECK(se == doctest::Approx(0.0).epsilon(1e-12));
  const auto [r2, se2] = pearson(x, -x);
  CHECK(r2 == doctest::Approx(-1.0));
  VectorXd y(4);
  y << 1, 3, 2, 4;
  const auto [r3, se3] = pearson(VectorXd::LinSpaced(4, 1, 4), y);
  CHECK(r3 == doctest::Approx(0.8));
  CHECK(se3 == doctest::Approx((1 - 0.64) / std::sqrt(3.0)));
}

TEST_CASE("correlation experiment matches its closed forms") {
  const auto e = correlation_experiment(4, 16, 40000, 5);
  CHECK(std::abs(e.gamma_hard - e.predicted_hard) <= 4.0 * e.se_hard);
  CHECK(std::abs(e.gamma_soft - e.predicted_soft) <= 4.0 * e.se_soft);
  CHECK(e.orthonormal);
  CHECK_THROWS_AS(correlation_experiment(8, 4, 100, 0), ParameterError);
  // The secondary configuration just runs.
  CHECK_FALSE(correlation_experiment(4, 16, 1000, 5, false).orthonormal);
}

TEST_CASE("bias bound row") {
  const InstanceConfig cfg{60, 8, 4, 0.5, 3};
  const auto inst = make_instance(cfg);
  const auto row = bias_bound(inst, 0.5, 4, 512, 7);
  CHECK(row.bias_error >= 0.0);
  CHECK(row.bound_holds == (row.bias_error <= row.bound));
  const double b = static_cast<double>(row.realized_b);
  CHECK(row.bound == doctest::Approx(2 * b * (1 / row.realized_z_tau + std::sqrt(b) / (row.realized_z * row.realized_z_tau)) *
                                     row.epsilon * row.v_spectral_norm));
  CHECK(row.bound_holds);
  const auto cold = bias_bound(inst, 1e-3, 4, 512, 7);
  CHECK(cold.epsilon < row.epsilon);
}

TEST_CASE("temperature sweep") {
  const InstanceConfig cfg{40, 8, 3, 0.5, 2};
  const auto report = sweep_temperature(cfg, {0.01, 0.5, 100.0}, 2048);
  REQUIRE(report.rows.size() == 3);
  CHECK(report.passed());
  CHECK(report.rows.back().epsilon == doctest::Approx(1.0 - 1.0 / 8.0).epsilon(1e-2));
  CHECK_THROWS_AS(sweep_temperature(cfg, {0.5}, 128), ParameterError);
  CHECK_THROWS_AS(sweep_temperature(cfg, {0.5, 1.0}, 128), ParameterError);
  CHECK_THROWS_AS(sweep_temperature(cfg, {1.0, 0.01}, 128), ParameterError);
  const std::string csv = tau_csv(report.rows);
  CHECK(csv.rfind("tau,epsilon_tau,", 0) == 0);
}

TEST_CASE("table sweep bookkeeping") {
  const InstanceConfig inst{64, 8, 4, 0.5, 4};
  LSweepConfig cfg;
  cfg.table_counts = {4, 8, 16, 32};
  cfg.replicas = 3;
  cfg.mc_tables = 256;
  cfg.bootstrap = 50;
  const auto report = sweep_tables(inst, cfg);
  CHECK(report.rows.size() == 12);
  CHECK(report.params == std::vector<double>{4, 8, 16, 32});
  CHECK(report.rows[4].value == 8);
  CHECK(report.rows[4].replica == 1);
  CHECK(report.checks.size() == 4);
  REQUIRE(report.required_tables.size() == 4);
  Index b = 0;
  for (int r = 0; r < 3; ++r) b = std::max(b, report.rows[static_cast<std::size_t>(3 + r)].realized_b);
  const double z = report.rows[4].realized_z_tau;
  CHECK(report.required_tables[1] == doctest::Approx(2.0 * double(b) * double(b) * std::log(80.0) / (z * z)));
  const auto again = sweep_tables(inst, cfg);
  for (std::size_t i = 0; i < report.rows.size(); ++i) CHECK(report.rows[i].error_l2 == again.rows[i].error_l2);
  const std::string csv = sweep_csv(report.rows, false);
  CHECK(csv.rfind("swept_param,value,replica,error_l2,target_kind,v_spectral_norm,realized_Z,realized_Z_tau,realized_B,seed\n", 0) == 0);
  cfg.table_counts = {8, 4, 16, 32};
  CHECK_THROWS_AS(sweep_tables(inst, cfg), ParameterError);
  cfg.table_counts = {4, 8, 16};
  CHECK_THROWS_AS(sweep_tables(inst, cfg), ParameterError);
}

TEST_CASE("sample sweep bookkeeping") {
  const InstanceConfig inst{64, 8, 4, 0.5, 4};
  MSweepConfig cfg;
  cfg.sample_counts = {8, 32, 128, 512, 4096};
  cfg.replicas = 10;
  cfg.bootstrap = 100;
  const auto report = sweep_samples(inst, cfg);
  CHECK(report.rows.size() == 50);
  CHECK(report.rows.front().target_kind == TargetKind::finite_table);
  CHECK(report.checks.size() == 3);  // slope, tail bound, large-M decay
  CHECK(report.fit.slope < 0.0);
}

TEST_CASE("triangle decomposition") {
  const InstanceConfig cfg{50, 8, 4, 0.5, 6};
  const auto r = triangle_report(make_instance(cfg), cfg, {20, 64, 512});
  CHECK(r.holds);
  CHECK(r.total <= r.sampling + r.finite_tables + r.bias + 1e-12);
}
