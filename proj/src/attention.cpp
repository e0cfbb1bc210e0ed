#include "softlsh/attention.hpp"

namespace softlsh::detail {

PopulationEstimate population_estimate_impl(const VectorXd& q, const MatrixXd& keys, const MatrixXd& values,
                                            const SoftHashConfig& cfg, int hyperplanes, long long mc_tables,
                                            std::uint64_t seed) {
  cfg.validate();
  if (mc_tables < 100) throw ParameterError("population_estimate needs at least 100 Monte-Carlo tables");
  const Index n = keys.rows();
  const Index d = keys.cols();
  const int p = hyperplanes;
  constexpr int kBatch = 64;

  VectorXd sum_s = VectorXd::Zero(n);
  VectorXd sum_s2 = VectorXd::Zero(n);
  VectorXd sum_num = VectorXd::Zero(values.cols());
  VectorXd sum_num2 = VectorXd::Zero(values.cols());
  VectorXd sum_num_z = VectorXd::Zero(values.cols());
  double sum_z = 0.0;
  double sum_z2 = 0.0;
  double sum_eps = 0.0;
  double sum_eps2 = 0.0;
  Index max_occupancy = 0;
  std::vector<Index> counts(std::size_t{1} << p);

  for (long long first = 0; first < mc_tables; first += kBatch) {
    const int batch = static_cast<int>(std::min<long long>(kBatch, mc_tables - first));
    const auto tables = build_tables<double>({p, batch, static_cast<int>(d), seed}, static_cast<std::uint64_t>(first));
    const MatrixXd key_proj = keys * tables.projections.transpose();  // N x (batch*P)
    const VectorXd q_proj = tables.projections * q;
    SoftBucketDistribution dist{cfg.tau, p, {}, {}};
    detail::squash(tables, q_proj, dist.squashed);
    const auto f = corner_factors<double>(dist);

    // Per-table soft score of every key; column t is table first + t.
    MatrixXd s(n, batch);
#pragma omp parallel for schedule(static)
    for (Index j = 0; j < n; ++j) {
      for (int t = 0; t < batch; ++t) {
        const BucketId b = encode_signs(key_proj.row(j).segment(Index{t} * p, p));
        s(j, t) = corner_probability(f, t, b);
      }
    }
    for (int t = 0; t < batch; ++t) {
      const BucketId bq = encode_signs(q_proj.segment(Index{t} * p, p));
      const double eps = 1.0 - corner_probability(f, t, bq);
      sum_eps += eps;
      sum_eps2 += eps * eps;

      std::fill(counts.begin(), counts.end(), 0);
      for (Index j = 0; j < n; ++j) ++counts[encode_signs(key_proj.row(j).segment(Index{t} * p, p))];
      max_occupancy = std::max(max_occupancy, *std::max_element(counts.begin(), counts.end()));

      double z = 0.0;
      for (Index j = 0; j < n; ++j) z += s(j, t);
      const VectorXd num = values.transpose() * s.col(t);
      sum_z += z;
      sum_z2 += z * z;
      sum_num += num;
      sum_num2 += num.cwiseProduct(num);
      sum_num_z += z * num;
    }
    sum_s += s.rowwise().sum();
    sum_s2 += s.cwiseProduct(s).rowwise().sum();
  }

  const double t = static_cast<double>(mc_tables);
  PopulationEstimate est;
  est.mc_tables = mc_tables;
  est.max_bucket_occupancy = max_occupancy;
  est.w_tau = sum_s / t;
  for (Index j = 0; j < n; ++j) est.z_tau += est.w_tau(j);
  est.a_tau = est.w_tau / est.z_tau;
  est.output = values.transpose() * est.a_tau;
  est.epsilon_tau = sum_eps / t;

  auto se = [t](double sum, double sum_sq) {
    const double mean = sum / t;
    return std::sqrt(std::max(0.0, (sum_sq / t - mean * mean) / (t - 1.0)));
  };
  auto& errs = est.standard_errors;
  errs.w_tau.resize(n);
  for (Index j = 0; j < n; ++j) errs.w_tau(j) = se(sum_s(j), sum_s2(j));
  errs.z_tau = se(sum_z, sum_z2);
  errs.epsilon_tau = se(sum_eps, sum_eps2);
  // Residual r_l = (n_l - y Z_l) / Zbar, expanded so only running sums are needed.
  const double z_bar = sum_z / t;
  errs.output.resize(values.cols());
  for (Index c = 0; c < values.cols(); ++c) {
    const double y = est.output(c);
    const double ss = sum_num2(c) - 2.0 * y * sum_num_z(c) + y * y * sum_z2;
    const double mean_r = (sum_num(c) - y * sum_z) / t;
    const double var = std::max(0.0, ss / t - mean_r * mean_r) / (z_bar * z_bar);
    errs.output(c) = std::sqrt(var / (t - 1.0));
  }
  return est;
}

}  // namespace softlsh::detail
