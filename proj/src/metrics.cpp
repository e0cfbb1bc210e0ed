#include "softlsh/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace softlsh {

namespace {

double dcg(const std::vector<double>& rel, std::size_t count) {
  double sum = 0.0;
  for (std::size_t i = 0; i < count; ++i) sum += (std::exp2(rel[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
  return sum;
}

std::vector<Index> sorted_unique(IndexList v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

Index intersection_size(const IndexList& a, const IndexList& b) {
  const auto sa = sorted_unique(a);
  const auto sb = sorted_unique(b);
  IndexList common;
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(common));
  return static_cast<Index>(common.size());
}

}  // namespace

double ndcg(const std::vector<double>& relevance_in_rank_order) {
  return ndcg(relevance_in_rank_order, relevance_in_rank_order);
}

double ndcg(const std::vector<double>& relevance_in_rank_order, std::vector<double> ideal) {
  if (relevance_in_rank_order.empty()) throw ParameterError("ndcg: empty ranking");
  for (double r : relevance_in_rank_order) {
    if (!std::isfinite(r)) throw ParameterError("ndcg: relevances must be finite");
  }
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double idcg = dcg(ideal, std::min(ideal.size(), relevance_in_rank_order.size()));
  if (idcg <= 0.0) return 1.0;
  return dcg(relevance_in_rank_order, relevance_in_rank_order.size()) / idcg;
}

double precision(const IndexList& selected, const IndexList& relevant, Index k) {
  if (k <= 0) throw ParameterError("precision: k must be positive");
  return static_cast<double>(intersection_size(selected, relevant)) / static_cast<double>(k);
}

double jaccard(const IndexList& a, const IndexList& b) {
  const auto sa = sorted_unique(a);
  const auto sb = sorted_unique(b);
  if (sa.empty() && sb.empty()) return 1.0;
  const auto common = intersection_size(sa, sb);
  const auto uni = static_cast<Index>(sa.size() + sb.size()) - common;
  return static_cast<double>(common) / static_cast<double>(uni);
}

IndexList exact_top_k(const VectorXd& scores, Index k) {
  IndexList idx(static_cast<std::size_t>(scores.size()));
  std::iota(idx.begin(), idx.end(), Index{0});
  k = std::clamp<Index>(k, 0, scores.size());
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](Index a, Index b) {
    if (scores(a) != scores(b)) return scores(a) > scores(b);
    return a < b;
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

std::vector<double> rank_grades(const VectorXd& scores, int levels) {
  if (levels < 2) throw ParameterError("rank_grades: need at least two levels");
  const Index n = scores.size();
  const IndexList order = exact_top_k(scores, n);
  std::vector<double> grades(static_cast<std::size_t>(n));
  Index rank = 0;
  for (Index pos = 0; pos < n; ++pos) {
    if (pos > 0 && scores(order[pos]) != scores(order[pos - 1])) rank = pos;
    grades[static_cast<std::size_t>(order[pos])] = std::floor(static_cast<double>(levels) * static_cast<double>(n - 1 - rank) /
                                                                static_cast<double>(n));
  }
  return grades;
}

void RankingInstance::validate() const {
  const Index n = ground_truth_scores.size();
  for (const auto* list : {&method_ranking, &truth_top_k}) {
    for (Index j : *list) {
      if (j < 0 || j >= n) throw ParameterError("ranking index " + std::to_string(j) + " out of range");
    }
  }
  if (sorted_unique(method_ranking).size() != method_ranking.size()) {
    throw ParameterError("method ranking contains duplicates");
  }
}

SelectionHistogram selection_histogram(const RankingInstance& instance, int bins) {
  instance.validate();
  if (bins < 2) throw ParameterError("selection_histogram: bins must be >= 2");
  if (instance.method_ranking.empty()) throw SelectionError("selection_histogram: empty selection");
  const auto k = static_cast<Index>(instance.method_ranking.size());
  const auto& truth = instance.ground_truth_scores;

  SelectionHistogram out;
  const IndexList top = exact_top_k(truth, k);
  out.cutoff = truth(top.back());

  double lo = truth(instance.method_ranking.front());
  double hi = lo;
  Index above = 0;
  for (Index j : instance.method_ranking) {
    lo = std::min(lo, truth(j));
    hi = std::max(hi, truth(j));
    above += truth(j) >= out.cutoff ? 1 : 0;
  }
  out.mass_above_cutoff = static_cast<double>(above) / static_cast<double>(k);

  auto& h = out.histogram;
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int b = 0; b <= bins; ++b) h.edges[static_cast<std::size_t>(b)] = lo + (hi - lo) * b / bins;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  const double width = (hi - lo) / bins;
  for (Index j : instance.method_ranking) {
    int b = width > 0.0 ? static_cast<int>((truth(j) - lo) / width) : 0;
    b = std::clamp(b, 0, bins - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return out;
}

MetricReport evaluate_ranking(const RankingInstance& instance, int bins) {
  instance.validate();
  const auto k = static_cast<Index>(instance.method_ranking.size());
  if (k == 0) throw SelectionError("evaluate_ranking: empty selection");
  const auto grades = rank_grades(instance.ground_truth_scores);
  std::vector<double> rel;
  std::vector<double> ideal;
  for (Index j : instance.method_ranking) rel.push_back(grades[static_cast<std::size_t>(j)]);
  for (Index j : instance.truth_top_k) ideal.push_back(grades[static_cast<std::size_t>(j)]);
  MetricReport r;
  r.ndcg = ndcg(rel, ideal);
  r.precision = precision(instance.method_ranking, instance.truth_top_k, k);
  r.jaccard = jaccard(instance.method_ranking, instance.truth_top_k);
  r.selection = selection_histogram(instance, bins);
  return r;
}

}  // namespace softlsh
