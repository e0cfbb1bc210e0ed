#pragma once

// Ranking-quality metrics for comparing a method's top-k against the exact
// dot-product ranking.

#include "softlsh/types.hpp"

#include <vector>

namespace softlsh {

/// NDCG of relevances listed in rank order; the ideal ordering is the same
/// list sorted descending. Returns 1 when the ideal DCG is zero.
double ndcg(const std::vector<double>& relevance_in_rank_order);

/// NDCG against an explicit ideal list (e.g. the grades of the true top-k).
/// Only the first relevance.size() ideal entries (after sorting) count.
double ndcg(const std::vector<double>& relevance_in_rank_order, std::vector<double> ideal);

/// |selected ∩ relevant| / k.
double precision(const IndexList& selected, const IndexList& relevant, Index k);

/// |a ∩ b| / |a ∪ b|; two empty sets give 1.
double jaccard(const IndexList& a, const IndexList& b);

/// Integer grades 0..levels-1 by rank quantile: the best of N scores gets
/// levels-1, grade = floor(levels * (N - 1 - rank) / N). Ties share the rank
/// of their smallest index.
std::vector<double> rank_grades(const VectorXd& scores, int levels = 16);

/// Exact top-k of `scores`, best first, ties to the smaller index.
IndexList exact_top_k(const VectorXd& scores, Index k);

struct RankingInstance {
  VectorXd ground_truth_scores;
  IndexList method_ranking;
  IndexList truth_top_k;

  void validate() const;
};

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<Index> counts;
};

struct SelectionHistogram {
  Histogram histogram;
  double cutoff = 0.0;             // k-th largest ground-truth score
  double mass_above_cutoff = 0.0;  // fraction of selected keys scoring >= cutoff
};

SelectionHistogram selection_histogram(const RankingInstance& instance, int bins = 50);

struct MetricReport {
  double ndcg = 0.0;
  double precision = 0.0;
  double jaccard = 0.0;
  SelectionHistogram selection;
};

/// All metrics for one instance. NDCG uses rank-quantile grades and the true
/// top-k grades as the ideal list.
MetricReport evaluate_ranking(const RankingInstance& instance, int bins = 50);

}  // namespace softlsh
