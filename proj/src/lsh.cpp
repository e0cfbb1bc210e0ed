#include "softlsh/lsh.hpp"

namespace softlsh {

std::vector<Index> bucket_occupancy(const BucketAssignment& assignment, int table) {
  if (table < 0 || table >= assignment.tables()) throw ParameterError("table index out of range");
  std::vector<Index> counts(std::size_t{1} << assignment.hyperplanes, 0);
  for (Index j = 0; j < assignment.size(); ++j) ++counts[assignment.ids(j, table)];
  return counts;
}

Index max_bucket_occupancy(const BucketAssignment& assignment) {
  Index best = 0;
  for (int l = 0; l < assignment.tables(); ++l) {
    const auto counts = bucket_occupancy(assignment, l);
    best = std::max(best, *std::max_element(counts.begin(), counts.end()));
  }
  return best;
}

}  // namespace softlsh
