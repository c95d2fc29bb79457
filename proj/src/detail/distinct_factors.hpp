#pragma once

#include "kroninv/kron_operator.hpp"

#include <algorithm>
#include <vector>

namespace kroninv::detail {

// Per mode: the distinct factor pointers of an operator and, for every term,
// the slot of its factor. Shared factors (M in most Poisson terms) are then
// processed once.
struct DistinctFactors {
  std::vector<FactorPtr> f;
  std::vector<int> slot;
};

inline std::vector<DistinctFactors> distinct_by_mode(const KronSumOperator& op) {
  std::vector<DistinctFactors> out(op.order());
  for (int m = 0; m < op.order(); ++m) {
    for (const auto& t : op.terms()) {
      auto it = std::find(out[m].f.begin(), out[m].f.end(), t.factors[m]);
      out[m].slot.push_back(int(it - out[m].f.begin()));
      if (it == out[m].f.end()) out[m].f.push_back(t.factors[m]);
    }
  }
  return out;
}

}  // namespace kroninv::detail
