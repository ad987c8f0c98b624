#include "grokkit/rng.hpp"

#include <numeric>
#include <unordered_set>

#include "grokkit/common.hpp"

namespace grokkit {

std::vector<std::uint64_t> Rng::sample_without_replacement(std::uint64_t n, std::uint64_t k) {
  if (k > n) throw DataError("sample_without_replacement: k exceeds population size");
  std::vector<std::uint64_t> out;
  out.reserve(k);
  if (k * 3 >= n) {
    // Dense draw: shuffle the whole index range.
    std::vector<std::uint64_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    shuffle(idx);
    idx.resize(k);
    return idx;
  }
  // Sparse draw: Floyd's algorithm, then a shuffle so the returned order is
  // itself uniform (callers split prefixes into disjoint subsets).
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(k * 2);
  for (std::uint64_t j = n - k; j < n; ++j) {
    std::uint64_t t = below(j + 1);
    if (seen.count(t)) t = j;
    seen.insert(t);
    out.push_back(t);
  }
  shuffle(out);
  return out;
}

}  // namespace grokkit
