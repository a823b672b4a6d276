#pragma once

#include <cstddef>
#include <vector>

#include "acpolicy/comfort.hpp"

namespace acpolicy::detail {

// Calls f(const int* type_indices) for each of the 9^n joint type
// profiles, first occupant varying fastest.
template <class F>
void for_each_profile(std::size_t n, F&& f) {
  std::vector<int> idx(n, 0);
  while (true) {
    f(static_cast<const int*>(idx.data()));
    std::size_t k = 0;
    while (k < n && ++idx[k] == kTypeCount) {
      idx[k] = 0;
      ++k;
    }
    if (k == n) break;
  }
}

inline std::size_t profile_count(std::size_t n) {
  std::size_t count = 1;
  for (std::size_t k = 0; k < n; ++k) count *= kTypeCount;
  return count;
}

}  // namespace acpolicy::detail
