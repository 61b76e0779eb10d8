#pragma once

#include <vector>

#include "copt/tensor.hpp"

namespace copt {

/// Square matrix of pairwise cosine similarities between per-class vectors,
/// indexed by `class_ids` in order. `values` has shape [m, m].
template <typename T>
struct CovarianceMatrix {
  std::vector<int> class_ids;
  BasicTensor<T> values;

  std::size_t size() const noexcept { return class_ids.size(); }
  T at(std::size_t i, std::size_t j) const { return values[i * class_ids.size() + j]; }
};

}  // namespace copt
