#pragma once

#include <functional>
#include <vector>

#include "lifwav/tensor.hpp"

namespace lifwav {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t entries_checked = 0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
};

// Compares backward() against central finite differences on every entry of
// every tensor in `wrt`. `fn` must rebuild the graph from the current leaf
// values on each call; a non-scalar result is reduced with fixed pseudo-random
// weights. Relative error is |analytic - numeric| / max(|numeric|, 1e-8), after
// discounting the floating-point rounding noise of the two evaluations.
GradCheckResult check_gradients(const std::function<Tensor<double>()>& fn, std::vector<Tensor<double>> wrt,
                                double eps = 1e-5);

}  // namespace lifwav
