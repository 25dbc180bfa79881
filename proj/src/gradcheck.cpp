#include "lifwav/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "lifwav/ops.hpp"

namespace lifwav {

namespace {

Tensor<double> reduce_to_scalar(const Tensor<double>& out) {
  if (out.size() == 1) return out;
  std::mt19937_64 rng(0x5eed);
  std::uniform_real_distribution<double> dist(0.5, 1.5);
  std::vector<double> weights(out.size());
  for (auto& w : weights) w = dist(rng);
  return weighted_sum(out, std::move(weights));
}

}  // namespace

GradCheckResult check_gradients(const std::function<Tensor<double>()>& fn, std::vector<Tensor<double>> wrt,
                                double eps) {
  for (auto& t : wrt) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  reduce_to_scalar(fn()).backward();

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    auto& t = wrt[ti];
    const std::vector<double> analytic = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                                      : std::vector<double>(t.size(), 0.0);
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double plus = reduce_to_scalar(fn()).item();
      values[i] = saved - eps;
      const double minus = reduce_to_scalar(fn()).item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      // Differences below the rounding noise of the two evaluations are not measurable.
      const double noise = 16.0 * std::numeric_limits<double>::epsilon() * (std::abs(plus) + std::abs(minus)) /
                           (2.0 * eps);
      const double err =
          std::max(0.0, std::abs(analytic[i] - numeric) - noise) / std::max(std::abs(numeric), 1e-8);
      ++result.entries_checked;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_tensor = ti;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace lifwav
