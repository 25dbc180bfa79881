#include "lifwav/filters.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "lifwav/errors.hpp"

namespace lifwav {

namespace {

double kaiser(double r, double beta) {
  // r in [-1, 1]
  const double a = std::max(0.0, 1.0 - r * r);
  return std::cyl_bessel_i(0.0, beta * std::sqrt(a)) / std::cyl_bessel_i(0.0, beta);
}

double sinc(double x) {
  if (x == 0.0) return 1.0;
  return std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
}

std::vector<double> raw_lowpass(double cutoff, std::size_t half_width, double beta) {
  std::vector<double> h(2 * half_width + 1);
  const double hw = static_cast<double>(half_width) + 1.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(half_width);
    h[i] = 2.0 * cutoff * sinc(2.0 * cutoff * d) * kaiser(d / hw, beta);
  }
  return h;
}

}  // namespace

std::vector<double> lowpass_kernel(double cutoff, std::size_t half_width, double kaiser_beta) {
  if (!(cutoff > 0.0 && cutoff < 0.5)) throw ConfigError("low-pass cutoff must lie in (0, 0.5) cycles/sample");
  auto h = raw_lowpass(cutoff, half_width, kaiser_beta);
  double dc = 0;
  for (double v : h) dc += v;
  for (double& v : h) v /= dc;
  return h;
}

std::vector<double> bandpass_kernel(double low, double high, std::size_t half_width, double kaiser_beta) {
  if (!(low > 0.0 && low < high && high < 0.5)) throw ConfigError("band-pass edges must satisfy 0 < low < high < 0.5");
  auto hi = lowpass_kernel(high, half_width, kaiser_beta);
  auto lo = lowpass_kernel(low, half_width, kaiser_beta);
  for (std::size_t i = 0; i < hi.size(); ++i) hi[i] -= lo[i];
  return hi;
}

double extended_sample(std::span<const double> x, long i) {
  const long n = static_cast<long>(x.size());
  if (i >= 0 && i < n) return x[static_cast<std::size_t>(i)];
  if (n == 1) return x[0];
  if (i < 0) {
    const long j = std::min(-i, n - 1);
    // beyond one full reflection the extension is held at its last value
    return 2.0 * x[0] - x[static_cast<std::size_t>(j)];
  }
  const long j = std::max(2 * (n - 1) - i, 0L);
  return 2.0 * x[static_cast<std::size_t>(n - 1)] - x[static_cast<std::size_t>(j)];
}

std::vector<double> filter_centered(std::span<const double> x, std::span<const double> kernel) {
  if (kernel.size() % 2 == 0) throw ConfigError("centered filter needs an odd-length kernel");
  const long half = static_cast<long>(kernel.size() / 2);
  const long n = static_cast<long>(x.size());
  std::vector<double> y(x.size(), 0.0);
  for (long t = 0; t < n; ++t) {
    double acc = 0;
    if (t - half >= 0 && t + half < n) {
      for (long j = -half; j <= half; ++j) acc += kernel[static_cast<std::size_t>(j + half)] * x[t - j];
    } else {
      for (long j = -half; j <= half; ++j) acc += kernel[static_cast<std::size_t>(j + half)] * extended_sample(x, t - j);
    }
    y[static_cast<std::size_t>(t)] = acc;
  }
  return y;
}

}  // namespace lifwav
