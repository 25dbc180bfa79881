#pragma once

// Linear-phase FIR helpers shared by resampling, synthesis checks and QRS
// detection. All filtering is zero-phase: kernels are symmetric and applied
// centered.

#include <span>
#include <vector>

namespace lifwav {

// Kaiser-windowed sinc low-pass with cutoff in cycles per sample (0, 0.5),
// `half_width` taps either side of the center; unit DC gain.
std::vector<double> lowpass_kernel(double cutoff, std::size_t half_width, double kaiser_beta = 8.0);

// Band-pass as the difference of two low-pass kernels of equal length.
std::vector<double> bandpass_kernel(double low, double high, std::size_t half_width, double kaiser_beta = 8.0);

// Centered convolution with an odd-length kernel. Samples beyond either end
// come from point-odd extension, x[-k] = 2 x[0] - x[k], which keeps linear
// trends continuous across the boundary.
std::vector<double> filter_centered(std::span<const double> x, std::span<const double> kernel);

// Reflects index i (possibly outside [0, n)) for point-odd extension and
// returns the extended sample.
double extended_sample(std::span<const double> x, long i);

}  // namespace lifwav
