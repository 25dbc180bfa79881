#pragma once

// Short-time Fourier analysis and the multi-resolution spectral loss.

#include <complex>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "lifwav/tensor.hpp"

namespace lifwav {

enum class SpectralNorm {
  complex_l1,    // mean over bins of |Re d| + |Im d|
  magnitude_l1,  // mean over bins of ||S_pred| - |S_target||
};

struct LossConfig {
  double alpha = 0.1;
  std::vector<std::size_t> windows{800, 400, 200};
  std::size_t hop_divisor = 4;
  SpectralNorm norm = SpectralNorm::complex_l1;

  [[nodiscard]] std::size_t hop(std::size_t window) const { return window / hop_divisor; }
  void validate(std::size_t signal_length) const;
};

// Symmetric Hann window, w[n] = 0.5 - 0.5 cos(2 pi n / (W - 1)).
std::vector<double> hanning(std::size_t window);

std::size_t stft_frame_count(std::size_t length, std::size_t window, std::size_t hop);

// Differentiable STFT of a single-channel signal without boundary padding.
// Result is [frames, 2 * bins]: channels [0, bins) hold real parts and
// [bins, 2 * bins) imaginary parts, bins = W / 2 + 1.
template <typename T>
Tensor<T> stft(const Tensor<T>& x, std::size_t window, std::size_t hop, std::span<const double> weights);

// Complex spectrogram of one signal at one window length.
struct Spectrogram {
  std::size_t window = 0;
  std::size_t hop = 0;
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<std::complex<double>> values;  // row-major [frames, bins]

  [[nodiscard]] std::complex<double> at(std::size_t frame, std::size_t bin) const {
    return values[frame * bins + bin];
  }
};

using SpectrogramSet = std::vector<Spectrogram>;

SpectrogramSet spectrograms(std::span<const double> signal, const LossConfig& cfg);

// Tab-separated magnitudes, one line per frame.
void write_magnitudes(std::ostream& out, const Spectrogram& s);

// Spectral distance at one window length under `norm`.
template <typename T>
Tensor<T> stft_loss(const Tensor<T>& pred, const Tensor<T>& target, std::size_t window, std::size_t hop,
                    SpectralNorm norm = SpectralNorm::complex_l1);

// Average of stft_loss over cfg.windows; the target carries no gradient.
template <typename T>
Tensor<T> mr_stft_loss(const Tensor<T>& pred, const Tensor<T>& target, const LossConfig& cfg);

// Number of stft() evaluations since program start.
std::uint64_t stft_invocations();

}  // namespace lifwav
