#include "lifwav/stft.hpp"

#include <atomic>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <ostream>
#include <string>

#include "lifwav/ops.hpp"

namespace lifwav {

namespace {

std::atomic<std::uint64_t> g_stft_calls{0};

struct TwiddleTable {
  std::vector<double> cos;
  std::vector<double> sin;
};

// cos/sin(2 pi m / W) for m in [0, W); shared across calls.
const TwiddleTable& twiddles(std::size_t window) {
  static std::mutex mutex;
  static std::map<std::size_t, std::unique_ptr<TwiddleTable>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[window];
  if (!slot) {
    slot = std::make_unique<TwiddleTable>();
    slot->cos.resize(window);
    slot->sin.resize(window);
    for (std::size_t m = 0; m < window; ++m) {
      const double phase = 2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(window);
      slot->cos[m] = std::cos(phase);
      slot->sin[m] = std::sin(phase);
    }
  }
  return *slot;
}

}  // namespace

void LossConfig::validate(std::size_t signal_length) const {
  if (alpha < 0.0) throw ConfigError("loss alpha must be non-negative");
  if (hop_divisor == 0) throw ConfigError("loss hop divisor must be positive");
  for (std::size_t w : windows) {
    if (w < 2 || w % 2 != 0) throw ConfigError("STFT window " + std::to_string(w) + " must be even and >= 2");
    if (w > signal_length) {
      throw ConfigError("STFT window " + std::to_string(w) + " exceeds signal length " +
                        std::to_string(signal_length));
    }
    if (hop(w) == 0) throw ConfigError("STFT hop is zero for window " + std::to_string(w));
  }
}

std::vector<double> hanning(std::size_t window) {
  if (window < 2) throw ConfigError("Hanning window needs at least 2 samples");
  std::vector<double> w(window);
  const double denom = static_cast<double>(window - 1);
  for (std::size_t n = 0; n < window; ++n) {
    w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / denom);
  }
  // cos() is not exactly symmetric in floating point.
  for (std::size_t n = 0; n < window / 2; ++n) w[window - 1 - n] = w[n];
  return w;
}

std::size_t stft_frame_count(std::size_t length, std::size_t window, std::size_t hop) {
  if (window > length) {
    throw ConfigError("STFT window " + std::to_string(window) + " longer than signal " + std::to_string(length));
  }
  if (hop == 0) throw ConfigError("STFT hop must be positive");
  return (length - window) / hop + 1;
}

template <typename T>
Tensor<T> stft(const Tensor<T>& x, std::size_t window, std::size_t hop, std::span<const double> weights) {
  if (x.channels() != 1) throw DimensionError("stft expects a single-channel signal");
  if (weights.size() != window) throw DimensionError("stft window weights do not match window length");
  const std::size_t len = x.length();
  const std::size_t frames = stft_frame_count(len, window, hop);
  const std::size_t bins = window / 2 + 1;
  const auto& tw = twiddles(window);
  ++g_stft_calls;

  std::vector<T> out(frames * 2 * bins);
  std::vector<T> seg(window);
  const T* xv = x.data().data();
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t n = 0; n < window; ++n) seg[n] = xv[f * hop + n] * static_cast<T>(weights[n]);
    for (std::size_t k = 0; k < bins; ++k) {
      T re = 0, im = 0;
      std::size_t idx = 0;
      for (std::size_t n = 0; n < window; ++n) {
        re += seg[n] * static_cast<T>(tw.cos[idx]);
        im -= seg[n] * static_cast<T>(tw.sin[idx]);
        idx += k;
        if (idx >= window) idx -= window;
      }
      out[k * frames + f] = re;
      out[(bins + k) * frames + f] = im;
    }
  }
  count_flops(4ULL * frames * bins * window);

  auto* xn = x.node().get();
  std::vector<double> w(weights.begin(), weights.end());
  return detail::make_result<T>(
      Shape{frames, 2 * bins}, std::move(out), "stft", {&x},
      [xn, window, hop, frames, bins, w = std::move(w)](detail::Node<T>& self) {
        const auto& tw = twiddles(window);
        auto& dx = xn->ensure_grad();
        const T* g = self.grad.data();
        for (std::size_t f = 0; f < frames; ++f) {
          for (std::size_t n = 0; n < window; ++n) {
            T acc = 0;
            std::size_t idx = 0;
            for (std::size_t k = 0; k < bins; ++k) {
              acc += g[k * frames + f] * static_cast<T>(tw.cos[idx]) -
                     g[(bins + k) * frames + f] * static_cast<T>(tw.sin[idx]);
              idx += n;
              if (idx >= window) idx -= window;
            }
            dx[f * hop + n] += acc * static_cast<T>(w[n]);
          }
        }
      });
}

SpectrogramSet spectrograms(std::span<const double> signal, const LossConfig& cfg) {
  cfg.validate(signal.size());
  NoGradGuard no_grad;
  auto x = Tensor<double>::column(std::vector<double>(signal.begin(), signal.end()));
  SpectrogramSet set;
  for (std::size_t w : cfg.windows) {
    const auto weights = hanning(w);
    auto s = stft(x, w, cfg.hop(w), weights);
    Spectrogram out{w, cfg.hop(w), s.length(), s.channels() / 2, {}};
    out.values.resize(out.frames * out.bins);
    for (std::size_t f = 0; f < out.frames; ++f) {
      for (std::size_t k = 0; k < out.bins; ++k) out.values[f * out.bins + k] = {s.at(f, k), s.at(f, out.bins + k)};
    }
    set.push_back(std::move(out));
  }
  return set;
}

void write_magnitudes(std::ostream& out, const Spectrogram& s) {
  for (std::size_t f = 0; f < s.frames; ++f) {
    for (std::size_t k = 0; k < s.bins; ++k) {
      if (k != 0) out << '\t';
      out << std::abs(s.at(f, k));
    }
    out << '\n';
  }
}

namespace {

// |S| per bin, [frames, bins]; the epsilon keeps the derivative finite at 0.
template <typename T>
Tensor<T> magnitude(const Tensor<T>& spec) {
  const std::size_t frames = spec.length(), bins = spec.channels() / 2;
  std::vector<T> out(frames * bins);
  const T tiny = T(1e-12);
  for (std::size_t i = 0; i < frames * bins; ++i) {
    const T re = spec.data()[i], im = spec.data()[frames * bins + i];
    out[i] = std::sqrt(re * re + im * im + tiny);
  }
  auto* sn = spec.node().get();
  return detail::make_result<T>(Shape{frames, bins}, std::move(out), "magnitude", {&spec},
                                [sn, frames, bins](detail::Node<T>& self) {
                                  auto& d = sn->ensure_grad();
                                  for (std::size_t i = 0; i < frames * bins; ++i) {
                                    const T g = self.grad[i] / self.value[i];
                                    d[i] += g * sn->value[i];
                                    d[frames * bins + i] += g * sn->value[frames * bins + i];
                                  }
                                });
}

}  // namespace

template <typename T>
Tensor<T> stft_loss(const Tensor<T>& pred, const Tensor<T>& target, std::size_t window, std::size_t hop,
                    SpectralNorm norm) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("stft_loss: prediction " + to_string(pred.shape()) + " vs target " +
                         to_string(target.shape()));
  }
  const auto weights = hanning(window);
  auto sp = stft(pred, window, hop, weights);
  Tensor<T> st;
  {
    NoGradGuard no_grad;
    st = stft(target.detach(), window, hop, weights);
  }
  const T entries = static_cast<T>(sp.length() * (sp.channels() / 2));
  if (norm == SpectralNorm::magnitude_l1) {
    return scale(sum_abs(sub(magnitude(sp), magnitude(st))), T(1) / entries);
  }
  return scale(sum_abs(sub(sp, st)), T(1) / entries);
}

template <typename T>
Tensor<T> mr_stft_loss(const Tensor<T>& pred, const Tensor<T>& target, const LossConfig& cfg) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mr_stft_loss: prediction " + to_string(pred.shape()) + " vs target " +
                         to_string(target.shape()));
  }
  cfg.validate(pred.length());
  if (cfg.windows.empty()) throw ConfigError("mr_stft_loss needs at least one window");
  std::vector<Tensor<T>> terms;
  for (std::size_t w : cfg.windows) terms.push_back(stft_loss(pred, target, w, cfg.hop(w), cfg.norm));
  Tensor<T> total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return scale(total, T(1) / static_cast<T>(terms.size()));
}

std::uint64_t stft_invocations() { return g_stft_calls.load(); }

template Tensor<float> stft(const Tensor<float>&, std::size_t, std::size_t, std::span<const double>);
template Tensor<double> stft(const Tensor<double>&, std::size_t, std::size_t, std::span<const double>);
template Tensor<float> stft_loss(const Tensor<float>&, const Tensor<float>&, std::size_t, std::size_t,
                                 SpectralNorm);
template Tensor<double> stft_loss(const Tensor<double>&, const Tensor<double>&, std::size_t, std::size_t,
                                  SpectralNorm);
template Tensor<float> mr_stft_loss(const Tensor<float>&, const Tensor<float>&, const LossConfig&);
template Tensor<double> mr_stft_loss(const Tensor<double>&, const Tensor<double>&, const LossConfig&);

}  // namespace lifwav
