#include "lifwav/selfcheck.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <sstream>

#include "lifwav/gradcheck.hpp"
#include "lifwav/model.hpp"
#include "lifwav/ops.hpp"
#include "lifwav/stft.hpp"
#include "lifwav/vitals.hpp"

namespace lifwav {

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kInverseTolerance = 1e-5;
constexpr double kOracleTolerance = 1e-9;

template <typename T = double>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<T> v(shape.size());
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>::from(shape, std::move(v), grad);
}

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
  }
  return worst;
}

CheckResult verdict(std::string name, double value, double tolerance, std::string detail = {}) {
  const bool ok = std::isfinite(value) && value <= tolerance;
  return {std::move(name), ok, value, tolerance, std::move(detail)};
}

CheckResult grad_case(const std::string& op, const std::function<Tensor<double>()>& fn,
                      const std::vector<Tensor<double>>& wrt) {
  try {
    auto r = check_gradients(fn, wrt);
    std::ostringstream d;
    d << r.entries_checked << " entries";
    return verdict("gradient " + op, r.max_relative_error, kGradTolerance, d.str());
  } catch (const std::exception& e) {
    return {"gradient " + op, false, NAN, kGradTolerance, e.what()};
  }
}

AttentionParams<double> random_attention(std::size_t c, std::uint64_t seed) {
  const double r = 1.0 / std::sqrt(static_cast<double>(c));
  return {random_tensor(Shape{c, c, 1}, seed, -r, r),     random_tensor(Shape{c, 1}, seed + 1, -0.1, 0.1),
          random_tensor(Shape{c, c, 1}, seed + 2, -r, r), random_tensor(Shape{c, 1}, seed + 3, -0.1, 0.1),
          random_tensor(Shape{c, c, 1}, seed + 4, -r, r), random_tensor(Shape{c, 1}, seed + 5, -0.1, 0.1),
          random_tensor(Shape{c, c, 1}, seed + 6, -r, r), random_tensor(Shape{c, 1}, seed + 7, -0.1, 0.1)};
}

ModelConfig reduced_model() {
  ModelConfig c;
  c.scales = 2;
  c.channels = 4;
  c.csconv_filters = 1;
  c.heads = 2;
  c.reduction = 2;
  c.input_length = 64;
  return c;
}

std::vector<std::complex<double>> direct_stft(const std::vector<double>& x, std::size_t w, std::size_t hop) {
  const auto win = hanning(w);
  const std::size_t frames = stft_frame_count(x.size(), w, hop), bins = w / 2 + 1;
  std::vector<std::complex<double>> out(frames * bins);
  for (std::size_t m = 0; m < frames; ++m) {
    for (std::size_t k = 0; k < bins; ++k) {
      std::complex<double> acc = 0;
      for (std::size_t n = 0; n < w; ++n) {
        acc += x[m * hop + n] * win[n] * std::polar(1.0, -2.0 * std::numbers::pi * double(k * n) / double(w));
      }
      out[m * bins + k] = acc;
    }
  }
  return out;
}

}  // namespace

std::vector<CheckResult> gradient_checks() {
  std::vector<CheckResult> out;
  {
    auto x = random_tensor(Shape{12, 2}, 11);
    auto w = random_tensor(Shape{3, 2, 5}, 12);
    auto b = random_tensor(Shape{3, 1}, 13);
    out.push_back(grad_case("conv1d", [&] { return conv1d(x, w, b, 1); }, {x, w, b}));
    out.push_back(grad_case("conv1d stride 2", [&] { return conv1d(x, w, b, 2); }, {x, w, b}));
    auto wt = random_tensor(Shape{2, 3, 5}, 15);
    auto bt = random_tensor(Shape{3, 1}, 16);
    out.push_back(grad_case("conv1d_transposed", [&] { return conv1d_transposed(x, wt, bt, 2); }, {x, wt, bt}));
  }
  {
    auto p = random_attention(8, 41);
    auto x = random_tensor(Shape{6, 8}, 141);
    std::vector<Tensor<double>> wrt{p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo, x};
    out.push_back(grad_case("attention", [&] { return multi_head_self_attention(x, p, 4); }, wrt));
  }
  {
    auto x = random_tensor(Shape{5, 6}, 51);
    auto g = random_tensor(Shape{1, 6}, 52, 0.5, 1.5);
    auto b = random_tensor(Shape{1, 6}, 53);
    out.push_back(grad_case("layer_norm", [&] { return layer_norm(x, g, b); }, {x, g, b}));
  }
  {
    auto a = random_tensor(Shape{6, 3}, 71);
    auto b = random_tensor(Shape{6, 3}, 72);
    auto gate = random_tensor(Shape{1, 3}, 73);
    out.push_back(grad_case("pointwise", [&] {
      return mul(add(sigmoid(a), scale(relu(sub(b, a)), 0.7)), sigmoid(gate));
    }, {a, b, gate}));
  }
  {
    auto x = random_tensor(Shape{6, 8}, 91);
    out.push_back(grad_case("channel ops", [&] {
      auto [e, o] = split_halves(channel_unshuffle(channel_shuffle(x, 4), 2));
      auto [pe, po] = polyphase_split(x);
      auto pooled = global_avg_pool(concat<double>({o, e}));
      return add(mul(interleave(pe, po), pooled), x);
    }, {x}));
  }
  {
    auto x = random_tensor(Shape{9, 2}, 95);
    std::vector<double> wts = random_vector(18, 96);
    out.push_back(grad_case("reductions", [&] {
      auto s = add(add(sum(x), mean(x)), add(sum_abs(x), mean_abs(x)));
      return add(s, weighted_sum(x, wts));
    }, {x}));
  }
  {
    auto pred = random_tensor(Shape{96, 1}, 97);
    auto target = random_tensor(Shape{96, 1}, 98, -1, 1, false);
    LossConfig cfg;
    cfg.windows = {32, 16};
    out.push_back(grad_case("stft loss", [&] { return mr_stft_loss(pred, target, cfg); }, {pred}));
    cfg.norm = SpectralNorm::magnitude_l1;
    out.push_back(grad_case("stft magnitude loss", [&] { return mr_stft_loss(pred, target, cfg); }, {pred}));
  }
  {
    auto m = Model<double>::build(reduced_model(), 7);
    // off the ReLU kinks that exactly-zero biases create
    std::mt19937_64 rng(70);
    std::uniform_real_distribution<double> dist(-0.05, 0.05);
    std::vector<Tensor<double>> wrt;
    for (auto& p : m.parameters().params()) {
      for (auto& v : p.value.mutable_data()) v += dist(rng);
      wrt.push_back(p.value);
    }
    auto radar = random_tensor(Shape{64, 1}, 8, -1, 1, false);
    out.push_back(grad_case("reduced model", [&] { return m.forward(radar); }, wrt));
  }
  return out;
}

CheckResult lifting_round_trip_check(std::size_t parameterizations) {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < parameterizations; ++seed) {
    auto cfg = ModelConfig::desk();
    cfg.input_length = 64;
    auto m = Model<float>::build(cfg, 1000 + seed);
    const auto& lu = m.analysis()[seed % cfg.scales];
    auto even = random_tensor<float>(Shape{32, 8}, 2 * seed, -1, 1, false);
    auto odd = random_tensor<float>(Shape{32, 8}, 2 * seed + 1, -1, 1, false);
    auto p = [&](const Tensor<float>& v) { return lu.predict.forward(v); };
    auto u = [&](const Tensor<float>& v) { return lu.update.forward(v); };
    auto fwd = lift(even, odd, p, u);
    auto inv = unlift(fwd.approx, fwd.detail, p, u);
    worst = std::max({worst, max_abs_diff(inv.even, even), max_abs_diff(inv.odd, odd)});
  }
  return verdict("lifting round trip", worst, kInverseTolerance,
                 std::to_string(parameterizations) + " parameterizations, float");
}

CheckResult split_merge_check() {
  auto m = Model<float>::build(ModelConfig::desk(), 3);
  double worst = 0;
  for (std::size_t i = 0; i < m.analysis().size(); ++i) {
    const std::size_t len = m.config().input_length >> i;
    auto f = random_tensor<float>(Shape{len, m.config().channels}, 20 + i, -1, 1, false);
    auto parts = m.analysis()[i].split_parts(f);
    auto back = m.synthesis()[i].merge_parts(parts.even, parts.odd);
    if (back.shape() != f.shape()) return {"split/merge identity", false, NAN, kInverseTolerance, "shape changed"};
    worst = std::max(worst, max_abs_diff(back, f));
  }
  return verdict("split/merge identity", worst, kInverseTolerance, "every scale of the desk model");
}

std::vector<CheckResult> stft_checks() {
  std::vector<CheckResult> out;
  const auto x = random_vector(1024, 7);
  LossConfig cfg;
  double worst = 0;
  std::string frames;
  bool counts_ok = true;
  for (const auto& s : spectrograms(x, cfg)) {
    const auto ref = direct_stft(x, s.window, s.hop);
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(ref[i] - s.values[i]));
    const std::size_t expect = (x.size() - s.window) / s.hop + 1;
    counts_ok = counts_ok && s.frames == expect && ref.size() == s.frames * s.bins;
    frames += (frames.empty() ? "" : " ") + std::to_string(s.window) + ":" + std::to_string(s.frames);
  }
  out.push_back(verdict("stft vs direct dft", worst, 1e-5, "windows 800/400/200 on L=1024"));
  out.push_back({"stft frame counts", counts_ok, 0.0, 0.0, frames});
  auto t = Tensor<double>::column(x);
  out.push_back(verdict("mr_stft_loss(x, x)", std::abs(mr_stft_loss(t, t, cfg).item()), 0.0));
  return out;
}

std::vector<CheckResult> metric_checks(std::size_t pairs) {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<std::size_t> len(2, 300);
  std::uniform_real_distribution<double> coef(0.1, 5.0), shift(-3, 3);
  double worst_p = 0, worst_m = 0, worst_affine = 0;
  for (std::uint64_t k = 0; k < pairs; ++k) {
    const std::size_t n = len(rng);
    const auto a = random_vector(n, 2 * k + 5000);
    const auto b = random_vector(n, 2 * k + 5001);
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) {
      ma += a[i];
      mb += b[i];
    }
    ma /= double(n);
    mb /= double(n);
    double sab = 0, saa = 0, sbb = 0, num = 0, den = 0;
    for (std::size_t i = 0; i < n; ++i) {
      sab += (a[i] - ma) * (b[i] - mb);
      saa += (a[i] - ma) * (a[i] - ma);
      sbb += (b[i] - mb) * (b[i] - mb);
      num += std::abs(b[i] - a[i]);
      den += std::abs(a[i]);
    }
    worst_p = std::max(worst_p, std::abs(pearson(a, b) - sab / std::sqrt(saa * sbb)));
    worst_m = std::max(worst_m, std::abs(*mre(a, b) - num / den));
    const double alpha = coef(rng), beta = shift(rng);
    std::vector<double> c(n);
    for (std::size_t i = 0; i < n; ++i) c[i] = alpha * b[i] + beta;
    worst_affine = std::max(worst_affine, std::abs(pearson(a, c) - pearson(a, b)));
  }
  const auto detail = std::to_string(pairs) + " random pairs";
  return {verdict("pearson oracle", worst_p, kOracleTolerance, detail),
          verdict("mre oracle", worst_m, kOracleTolerance, detail),
          verdict("pearson affine invariance", worst_affine, kOracleTolerance, detail)};
}

std::vector<CheckResult> run_selfcheck() {
  auto out = gradient_checks();
  out.push_back(lifting_round_trip_check());
  out.push_back(split_merge_check());
  for (auto& r : stft_checks()) out.push_back(std::move(r));
  for (auto& r : metric_checks()) out.push_back(std::move(r));
  return out;
}

}  // namespace lifwav
