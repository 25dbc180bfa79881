#include <cmath>
#include <random>

#include "doctest.h"
#include "lifwav/data.hpp"
#include "lifwav/errors.hpp"
#include "lifwav/vitals.hpp"
#include "test_util.hpp"

using namespace lifwav;

namespace {

// Two-pass textbook formula.
double pearson_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= double(a.size());
  mb /= double(b.size());
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

double mre_oracle(const std::vector<double>& gt, const std::vector<double>& pred) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    num += std::fabs(pred[i] - gt[i]);
    den += std::fabs(gt[i]);
  }
  return num / den;
}

}  // namespace

TEST_CASE("pearson examples") {
  std::vector<double> a{1, 2, 3, 4}, b{2, 4, 5, 9};
  CHECK(pearson(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  std::vector<double> neg{-1, -2, -3, -4};
  CHECK(pearson(a, neg) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(std::abs(pearson(a, b) - pearson_oracle(a, b)) < 1e-9);
  std::vector<double> flat(4, 2.0);
  CHECK(pearson(a, flat) == 0.0);
  CHECK(pearson_degenerate(a, flat));
  CHECK_FALSE(pearson_degenerate(a, b));
  CHECK_THROWS_AS((void)pearson(a, std::vector<double>{1, 2}), DimensionError);
}

TEST_CASE("pearson and mre against brute force") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<std::size_t> len(2, 300);
  std::uniform_real_distribution<double> coef(0.1, 5.0), shift(-3, 3);
  double worst_p = 0, worst_m = 0, worst_affine = 0;
  for (std::uint64_t k = 0; k < 1000; ++k) {
    const std::size_t n = len(rng);
    auto a = testing::random_vector(n, 2 * k);
    auto b = testing::random_vector(n, 2 * k + 1);
    worst_p = std::max(worst_p, std::abs(pearson(a, b) - pearson_oracle(a, b)));
    worst_m = std::max(worst_m, std::abs(*mre(a, b) - mre_oracle(a, b)));
    const double alpha = coef(rng), beta = shift(rng);
    std::vector<double> c(n);
    for (std::size_t i = 0; i < n; ++i) c[i] = alpha * b[i] + beta;
    worst_affine = std::max(worst_affine, std::abs(pearson(a, c) - pearson(a, b)));
  }
  CHECK(worst_p < 1e-9);
  CHECK(worst_m < 1e-9);
  CHECK(worst_affine < 1e-9);
}

TEST_CASE("mre examples") {
  std::vector<double> gt{1, -2, 3, 0.5};
  CHECK(*mre(gt, gt) == 0.0);
  CHECK(*mre(gt, std::vector<double>(4, 0.0)) == 1.0);
  std::vector<double> twice{2, -4, 6, 1};
  CHECK(*mre(gt, twice) == doctest::Approx(1.0));
  std::vector<double> half_err{1.5, -3, 4.5, 0.75};
  CHECK(*mre(gt, half_err) == doctest::Approx(0.5 * *mre(gt, twice)));
  CHECK_FALSE(mre(std::vector<double>(4, 0.0), gt).has_value());
}

TEST_CASE("heart rate and rmssd") {
  CHECK(*heart_rate(std::vector<double>{1, 1, 1}) == 60.0);
  CHECK(*heart_rate(std::vector<double>{0.5}) == 120.0);
  CHECK(*heart_rate(std::vector<double>{0.8, 1.2}) == doctest::Approx(60.0));
  CHECK_FALSE(heart_rate(std::vector<double>{}).has_value());
  CHECK(*rmssd(std::vector<double>{0.9, 0.9, 0.9}) == 0.0);
  CHECK(*rmssd(std::vector<double>{0.8, 1.0}) == doctest::Approx(200.0));
  CHECK(*rmssd(std::vector<double>{1.0, 0.9, 1.1}) == doctest::Approx(158.11388300841898));
  CHECK_FALSE(rmssd(std::vector<double>{1.0}).has_value());
}

TEST_CASE("heart rate and rmssd match recomputation from peak indices") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> gap(41, 400), count(3, 40);
  double worst_hr = 0, worst_rmssd = 0;
  for (int k = 0; k < 200; ++k) {
    RPeakSeries s;
    s.fs = 200;
    std::size_t at = gap(rng);
    const std::size_t m = count(rng);
    for (std::size_t i = 0; i < m; ++i) {
      s.indices.push_back(at);
      at += gap(rng);
    }
    // brute force straight from the indices
    const double span_s = double(s.indices.back() - s.indices.front()) / s.fs;
    const double hr = 60.0 * double(m - 1) / span_s;
    double acc = 0;
    for (std::size_t i = 2; i < m; ++i) {
      const double d = (double(s.indices[i]) - 2.0 * double(s.indices[i - 1]) + double(s.indices[i - 2])) / s.fs;
      acc += d * d;
    }
    const double rm = 1000.0 * std::sqrt(acc / double(m - 2));
    const auto rr = s.rr();
    worst_hr = std::max(worst_hr, std::abs(*heart_rate(rr) - hr));
    worst_rmssd = std::max(worst_rmssd, std::abs(*rmssd(rr) - rm));
  }
  CHECK(worst_hr < 1e-9);
  CHECK(worst_rmssd < 1e-9);
}

TEST_CASE("vitals mae") {
  std::vector<VitalsPair> pairs{{60.0, 62.0, 30.0, 30.0}, {70.0, 67.0, std::nullopt, 20.0}};
  auto m = vitals_mae(pairs);
  CHECK(*m.mae_hr == 2.5);
  CHECK(*m.mae_rmssd == 0.0);
  CHECK(m.rmssd_pairs == 1);
  CHECK(m.rmssd_excluded == 1);
  CHECK_FALSE(vitals_mae(std::vector<VitalsPair>{}).mae_hr.has_value());
}

TEST_CASE("R-peak detection on clean synthetic ECG") {
  for (double hr : {60.0, 75.0, 90.0, 120.0}) {
    SynthParams p;
    p.heart_rate_bpm = hr;
    p.hr_variability_bpm = 3.0;
    p.seed = static_cast<std::uint64_t>(hr);
    auto s = synthesize_pair(p, 60.0);
    auto peaks = detect_r_peaks(s.recording.ecg, 200);
    INFO("hr " << hr);
    REQUIRE(peaks.indices.size() == s.r_peak_times.size());
    double worst = 0;
    for (std::size_t i = 0; i < peaks.indices.size(); ++i) {
      worst = std::max(worst, std::abs(double(peaks.indices[i]) / 200.0 - s.r_peak_times[i]));
    }
    CHECK(worst <= 0.020);
    std::vector<double> rr_true;
    for (std::size_t i = 1; i < s.r_peak_times.size(); ++i) rr_true.push_back(s.r_peak_times[i] - s.r_peak_times[i - 1]);
    const auto rr = peaks.rr();
    CHECK(std::abs(*heart_rate(rr) - *heart_rate(rr_true)) < 1.0);
    CHECK(std::abs(*rmssd(rr) - *rmssd(rr_true)) < 10.0);
  }
}

TEST_CASE("R-peak detection edge cases") {
  CHECK(detect_r_peaks(std::vector<double>(2000, 0.0), 200).indices.empty());
  auto short_sig = detect_r_peaks(std::vector<double>(300, 0.0), 200);
  CHECK(short_sig.too_short);
  CHECK(short_sig.indices.empty());
  CHECK_THROWS_AS(detect_r_peaks(std::vector<double>(300, 0.0), 50), ConfigError);

  SynthParams p;
  p.heart_rate_bpm = 66;
  p.seed = 4;
  auto s = synthesize_pair(p, 10.0);
  auto upright = detect_r_peaks(s.recording.ecg, 200);
  auto inverted_ecg = s.recording.ecg;
  for (auto& v : inverted_ecg) v = -v;
  CHECK(detect_r_peaks(inverted_ecg, 200).indices.size() == upright.indices.size());

  // ordering and refractory spacing on arbitrary input
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto noise = testing::random_vector(1024, seed);
    auto r = detect_r_peaks(noise, 200);
    for (std::size_t i = 1; i < r.indices.size(); ++i) CHECK(r.indices[i] >= r.indices[i - 1] + 40);
  }
}

TEST_CASE("chunk scoring and aggregation") {
  SynthParams p;
  p.heart_rate_bpm = 80;
  p.hr_variability_bpm = 2;
  p.seed = 9;
  auto chunks = chunk_recording(synthesize_pair(p, 20.48).recording);
  REQUIRE(chunks.size() == 4);
  EvalReport identity, zero;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    identity.chunks.push_back(score_chunk(chunks[i].ecg, chunks[i].ecg, 200));
    zero.chunks.push_back(score_chunk(chunks[i].ecg, std::vector<double>(1024, 0.0), 200));
  }
  aggregate(identity);
  aggregate(zero);
  CHECK(identity.mean_pearson == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(*identity.mean_mre == 0.0);
  CHECK(*identity.vitals.mae_hr == 0.0);
  CHECK(*identity.vitals.mae_rmssd == 0.0);
  CHECK(zero.mean_pearson == 0.0);
  CHECK(*zero.mean_mre == doctest::Approx(1.0));
  CHECK(zero.chunks[0].pearson_degenerate);

  double sum = 0;
  for (const auto& c : zero.chunks) sum += *c.mre;
  CHECK(*zero.mean_mre == doctest::Approx(sum / 4));
  nlohmann::json j = identity;
  CHECK(j["aggregate"]["pearson"].get<double>() == doctest::Approx(1.0));
  CHECK(j["chunks"].size() == 4);
  CHECK(j["aggregate"].contains("mae_hr_bpm"));
  CHECK(j["aggregate"].contains("mae_rmssd_ms"));
}
