#include "lifwav/vitals.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lifwav/errors.hpp"
#include "lifwav/filters.hpp"

namespace lifwav {

namespace {

void require_same_length(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(what) + ": lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()) + " differ");
  }
}

struct Centered {
  double dot = 0, norm_a = 0, norm_b = 0;
};

Centered centered(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  Centered c;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    c.dot += da * db;
    c.norm_a += da * da;
    c.norm_b += db * db;
  }
  c.norm_a = std::sqrt(c.norm_a);
  c.norm_b = std::sqrt(c.norm_b);
  return c;
}

constexpr double kDegenerateNorm = 1e-12;

}  // namespace

double pearson(std::span<const double> a, std::span<const double> b) {
  require_same_length(a, b, "pearson");
  if (a.size() < 2) throw DimensionError("pearson needs at least 2 samples");
  const auto c = centered(a, b);
  if (c.norm_a < kDegenerateNorm || c.norm_b < kDegenerateNorm) return 0.0;
  return std::clamp(c.dot / (c.norm_a * c.norm_b), -1.0, 1.0);
}

bool pearson_degenerate(std::span<const double> a, std::span<const double> b) {
  require_same_length(a, b, "pearson");
  if (a.size() < 2) return true;
  const auto c = centered(a, b);
  return c.norm_a < kDegenerateNorm || c.norm_b < kDegenerateNorm;
}

std::optional<double> mre(std::span<const double> gt, std::span<const double> pred) {
  require_same_length(gt, pred, "mre");
  double num = 0, den = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    num += std::abs(gt[i] - pred[i]);
    den += std::abs(gt[i]);
  }
  if (den == 0.0) return std::nullopt;
  return num / den;
}

std::vector<double> RPeakSeries::rr() const {
  std::vector<double> out;
  for (std::size_t i = 1; i < indices.size(); ++i) {
    out.push_back(static_cast<double>(indices[i] - indices[i - 1]) / fs);
  }
  return out;
}

RPeakSeries detect_r_peaks(std::span<const double> ecg, double fs) {
  if (!(fs >= 100.0)) throw ConfigError("R-peak detection needs fs >= 100 Hz");
  RPeakSeries out;
  out.fs = fs;
  const std::size_t n = ecg.size();
  if (static_cast<double>(n) < 2.0 * fs) {
    out.too_short = true;
    return out;
  }

  const auto half = static_cast<std::size_t>(std::lround(0.5 * fs));
  const auto band = filter_centered(ecg, bandpass_kernel(5.0 / fs, 15.0 / fs, half));

  std::vector<double> energy(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto at = [&](long k) { return band[static_cast<std::size_t>(std::clamp<long>(k, 0, static_cast<long>(n) - 1))]; };
    const long t = static_cast<long>(i);
    const double d = (2.0 * at(t + 1) + at(t + 2) - at(t - 2) - 2.0 * at(t - 1)) * fs / 8.0;
    energy[i] = d * d;
  }

  // centered 150 ms moving-window integration
  const auto width = std::max<long>(1, std::lround(0.150 * fs));
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + energy[i];
  std::vector<double> mwi(n);
  for (std::size_t i = 0; i < n; ++i) {
    // truncated (not shifted) at the ends and averaged over what remains, so
    // a QRS right at the boundary still peaks there
    const long lo = std::max<long>(0, static_cast<long>(i) - width / 2);
    const long hi = std::min<long>(static_cast<long>(n), static_cast<long>(i) - width / 2 + width);
    mwi[i] = (prefix[static_cast<std::size_t>(hi)] - prefix[static_cast<std::size_t>(lo)]) / static_cast<double>(hi - lo);
  }

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < n; ++i) {
    const bool rises = i == 0 || mwi[i] > mwi[i - 1];
    const bool falls = i + 1 == n || mwi[i] >= mwi[i + 1];
    if (rises && falls && mwi[i] > 0.0) candidates.push_back(i);
  }

  const auto refractory = static_cast<std::size_t>(std::lround(0.200 * fs));
  const auto learn = static_cast<std::size_t>(2.0 * fs);
  double spki = *std::max_element(mwi.begin(), mwi.begin() + static_cast<long>(learn)) / 3.0;
  double npki = std::accumulate(mwi.begin(), mwi.begin() + static_cast<long>(learn), 0.0) / static_cast<double>(learn) / 2.0;
  auto th1 = [&] { return npki + 0.25 * (spki - npki); };

  std::vector<std::size_t> peaks;
  std::vector<double> recent_rr;
  auto rr_average = [&] {
    return recent_rr.empty() ? 0.0
                             : std::accumulate(recent_rr.begin(), recent_rr.end(), 0.0) /
                                   static_cast<double>(recent_rr.size());
  };
  auto accept = [&](std::size_t c, double weight) {
    if (!peaks.empty()) {
      recent_rr.push_back(static_cast<double>(c - peaks.back()));
      if (recent_rr.size() > 8) recent_rr.erase(recent_rr.begin());
    }
    peaks.push_back(c);
    spki = weight * mwi[c] + (1.0 - weight) * spki;
  };

  for (std::size_t c : candidates) {
    // searchback for a missed beat
    const double avg = rr_average();
    if (!peaks.empty() && avg > 0.0 && static_cast<double>(c - peaks.back()) > 1.66 * avg) {
      const std::size_t from = peaks.back() + refractory;
      std::size_t best = 0;
      double best_value = 0.5 * th1();
      for (std::size_t k : candidates) {
        if (k <= from || k >= c) continue;
        if (mwi[k] > best_value) {
          best_value = mwi[k];
          best = k;
        }
      }
      if (best != 0) accept(best, 0.25);
    }
    if (mwi[c] > th1()) {
      if (!peaks.empty() && c - peaks.back() < refractory) {
        if (mwi[c] > mwi[peaks.back()]) {
          peaks.pop_back();
          if (!recent_rr.empty() && !peaks.empty()) recent_rr.pop_back();
          accept(c, 0.125);
        }
        continue;
      }
      accept(c, 0.125);
    } else {
      npki = 0.125 * mwi[c] + 0.875 * npki;
    }
  }

  // move each detection onto the ECG maximum nearby
  const auto reach = static_cast<long>(std::lround(0.050 * fs));
  std::vector<std::size_t> refined;
  for (std::size_t p : peaks) {
    const long lo = std::max<long>(0, static_cast<long>(p) - reach);
    const long hi = std::min<long>(static_cast<long>(n) - 1, static_cast<long>(p) + reach);
    auto best = static_cast<std::size_t>(lo);
    for (long k = lo; k <= hi; ++k) {
      if (ecg[static_cast<std::size_t>(k)] > ecg[best]) best = static_cast<std::size_t>(k);
    }
    if (!refined.empty() && best < refined.back() + refractory) {
      if (ecg[best] > ecg[refined.back()]) refined.back() = best;
      continue;
    }
    refined.push_back(best);
  }
  // a replacement above can land within the refractory gap of its predecessor
  std::vector<std::size_t> ordered;
  for (std::size_t p : refined) {
    if (ordered.empty() || p >= ordered.back() + refractory) ordered.push_back(p);
  }
  out.indices = std::move(ordered);
  return out;
}

std::optional<double> heart_rate(std::span<const double> rr) {
  if (rr.empty()) return std::nullopt;
  const double total = std::accumulate(rr.begin(), rr.end(), 0.0);
  if (!(total > 0.0)) return std::nullopt;
  return 60.0 * static_cast<double>(rr.size()) / total;
}

std::optional<double> rmssd(std::span<const double> rr) {
  if (rr.size() < 2) return std::nullopt;
  double acc = 0;
  for (std::size_t i = 1; i < rr.size(); ++i) acc += (rr[i] - rr[i - 1]) * (rr[i] - rr[i - 1]);
  return 1000.0 * std::sqrt(acc / static_cast<double>(rr.size() - 1));
}

VitalsPair vitals_from_peaks(const RPeakSeries& gt, const RPeakSeries& pred) {
  const auto rg = gt.rr(), rp = pred.rr();
  return {heart_rate(rg), heart_rate(rp), rmssd(rg), rmssd(rp)};
}

VitalsMae vitals_mae(std::span<const VitalsPair> pairs) {
  VitalsMae m;
  double hr = 0, rm = 0;
  for (const auto& p : pairs) {
    if (p.hr_gt && p.hr_pred) {
      hr += std::abs(*p.hr_gt - *p.hr_pred);
      ++m.hr_pairs;
    } else {
      ++m.hr_excluded;
    }
    if (p.rmssd_gt && p.rmssd_pred) {
      rm += std::abs(*p.rmssd_gt - *p.rmssd_pred);
      ++m.rmssd_pairs;
    } else {
      ++m.rmssd_excluded;
    }
  }
  if (m.hr_pairs > 0) m.mae_hr = hr / static_cast<double>(m.hr_pairs);
  if (m.rmssd_pairs > 0) m.mae_rmssd = rm / static_cast<double>(m.rmssd_pairs);
  return m;
}

ChunkReport score_chunk(std::span<const double> gt, std::span<const double> pred, double fs) {
  ChunkReport r;
  r.pearson = pearson(gt, pred);
  r.pearson_degenerate = pearson_degenerate(gt, pred);
  r.mre = mre(gt, pred);
  const auto pg = detect_r_peaks(gt, fs);
  const auto pp = detect_r_peaks(pred, fs);
  r.vitals = vitals_from_peaks(pg, pp);
  r.gt_peaks = pg.indices;
  r.pred_peaks = pp.indices;
  return r;
}

void aggregate(EvalReport& report) {
  report.mean_pearson = 0.0;
  report.mean_mre.reset();
  double mre_sum = 0;
  std::size_t mre_count = 0;
  std::vector<VitalsPair> pairs;
  for (const auto& c : report.chunks) {
    report.mean_pearson += c.pearson;
    if (c.mre) {
      mre_sum += *c.mre;
      ++mre_count;
    }
    pairs.push_back(c.vitals);
  }
  if (!report.chunks.empty()) report.mean_pearson /= static_cast<double>(report.chunks.size());
  if (mre_count > 0) report.mean_mre = mre_sum / static_cast<double>(mre_count);
  report.vitals = vitals_mae(pairs);
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

void to_json(nlohmann::json& j, const EvalReport& r) {
  nlohmann::json chunks = nlohmann::json::array();
  for (const auto& c : r.chunks) {
    chunks.push_back({{"index", c.index},
                      {"source", c.source},
                      {"offset", c.offset},
                      {"pearson", c.pearson},
                      {"pearson_degenerate", c.pearson_degenerate},
                      {"mre", optional_json(c.mre)},
                      {"hr_gt_bpm", optional_json(c.vitals.hr_gt)},
                      {"hr_pred_bpm", optional_json(c.vitals.hr_pred)},
                      {"rmssd_gt_ms", optional_json(c.vitals.rmssd_gt)},
                      {"rmssd_pred_ms", optional_json(c.vitals.rmssd_pred)},
                      {"gt_peaks", c.gt_peaks},
                      {"pred_peaks", c.pred_peaks}});
  }
  j = {{"chunks", chunks},
       {"aggregate",
        {{"pearson", r.mean_pearson},
         {"mre", optional_json(r.mean_mre)},
         {"mae_hr_bpm", optional_json(r.vitals.mae_hr)},
         {"mae_rmssd_ms", optional_json(r.vitals.mae_rmssd)},
         {"hr_pairs", r.vitals.hr_pairs},
         {"rmssd_pairs", r.vitals.rmssd_pairs},
         {"hr_excluded", r.vitals.hr_excluded},
         {"rmssd_excluded", r.vitals.rmssd_excluded},
         {"chunks", r.chunks.size()},
         {"excluded_without_ground_truth", r.excluded_without_ground_truth}}}};
}

}  // namespace lifwav
