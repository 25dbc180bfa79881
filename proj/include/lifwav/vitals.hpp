#pragma once

// Waveform fidelity metrics, R-peak detection and HR/RMSSD estimation.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace lifwav {

// Centered correlation; 0 when either centered norm is below 1e-12.
double pearson(std::span<const double> a, std::span<const double> b);
[[nodiscard]] bool pearson_degenerate(std::span<const double> a, std::span<const double> b);

// ||gt - pred||_1 / ||gt||_1; empty when gt is all zero.
std::optional<double> mre(std::span<const double> gt, std::span<const double> pred);

struct RPeakSeries {
  std::vector<std::size_t> indices;
  double fs = 0.0;
  bool too_short = false;  // fewer than 2 s of signal; no detection attempted

  // Successive intervals in seconds.
  [[nodiscard]] std::vector<double> rr() const;
};

// QRS detector: 5-15 Hz band-pass, derivative, squaring, 150 ms moving-window
// integration, adaptive thresholds with a 200 ms refractory period and
// searchback, then refinement to the ECG maximum within +-50 ms.
RPeakSeries detect_r_peaks(std::span<const double> ecg, double fs);

// Beats per minute from RR intervals in seconds; empty for no intervals.
std::optional<double> heart_rate(std::span<const double> rr);
// Milliseconds; empty for fewer than two intervals.
std::optional<double> rmssd(std::span<const double> rr);

struct VitalsPair {
  std::optional<double> hr_gt, hr_pred;        // bpm
  std::optional<double> rmssd_gt, rmssd_pred;  // ms
};

VitalsPair vitals_from_peaks(const RPeakSeries& gt, const RPeakSeries& pred);

struct VitalsMae {
  std::optional<double> mae_hr;     // bpm
  std::optional<double> mae_rmssd;  // ms
  std::size_t hr_pairs = 0, rmssd_pairs = 0;
  std::size_t hr_excluded = 0, rmssd_excluded = 0;
};

VitalsMae vitals_mae(std::span<const VitalsPair> pairs);

struct ChunkReport {
  std::size_t index = 0;
  std::string source;
  std::size_t offset = 0;
  double pearson = 0.0;
  bool pearson_degenerate = false;
  std::optional<double> mre;
  VitalsPair vitals;
  std::vector<std::size_t> gt_peaks, pred_peaks;
};

ChunkReport score_chunk(std::span<const double> gt, std::span<const double> pred, double fs);

struct EvalReport {
  std::vector<ChunkReport> chunks;
  std::size_t excluded_without_ground_truth = 0;
  double mean_pearson = 0.0;
  std::optional<double> mean_mre;
  VitalsMae vitals;
};

// Fills the aggregates from `report.chunks`.
void aggregate(EvalReport& report);

void to_json(nlohmann::json& j, const EvalReport& r);

}  // namespace lifwav
