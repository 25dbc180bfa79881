#pragma once

// Recording ingestion, resampling, chunking and synthetic radar/ECG pairs.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace lifwav {

inline constexpr double kTargetRateHz = 200.0;
inline constexpr std::size_t kChunkLength = 1024;

struct Recording {
  std::vector<double> radar;  // chest displacement
  std::vector<double> ecg;    // empty for radar-only recordings
  double rate_hz = kTargetRateHz;
  std::string subject;
  std::string split;  // "train", "test", ... or empty
};

struct SignalChunk {
  std::vector<double> radar;
  std::vector<double> ecg;  // empty when no ground truth
  double rate_hz = kTargetRateHz;
  std::string source;       // subject id
  std::size_t offset = 0;   // first sample within the resampled recording
  std::string split;

  [[nodiscard]] bool has_ecg() const { return !ecg.empty(); }
};

// Windowed-sinc resampling; output length round(len * to / from).
std::vector<double> resample(std::span<const double> x, double from_hz, double to_hz);

struct Segment {
  std::size_t offset;
  std::size_t length;
};

// Disjoint chunks of `length` samples in order; the tail is dropped.
std::vector<Segment> segment(std::size_t total, std::size_t length = kChunkLength);

// Affine map onto [-1, 1]; a constant input maps to zeros.
std::vector<double> normalize_chunk(std::span<const double> x);

// Resampled, segmented and per-chunk normalized chunks of one recording.
std::vector<SignalChunk> chunk_recording(const Recording& rec, std::size_t length = kChunkLength,
                                         double target_hz = kTargetRateHz);

struct SynthParams {
  double heart_rate_bpm = 72.0;
  double hr_variability_bpm = 0.0;  // std of the instantaneous rate
  double resp_rate_bpm = 15.0;
  double resp_ratio = 2.0;  // respiration amplitude / cardiac amplitude
  double noise_std = 0.0;   // relative to the cardiac amplitude
  double rate_hz = kTargetRateHz;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthParams& p);
void from_json(const nlohmann::json& j, SynthParams& p);

struct SyntheticPair {
  Recording recording;
  std::vector<double> r_peak_times;  // seconds, within [0, duration)
  std::vector<double> cardiac;       // radar cardiac component
  std::vector<double> respiration;   // radar respiration component
};

// One PQRST wave of the synthetic ECG template.
struct EcgWave {
  const char* name;
  double offset_s;  // relative to the R peak
  double width_s;   // Gaussian standard deviation
  double amplitude;
};

std::span<const EcgWave> ecg_template();

SyntheticPair synthesize_pair(const SynthParams& p, double duration_s);

enum class SampleFormat { csv, f32 };

struct ManifestEntry {
  std::filesystem::path radar_path;
  std::optional<std::filesystem::path> ecg_path;
  double rate_hz = kTargetRateHz;
  std::string subject;
  std::string split;
  SampleFormat format = SampleFormat::csv;
};

void to_json(nlohmann::json& j, const ManifestEntry& e);

// Entries of a manifest file; relative paths are resolved against the
// manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& manifest, const std::vector<ManifestEntry>& entries);

// One column of values, or two columns (time, value). A non-numeric first
// line is taken as a header. With a time column the spacing must match
// `rate_hz` (pass 0 to skip the check).
std::vector<double> read_csv_signal(const std::filesystem::path& path, double rate_hz);
void write_csv_signal(const std::filesystem::path& path, std::span<const double> values, double rate_hz);
std::vector<double> read_f32_signal(const std::filesystem::path& path);
void write_f32_signal(const std::filesystem::path& path, std::span<const double> values);

std::vector<double> read_signal(const std::filesystem::path& path, SampleFormat format, double rate_hz);
void write_signal(const std::filesystem::path& path, SampleFormat format, std::span<const double> values,
                  double rate_hz);
// csv for ".csv", f32 for ".f32"/".bin"; DataError otherwise.
SampleFormat format_from_extension(const std::filesystem::path& path);

struct Dataset {
  std::vector<SignalChunk> chunks;
  std::vector<std::string> warnings;
};

Dataset load_dataset(const std::filesystem::path& manifest, std::size_t length = kChunkLength);

}  // namespace lifwav
