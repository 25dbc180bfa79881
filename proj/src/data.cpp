#include "lifwav/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "lifwav/errors.hpp"
#include "lifwav/filters.hpp"

namespace lifwav {

namespace fs = std::filesystem;

std::vector<double> resample(std::span<const double> x, double from_hz, double to_hz) {
  if (!(from_hz > 0.0) || !(to_hz > 0.0)) throw ConfigError("resample: rates must be positive");
  for (double v : x) {
    if (!std::isfinite(v)) throw DataError("resample: non-finite input sample");
  }
  if (from_hz == to_hz) return {x.begin(), x.end()};
  const auto out_len = static_cast<std::size_t>(std::llround(static_cast<double>(x.size()) * to_hz / from_hz));
  if (x.empty()) return {};

  // Cutoff just below the lower Nyquist, in cycles per input sample.
  const double cutoff = 0.475 * std::min(from_hz, to_hz) / from_hz;
  constexpr double zero_crossings = 16.0;
  const double half = std::ceil(zero_crossings / (2.0 * cutoff));
  const double beta = 8.0;
  const double i0_beta = std::cyl_bessel_i(0.0, beta);

  std::vector<double> y(out_len);
  for (std::size_t n = 0; n < out_len; ++n) {
    const double u = static_cast<double>(n) * from_hz / to_hz;
    const long lo = static_cast<long>(std::ceil(u - half));
    const long hi = static_cast<long>(std::floor(u + half));
    double acc = 0, norm = 0;
    for (long i = lo; i <= hi; ++i) {
      const double d = static_cast<double>(i) - u;
      const double r = d / (half + 1.0);
      const double arg = 2.0 * cutoff * d;
      const double s = arg == 0.0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
      const double w = s * std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0_beta;
      acc += w * extended_sample(x, i);
      norm += w;
    }
    y[n] = acc / norm;
  }
  return y;
}

std::vector<Segment> segment(std::size_t total, std::size_t length) {
  if (length == 0) throw ConfigError("segment length must be positive");
  std::vector<Segment> out;
  for (std::size_t off = 0; off + length <= total; off += length) out.push_back({off, length});
  return out;
}

std::vector<double> normalize_chunk(std::span<const double> x) {
  if (x.empty()) return {};
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  const double lo = *mn, hi = *mx;
  std::vector<double> y(x.size(), 0.0);
  if (!(hi > lo)) return y;
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = 2.0 * (x[i] - lo) / (hi - lo) - 1.0;
  // pin the extremes against rounding
  y[static_cast<std::size_t>(mn - x.begin())] = -1.0;
  y[static_cast<std::size_t>(mx - x.begin())] = 1.0;
  return y;
}

std::vector<SignalChunk> chunk_recording(const Recording& rec, std::size_t length, double target_hz) {
  if (rec.radar.empty()) throw DataError("recording " + rec.subject + " has no radar samples");
  if (!rec.ecg.empty() && rec.ecg.size() != rec.radar.size()) {
    throw DataError("recording " + rec.subject + ": radar has " + std::to_string(rec.radar.size()) +
                    " samples but ECG has " + std::to_string(rec.ecg.size()));
  }
  const auto radar = resample(rec.radar, rec.rate_hz, target_hz);
  const auto ecg = rec.ecg.empty() ? std::vector<double>{} : resample(rec.ecg, rec.rate_hz, target_hz);
  std::vector<SignalChunk> out;
  for (const auto& seg : segment(radar.size(), length)) {
    SignalChunk c;
    c.radar = normalize_chunk(std::span(radar).subspan(seg.offset, seg.length));
    if (!ecg.empty()) c.ecg = normalize_chunk(std::span(ecg).subspan(seg.offset, seg.length));
    c.rate_hz = target_hz;
    c.source = rec.subject;
    c.offset = seg.offset;
    c.split = rec.split;
    out.push_back(std::move(c));
  }
  return out;
}

void SynthParams::validate() const {
  if (!(heart_rate_bpm >= 40.0 && heart_rate_bpm <= 180.0)) throw ConfigError("hr: must lie in [40, 180] bpm");
  if (!(hr_variability_bpm >= 0.0 && hr_variability_bpm <= 30.0)) {
    throw ConfigError("hrv: must lie in [0, 30] bpm");
  }
  if (!(resp_rate_bpm >= 6.0 && resp_rate_bpm <= 30.0)) throw ConfigError("resp_rate: must lie in [6, 30] per min");
  if (!(resp_ratio >= 0.0)) throw ConfigError("resp_ratio: must be non-negative");
  if (!(noise_std >= 0.0)) throw ConfigError("noise: must be non-negative");
  if (!(rate_hz >= 50.0)) throw ConfigError("rate_hz: must be at least 50 Hz");
}

void to_json(nlohmann::json& j, const SynthParams& p) {
  j = {{"heart_rate_bpm", p.heart_rate_bpm}, {"hr_variability_bpm", p.hr_variability_bpm},
       {"resp_rate_bpm", p.resp_rate_bpm},   {"resp_ratio", p.resp_ratio},
       {"noise_std", p.noise_std},           {"rate_hz", p.rate_hz},
       {"seed", p.seed}};
}

void from_json(const nlohmann::json& j, SynthParams& p) {
  if (!j.is_object()) throw ConfigError("synth: expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "heart_rate_bpm") p.heart_rate_bpm = value.get<double>();
      else if (key == "hr_variability_bpm") p.hr_variability_bpm = value.get<double>();
      else if (key == "resp_rate_bpm") p.resp_rate_bpm = value.get<double>();
      else if (key == "resp_ratio") p.resp_ratio = value.get<double>();
      else if (key == "noise_std") p.noise_std = value.get<double>();
      else if (key == "rate_hz") p.rate_hz = value.get<double>();
      else if (key == "seed") p.seed = value.get<std::uint64_t>();
      else throw ConfigError(key + ": unknown synth field");
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(key + ": wrong type");
    }
  }
}

namespace {

// Offsets and widths in seconds relative to the R peak; amplitudes in units
// of the R wave.
constexpr std::array<EcgWave, 5> kEcgTemplate{{
    {"P", -0.200, 0.025, 0.15},
    {"Q", -0.025, 0.010, -0.12},
    {"R", 0.000, 0.010, 1.00},
    {"S", 0.025, 0.010, -0.25},
    {"T", 0.280, 0.045, 0.30},
}};

// Chest displacement per beat: an outward push peaking 120 ms after R and a
// slower return, with zero net area.
constexpr double kPushDelay = 0.12, kPushWidth = 0.04;
constexpr double kReturnDelay = 0.35, kReturnWidth = 0.08;

double gauss(double t, double mu, double sigma) {
  const double z = (t - mu) / sigma;
  return std::exp(-0.5 * z * z);
}

}  // namespace

std::span<const EcgWave> ecg_template() { return kEcgTemplate; }

SyntheticPair synthesize_pair(const SynthParams& p, double duration_s) {
  p.validate();
  if (!(duration_s > 0.0)) throw ConfigError("seconds: must be positive");
  std::mt19937_64 rng(p.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto next_rr = [&] {
    if (p.hr_variability_bpm == 0.0) return 60.0 / p.heart_rate_bpm;
    const double hr = std::clamp(p.heart_rate_bpm + p.hr_variability_bpm * normal(rng), 30.0, 220.0);
    return 60.0 / hr;
  };

  // Beats start up to one interval before t = 0 and run past the end so
  // waves straddling either boundary are complete.
  std::vector<double> beats;
  double t = -unit(rng) * 60.0 / p.heart_rate_bpm;
  while (t < duration_s + 1.0) {
    beats.push_back(t);
    t += next_rr();
  }
  const double resp_phase = 2.0 * std::numbers::pi * unit(rng);

  const auto n = static_cast<std::size_t>(std::llround(duration_s * p.rate_hz));
  SyntheticPair out;
  auto& rec = out.recording;
  rec.rate_hz = p.rate_hz;
  rec.subject = "synth-" + std::to_string(p.seed);
  rec.ecg.assign(n, 0.0);
  rec.radar.assign(n, 0.0);
  out.cardiac.assign(n, 0.0);
  out.respiration.assign(n, 0.0);

  const double push_area = kPushWidth, return_amp = push_area / kReturnWidth;
  for (std::size_t i = 0; i < n; ++i) {
    const double ti = static_cast<double>(i) / p.rate_hz;
    double ecg = 0, cardiac = 0;
    for (double b : beats) {
      const double tau = ti - b;
      if (tau < -0.5 || tau > 1.0) continue;
      for (const auto& w : kEcgTemplate) ecg += w.amplitude * gauss(tau, w.offset_s, w.width_s);
      cardiac += gauss(tau, kPushDelay, kPushWidth) - return_amp * gauss(tau, kReturnDelay, kReturnWidth);
    }
    const double resp = p.resp_ratio * std::sin(2.0 * std::numbers::pi * p.resp_rate_bpm / 60.0 * ti + resp_phase);
    rec.ecg[i] = ecg;
    out.cardiac[i] = cardiac;
    out.respiration[i] = resp;
    rec.radar[i] = cardiac + resp;
  }
  if (p.noise_std > 0.0) {
    for (auto& v : rec.radar) v += p.noise_std * normal(rng);
  }
  for (double b : beats) {
    if (b >= 0.0 && b < duration_s) out.r_peak_times.push_back(b);
  }
  return out;
}

void to_json(nlohmann::json& j, const ManifestEntry& e) {
  j = {{"radar_path", e.radar_path.generic_string()},
       {"ecg_path", e.ecg_path ? nlohmann::json(e.ecg_path->generic_string()) : nlohmann::json(nullptr)},
       {"rate_hz", e.rate_hz},
       {"subject", e.subject},
       {"split", e.split},
       {"format", e.format == SampleFormat::csv ? "csv" : "f32"}};
}

std::vector<ManifestEntry> read_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw DataError("cannot open manifest " + manifest.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + manifest.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_array()) throw DataError("manifest " + manifest.string() + " must be a JSON array");
  const fs::path base = manifest.parent_path();
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
  };
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& item = j[i];
    const std::string where = manifest.string() + " entry " + std::to_string(i);
    try {
      ManifestEntry e;
      e.radar_path = resolve(item.at("radar_path").get<std::string>());
      if (item.contains("ecg_path") && !item["ecg_path"].is_null()) {
        e.ecg_path = resolve(item["ecg_path"].get<std::string>());
      }
      e.rate_hz = item.at("rate_hz").get<double>();
      if (!(e.rate_hz > 0.0)) throw DataError(where + ": rate_hz must be positive");
      e.subject = item.value("subject", std::string{});
      e.split = item.value("split", std::string{});
      const auto format = item.value("format", std::string{"csv"});
      if (format == "csv") {
        e.format = SampleFormat::csv;
      } else if (format == "f32") {
        e.format = SampleFormat::f32;
      } else {
        throw DataError(where + ": unknown format \"" + format + "\"");
      }
      entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw DataError(where + ": " + ex.what());
    }
  }
  return entries;
}

void write_manifest(const fs::path& manifest, const std::vector<ManifestEntry>& entries) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : entries) j.push_back(e);
  std::ofstream out(manifest);
  if (!out) throw DataError("cannot write manifest " + manifest.string());
  out << j.dump(2) << '\n';
}

namespace {

bool parse_fields(const std::string& line, std::vector<double>& fields) {
  fields.clear();
  std::string token;
  std::stringstream ss(line);
  while (std::getline(ss, token, ',')) {
    const auto b = token.find_first_not_of(" \t\r");
    if (b == std::string::npos) return false;
    const char* start = token.c_str() + b;
    char* end = nullptr;
    const double v = std::strtod(start, &end);
    if (end == start) return false;
    while (*end == ' ' || *end == '\t' || *end == '\r') ++end;
    if (*end != '\0') return false;
    fields.push_back(v);
  }
  return !fields.empty();
}

}  // namespace

std::vector<double> read_csv_signal(const fs::path& path, double rate_hz) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open signal file " + path.string());
  std::vector<double> values, times, fields;
  std::string line;
  std::size_t lineno = 0, columns = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (!parse_fields(line, fields)) {
      if (lineno == 1) continue;  // header
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": not a numeric row");
    }
    if (columns == 0) columns = fields.size();
    if (fields.size() != columns || columns > 2) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(columns == 0 ? 1 : columns) + " columns");
    }
    if (!std::isfinite(fields.back())) throw DataError(path.string() + ":" + std::to_string(lineno) + ": non-finite value");
    if (columns == 2) times.push_back(fields[0]);
    values.push_back(fields.back());
  }
  if (values.empty()) throw DataError(path.string() + ": no samples");
  if (rate_hz > 0.0 && times.size() >= 2) {
    const double dt = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
    const double implied = 1.0 / dt;
    if (!(std::abs(implied - rate_hz) <= 0.01 * rate_hz)) {
      throw DataError(path.string() + ": time column implies " + std::to_string(implied) + " Hz but manifest says " +
                      std::to_string(rate_hz) + " Hz");
    }
  }
  return values;
}

void write_csv_signal(const fs::path& path, std::span<const double> values, double rate_hz) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "time,value\n";
  char buf[64];
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6f,%.9g\n", static_cast<double>(i) / rate_hz, values[i]);
    out << buf;
  }
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<double> read_f32_signal(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open signal file " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % 4 != 0) {
    throw DataError(path.string() + ": size " + std::to_string(bytes.size()) + " is not a positive multiple of 4");
  }
  std::vector<double> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, bytes.data() + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    const float f = std::bit_cast<float>(bits);
    if (!std::isfinite(f)) throw DataError(path.string() + ": non-finite sample " + std::to_string(i));
    values[i] = f;
  }
  return values;
}

void write_f32_signal(const fs::path& path, std::span<const double> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (double v : values) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    out.write(reinterpret_cast<const char*>(&bits), 4);
  }
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<double> read_signal(const fs::path& path, SampleFormat format, double rate_hz) {
  if (!fs::exists(path)) throw DataError("missing signal file " + path.string());
  return format == SampleFormat::csv ? read_csv_signal(path, rate_hz) : read_f32_signal(path);
}

void write_signal(const fs::path& path, SampleFormat format, std::span<const double> values, double rate_hz) {
  if (format == SampleFormat::csv) {
    write_csv_signal(path, values, rate_hz);
  } else {
    write_f32_signal(path, values);
  }
}

SampleFormat format_from_extension(const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".csv") return SampleFormat::csv;
  if (ext == ".f32" || ext == ".bin") return SampleFormat::f32;
  throw DataError(path.string() + ": unknown signal extension (expected .csv or .f32)");
}

Dataset load_dataset(const fs::path& manifest, std::size_t length) {
  Dataset ds;
  const auto entries = read_manifest(manifest);
  if (entries.empty()) ds.warnings.push_back("manifest " + manifest.string() + " lists no recordings");
  for (const auto& e : entries) {
    Recording rec;
    rec.radar = read_signal(e.radar_path, e.format, e.rate_hz);
    if (e.ecg_path) rec.ecg = read_signal(*e.ecg_path, e.format, e.rate_hz);
    rec.rate_hz = e.rate_hz;
    rec.subject = e.subject.empty() ? e.radar_path.stem().string() : e.subject;
    rec.split = e.split;
    try {
      auto chunks = chunk_recording(rec, length);
      if (chunks.empty()) {
        ds.warnings.push_back("recording " + e.radar_path.string() + " is shorter than one chunk");
      }
      for (auto& c : chunks) ds.chunks.push_back(std::move(c));
    } catch (const DataError& ex) {
      throw DataError(e.radar_path.string() + ": " + ex.what());
    }
  }
  return ds;
}

}  // namespace lifwav
