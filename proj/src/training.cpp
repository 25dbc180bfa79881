#include "lifwav/training.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "lifwav/errors.hpp"
#include "lifwav/ops.hpp"

namespace lifwav {

namespace fs = std::filesystem;

TrainConfig TrainConfig::full() { return TrainConfig{}; }

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.epochs = 500;
  c.batch_size = 8;
  c.learning_rate = 1e-3;
  return c;
}

void TrainConfig::validate(std::size_t signal_length) const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate: must be positive");
  if (batch_size == 0) throw ConfigError("batch_size: must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1: must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2: must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps: must be positive");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm: must be non-negative");
  if (!(loss.alpha >= 0.0)) throw ConfigError("alpha: must be non-negative");
  if (variant == LossVariant::multi_resolution) {
    if (loss.windows.empty()) throw ConfigError("windows: at least one window needed");
    try {
      loss.validate(signal_length);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("windows: ") + e.what());
    }
  } else if (variant == LossVariant::single_window) {
    LossConfig one = loss;
    one.windows = {single_window};
    try {
      one.validate(signal_length);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("single_window: ") + e.what());
    }
  }
}

namespace {

const char* variant_name(LossVariant v) {
  switch (v) {
    case LossVariant::temporal:
      return "temporal";
    case LossVariant::single_window:
      return "single_window";
    case LossVariant::multi_resolution:
      break;
  }
  return "multi_resolution";
}

}  // namespace

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},
       {"clip_norm", c.clip_norm},
       {"alpha", c.loss.alpha},
       {"windows", c.loss.windows},
       {"hop_divisor", c.loss.hop_divisor},
       {"spectral_norm", c.loss.norm == SpectralNorm::complex_l1 ? "complex_l1" : "magnitude_l1"},
       {"loss_variant", variant_name(c.variant)},
       {"single_window", c.single_window},
       {"seed", c.seed},
       {"checkpoint_interval", c.checkpoint_interval}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("train: expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "epochs") {
        c.epochs = value.get<std::size_t>();
      } else if (key == "batch_size") {
        c.batch_size = value.get<std::size_t>();
      } else if (key == "learning_rate") {
        c.learning_rate = value.get<double>();
      } else if (key == "beta1") {
        c.beta1 = value.get<double>();
      } else if (key == "beta2") {
        c.beta2 = value.get<double>();
      } else if (key == "adam_eps") {
        c.adam_eps = value.get<double>();
      } else if (key == "clip_norm") {
        c.clip_norm = value.get<double>();
      } else if (key == "alpha") {
        c.loss.alpha = value.get<double>();
      } else if (key == "windows") {
        c.loss.windows = value.get<std::vector<std::size_t>>();
      } else if (key == "hop_divisor") {
        c.loss.hop_divisor = value.get<std::size_t>();
      } else if (key == "spectral_norm") {
        const auto s = value.get<std::string>();
        if (s == "complex_l1") {
          c.loss.norm = SpectralNorm::complex_l1;
        } else if (s == "magnitude_l1") {
          c.loss.norm = SpectralNorm::magnitude_l1;
        } else {
          throw ConfigError("spectral_norm: expected complex_l1 or magnitude_l1");
        }
      } else if (key == "loss_variant") {
        const auto s = value.get<std::string>();
        if (s == "temporal") {
          c.variant = LossVariant::temporal;
        } else if (s == "single_window") {
          c.variant = LossVariant::single_window;
        } else if (s == "multi_resolution") {
          c.variant = LossVariant::multi_resolution;
        } else {
          throw ConfigError("loss_variant: expected temporal, single_window or multi_resolution");
        }
      } else if (key == "single_window") {
        c.single_window = value.get<std::size_t>();
      } else if (key == "seed") {
        c.seed = value.get<std::uint64_t>();
      } else if (key == "checkpoint_interval") {
        c.checkpoint_interval = value.get<std::size_t>();
      } else {
        throw ConfigError(key + ": unknown training field");
      }
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(key + ": wrong type");
    }
  }
}

template <typename T>
Tensor<T> temporal_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("temporal_loss: prediction " + to_string(pred.shape()) + " vs target " +
                         to_string(target.shape()));
  }
  return mean_abs(sub(pred, target.detach()));
}

template <typename T>
LossTerms<T> total_loss(const Tensor<T>& pred, const Tensor<T>& target, const TrainConfig& cfg) {
  LossTerms<T> out;
  auto lt = temporal_loss(pred, target);
  out.temporal = static_cast<double>(lt.item());
  if (cfg.variant == LossVariant::temporal) {
    out.total = lt;
    return out;
  }
  Tensor<T> ls;
  if (cfg.variant == LossVariant::single_window) {
    const std::size_t w = cfg.single_window;
    ls = stft_loss(pred, target, w, cfg.loss.hop(w), cfg.loss.norm);
  } else {
    ls = mr_stft_loss(pred, target, cfg.loss);
  }
  out.spectral = static_cast<double>(ls.item());
  out.total = add(lt, scale(ls, static_cast<T>(cfg.loss.alpha)));
  return out;
}

template <typename T>
void adam_step(ParameterStore<T>& store, std::uint64_t t, const AdamConfig& cfg) {
  if (t == 0) throw ContractError("adam_step: step index starts at 1");
  for (const auto& p : store.params()) {
    if (!p.value.has_grad()) continue;
    for (T g : p.value.grad()) {
      if (!std::isfinite(static_cast<double>(g))) throw NumericalError("non-finite gradient in " + p.name);
    }
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& p : store.params()) {
    auto value = p.value.mutable_data();
    const bool has = p.value.has_grad();
    const auto grad = p.value.grad();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = has ? static_cast<double>(grad[i]) : 0.0;
      const double m = cfg.beta1 * static_cast<double>(p.adam_m[i]) + (1.0 - cfg.beta1) * g;
      const double v = cfg.beta2 * static_cast<double>(p.adam_v[i]) + (1.0 - cfg.beta2) * g * g;
      p.adam_m[i] = static_cast<T>(m);
      p.adam_v[i] = static_cast<T>(v);
      const double update = cfg.learning_rate * (m / c1) / (std::sqrt(v / c2) + cfg.eps);
      value[i] = static_cast<T>(static_cast<double>(value[i]) - update);
    }
  }
}

namespace {

void write_f32(std::ostream& out, std::span<const float> values) {
  for (float v : values) {
    auto bits = std::bit_cast<std::uint32_t>(v);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    out.write(reinterpret_cast<const char*>(&bits), 4);
  }
}

fs::path blob_path(const fs::path& manifest) {
  auto p = manifest;
  p.replace_extension(".bin");
  return p;
}

}  // namespace

void save_checkpoint(const fs::path& manifest, const TrainState& state) {
  const auto blob = blob_path(manifest);
  if (manifest.has_parent_path()) fs::create_directories(manifest.parent_path());
  std::ofstream bin(blob, std::ios::binary);
  if (!bin) throw DataError("cannot write checkpoint blob " + blob.string());
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& p : state.model.parameters().params()) {
    const auto& s = p.value.shape();
    const std::pair<const char*, std::span<const float>> parts[] = {
        {"value", p.value.data()}, {"adam_m", p.adam_m}, {"adam_v", p.adam_v}};
    for (const auto& [kind, values] : parts) {
      tensors.push_back({{"name", p.name},
                         {"kind", kind},
                         {"shape", {s.length, s.channels, s.taps}},
                         {"offset", offset},
                         {"count", values.size()}});
      write_f32(bin, values);
      offset += 4 * values.size();
    }
  }
  bin.close();
  if (!bin) throw DataError("failed writing checkpoint blob " + blob.string());
  nlohmann::json j = {{"format_version", kCheckpointFormatVersion},
                      {"model", state.model.config()},
                      {"adam_step", state.step},
                      {"epoch", state.epoch},
                      {"blob", blob.filename().string()},
                      {"blob_bytes", offset},
                      {"tensors", tensors}};
  std::ofstream out(manifest);
  if (!out) throw DataError("cannot write checkpoint " + manifest.string());
  out << j.dump(2) << '\n';
  if (!out) throw DataError("failed writing checkpoint " + manifest.string());
}

TrainState load_checkpoint(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw DataError("cannot open checkpoint " + manifest.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + manifest.string() + " is not valid JSON: " + e.what());
  }
  const std::string where = "checkpoint " + manifest.string();
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw DataError(where + ": unsupported format_version " + std::to_string(version));
    }
    const auto config = j.at("model").get<ModelConfig>();
    TrainState state{Model<float>::build(config, 0), j.at("adam_step").get<std::uint64_t>(),
                     j.value("epoch", std::size_t{0})};

    const auto blob = manifest.parent_path() / j.at("blob").get<std::string>();
    std::ifstream bin(blob, std::ios::binary);
    if (!bin) throw DataError(where + ": missing blob " + blob.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

    auto& params = state.model.parameters().params();
    std::vector<std::size_t> seen(params.size(), 0);
    for (const auto& t : j.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const auto kind = t.at("kind").get<std::string>();
      const auto shape = t.at("shape").get<std::vector<std::size_t>>();
      const auto offset = t.at("offset").get<std::size_t>();
      const auto count = t.at("count").get<std::size_t>();
      std::size_t idx = 0;
      while (idx < params.size() && params[idx].name != name) ++idx;
      if (idx == params.size()) throw DataError(where + ": unknown tensor " + name);
      auto& p = params[idx];
      const auto& s = p.value.shape();
      if (shape.size() != 3 || shape[0] != s.length || shape[1] != s.channels || shape[2] != s.taps ||
          count != s.size()) {
        throw DataError(where + ": shape mismatch for " + name + " (model expects " + to_string(s) + ")");
      }
      if (offset + 4 * count > bytes.size()) throw DataError(where + ": blob too short for " + name);
      std::span<float> dest;
      if (kind == "value") {
        dest = p.value.mutable_data();
      } else if (kind == "adam_m") {
        dest = p.adam_m;
      } else if (kind == "adam_v") {
        dest = p.adam_v;
      } else {
        throw DataError(where + ": unknown tensor kind " + kind);
      }
      for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, bytes.data() + offset + 4 * i, 4);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
        dest[i] = std::bit_cast<float>(bits);
      }
      if (kind == "value") ++seen[idx];
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (seen[i] == 0) throw DataError(where + ": no values for " + params[i].name);
    }
    return state;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": " + e.what());
  } catch (const ConfigError& e) {
    throw DataError(where + ": " + e.what());
  }
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = {{"epoch", r.epoch}, {"step", r.step}, {"loss", r.total}, {"temporal", r.temporal},
       {"spectral", r.spectral}, {"seconds", r.seconds}};
  if (r.holdout_pearson) j["holdout_pearson"] = *r.holdout_pearson;
  if (r.holdout_mre) j["holdout_mre"] = *r.holdout_mre;
}

namespace {

Tensor<float> as_column(const std::vector<double>& v) {
  return Tensor<float>::column(std::vector<float>(v.begin(), v.end()));
}

void check_chunk(const SignalChunk& c, std::size_t length, std::size_t index) {
  if (c.radar.size() != length) {
    throw DimensionError("chunk " + std::to_string(index) + " has " + std::to_string(c.radar.size()) +
                         " samples, model expects " + std::to_string(length));
  }
  if (!c.has_ecg()) throw DataError("training chunk " + std::to_string(index) + " has no ground-truth ECG");
}

void clip_gradients(ParameterStore<float>& store, double max_norm) {
  double sq = 0;
  for (const auto& p : store.params()) {
    if (!p.value.has_grad()) continue;
    for (float g : p.value.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (!(norm > max_norm)) return;
  const auto factor = static_cast<float>(max_norm / norm);
  for (auto& p : store.params()) {
    if (!p.value.has_grad()) continue;
    for (auto& g : p.value.mutable_grad()) g *= factor;
  }
}

}  // namespace

TrainLog train(TrainState& state, const std::vector<SignalChunk>& data, const TrainConfig& cfg,
               const TrainOptions& options) {
  const std::size_t length = state.model.config().input_length;
  cfg.validate(length);
  TrainLog log;
  if (cfg.epochs == 0) return log;
  if (data.empty()) throw DataError("training set is empty");
  for (std::size_t i = 0; i < data.size(); ++i) check_chunk(data[i], length, i);

  std::ofstream log_file;
  if (!options.out_dir.empty()) {
    fs::create_directories(options.out_dir);
    log_file.open(options.out_dir / "train_log.jsonl", std::ios::app);
    if (!log_file) throw DataError("cannot write " + (options.out_dir / "train_log.jsonl").string());
  }
  auto write_checkpoint = [&](const std::string& name) {
    if (options.out_dir.empty()) return;
    const auto path = options.out_dir / name;
    save_checkpoint(path, state);
    log.checkpoints.push_back(path);
  };

  const AdamConfig adam{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps};
  auto& store = state.model.parameters();
  std::vector<std::size_t> order(data.size());

  const std::size_t first_epoch = state.epoch;
  for (std::size_t e = first_epoch; e < first_epoch + cfg.epochs; ++e) {
    const auto started = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(cfg.seed + 0x9E3779B97F4A7C15ULL * (e + 1));
    std::shuffle(order.begin(), order.end(), rng);

    EpochRecord rec;
    rec.epoch = e + 1;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const auto inv = 1.0f / static_cast<float>(end - begin);
      store.zero_grad();
      try {
        for (std::size_t b = begin; b < end; ++b) {
          const auto& chunk = data[order[b]];
          auto pred = state.model.forward(as_column(chunk.radar));
          auto terms = total_loss(pred, as_column(chunk.ecg), cfg);
          const double value = static_cast<double>(terms.total.item());
          if (!std::isfinite(value)) {
            throw NumericalError("non-finite loss at epoch " + std::to_string(e + 1) + " on chunk " +
                                 std::to_string(order[b]));
          }
          rec.total += value;
          rec.temporal += terms.temporal;
          rec.spectral += terms.spectral;
          scale(terms.total, inv).backward();
        }
        if (cfg.clip_norm > 0.0) clip_gradients(store, cfg.clip_norm);
        adam_step(store, state.step + 1, adam);
      } catch (const NumericalError&) {
        store.zero_grad();
        if (log_file) log_file.flush();
        write_checkpoint("last_good.json");
        throw;
      }
      ++state.step;
    }
    const auto n = static_cast<double>(data.size());
    rec.total /= n;
    rec.temporal /= n;
    rec.spectral /= n;
    rec.step = state.step;
    state.epoch = e + 1;

    const bool last = e + 1 == first_epoch + cfg.epochs;
    const bool periodic = cfg.checkpoint_interval > 0 && (e + 1) % cfg.checkpoint_interval == 0;
    if ((last || periodic) && !options.holdout.empty()) {
      const auto report = evaluate(state.model, options.holdout);
      rec.holdout_pearson = report.mean_pearson;
      if (report.mean_mre) rec.holdout_mre = *report.mean_mre;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (periodic && !last) write_checkpoint("checkpoint_epoch" + std::to_string(e + 1) + ".json");
    if (last) write_checkpoint("final.json");
    if (log_file) log_file << nlohmann::json(rec).dump() << '\n' << std::flush;
    if (options.on_epoch) options.on_epoch(rec);
    log.epochs.push_back(rec);
  }
  return log;
}

std::vector<double> predict(const Model<float>& model, const SignalChunk& chunk) {
  NoGradGuard no_grad;
  auto out = model.forward(as_column(chunk.radar));
  return {out.data().begin(), out.data().end()};
}

EvalReport evaluate(const Model<float>& model, const std::vector<SignalChunk>& data) {
  EvalReport report;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& c = data[i];
    if (!c.has_ecg()) {
      ++report.excluded_without_ground_truth;
      continue;
    }
    auto r = score_chunk(c.ecg, predict(model, c), c.rate_hz);
    r.index = i;
    r.source = c.source;
    r.offset = c.offset;
    report.chunks.push_back(std::move(r));
  }
  aggregate(report);
  return report;
}

DataSplit split_dataset(const std::vector<SignalChunk>& chunks) {
  DataSplit s;
  const bool explicit_split = std::any_of(chunks.begin(), chunks.end(), [](const auto& c) { return !c.split.empty(); });
  if (explicit_split) {
    for (const auto& c : chunks) (c.split.empty() || c.split == "train" ? s.train : s.holdout).push_back(c);
    return s;
  }
  const std::size_t held = chunks.size() / 10;
  s.train.assign(chunks.begin(), chunks.end() - static_cast<long>(held));
  s.holdout.assign(chunks.end() - static_cast<long>(held), chunks.end());
  return s;
}

template Tensor<float> temporal_loss(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> temporal_loss(const Tensor<double>&, const Tensor<double>&);
template LossTerms<float> total_loss(const Tensor<float>&, const Tensor<float>&, const TrainConfig&);
template LossTerms<double> total_loss(const Tensor<double>&, const Tensor<double>&, const TrainConfig&);
template void adam_step(ParameterStore<float>&, std::uint64_t, const AdamConfig&);
template void adam_step(ParameterStore<double>&, std::uint64_t, const AdamConfig&);

}  // namespace lifwav
