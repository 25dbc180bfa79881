#pragma once

// Loss assembly, Adam, the training loop, checkpoints and evaluation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lifwav/data.hpp"
#include "lifwav/model.hpp"
#include "lifwav/stft.hpp"
#include "lifwav/vitals.hpp"

namespace lifwav {

enum class LossVariant {
  temporal,          // L_T only
  single_window,     // L_T + alpha * STFT loss at one window
  multi_resolution,  // L_T + alpha * mean over windows
};

struct TrainConfig {
  std::size_t epochs = 1000;
  std::size_t batch_size = 256;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm clip; 0 disables
  LossConfig loss;
  LossVariant variant = LossVariant::multi_resolution;
  std::size_t single_window = 800;
  std::uint64_t seed = 0;
  std::size_t checkpoint_interval = 0;  // epochs; 0 writes only the final one

  static TrainConfig full();
  static TrainConfig desk();

  void validate(std::size_t signal_length) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Mean absolute difference; the target carries no gradient.
template <typename T>
Tensor<T> temporal_loss(const Tensor<T>& pred, const Tensor<T>& target);

template <typename T>
struct LossTerms {
  Tensor<T> total;
  double temporal = 0.0;
  double spectral = 0.0;  // 0 for the temporal-only variant
};

template <typename T>
LossTerms<T> total_loss(const Tensor<T>& pred, const Tensor<T>& target, const TrainConfig& cfg);

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update at step t (t >= 1) from the gradients held by
// the parameters. Throws NumericalError, before touching anything, if any
// gradient is non-finite.
template <typename T>
void adam_step(ParameterStore<T>& store, std::uint64_t t, const AdamConfig& cfg);

// Model plus optimizer progress; everything a checkpoint holds.
struct TrainState {
  Model<float> model;
  std::uint64_t step = 0;
  std::size_t epoch = 0;
};

// Writes `manifest` (JSON) and a sibling ".bin" blob of little-endian f32
// values: parameters and both Adam moments.
void save_checkpoint(const std::filesystem::path& manifest, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& manifest);

inline constexpr int kCheckpointFormatVersion = 1;

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::uint64_t step = 0;
  double total = 0.0, temporal = 0.0, spectral = 0.0;
  double seconds = 0.0;
  std::optional<double> holdout_pearson, holdout_mre;
};

void to_json(nlohmann::json& j, const EpochRecord& r);

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::vector<std::filesystem::path> checkpoints;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: nothing written
  std::vector<SignalChunk> holdout;
  std::function<void(const EpochRecord&)> on_epoch;
};

// Runs cfg.epochs epochs over `data` (chunks with ground truth). On a
// non-finite loss or gradient the parameters keep their last good values,
// the log is flushed and NumericalError is thrown.
TrainLog train(TrainState& state, const std::vector<SignalChunk>& data, const TrainConfig& cfg,
               const TrainOptions& options = {});

// Model output for one chunk's radar.
std::vector<double> predict(const Model<float>& model, const SignalChunk& chunk);

// Per-chunk metrics; chunks without ground truth are skipped and counted.
EvalReport evaluate(const Model<float>& model, const std::vector<SignalChunk>& data);

// Chunks marked for training and held out. Without explicit "train"/"test"
// marks the last 10% (rounded down) are held out.
struct DataSplit {
  std::vector<SignalChunk> train, holdout;
};
DataSplit split_dataset(const std::vector<SignalChunk>& chunks);

}  // namespace lifwav
