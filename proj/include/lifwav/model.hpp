#pragma once

// Learnable lifting-wavelet network: input projection, N lifting units
// (analysis), N inverse lifting units (synthesis) and an output projection.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lifwav/ops.hpp"
#include "lifwav/tensor.hpp"

namespace lifwav {

enum class CsconvWiring {
  cascade,   // each branch consumes the previous branch's output
  parallel,  // every branch reads the block input
};

struct ModelConfig {
  std::size_t scales = 4;
  std::size_t channels = 32;
  std::vector<std::size_t> csconv_kernels{31, 33, 35, 37};
  std::size_t csconv_filters = 8;  // per branch; branches * filters == channels
  std::size_t projection_kernel = 31;
  std::size_t split_kernel = 31;
  std::size_t heads = 4;
  std::size_t reduction = 4;
  CsconvWiring csconv_wiring = CsconvWiring::cascade;
  bool share_analysis_params = false;
  bool share_synthesis_params = false;
  bool learnable_split = true;
  bool learnable_merge = true;
  bool use_csconv = true;
  bool use_self_attention = true;
  bool use_channel_attention = true;
  std::size_t input_length = 1024;

  // Full-size network (C = 32).
  static ModelConfig full();
  // Desk-scale network (C = 8).
  static ModelConfig desk();

  // Throws ConfigError naming the offending field.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
// Missing fields keep their defaults; unknown fields are rejected.
void from_json(const nlohmann::json& j, ModelConfig& c);

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  std::vector<T> adam_m;
  std::vector<T> adam_v;
};

// Every learnable tensor of a model, in creation order, each exactly once.
template <typename T>
class ParameterStore {
 public:
  Tensor<T> add(std::string name, Tensor<T> value);

  [[nodiscard]] std::vector<Param<T>>& params() { return params_; }
  [[nodiscard]] const std::vector<Param<T>>& params() const { return params_; }
  [[nodiscard]] const Param<T>* find(const std::string& name) const;
  [[nodiscard]] std::size_t count() const;
  void zero_grad();

 private:
  std::vector<Param<T>> params_;
};

template <typename T>
struct ConvLayer {
  Tensor<T> weight;
  Tensor<T> bias;
  [[nodiscard]] bool defined() const { return weight.defined(); }
};

struct BlockLayout {
  bool use_csconv = true;
  bool use_self_attention = true;
  bool use_channel_attention = true;
  CsconvWiring wiring = CsconvWiring::cascade;
  std::size_t heads = 4;
};

// Predict or update operator: CSConv -> (layer norm -> self-attention) ->
// channel attention. Disabled stages are skipped. Shape-preserving.
template <typename T>
struct PredictUpdateBlock {
  BlockLayout layout;
  std::vector<ConvLayer<T>> csconv;
  Tensor<T> norm_gamma, norm_beta;
  AttentionParams<T> attention;
  ConvLayer<T> squeeze, excite;

  [[nodiscard]] Tensor<T> forward(const Tensor<T>& x) const;
};

template <typename T>
struct LiftedPair {
  Tensor<T> approx;
  Tensor<T> detail;
};

// f_d = f_e - P(f_o), f_a = f_o + U(f_d)
template <typename T, typename Predict, typename Update>
LiftedPair<T> lift(const Tensor<T>& even, const Tensor<T>& odd, Predict&& predict, Update&& update) {
  auto detail = sub(even, predict(odd));
  auto approx = add(odd, update(detail));
  return {approx, detail};
}

template <typename T>
struct EvenOdd {
  Tensor<T> even;
  Tensor<T> odd;
};

// g_o = g_a - U(g_d), g_e = g_d + P(g_o)
template <typename T, typename Predict, typename Update>
EvenOdd<T> unlift(const Tensor<T>& approx, const Tensor<T>& detail, Predict&& predict, Update&& update) {
  auto odd = sub(approx, update(detail));
  auto even = add(detail, predict(odd));
  return {even, odd};
}

template <typename T>
struct LiftingUnit {
  ConvLayer<T> split;  // undefined: fixed even/odd polyphase split
  PredictUpdateBlock<T> predict;
  PredictUpdateBlock<T> update;

  [[nodiscard]] EvenOdd<T> split_parts(const Tensor<T>& f) const;
  [[nodiscard]] LiftedPair<T> forward(const Tensor<T>& f) const;
};

template <typename T>
struct InverseLiftingUnit {
  ConvLayer<T> merge;  // undefined: fixed interleave
  PredictUpdateBlock<T> predict;
  PredictUpdateBlock<T> update;

  [[nodiscard]] Tensor<T> merge_parts(const Tensor<T>& even, const Tensor<T>& odd) const;
  [[nodiscard]] Tensor<T> forward(const Tensor<T>& approx, const Tensor<T>& detail) const;
};

// Stride-2 split kernel [2C, C, k] selecting x[2t] into channel c and
// x[2t + 1] into channel C + c.
template <typename T>
Tensor<T> polyphase_split_kernel(std::size_t channels, std::size_t kernel);
// Transposed-conv kernel [2C, C, k] inverting the split for inputs ordered
// (g_o, g_e): channel c goes to odd samples, channel C + c to even ones.
template <typename T>
Tensor<T> polyphase_merge_kernel(std::size_t channels, std::size_t kernel);

struct NamedFeature {
  std::string name;
  std::size_t scale = 0;  // 0 for projections
  Tensor<float> value;
};

template <typename T>
class Model {
 public:
  static Model build(const ModelConfig& config, std::uint64_t seed);

  // s_r: [L, 1] with L == config().input_length; returns [L, 1].
  [[nodiscard]] Tensor<T> forward(const Tensor<T>& radar) const;

  // Input projection, per-scale analysis approximations/details, per-scale
  // synthesis approximations and the output, in that order.
  [[nodiscard]] std::vector<NamedFeature> intermediate_features(const Tensor<T>& radar) const;

  [[nodiscard]] const ModelConfig& config() const { return config_; }
  [[nodiscard]] ParameterStore<T>& parameters() { return store_; }
  [[nodiscard]] const ParameterStore<T>& parameters() const { return store_; }
  [[nodiscard]] const std::vector<LiftingUnit<T>>& analysis() const { return analysis_; }
  [[nodiscard]] const std::vector<InverseLiftingUnit<T>>& synthesis() const { return synthesis_; }

 private:
  Tensor<T> run(const Tensor<T>& radar, std::vector<NamedFeature>* features) const;

  ModelConfig config_;
  ParameterStore<T> store_;
  ConvLayer<T> input_projection_;
  ConvLayer<T> output_projection_;
  std::vector<LiftingUnit<T>> analysis_;
  std::vector<InverseLiftingUnit<T>> synthesis_;
};

struct ModelCost {
  std::size_t params = 0;
  std::uint64_t flops_per_forward = 0;
};

// Exact parameter count and forward FLOPs (2 per multiply-accumulate) for one
// input of config.input_length samples.
ModelCost count_params_flops(const ModelConfig& config);

}  // namespace lifwav
