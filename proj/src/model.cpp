#include "lifwav/model.hpp"

#include <cmath>
#include <random>
#include <set>
#include <unordered_set>

namespace lifwav {

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.channels = 8;
  c.csconv_filters = 2;
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw ConfigError(field + ": " + why); };
  if (scales == 0 || scales > 16) fail("scales", "must be in [1, 16]");
  if (channels == 0) fail("channels", "must be positive");
  if (input_length == 0 || input_length % (std::size_t{1} << scales) != 0) {
    fail("input_length", "must be a positive multiple of 2^scales");
  }
  if (heads == 0 || channels % heads != 0) fail("heads", "must divide channels");
  if (reduction == 0 || channels % reduction != 0) fail("reduction", "must divide channels");
  if (csconv_kernels.empty()) fail("csconv_kernels", "needs at least one branch");
  for (std::size_t k : csconv_kernels) {
    if (k % 2 == 0) fail("csconv_kernels", "kernel sizes must be odd");
  }
  if (csconv_filters * csconv_kernels.size() != channels) {
    fail("csconv_filters", "branches * filters must equal channels");
  }
  if (projection_kernel % 2 == 0) fail("projection_kernel", "must be odd");
  if (split_kernel % 2 == 0 || split_kernel < 3) fail("split_kernel", "must be odd and >= 3");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"scales", c.scales},
                     {"channels", c.channels},
                     {"csconv_kernels", c.csconv_kernels},
                     {"csconv_filters", c.csconv_filters},
                     {"projection_kernel", c.projection_kernel},
                     {"split_kernel", c.split_kernel},
                     {"heads", c.heads},
                     {"reduction", c.reduction},
                     {"csconv_wiring", c.csconv_wiring == CsconvWiring::cascade ? "cascade" : "parallel"},
                     {"share_analysis_params", c.share_analysis_params},
                     {"share_synthesis_params", c.share_synthesis_params},
                     {"learnable_split", c.learnable_split},
                     {"learnable_merge", c.learnable_merge},
                     {"use_csconv", c.use_csconv},
                     {"use_self_attention", c.use_self_attention},
                     {"use_channel_attention", c.use_channel_attention},
                     {"input_length", c.input_length}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw ConfigError("model: expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "scales") {
        c.scales = value.get<std::size_t>();
      } else if (key == "channels") {
        c.channels = value.get<std::size_t>();
      } else if (key == "csconv_kernels") {
        c.csconv_kernels = value.get<std::vector<std::size_t>>();
      } else if (key == "csconv_filters") {
        c.csconv_filters = value.get<std::size_t>();
      } else if (key == "projection_kernel") {
        c.projection_kernel = value.get<std::size_t>();
      } else if (key == "split_kernel") {
        c.split_kernel = value.get<std::size_t>();
      } else if (key == "heads") {
        c.heads = value.get<std::size_t>();
      } else if (key == "reduction") {
        c.reduction = value.get<std::size_t>();
      } else if (key == "csconv_wiring") {
        const auto s = value.get<std::string>();
        if (s == "cascade") {
          c.csconv_wiring = CsconvWiring::cascade;
        } else if (s == "parallel") {
          c.csconv_wiring = CsconvWiring::parallel;
        } else {
          throw ConfigError("csconv_wiring: expected \"cascade\" or \"parallel\"");
        }
      } else if (key == "share_analysis_params") {
        c.share_analysis_params = value.get<bool>();
      } else if (key == "share_synthesis_params") {
        c.share_synthesis_params = value.get<bool>();
      } else if (key == "learnable_split") {
        c.learnable_split = value.get<bool>();
      } else if (key == "learnable_merge") {
        c.learnable_merge = value.get<bool>();
      } else if (key == "use_csconv") {
        c.use_csconv = value.get<bool>();
      } else if (key == "use_self_attention") {
        c.use_self_attention = value.get<bool>();
      } else if (key == "use_channel_attention") {
        c.use_channel_attention = value.get<bool>();
      } else if (key == "input_length") {
        c.input_length = value.get<std::size_t>();
      } else {
        throw ConfigError(key + ": unknown model field");
      }
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(key + ": wrong type");
    }
  }
}

template <typename T>
Tensor<T> ParameterStore<T>::add(std::string name, Tensor<T> value) {
  if (find(name) != nullptr) throw ConfigError("duplicate parameter name " + name);
  value.set_requires_grad(true);
  const std::size_t n = value.size();
  params_.push_back({std::move(name), value, std::vector<T>(n, T(0)), std::vector<T>(n, T(0))});
  return value;
}

template <typename T>
const Param<T>* ParameterStore<T>::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <typename T>
std::size_t ParameterStore<T>::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

template <typename T>
Tensor<T> PredictUpdateBlock<T>::forward(const Tensor<T>& x) const {
  Tensor<T> y = x;
  if (layout.use_csconv) {
    std::vector<Tensor<T>> taps;
    Tensor<T> current = y;
    for (const auto& conv : csconv) {
      const Tensor<T>& input = layout.wiring == CsconvWiring::cascade ? current : y;
      current = relu(conv1d(input, conv.weight, conv.bias));
      taps.push_back(current);
    }
    y = channel_shuffle(concat(taps), csconv.size());
  }
  if (layout.use_self_attention) {
    y = multi_head_self_attention(layer_norm(y, norm_gamma, norm_beta), attention, layout.heads);
  }
  if (layout.use_channel_attention) {
    auto s = relu(linear(global_avg_pool(y), squeeze.weight, squeeze.bias));
    s = sigmoid(linear(s, excite.weight, excite.bias));
    y = mul(y, s);
  }
  return y;
}

template <typename T>
EvenOdd<T> LiftingUnit<T>::split_parts(const Tensor<T>& f) const {
  if (f.length() % 2 != 0) throw DimensionError("lifting unit: odd length " + std::to_string(f.length()));
  if (!split.defined()) {
    auto [even, odd] = polyphase_split(f);
    return {even, odd};
  }
  auto [even, odd] = split_halves(conv1d(f, split.weight, split.bias, 2));
  return {even, odd};
}

template <typename T>
LiftedPair<T> LiftingUnit<T>::forward(const Tensor<T>& f) const {
  auto parts = split_parts(f);
  return lift(
      parts.even, parts.odd, [this](const Tensor<T>& v) { return predict.forward(v); },
      [this](const Tensor<T>& v) { return update.forward(v); });
}

template <typename T>
Tensor<T> InverseLiftingUnit<T>::merge_parts(const Tensor<T>& even, const Tensor<T>& odd) const {
  if (!merge.defined()) return interleave(even, odd);
  return conv1d_transposed(concat<T>({odd, even}), merge.weight, merge.bias, 2);
}

template <typename T>
Tensor<T> InverseLiftingUnit<T>::forward(const Tensor<T>& approx, const Tensor<T>& detail) const {
  if (approx.shape() != detail.shape()) {
    throw DimensionError("inverse lifting unit: approximation " + to_string(approx.shape()) + " vs detail " +
                         to_string(detail.shape()));
  }
  auto parts = unlift(
      approx, detail, [this](const Tensor<T>& v) { return predict.forward(v); },
      [this](const Tensor<T>& v) { return update.forward(v); });
  return merge_parts(parts.even, parts.odd);
}

template <typename T>
Tensor<T> polyphase_split_kernel(std::size_t channels, std::size_t kernel) {
  const std::size_t mid = (kernel - 1) / 2;
  std::vector<T> w(2 * channels * channels * kernel, T(0));
  for (std::size_t c = 0; c < channels; ++c) {
    w[(c * channels + c) * kernel + mid] = T(1);
    w[((channels + c) * channels + c) * kernel + mid + 1] = T(1);
  }
  return Tensor<T>::from(Shape{2 * channels, channels, kernel}, std::move(w));
}

template <typename T>
Tensor<T> polyphase_merge_kernel(std::size_t channels, std::size_t kernel) {
  const std::size_t mid = (kernel - 1) / 2;
  std::vector<T> w(2 * channels * channels * kernel, T(0));
  for (std::size_t c = 0; c < channels; ++c) {
    w[(c * channels + c) * kernel + mid + 1] = T(1);          // g_o -> odd samples
    w[((channels + c) * channels + c) * kernel + mid] = T(1);  // g_e -> even samples
  }
  return Tensor<T>::from(Shape{2 * channels, channels, kernel}, std::move(w));
}

namespace {

template <typename T>
class Builder {
 public:
  Builder(const ModelConfig& config, ParameterStore<T>& store, std::uint64_t seed)
      : config_(config), store_(store), rng_(seed) {}

  Tensor<T> uniform(const std::string& name, Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> v(shape.size());
    for (auto& x : v) x = static_cast<T>(dist(rng_));
    return store_.add(name, Tensor<T>::from(shape, std::move(v)));
  }

  Tensor<T> constant(const std::string& name, Shape shape, T value) {
    return store_.add(name, Tensor<T>::full(shape, value));
  }

  ConvLayer<T> conv(const std::string& prefix, std::size_t out, std::size_t in, std::size_t k) {
    return {uniform(prefix + ".weight", Shape{out, in, k}, in * k), constant(prefix + ".bias", Shape{out, 1}, T(0))};
  }

  PredictUpdateBlock<T> block(const std::string& prefix) {
    const std::size_t c = config_.channels;
    PredictUpdateBlock<T> b;
    b.layout = {config_.use_csconv, config_.use_self_attention, config_.use_channel_attention,
                config_.csconv_wiring, config_.heads};
    if (config_.use_csconv) {
      std::size_t in = c;
      for (std::size_t i = 0; i < config_.csconv_kernels.size(); ++i) {
        b.csconv.push_back(conv(prefix + ".csconv." + std::to_string(i), config_.csconv_filters, in,
                                config_.csconv_kernels[i]));
        if (config_.csconv_wiring == CsconvWiring::cascade) in = config_.csconv_filters;
      }
    }
    if (config_.use_self_attention) {
      b.norm_gamma = constant(prefix + ".norm.gamma", Shape{1, c}, T(1));
      b.norm_beta = constant(prefix + ".norm.beta", Shape{1, c}, T(0));
      auto proj = [&](const char* which) { return conv(prefix + ".attention." + which, c, c, 1); };
      auto q = proj("query"), k = proj("key"), v = proj("value"), o = proj("out");
      b.attention = {q.weight, q.bias, k.weight, k.bias, v.weight, v.bias, o.weight, o.bias};
    }
    if (config_.use_channel_attention) {
      const std::size_t r = c / config_.reduction;
      b.squeeze = conv(prefix + ".channel_attention.squeeze", r, c, 1);
      b.excite = conv(prefix + ".channel_attention.excite", c, r, 1);
    }
    return b;
  }

  ConvLayer<T> split(const std::string& prefix) {
    const std::size_t c = config_.channels, k = config_.split_kernel;
    return {store_.add(prefix + ".weight", polyphase_split_kernel<T>(c, k)),
            constant(prefix + ".bias", Shape{2 * c, 1}, T(0))};
  }

  ConvLayer<T> merge(const std::string& prefix) {
    const std::size_t c = config_.channels, k = config_.split_kernel;
    return {store_.add(prefix + ".weight", polyphase_merge_kernel<T>(c, k)),
            constant(prefix + ".bias", Shape{c, 1}, T(0))};
  }

  LiftingUnit<T> lifting_unit(const std::string& prefix) {
    LiftingUnit<T> lu;
    if (config_.learnable_split) lu.split = split(prefix + ".split");
    lu.predict = block(prefix + ".predict");
    lu.update = block(prefix + ".update");
    return lu;
  }

  InverseLiftingUnit<T> inverse_lifting_unit(const std::string& prefix) {
    InverseLiftingUnit<T> ilu;
    if (config_.learnable_merge) ilu.merge = merge(prefix + ".merge");
    ilu.update = block(prefix + ".update");
    ilu.predict = block(prefix + ".predict");
    return ilu;
  }

 private:
  const ModelConfig& config_;
  ParameterStore<T>& store_;
  std::mt19937_64 rng_;
};

}  // namespace

template <typename T>
Model<T> Model<T>::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model<T> m;
  m.config_ = config;
  Builder<T> b(config, m.store_, seed);
  const std::size_t c = config.channels, k = config.projection_kernel;
  m.input_projection_ = b.conv("input_projection", c, 1, k);
  if (config.share_analysis_params) {
    m.analysis_.assign(config.scales, b.lifting_unit("lu.shared"));
  } else {
    for (std::size_t i = 1; i <= config.scales; ++i) m.analysis_.push_back(b.lifting_unit("lu." + std::to_string(i)));
  }
  if (config.share_synthesis_params) {
    m.synthesis_.assign(config.scales, b.inverse_lifting_unit("ilu.shared"));
  } else {
    for (std::size_t i = 1; i <= config.scales; ++i) {
      m.synthesis_.push_back(b.inverse_lifting_unit("ilu." + std::to_string(i)));
    }
  }
  m.output_projection_ = b.conv("output_projection", 1, c, k);
  return m;
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& radar) const {
  return run(radar, nullptr);
}

namespace {

template <typename T>
Tensor<float> to_float(const Tensor<T>& x) {
  return Tensor<float>::from(x.shape(), std::vector<float>(x.data().begin(), x.data().end()));
}

}  // namespace

template <typename T>
std::vector<NamedFeature> Model<T>::intermediate_features(const Tensor<T>& radar) const {
  std::vector<NamedFeature> features;
  NoGradGuard no_grad;
  run(radar, &features);
  return features;
}

template <typename T>
Tensor<T> Model<T>::run(const Tensor<T>& radar, std::vector<NamedFeature>* features) const {
  if (radar.shape() != Shape{config_.input_length, 1}) {
    throw DimensionError("model input must be [" + std::to_string(config_.input_length) + ", 1], got " +
                         to_string(radar.shape()));
  }
  auto record = [features](std::string name, std::size_t scale, const Tensor<T>& t) {
    if (features != nullptr) features->push_back({std::move(name), scale, to_float(t)});
  };
  Tensor<T> f = conv1d(radar, input_projection_.weight, input_projection_.bias);
  record("input_projection", 0, f);
  std::vector<Tensor<T>> details;
  for (std::size_t i = 0; i < analysis_.size(); ++i) {
    auto out = analysis_[i].forward(f);
    record("analysis_approx_" + std::to_string(i + 1), i + 1, out.approx);
    record("analysis_detail_" + std::to_string(i + 1), i + 1, out.detail);
    details.push_back(out.detail);
    f = out.approx;
  }
  Tensor<T> g = f;
  for (std::size_t i = synthesis_.size(); i-- > 0;) {
    g = synthesis_[i].forward(g, details[i]);
    record("synthesis_approx_" + std::to_string(i + 1), i + 1, g);
  }
  auto out = conv1d(g, output_projection_.weight, output_projection_.bias);
  record("output_projection", 0, out);
  return out;
}

ModelCost count_params_flops(const ModelConfig& config) {
  const auto model = Model<float>::build(config, 0);
  ModelCost cost;
  cost.params = model.parameters().count();
  NoGradGuard no_grad;
  FlopCounter counter;
  (void)model.forward(Tensor<float>::zeros(Shape{config.input_length, 1}));
  cost.flops_per_forward = counter.total();
  return cost;
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template struct PredictUpdateBlock<float>;
template struct PredictUpdateBlock<double>;
template struct LiftingUnit<float>;
template struct LiftingUnit<double>;
template struct InverseLiftingUnit<float>;
template struct InverseLiftingUnit<double>;
template class Model<float>;
template class Model<double>;
template Tensor<float> polyphase_split_kernel(std::size_t, std::size_t);
template Tensor<double> polyphase_split_kernel(std::size_t, std::size_t);
template Tensor<float> polyphase_merge_kernel(std::size_t, std::size_t);
template Tensor<double> polyphase_merge_kernel(std::size_t, std::size_t);

}  // namespace lifwav
