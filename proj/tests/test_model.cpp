#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "lifwav/gradcheck.hpp"
#include "lifwav/model.hpp"
#include "test_util.hpp"

using namespace lifwav;
using lifwav::testing::random_tensor;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.scales = 2;
  c.channels = 4;
  c.csconv_filters = 1;
  c.heads = 2;
  c.reduction = 2;
  c.input_length = 64;
  return c;
}

ModelConfig projections_only(std::size_t channels) {
  ModelConfig c;
  c.channels = channels;
  c.csconv_filters = channels / 4;
  c.use_csconv = c.use_self_attention = c.use_channel_attention = false;
  c.learnable_split = c.learnable_merge = false;
  return c;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a.data()[i]) - double(b.data()[i])));
  return m;
}

template <typename T>
void fill(ParameterStore<T>& store, T value) {
  for (auto& p : store.params()) std::fill(p.value.mutable_data().begin(), p.value.mutable_data().end(), value);
}

// Moves every parameter off ReLU kinks (zero biases put exact zeros into
// activations of dead inputs, where finite differences see half a slope).
void jitter(ParameterStore<double>& store, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-0.05, 0.05);
  for (auto& p : store.params()) {
    for (auto& v : p.value.mutable_data()) v += dist(rng);
  }
}

}  // namespace

TEST_CASE("config validation names the field") {
  auto c = ModelConfig::full();
  CHECK_NOTHROW(c.validate());
  CHECK_NOTHROW(ModelConfig::desk().validate());
  c.heads = 5;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("heads"), ConfigError);
  c = ModelConfig::full();
  c.input_length = 1000;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("input_length"), ConfigError);
  c = ModelConfig::full();
  c.reduction = 3;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("reduction"), ConfigError);
  c = ModelConfig::full();
  c.csconv_filters = 7;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("config json round trip and unknown fields") {
  auto c = ModelConfig::desk();
  c.scales = 5;
  c.csconv_wiring = CsconvWiring::parallel;
  c.share_analysis_params = true;
  nlohmann::json j = c;
  auto back = j.get<ModelConfig>();
  CHECK(nlohmann::json(back) == j);

  auto partial = nlohmann::json{{"scales", 3}}.get<ModelConfig>();
  CHECK(partial.scales == 3);
  CHECK(partial.channels == 32);
  CHECK_THROWS_WITH_AS(nlohmann::json({{"chanels", 3}}).get<ModelConfig>(), doctest::Contains("chanels"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(nlohmann::json({{"scales", "four"}}).get<ModelConfig>(), doctest::Contains("scales"),
                       ConfigError);
}

TEST_CASE("lazy wavelet and Haar lifting on [1,2,3,4]") {
  auto x = Tensor<double>::column({1, 2, 3, 4});
  auto [even, odd] = polyphase_split(x);
  auto zero = [](const Tensor<double>& v) { return scale(v, 0.0); };
  auto lazy = lift(even, odd, zero, zero);
  CHECK(std::vector<double>(lazy.detail.data().begin(), lazy.detail.data().end()) == std::vector<double>{1, 3});
  CHECK(std::vector<double>(lazy.approx.data().begin(), lazy.approx.data().end()) == std::vector<double>{2, 4});

  auto haar = lift(
      even, odd, [](const Tensor<double>& v) { return v; }, [](const Tensor<double>& v) { return scale(v, 0.5); });
  CHECK(std::vector<double>(haar.detail.data().begin(), haar.detail.data().end()) ==
        std::vector<double>{-1, -1});
  CHECK(std::vector<double>(haar.approx.data().begin(), haar.approx.data().end()) ==
        std::vector<double>{1.5, 3.5});

  auto back = unlift(
      haar.approx, haar.detail, [](const Tensor<double>& v) { return v; },
      [](const Tensor<double>& v) { return scale(v, 0.5); });
  CHECK(max_abs_diff(interleave(back.even, back.odd), x) == 0.0);
}

TEST_CASE("fixed split and merge without predict/update is the lazy wavelet") {
  auto cfg = tiny_config();
  cfg.learnable_split = cfg.learnable_merge = false;
  cfg.use_csconv = cfg.use_self_attention = cfg.use_channel_attention = false;
  auto m = Model<double>::build(cfg, 1);
  auto f = random_tensor<double>(Shape{16, 4}, 3, -1, 1, false);
  auto out = m.analysis()[0].forward(f);
  auto [even, odd] = polyphase_split(f);
  // with P = U = identity blocks: detail = even - odd, approx = odd + detail
  CHECK(max_abs_diff(out.detail, sub(even, odd)) == 0.0);
  CHECK(max_abs_diff(out.approx, even) < 1e-15);

  auto ga = random_tensor<double>(Shape{8, 4}, 4, -1, 1, false);
  auto gd = random_tensor<double>(Shape{8, 4}, 5, -1, 1, false);
  auto g = m.synthesis()[0].merge_parts(gd, ga);
  CHECK(max_abs_diff(g, interleave(gd, ga)) == 0.0);
}

TEST_CASE("disabled block stages are the identity") {
  auto cfg = ModelConfig::desk();
  cfg.use_csconv = cfg.use_self_attention = cfg.use_channel_attention = false;
  auto m = Model<float>::build(cfg, 2);
  auto x = random_tensor<float>(Shape{32, 8}, 6, -1, 1, false);
  auto y = m.analysis()[0].predict.forward(x);
  CHECK(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
}

TEST_CASE("learnable split followed by merge reconstructs the input") {
  auto m = Model<float>::build(ModelConfig::desk(), 3);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto f = random_tensor<float>(Shape{128, 8}, seed, -1, 1, false);
    auto parts = m.analysis()[1].split_parts(f);
    CHECK(parts.even.shape() == Shape{64, 8});
    auto back = m.synthesis()[1].merge_parts(parts.even, parts.odd);
    CHECK(max_abs_diff(back, f) <= 1e-5);
  }
}

TEST_CASE("inverse lifting with the same predict/update recovers odd and even parts") {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
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
  CHECK(worst <= 1e-5);
}

TEST_CASE("shared lifting unit round trip through ILU") {
  auto cfg = ModelConfig::desk();
  auto m = Model<float>::build(cfg, 9);
  const auto& lu = m.analysis()[0];
  InverseLiftingUnit<float> ilu;
  ilu.predict = lu.predict;
  ilu.update = lu.update;
  ilu.merge = {polyphase_merge_kernel<float>(8, cfg.split_kernel), Tensor<float>::zeros(Shape{8, 1})};
  auto f = random_tensor<float>(Shape{256, 8}, 11, -1, 1, false);
  auto pair = lu.forward(f);
  CHECK(max_abs_diff(ilu.forward(pair.approx, pair.detail), f) <= 1e-5);
}

TEST_CASE("unit shape contracts and errors") {
  auto m = Model<double>::build(tiny_config(), 1);
  auto f = random_tensor<double>(Shape{16, 4}, 1, -1, 1, false);
  auto out = m.analysis()[0].forward(f);
  CHECK(out.approx.shape() == Shape{8, 4});
  CHECK(out.detail.shape() == Shape{8, 4});
  CHECK(m.synthesis()[0].forward(out.approx, out.detail).shape() == Shape{16, 4});
  CHECK_THROWS_AS((void)m.analysis()[0].forward(random_tensor<double>(Shape{15, 4}, 1)), DimensionError);
  CHECK_THROWS_AS((void)m.synthesis()[0].forward(out.approx, random_tensor<double>(Shape{4, 4}, 1)),
                  DimensionError);
  CHECK_THROWS_AS((void)m.forward(Tensor<double>::zeros(Shape{32, 1})), DimensionError);
}

TEST_CASE("feature geometry halves per scale") {
  auto m = Model<float>::build(ModelConfig::desk(), 4);
  auto radar = random_tensor<float>(Shape{1024, 1}, 2, -1, 1, false);
  auto features = m.intermediate_features(radar);
  REQUIRE(features.size() == 14);
  CHECK(features.front().name == "input_projection");
  CHECK(features.front().value.shape() == Shape{1024, 8});
  CHECK(features.back().name == "output_projection");
  CHECK(features.back().value.shape() == Shape{1024, 1});
  std::set<std::string> names;
  for (const auto& f : features) {
    names.insert(f.name);
    if (f.scale == 0) continue;
    const bool synthesis = f.name.rfind("synthesis", 0) == 0;
    const std::size_t expected = synthesis ? 1024 >> (f.scale - 1) : 1024 >> f.scale;
    CHECK(f.value.length() == expected);
    CHECK(f.value.channels() == 8);
  }
  CHECK(names.size() == 14);
  CHECK(names.count("analysis_detail_4") == 1);
  CHECK(names.count("synthesis_approx_1") == 1);

  auto again = Model<float>::build(ModelConfig::desk(), 4).intermediate_features(radar);
  for (std::size_t i = 0; i < features.size(); ++i) {
    CHECK(std::equal(features[i].value.data().begin(), features[i].value.data().end(),
                     again[i].value.data().begin()));
  }
  auto out = m.forward(radar);
  CHECK(std::equal(out.data().begin(), out.data().end(), features.back().value.data().begin()));
}

TEST_CASE("zero parameters give zero output") {
  auto m = Model<float>::build(ModelConfig::desk(), 5);
  fill(m.parameters(), 0.0f);
  auto out = m.forward(random_tensor<float>(Shape{1024, 1}, 3, -1, 1, false));
  CHECK(max_abs_diff(out, Tensor<float>::zeros(Shape{1024, 1})) == 0.0);
}

TEST_CASE("zero input through zero-bias block gives zero") {
  auto m = Model<double>::build(ModelConfig::desk(), 5);
  auto y = m.analysis()[0].update.forward(Tensor<double>::zeros(Shape{64, 8}));
  CHECK(max_abs_diff(y, Tensor<double>::zeros(Shape{64, 8})) == 0.0);
}

TEST_CASE("reduced model gradient check") {
  auto m = Model<double>::build(tiny_config(), 7);
  jitter(m.parameters(), 70);
  auto radar = random_tensor<double>(Shape{64, 1}, 8, -1, 1, false);
  std::vector<Tensor<double>> wrt;
  for (auto& p : m.parameters().params()) wrt.push_back(p.value);
  auto r = check_gradients([&] { return m.forward(radar); }, wrt);
  INFO(m.parameters().params()[r.worst_tensor].name, "[", r.worst_index, "]");
  CHECK(r.entries_checked == m.parameters().count());
  CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("every parameter receives gradient") {
  // eight filters per CSConv branch: a whole branch going dead at init is
  // then vanishingly unlikely, unlike the one- or two-filter reduced widths
  auto cfg = ModelConfig::full();
  cfg.scales = 2;
  cfg.input_length = 128;
  auto m = Model<double>::build(cfg, 8);
  jitter(m.parameters(), 80);
  // keep every squeeze ReLU open so the channel-attention path is live
  for (auto& p : m.parameters().params()) {
    if (p.name.ends_with("squeeze.weight")) std::fill(p.value.mutable_data().begin(), p.value.mutable_data().end(), 0.0);
    if (p.name.ends_with("squeeze.bias")) std::fill(p.value.mutable_data().begin(), p.value.mutable_data().end(), 0.5);
  }
  auto radar = random_tensor<double>(Shape{128, 1}, 9, -1, 1, false);
  mean_abs(m.forward(radar)).backward();
  for (const auto& p : m.parameters().params()) {
    // softmax is invariant to a per-row shift, so the key bias has no effect
    if (p.name.ends_with("attention.key.bias")) continue;
    INFO(p.name);
    REQUIRE(p.value.has_grad());
    const bool any = std::any_of(p.value.grad().begin(), p.value.grad().end(), [](double g) { return g != 0.0; });
    CHECK(any);
  }
}

TEST_CASE("parameter sharing toggles") {
  auto cfg = ModelConfig::desk();
  cfg.input_length = 64;
  auto f = random_tensor<float>(Shape{32, 8}, 10, -1, 1, false);
  for (bool shared : {true, false}) {
    cfg.share_analysis_params = shared;
    auto m = Model<float>::build(cfg, 11);
    auto before = m.analysis()[2].forward(f).approx;
    const std::string name = shared ? "lu.shared.predict.csconv.0.weight" : "lu.1.predict.csconv.0.weight";
    REQUIRE(m.parameters().find(name) != nullptr);
    for (auto& p : m.parameters().params()) {
      if (p.name == name) {
        for (auto& v : p.value.mutable_data()) v += 0.1f;
      }
    }
    auto after = m.analysis()[2].forward(f).approx;
    if (shared) {
      CHECK(max_abs_diff(before, after) > 0.0);
    } else {
      CHECK(max_abs_diff(before, after) == 0.0);
    }
  }
  auto base = count_params_flops(ModelConfig::desk()).params;
  auto nc1 = ModelConfig::desk();
  nc1.share_analysis_params = true;
  auto nc2 = ModelConfig::desk();
  nc2.share_synthesis_params = true;
  CHECK(count_params_flops(nc1).params < base);
  CHECK(count_params_flops(nc2).params < base);
}

TEST_CASE("parameter names are unique") {
  auto m = Model<float>::build(ModelConfig::full(), 0);
  std::set<std::string> names;
  for (const auto& p : m.parameters().params()) names.insert(p.name);
  CHECK(names.size() == m.parameters().params().size());
  CHECK(m.parameters().find("lu.2.predict.csconv.0.weight") != nullptr);
}

TEST_CASE("parameter counts") {
  auto full = count_params_flops(ModelConfig::full());
  MESSAGE("full profile params " << full.params << ", flops " << full.flops_per_forward);
  CHECK(full.params >= 690000);
  CHECK(full.params <= 1290000);
  CHECK(full.flops_per_forward > 0);

  for (std::size_t c : {4u, 8u, 32u}) {
    CHECK(count_params_flops(projections_only(c)).params == 62 * c + c + 1);
  }

  auto c16 = ModelConfig::full();
  c16.channels = 16;
  c16.csconv_filters = 4;
  const double ratio = double(full.params) / double(count_params_flops(c16).params);
  CHECK(ratio >= 3.5);
  CHECK(ratio <= 4.5);

  for (std::size_t n : {3u, 5u}) {
    auto c = ModelConfig::desk();
    c.scales = n;
    CHECK(count_params_flops(c).params != count_params_flops(ModelConfig::desk()).params);
  }
}
