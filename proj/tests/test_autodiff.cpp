#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "lifwav/gradcheck.hpp"
#include "lifwav/ops.hpp"
#include "test_util.hpp"

using namespace lifwav;
using lifwav::testing::random_tensor;

namespace {

Tensor<double> col(std::vector<double> v) { return Tensor<double>::column(std::move(v)); }

AttentionParams<double> random_attention(std::size_t c, std::uint64_t seed) {
  const double r = 1.0 / std::sqrt(static_cast<double>(c));
  return {random_tensor(Shape{c, c, 1}, seed, -r, r),     random_tensor(Shape{c, 1}, seed + 1, -0.1, 0.1),
          random_tensor(Shape{c, c, 1}, seed + 2, -r, r), random_tensor(Shape{c, 1}, seed + 3, -0.1, 0.1),
          random_tensor(Shape{c, c, 1}, seed + 4, -r, r), random_tensor(Shape{c, 1}, seed + 5, -0.1, 0.1),
          random_tensor(Shape{c, c, 1}, seed + 6, -r, r), random_tensor(Shape{c, 1}, seed + 7, -0.1, 0.1)};
}

std::vector<Tensor<double>> all(const AttentionParams<double>& p) {
  return {p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo};
}

}  // namespace

TEST_CASE("conv1d identity kernel") {
  auto x = Tensor<double>::full(Shape{8, 1}, 1.0);
  auto w = Tensor<double>::from(Shape{1, 1, 1}, {1.0});
  auto y = conv1d(x, w, Tensor<double>{});
  CHECK(y.shape() == Shape{8, 1});
  for (double v : y.data()) CHECK(v == 1.0);
}

TEST_CASE("conv1d moving average with zero padding") {
  auto w = Tensor<double>::from(Shape{1, 1, 3}, {1.0 / 3, 1.0 / 3, 1.0 / 3});
  auto y = conv1d(col({1, 2, 3, 4}), w, Tensor<double>{});
  const std::vector<double> expected{1.0, 2.0, 3.0, 7.0 / 3.0};
  for (std::size_t i = 0; i < 4; ++i) CHECK(y.data()[i] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("conv1d stride 2 picks the even phase") {
  auto w = Tensor<double>::from(Shape{1, 1, 1}, {1.0});
  auto y = conv1d(col({5, 6, 7, 8}), w, Tensor<double>{}, 2);
  REQUIRE(y.length() == 2);
  CHECK(y.data()[0] == 5.0);
  CHECK(y.data()[1] == 7.0);
}

TEST_CASE("conv1d rejects bad inputs") {
  auto w = Tensor<double>::from(Shape{1, 2, 3}, std::vector<double>(6, 0.1));
  CHECK_THROWS_AS(conv1d(col({1, 2, 3, 4}), w, Tensor<double>{}), DimensionError);
  auto w1 = Tensor<double>::from(Shape{1, 1, 1}, {1.0});
  CHECK_THROWS_AS(conv1d(col({1, 2, 3}), w1, Tensor<double>{}, 2), DimensionError);
  auto x = col({1, 2, 3, 4});
  x.mutable_data()[1] = std::nan("");
  CHECK_THROWS_AS(conv1d(x, w1, Tensor<double>{}), NumericalError);
}

TEST_CASE("conv1d_transposed interleaving kernel") {
  // Center tap only: y[2t] = x[t], odd samples stay zero.
  auto w = Tensor<double>::from(Shape{1, 1, 3}, {0.0, 1.0, 0.0});
  auto y = conv1d_transposed(col({3, 4}), w, Tensor<double>{}, 2);
  const std::vector<double> expected{3, 0, 4, 0};
  REQUIRE(y.length() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(y.data()[i] == expected[i]);
}

TEST_CASE("conv1d_transposed is the adjoint of conv1d") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (int stride : {1, 2}) {
      auto x = random_tensor(Shape{32, 3}, seed, -1, 1, false);
      auto w = random_tensor(Shape{5, 3, 7}, seed + 10, -1, 1, false);
      auto y = random_tensor(Shape{32 / static_cast<std::size_t>(stride), 5}, seed + 20, -1, 1, false);
      // conv weight [out, in, k] is the same buffer as transposed weight [in', out', k] with in' = out.
      auto wt = Tensor<double>::from(Shape{5, 3, 7}, std::vector<double>(w.data().begin(), w.data().end()));
      auto cx = conv1d(x, w, Tensor<double>{}, stride);
      auto cty = conv1d_transposed(y, wt, Tensor<double>{}, stride);
      const double lhs = std::inner_product(cx.data().begin(), cx.data().end(), y.data().begin(), 0.0);
      const double rhs = std::inner_product(x.data().begin(), x.data().end(), cty.data().begin(), 0.0);
      CHECK(std::abs(lhs - rhs) < 1e-6);
    }
  }
}

TEST_CASE("polyphase split then exact inverse merge round trip") {
  // Split: stride-2 conv, channel c of the first half takes x[2t], channel C + c takes x[2t + 1].
  // Merge: transposed conv placing the first half back at even and second half at odd positions.
  const std::size_t c = 3, k = 5, mid = 2;
  std::vector<double> split(2 * c * c * k, 0.0), merge(2 * c * c * k, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    split[(ch * c + ch) * k + mid] = 1.0;
    split[((c + ch) * c + ch) * k + mid + 1] = 1.0;
    merge[(ch * c + ch) * k + mid] = 1.0;
    merge[((c + ch) * c + ch) * k + mid + 1] = 1.0;
  }
  auto w_split = Tensor<double>::from(Shape{2 * c, c, k}, split);
  auto w_merge = Tensor<double>::from(Shape{2 * c, c, k}, merge);
  auto x = random_tensor(Shape{16, c}, 9, -1, 1, false);
  auto y = conv1d_transposed(conv1d(x, w_split, Tensor<double>{}, 2), w_merge, Tensor<double>{}, 2);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y.data()[i] - x.data()[i]) < 1e-5);
}

TEST_CASE("conv gradients match finite differences") {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    for (int stride : {1, 2}) {
      auto x = random_tensor(Shape{12, 2}, seed);
      auto w = random_tensor(Shape{3, 2, 5}, seed + 1);
      auto b = random_tensor(Shape{3, 1}, seed + 2);
      auto r = check_gradients([&] { return conv1d(x, w, b, stride); }, {x, w, b});
      CHECK(r.max_relative_error < 1e-4);
      auto wt = random_tensor(Shape{2, 3, 5}, seed + 3);
      auto bt = random_tensor(Shape{3, 1}, seed + 4);
      auto rt = check_gradients([&] { return conv1d_transposed(x, wt, bt, stride); }, {x, wt, bt});
      CHECK(rt.max_relative_error < 1e-4);
    }
  }
}

TEST_CASE("self-attention single token") {
  auto p = random_attention(4, 3);
  auto x = random_tensor(Shape{1, 4}, 4, -1, 1, false);
  auto q = linear(x, p.wq, p.bq);
  auto k = linear(x, p.wk, p.bk);
  auto weights = attention_weights(q, k, 2);
  for (const auto& h : weights) CHECK(h[0] == 1.0);
  auto y = multi_head_self_attention(x, p, 2);
  auto expected = linear(linear(x, p.wv, p.bv), p.wo, p.bo);
  for (std::size_t i = 0; i < 4; ++i) CHECK(y.data()[i] == doctest::Approx(expected.data()[i]).epsilon(1e-12));
}

TEST_CASE("attention rows are stochastic") {
  auto p = random_attention(8, 21);
  auto x = random_tensor(Shape{16, 8}, 22, -2, 2, false);
  auto weights = attention_weights(linear(x, p.wq, p.bq), linear(x, p.wk, p.bk), 4);
  REQUIRE(weights.size() == 4);
  for (const auto& h : weights) {
    for (std::size_t i = 0; i < 16; ++i) {
      const double row = std::accumulate(h.begin() + static_cast<long>(i * 16),
                                         h.begin() + static_cast<long>((i + 1) * 16), 0.0);
      CHECK(std::abs(row - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("zero queries give uniform attention") {
  auto p = random_attention(8, 31);
  p.wq = Tensor<double>::zeros(Shape{8, 8, 1});
  p.bq = Tensor<double>::zeros(Shape{8, 1});
  p.wk = Tensor<double>::zeros(Shape{8, 8, 1});
  p.bk = Tensor<double>::zeros(Shape{8, 1});
  auto x = random_tensor(Shape{10, 8}, 32, -1, 1, false);
  auto y = multi_head_self_attention(x, p, 4);
  auto v = linear(x, p.wv, p.bv);
  std::vector<double> mean_v(8, 0.0);
  for (std::size_t c = 0; c < 8; ++c) {
    for (std::size_t t = 0; t < 10; ++t) mean_v[c] += v.at(t, c) / 10.0;
  }
  auto expected = linear(Tensor<double>::from(Shape{1, 8}, mean_v), p.wo, p.bo);
  for (std::size_t t = 0; t < 10; ++t) {
    for (std::size_t c = 0; c < 8; ++c) CHECK(y.at(t, c) == doctest::Approx(expected.at(0, c)).epsilon(1e-10));
  }
}

TEST_CASE("attention heads must divide channels") {
  auto x = random_tensor(Shape{4, 6}, 1, -1, 1, false);
  CHECK_THROWS_AS(scaled_dot_product_attention(x, x, x, 4), ConfigError);
}

TEST_CASE("attention gradients match finite differences") {
  for (std::uint64_t seed : {41u, 42u, 43u}) {
    auto p = random_attention(8, seed);
    auto x = random_tensor(Shape{6, 8}, seed + 100);
    auto wrt = all(p);
    wrt.push_back(x);
    auto r = check_gradients([&] { return multi_head_self_attention(x, p, 4); }, wrt);
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("layer norm examples") {
  auto ones = Tensor<double>::full(Shape{1, 4}, 1.0);
  auto zeros = Tensor<double>::zeros(Shape{1, 4});
  auto y = layer_norm(Tensor<double>::full(Shape{1, 4}, 5.0), ones, zeros);
  for (double v : y.data()) CHECK(v == 0.0);

  auto g2 = Tensor<double>::full(Shape{1, 2}, 1.0);
  auto b2 = Tensor<double>::zeros(Shape{1, 2});
  auto y2 = layer_norm(Tensor<double>::from(Shape{1, 2}, {1.0, 3.0}), g2, b2, 1e-12);
  CHECK(y2.data()[0] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(y2.data()[1] == doctest::Approx(1.0).epsilon(1e-9));

  auto beta = Tensor<double>::from(Shape{1, 4}, {0.5, -1.0, 2.0, 0.25});
  auto y3 = layer_norm(random_tensor(Shape{3, 4}, 5, -1, 1, false), zeros, beta);
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t c = 0; c < 4; ++c) CHECK(y3.at(t, c) == beta.data()[c]);
  }
}

TEST_CASE("layer norm gradients") {
  for (std::uint64_t seed : {51u, 52u, 53u}) {
    auto x = random_tensor(Shape{5, 6}, seed);
    auto g = random_tensor(Shape{1, 6}, seed + 1, 0.5, 1.5);
    auto b = random_tensor(Shape{1, 6}, seed + 2);
    CHECK(check_gradients([&] { return layer_norm(x, g, b); }, {x, g, b}).max_relative_error < 1e-4);
  }
  // Near-constant rows: variance around eps; looser tolerance at the singularity.
  auto x = random_tensor(Shape{4, 6}, 54, -3e-3, 3e-3);
  auto g = random_tensor(Shape{1, 6}, 55, 0.5, 1.5);
  auto b = random_tensor(Shape{1, 6}, 56);
  CHECK(check_gradients([&] { return layer_norm(x, g, b); }, {x, g, b}).max_relative_error < 1e-3);
}

TEST_CASE("pointwise examples") {
  auto r = relu(col({-1, 0, 2}));
  CHECK(r.data()[0] == 0.0);
  CHECK(r.data()[1] == 0.0);
  CHECK(r.data()[2] == 2.0);
  CHECK(sigmoid(Tensor<double>::scalar(0.0)).item() == 0.5);

  auto x = random_tensor(Shape{5, 2}, 61);
  auto d = sub(x, x);
  for (double v : d.data()) CHECK(v == 0.0);
  sum(d).backward();
  for (double g : x.grad()) CHECK(g == 0.0);  // +1 and -1 cancel

  auto a = random_tensor(Shape{4, 3}, 62);
  auto b = random_tensor(Shape{4, 3}, 63);
  sum(sub(a, b)).backward();
  for (double g : a.grad()) CHECK(g == 1.0);
  for (double g : b.grad()) CHECK(g == -1.0);

  CHECK_THROWS_AS(add(random_tensor(Shape{4, 3}, 1), random_tensor(Shape{4, 2}, 1)), DimensionError);
}

TEST_CASE("pointwise gradients") {
  for (std::uint64_t seed : {71u, 72u, 73u}) {
    auto a = random_tensor(Shape{6, 3}, seed);
    auto b = random_tensor(Shape{6, 3}, seed + 1);
    auto gate = random_tensor(Shape{1, 3}, seed + 2);
    auto fn = [&] { return mul(add(sigmoid(a), scale(relu(b), 0.7)), sigmoid(gate)); };
    CHECK(check_gradients(fn, {a, b, gate}).max_relative_error < 1e-4);
    auto fn2 = [&] { return mul(sub(a, b), a); };
    CHECK(check_gradients(fn2, {a, b}).max_relative_error < 1e-4);
  }
}

TEST_CASE("channel ops") {
  auto x = random_tensor(Shape{5, 8}, 81, -1, 1, false);
  auto [first, second] = split_halves(x);
  CHECK(first.shape() == Shape{5, 4});
  auto joined = concat<double>({first, second});
  CHECK(std::equal(joined.data().begin(), joined.data().end(), x.data().begin()));
  CHECK_THROWS_AS(split_halves(random_tensor(Shape{5, 3}, 1)), DimensionError);

  const std::vector<std::size_t> expected{0, 2, 4, 6, 1, 3, 5, 7};
  CHECK(shuffle_permutation(8, 4) == expected);
  auto s = channel_shuffle(x, 4);
  for (std::size_t c = 0; c < 8; ++c) {
    for (std::size_t t = 0; t < 5; ++t) CHECK(s.at(t, expected[c]) == x.at(t, c));
  }
  auto back = channel_unshuffle(s, 4);
  CHECK(std::equal(back.data().begin(), back.data().end(), x.data().begin()));
  CHECK_THROWS_AS(channel_shuffle(random_tensor(Shape{2, 6}, 1), 4), DimensionError);

  auto pooled = global_avg_pool(Tensor<double>::full(Shape{10, 3}, 1.0));
  CHECK(pooled.shape() == Shape{1, 3});
  for (double v : pooled.data()) CHECK(v == 1.0);
}

TEST_CASE("channel op gradients") {
  for (std::uint64_t seed : {91u, 92u, 93u}) {
    auto x = random_tensor(Shape{6, 8}, seed);
    auto fn = [&] {
      auto [e, o] = split_halves(channel_shuffle(x, 4));
      auto [pe, po] = polyphase_split(x);
      auto pooled = global_avg_pool(concat<double>({o, e}));
      return add(mul(interleave(pe, po), pooled), x);
    };
    CHECK(check_gradients(fn, {x}).max_relative_error < 1e-4);
  }
}

TEST_CASE("backward semantics") {
  auto x = random_tensor(Shape{7, 2}, 101);
  sum(x).backward();
  for (double g : x.grad()) CHECK(g == 1.0);
  sum(x).backward();
  for (double g : x.grad()) CHECK(g == 2.0);  // accumulates

  auto neg = random_tensor(Shape{7, 2}, 102, -2.0, -0.1);
  sum(relu(neg)).backward();
  for (double g : neg.grad()) CHECK(g == 0.0);

  CHECK_THROWS_AS(relu(x).backward(), ContractError);

  // Unreachable leaves keep no gradient.
  auto unused = random_tensor(Shape{3, 1}, 103);
  sum(scale(x, 2.0)).backward();
  CHECK_FALSE(unused.has_grad());
}

TEST_CASE("topological order visits each node once") {
  auto x = random_tensor(Shape{4, 2}, 111);
  auto y = relu(x);
  auto z = add(y, y);
  auto loss = sum(mul(z, y));
  auto order = topological_order(loss);
  std::vector<const void*> ptrs(order.begin(), order.end());
  std::sort(ptrs.begin(), ptrs.end());
  CHECK(std::adjacent_find(ptrs.begin(), ptrs.end()) == ptrs.end());
  CHECK(order.size() == 5);
  CHECK(order.back() == loss.node().get());
  CHECK(order.front() == x.node().get());
}

TEST_CASE("gradient fault hook corrupts the named op") {
  auto x = random_tensor(Shape{6, 2}, 121);
  auto w = random_tensor(Shape{2, 2, 3}, 122);
  set_gradient_fault("conv1d");
  const double bad = check_gradients([&] { return conv1d(x, w, Tensor<double>{}); }, {x, w}).max_relative_error;
  set_gradient_fault("");
  CHECK(bad > 1e-2);
}

TEST_CASE("float and double paths agree") {
  auto xd = random_tensor(Shape{16, 2}, 131, -1, 1, false);
  auto wd = random_tensor(Shape{3, 2, 5}, 132, -1, 1, false);
  auto xf = Tensor<float>::from(xd.shape(), std::vector<float>(xd.data().begin(), xd.data().end()));
  auto wf = Tensor<float>::from(wd.shape(), std::vector<float>(wd.data().begin(), wd.data().end()));
  auto yd = conv1d(xd, wd, Tensor<double>{});
  auto yf = conv1d(xf, wf, Tensor<float>{});
  for (std::size_t i = 0; i < yd.size(); ++i) CHECK(std::abs(yd.data()[i] - yf.data()[i]) < 1e-5);
}
