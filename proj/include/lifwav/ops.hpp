#pragma once

// Differentiable operations on Tensor<T>. Every function accepts float or
// double tensors; results join the graph whenever an input requires grad.

#include <cstddef>
#include <utility>
#include <vector>

#include "lifwav/tensor.hpp"

namespace lifwav {

// Stride-1 or stride-2 cross-correlation with symmetric zero padding of
// (k - 1) / 2 samples. `weight` is [out, in, k], `bias` is [out, 1] or
// undefined. Stride 1 preserves length; stride 2 halves it (even lengths only).
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride = 1);

// Adjoint geometry of conv1d: `weight` is [in, out, k], output length is
// stride * L. Without bias this is exactly the transpose of conv1d.
template <typename T>
Tensor<T> conv1d_transposed(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                            int stride = 2);

// Position-wise affine map; `weight` is [out, in, 1].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  return conv1d(x, weight, bias, 1);
}

// softmax(q k^T / sqrt(C / heads)) v, computed per head over channel slices.
template <typename T>
Tensor<T> scaled_dot_product_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                       std::size_t heads);

// Projection weights of one self-attention layer; each weight is [C, C, 1]
// and holds all heads side by side along the output dimension.
template <typename T>
struct AttentionParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename T>
Tensor<T> multi_head_self_attention(const Tensor<T>& x, const AttentionParams<T>& p, std::size_t heads) {
  auto q = linear(x, p.wq, p.bq);
  auto k = linear(x, p.wk, p.bk);
  auto v = linear(x, p.wv, p.bv);
  return linear(scaled_dot_product_attention(q, k, v, heads), p.wo, p.bo);
}

// Row-stochastic attention weights, one [L x L] row-major matrix per head.
template <typename T>
std::vector<std::vector<T>> attention_weights(const Tensor<T>& q, const Tensor<T>& k, std::size_t heads);

// Normalizes every position across channels; gamma and beta are [1, C].
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
// Elementwise product; `b` may also be [1, C] and is then broadcast over length.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_halves(const Tensor<T>& x);
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts);
// out[(c mod g) * (C / g) + c / g] = in[c]
template <typename T>
Tensor<T> channel_shuffle(const Tensor<T>& x, std::size_t groups);
template <typename T>
Tensor<T> channel_unshuffle(const Tensor<T>& x, std::size_t groups);
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

// Even- and odd-indexed samples along length (lazy wavelet split).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> polyphase_split(const Tensor<T>& x);
// Inverse of polyphase_split: out[2t] = even[t], out[2t + 1] = odd[t].
template <typename T>
Tensor<T> interleave(const Tensor<T>& even, const Tensor<T>& odd);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);
// Sum of |x|; subgradient 0 at 0.
template <typename T>
Tensor<T> sum_abs(const Tensor<T>& x);
template <typename T>
Tensor<T> mean_abs(const Tensor<T>& x);
// Sum of elementwise products with a constant weight vector.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, std::vector<T> weights);

// Index permutation used by channel_shuffle.
std::vector<std::size_t> shuffle_permutation(std::size_t channels, std::size_t groups);

}  // namespace lifwav
