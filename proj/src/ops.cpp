#include "lifwav/ops.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <numeric>
#include <string>

namespace lifwav {

using detail::Node;

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

template <typename T>
void require_finite(const Tensor<T>& x, const char* op) {
  for (T v : x.data()) {
    if (!std::isfinite(v)) throw NumericalError(std::string(op) + ": non-finite input");
  }
}

template <typename T>
Node<T>* node_of(const Tensor<T>& t) {
  return t.defined() ? t.node().get() : nullptr;
}

template <typename T>
bool wants_grad(const Node<T>* n) {
  return n != nullptr && n->requires_grad;
}

// Output positions t with 0 <= stride * t + offset < in_len, clipped to [0, out_len).
struct TapRange {
  std::size_t begin;
  std::size_t end;
};

TapRange valid_range(long offset, long stride, long in_len, long out_len) {
  long lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  long hi = in_len - 1 - offset < 0 ? -1 : (in_len - 1 - offset) / stride;
  hi = std::min(hi, out_len - 1);
  if (hi < lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi + 1)};
}

void check_conv_shapes(const Shape& x, const Shape& w, std::size_t x_channel_dim_of_w, const char* op,
                       int stride) {
  if (w.taps % 2 == 0) throw DimensionError(std::string(op) + ": kernel width must be odd");
  if (stride != 1 && stride != 2) throw DimensionError(std::string(op) + ": stride must be 1 or 2");
  const std::size_t w_in = x_channel_dim_of_w == 0 ? w.length : w.channels;
  if (x.channels != w_in) {
    throw DimensionError(std::string(op) + ": input has " + std::to_string(x.channels) +
                         " channels, kernel expects " + std::to_string(w_in));
  }
}

}  // namespace

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride) {
  const Shape& ws = weight.shape();
  check_conv_shapes(x.shape(), ws, 1, "conv1d", stride);
  require_finite(x, "conv1d");
  const std::size_t len = x.length();
  if (stride == 2 && len % 2 != 0) throw DimensionError("conv1d: stride 2 needs an even length");
  const std::size_t cout = ws.length, cin = ws.channels, k = ws.taps;
  if (bias.defined() && bias.size() != cout) throw DimensionError("conv1d: bias size mismatch");
  const long pad = static_cast<long>(k - 1) / 2;
  const std::size_t out_len = len / static_cast<std::size_t>(stride);

  std::vector<T> out(out_len * cout, T(0));
  const T* xv = x.data().data();
  const T* wv = weight.data().data();
  for (std::size_t co = 0; co < cout; ++co) {
    T* o = out.data() + co * out_len;
    if (bias.defined()) std::fill(o, o + out_len, bias.data()[co]);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* xi = xv + ci * len;
      const T* wk = wv + (co * cin + ci) * k;
      for (std::size_t j = 0; j < k; ++j) {
        const long offset = static_cast<long>(j) - pad;
        const auto r = valid_range(offset, stride, static_cast<long>(len), static_cast<long>(out_len));
        const T w = wk[j];
        if (stride == 1) {
          for (std::size_t t = r.begin; t < r.end; ++t) o[t] += w * xi[static_cast<long>(t) + offset];
        } else {
          for (std::size_t t = r.begin; t < r.end; ++t) o[t] += w * xi[2 * t + offset];
        }
      }
    }
  }
  count_flops(2ULL * out_len * cout * cin * k);

  Node<T>* xn = node_of(x);
  Node<T>* wn = node_of(weight);
  Node<T>* bn = node_of(bias);
  std::vector<Tensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return detail::make_result<T>(
      Shape{out_len, cout}, std::move(out), "conv1d", inputs,
      [xn, wn, bn, len, out_len, cout, cin, k, pad, stride](Node<T>& self) {
        const T* g = self.grad.data();
        T* dx = wants_grad(xn) ? xn->ensure_grad().data() : nullptr;
        T* dw = wants_grad(wn) ? wn->ensure_grad().data() : nullptr;
        if (wants_grad(bn)) {
          auto& db = bn->ensure_grad();
          for (std::size_t co = 0; co < cout; ++co) {
            const T* go = g + co * out_len;
            db[co] += std::accumulate(go, go + out_len, T(0));
          }
        }
        const T* xv = xn->value.data();
        const T* wv = wn->value.data();
        for (std::size_t co = 0; co < cout; ++co) {
          const T* go = g + co * out_len;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const T* xi = xv + ci * len;
            for (std::size_t j = 0; j < k; ++j) {
              const long offset = static_cast<long>(j) - pad;
              const auto r = valid_range(offset, stride, static_cast<long>(len), static_cast<long>(out_len));
              const std::size_t widx = (co * cin + ci) * k + j;
              if (dw != nullptr) {
                T acc = 0;
                #pragma omp simd reduction(+ : acc)
                for (std::size_t t = r.begin; t < r.end; ++t) acc += go[t] * xi[stride * t + offset];
                dw[widx] += acc;
              }
              if (dx != nullptr) {
                T* dxi = dx + ci * len;
                const T w = wv[widx];
                for (std::size_t t = r.begin; t < r.end; ++t) dxi[stride * t + offset] += w * go[t];
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> conv1d_transposed(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride) {
  const Shape& ws = weight.shape();
  check_conv_shapes(x.shape(), ws, 0, "conv1d_transposed", stride);
  require_finite(x, "conv1d_transposed");
  const std::size_t len = x.length();
  const std::size_t cin = ws.length, cout = ws.channels, k = ws.taps;
  if (bias.defined() && bias.size() != cout) throw DimensionError("conv1d_transposed: bias size mismatch");
  const long pad = static_cast<long>(k - 1) / 2;
  const std::size_t out_len = len * static_cast<std::size_t>(stride);

  std::vector<T> out(out_len * cout, T(0));
  const T* xv = x.data().data();
  const T* wv = weight.data().data();
  for (std::size_t co = 0; co < cout; ++co) {
    T* o = out.data() + co * out_len;
    if (bias.defined()) std::fill(o, o + out_len, bias.data()[co]);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* xi = xv + ci * len;
      const T* wk = wv + (ci * cout + co) * k;
      for (std::size_t j = 0; j < k; ++j) {
        const long offset = static_cast<long>(j) - pad;
        const auto r = valid_range(offset, stride, static_cast<long>(out_len), static_cast<long>(len));
        const T w = wk[j];
        for (std::size_t t = r.begin; t < r.end; ++t) o[stride * t + offset] += w * xi[t];
      }
    }
  }
  count_flops(2ULL * len * cout * cin * k);

  Node<T>* xn = node_of(x);
  Node<T>* wn = node_of(weight);
  Node<T>* bn = node_of(bias);
  std::vector<Tensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return detail::make_result<T>(
      Shape{out_len, cout}, std::move(out), "conv1d_transposed", inputs,
      [xn, wn, bn, len, out_len, cout, cin, k, pad, stride](Node<T>& self) {
        const T* g = self.grad.data();
        T* dx = wants_grad(xn) ? xn->ensure_grad().data() : nullptr;
        T* dw = wants_grad(wn) ? wn->ensure_grad().data() : nullptr;
        if (wants_grad(bn)) {
          auto& db = bn->ensure_grad();
          for (std::size_t co = 0; co < cout; ++co) {
            const T* go = g + co * out_len;
            db[co] += std::accumulate(go, go + out_len, T(0));
          }
        }
        const T* xv = xn->value.data();
        const T* wv = wn->value.data();
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const T* xi = xv + ci * len;
          for (std::size_t co = 0; co < cout; ++co) {
            const T* go = g + co * out_len;
            for (std::size_t j = 0; j < k; ++j) {
              const long offset = static_cast<long>(j) - pad;
              const auto r = valid_range(offset, stride, static_cast<long>(out_len), static_cast<long>(len));
              const std::size_t widx = (ci * cout + co) * k + j;
              if (dw != nullptr) {
                T acc = 0;
                #pragma omp simd reduction(+ : acc)
                for (std::size_t t = r.begin; t < r.end; ++t) acc += xi[t] * go[stride * t + offset];
                dw[widx] += acc;
              }
              if (dx != nullptr) {
                T* dxi = dx + ci * len;
                const T w = wv[widx];
                for (std::size_t t = r.begin; t < r.end; ++t) dxi[t] += w * go[stride * t + offset];
              }
            }
          }
        }
      });
}

namespace {

// Per-head softmax(q k^T * scale) rows, [heads][L * L].
// exp(x) for x <= 0. The float version is a branch-free Cephes-style
// polynomial the compiler can vectorize (relative error ~2e-7).
inline double exp_nonpositive(double x) { return std::exp(x); }

#pragma omp declare simd
inline float exp_nonpositive(float x) {
  x = x < -87.0f ? -87.0f : x;
  const float y = x * 1.44269504088896341f;
  const auto n = static_cast<std::int32_t>(y - 0.5f);
  const auto fn = static_cast<float>(n);
  const float r = x - fn * 0.693359375f + fn * 2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  const float z = p * r * r + r + 1.0f;
  return z * std::bit_cast<float>(static_cast<std::uint32_t>(n + 127) << 23);
}

// Softmax row i of one head: row[j] = softmax_j(scale * sum_c q[c][i] k[c][j]).
template <typename T>
void softmax_row(const T* q, const T* k, std::size_t len, std::size_t c0, std::size_t dh, std::size_t i, T scale,
                 T* row) {
  {
    const T qi = q[c0 * len + i] * scale;
    const T* kc = k + c0 * len;
#pragma omp simd
    for (std::size_t j = 0; j < len; ++j) row[j] = qi * kc[j];
  }
  for (std::size_t c = c0 + 1; c < c0 + dh; ++c) {
    const T qi = q[c * len + i] * scale;
    const T* kc = k + c * len;
#pragma omp simd
    for (std::size_t j = 0; j < len; ++j) row[j] += qi * kc[j];
  }
  T mx = row[0];
#pragma omp simd reduction(max : mx)
  for (std::size_t j = 0; j < len; ++j) mx = row[j] > mx ? row[j] : mx;
  T total = 0;
#pragma omp simd reduction(+ : total)
  for (std::size_t j = 0; j < len; ++j) {
    row[j] = exp_nonpositive(row[j] - mx);
    total += row[j];
  }
  const T inv = T(1) / total;
#pragma omp simd
  for (std::size_t j = 0; j < len; ++j) row[j] *= inv;
}

template <typename T>
std::vector<std::vector<T>> softmax_scores(const T* q, const T* k, std::size_t len, std::size_t channels,
                                           std::size_t heads) {
  const std::size_t dh = channels / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<std::vector<T>> probs(heads, std::vector<T>(len * len));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < len; ++i) softmax_row(q, k, len, h * dh, dh, i, scale, probs[h].data() + i * len);
  }
  return probs;
}

}  // namespace

template <typename T>
std::vector<std::vector<T>> attention_weights(const Tensor<T>& q, const Tensor<T>& k, std::size_t heads) {
  require_same_shape(q, k, "attention_weights");
  if (heads == 0 || q.channels() % heads != 0) {
    throw ConfigError("attention: channels not divisible by heads");
  }
  return softmax_scores(q.data().data(), k.data().data(), q.length(), q.channels(), heads);
}

template <typename T>
Tensor<T> scaled_dot_product_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                       std::size_t heads) {
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  if (heads == 0 || q.channels() % heads != 0) {
    throw ConfigError("attention: channels not divisible by heads");
  }
  const std::size_t len = q.length(), channels = q.channels(), dh = channels / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  auto probs = softmax_scores(q.data().data(), k.data().data(), len, channels, heads);
  const T* vv = v.data().data();
  std::vector<T> out(len * channels, T(0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < len; ++i) {
      const T* row = probs[h].data() + i * len;
      for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) {
        const T* vc = vv + c * len;
        T acc = 0;
#pragma omp simd reduction(+ : acc)
        for (std::size_t j = 0; j < len; ++j) acc += row[j] * vc[j];
        out[c * len + i] = acc;
      }
    }
  }
  count_flops(4ULL * len * len * channels + 3ULL * len * len * heads);

  Node<T>* qn = node_of(q);
  Node<T>* kn = node_of(k);
  Node<T>* vn = node_of(v);
  return detail::make_result<T>(
      Shape{len, channels}, std::move(out), "attention", {&q, &k, &v},
      [qn, kn, vn, len, heads, dh, scale, probs = std::move(probs)](Node<T>& self) {
        const T* g = self.grad.data();
        const T* qv = qn->value.data();
        const T* kv = kn->value.data();
        const T* vv = vn->value.data();
        T* dq = wants_grad(qn) ? qn->ensure_grad().data() : nullptr;
        T* dk = wants_grad(kn) ? kn->ensure_grad().data() : nullptr;
        T* dv = wants_grad(vn) ? vn->ensure_grad().data() : nullptr;
        std::vector<T> ds(len);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t c0 = h * dh, c1 = (h + 1) * dh;
          for (std::size_t i = 0; i < len; ++i) {
            const T* p = probs[h].data() + i * len;
            // dP[j] = sum_c g[c][i] v[c][j]
            std::fill(ds.begin(), ds.end(), T(0));
            for (std::size_t c = c0; c < c1; ++c) {
              const T gi = g[c * len + i];
              const T* vc = vv + c * len;
#pragma omp simd
              for (std::size_t j = 0; j < len; ++j) ds[j] += gi * vc[j];
              if (dv != nullptr) {
                T* dvc = dv + c * len;
#pragma omp simd
                for (std::size_t j = 0; j < len; ++j) dvc[j] += p[j] * gi;
              }
            }
            // softmax backward, folded with the score scale
            T dot = 0;
#pragma omp simd reduction(+ : dot)
            for (std::size_t j = 0; j < len; ++j) dot += ds[j] * p[j];
#pragma omp simd
            for (std::size_t j = 0; j < len; ++j) ds[j] = p[j] * (ds[j] - dot) * scale;
            for (std::size_t c = c0; c < c1; ++c) {
              if (dq != nullptr) {
                const T* kc = kv + c * len;
                T acc = 0;
#pragma omp simd reduction(+ : acc)
                for (std::size_t j = 0; j < len; ++j) acc += ds[j] * kc[j];
                dq[c * len + i] += acc;
              }
              if (dk != nullptr) {
                const T qi = qv[c * len + i];
                T* dkc = dk + c * len;
#pragma omp simd
                for (std::size_t j = 0; j < len; ++j) dkc[j] += ds[j] * qi;
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t len = x.length(), channels = x.channels();
  if (gamma.size() != channels || beta.size() != channels) {
    throw DimensionError("layer_norm: affine parameters do not match channel count");
  }
  if (!(eps > T(0))) throw ConfigError("layer_norm: eps must be positive");
  const T* xv = x.data().data();
  std::vector<T> xhat(len * channels);
  std::vector<T> inv_std(len);
  std::vector<T> out(len * channels);
  const T inv_c = T(1) / static_cast<T>(channels);
  for (std::size_t t = 0; t < len; ++t) {
    T mu = 0;
    for (std::size_t c = 0; c < channels; ++c) mu += xv[c * len + t];
    mu *= inv_c;
    T var = 0;
    for (std::size_t c = 0; c < channels; ++c) {
      const T d = xv[c * len + t] - mu;
      var += d * d;
    }
    var *= inv_c;
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[t] = is;
    for (std::size_t c = 0; c < channels; ++c) {
      const T xh = (xv[c * len + t] - mu) * is;
      xhat[c * len + t] = xh;
      out[c * len + t] = gamma.data()[c] * xh + beta.data()[c];
    }
  }
  count_flops(8ULL * len * channels);

  Node<T>* xn = node_of(x);
  Node<T>* gn = node_of(gamma);
  Node<T>* bn = node_of(beta);
  return detail::make_result<T>(
      Shape{len, channels}, std::move(out), "layer_norm", {&x, &gamma, &beta},
      [xn, gn, bn, len, channels, inv_c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        const T* g = self.grad.data();
        if (wants_grad(gn)) {
          auto& dg = gn->ensure_grad();
          for (std::size_t c = 0; c < channels; ++c) {
            T acc = 0;
            for (std::size_t t = 0; t < len; ++t) acc += g[c * len + t] * xhat[c * len + t];
            dg[c] += acc;
          }
        }
        if (wants_grad(bn)) {
          auto& db = bn->ensure_grad();
          for (std::size_t c = 0; c < channels; ++c) {
            db[c] += std::accumulate(g + c * len, g + (c + 1) * len, T(0));
          }
        }
        if (wants_grad(xn)) {
          auto& dx = xn->ensure_grad();
          const T* gam = gn->value.data();
          for (std::size_t t = 0; t < len; ++t) {
            T mean_d = 0, mean_dx = 0;
            for (std::size_t c = 0; c < channels; ++c) {
              const T d = g[c * len + t] * gam[c];
              mean_d += d;
              mean_dx += d * xhat[c * len + t];
            }
            mean_d *= inv_c;
            mean_dx *= inv_c;
            for (std::size_t c = 0; c < channels; ++c) {
              const T d = g[c * len + t] * gam[c];
              dx[c * len + t] += inv_std[t] * (d - mean_d - xhat[c * len + t] * mean_dx);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (T& v : out) v = v > T(0) ? v : T(0);
  Node<T>* xn = node_of(x);
  return detail::make_result<T>(x.shape(), std::move(out), "relu", {&x}, [xn](Node<T>& self) {
    auto& dx = xn->ensure_grad();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (xn->value[i] > T(0)) dx[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.data()[i];
    out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  }
  Node<T>* xn = node_of(x);
  return detail::make_result<T>(x.shape(), std::move(out), "sigmoid", {&x}, [xn](Node<T>& self) {
    auto& dx = xn->ensure_grad();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const T s = self.value[i];
      dx[i] += self.grad[i] * s * (T(1) - s);
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  Node<T>* an = node_of(a);
  Node<T>* bn = node_of(b);
  return detail::make_result<T>(a.shape(), std::move(out), "add", {&a, &b}, [an, bn](Node<T>& self) {
    for (Node<T>* n : {an, bn}) {
      if (!wants_grad(n)) continue;
      auto& d = n->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  Node<T>* an = node_of(a);
  Node<T>* bn = node_of(b);
  return detail::make_result<T>(a.shape(), std::move(out), "sub", {&a, &b}, [an, bn](Node<T>& self) {
    if (wants_grad(an)) {
      auto& d = an->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
    if (wants_grad(bn)) {
      auto& d = bn->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const bool broadcast = b.length() == 1 && a.length() != 1 && b.channels() == a.channels();
  if (!broadcast) require_same_shape(a, b, "mul");
  const std::size_t len = a.length(), channels = a.channels();
  std::vector<T> out(a.size());
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t t = 0; t < len; ++t) {
      const std::size_t i = c * len + t;
      out[i] = a.data()[i] * b.data()[broadcast ? c : i];
    }
  }
  Node<T>* an = node_of(a);
  Node<T>* bn = node_of(b);
  return detail::make_result<T>(
      a.shape(), std::move(out), "mul", {&a, &b}, [an, bn, broadcast, len, channels](Node<T>& self) {
        for (std::size_t c = 0; c < channels; ++c) {
          for (std::size_t t = 0; t < len; ++t) {
            const std::size_t i = c * len + t;
            const std::size_t j = broadcast ? c : i;
            if (wants_grad(an)) an->ensure_grad()[i] += self.grad[i] * bn->value[j];
            if (wants_grad(bn)) bn->ensure_grad()[j] += self.grad[i] * an->value[i];
          }
        }
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (T& v : out) v *= factor;
  Node<T>* xn = node_of(x);
  return detail::make_result<T>(x.shape(), std::move(out), "scale", {&x}, [xn, factor](Node<T>& self) {
    auto& dx = xn->ensure_grad();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * self.grad[i];
  });
}

namespace {

// Channel slice [first, first + count) as a new tensor.
template <typename T>
Tensor<T> channel_slice(const Tensor<T>& x, std::size_t first, std::size_t count) {
  const std::size_t len = x.length();
  std::vector<T> out(x.data().begin() + static_cast<long>(first * len),
                     x.data().begin() + static_cast<long>((first + count) * len));
  Node<T>* xn = node_of(x);
  return detail::make_result<T>(Shape{len, count}, std::move(out), "split_halves", {&x},
                                [xn, first, len](Node<T>& self) {
                                  auto& dx = xn->ensure_grad();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                    dx[first * len + i] += self.grad[i];
                                  }
                                });
}

template <typename T>
Tensor<T> permute_channels(const Tensor<T>& x, const std::vector<std::size_t>& dest, const char* op) {
  const std::size_t len = x.length();
  std::vector<T> out(x.size());
  for (std::size_t c = 0; c < dest.size(); ++c) {
    std::copy_n(x.data().begin() + static_cast<long>(c * len), len, out.begin() + static_cast<long>(dest[c] * len));
  }
  Node<T>* xn = node_of(x);
  return detail::make_result<T>(x.shape(), std::move(out), op, {&x}, [xn, dest, len](Node<T>& self) {
    auto& dx = xn->ensure_grad();
    for (std::size_t c = 0; c < dest.size(); ++c) {
      for (std::size_t t = 0; t < len; ++t) dx[c * len + t] += self.grad[dest[c] * len + t];
    }
  });
}

}  // namespace

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_halves(const Tensor<T>& x) {
  if (x.channels() % 2 != 0) {
    throw DimensionError("split_halves: odd channel count " + std::to_string(x.channels()));
  }
  const std::size_t half = x.channels() / 2;
  return {channel_slice(x, 0, half), channel_slice(x, half, half)};
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const std::size_t len = parts.front().length();
  std::size_t channels = 0;
  for (const auto& p : parts) {
    if (p.length() != len) throw DimensionError("concat: length mismatch");
    channels += p.channels();
  }
  std::vector<T> out;
  out.reserve(len * channels);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<Node<T>*> nodes;
  for (const auto& p : parts) nodes.push_back(node_of(p));
  return detail::make_result<T>(Shape{len, channels}, std::move(out), "concat", parts,
                                [nodes](Node<T>& self) {
                                  std::size_t offset = 0;
                                  for (Node<T>* n : nodes) {
                                    const std::size_t count = n->value.size();
                                    if (wants_grad(n)) {
                                      auto& d = n->ensure_grad();
                                      for (std::size_t i = 0; i < count; ++i) d[i] += self.grad[offset + i];
                                    }
                                    offset += count;
                                  }
                                });
}

std::vector<std::size_t> shuffle_permutation(std::size_t channels, std::size_t groups) {
  if (groups == 0 || channels % groups != 0) {
    throw DimensionError("channel_shuffle: " + std::to_string(channels) + " channels not divisible by " +
                         std::to_string(groups) + " groups");
  }
  std::vector<std::size_t> dest(channels);
  for (std::size_t c = 0; c < channels; ++c) dest[c] = (c % groups) * (channels / groups) + c / groups;
  return dest;
}

template <typename T>
Tensor<T> channel_shuffle(const Tensor<T>& x, std::size_t groups) {
  return permute_channels(x, shuffle_permutation(x.channels(), groups), "channel_shuffle");
}

template <typename T>
Tensor<T> channel_unshuffle(const Tensor<T>& x, std::size_t groups) {
  const auto dest = shuffle_permutation(x.channels(), groups);
  std::vector<std::size_t> inverse(dest.size());
  for (std::size_t c = 0; c < dest.size(); ++c) inverse[dest[c]] = c;
  return permute_channels(x, inverse, "channel_unshuffle");
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const std::size_t len = x.length(), channels = x.channels();
  std::vector<T> out(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    out[c] = std::accumulate(x.data().begin() + static_cast<long>(c * len),
                             x.data().begin() + static_cast<long>((c + 1) * len), T(0)) /
             static_cast<T>(len);
  }
  Node<T>* xn = node_of(x);
  return detail::make_result<T>(Shape{1, channels}, std::move(out), "global_avg_pool", {&x},
                                [xn, len, channels](Node<T>& self) {
                                  auto& dx = xn->ensure_grad();
                                  for (std::size_t c = 0; c < channels; ++c) {
                                    const T g = self.grad[c] / static_cast<T>(len);
                                    for (std::size_t t = 0; t < len; ++t) dx[c * len + t] += g;
                                  }
                                });
}

namespace {

template <typename T>
Tensor<T> phase_pick(const Tensor<T>& x, std::size_t phase) {
  const std::size_t len = x.length(), half = len / 2, channels = x.channels();
  std::vector<T> out(half * channels);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t t = 0; t < half; ++t) out[c * half + t] = x.data()[c * len + 2 * t + phase];
  }
  Node<T>* xn = node_of(x);
  return detail::make_result<T>(Shape{half, channels}, std::move(out), "polyphase_split", {&x},
                                [xn, len, half, channels, phase](Node<T>& self) {
                                  auto& dx = xn->ensure_grad();
                                  for (std::size_t c = 0; c < channels; ++c) {
                                    for (std::size_t t = 0; t < half; ++t) {
                                      dx[c * len + 2 * t + phase] += self.grad[c * half + t];
                                    }
                                  }
                                });
}

}  // namespace

template <typename T>
std::pair<Tensor<T>, Tensor<T>> polyphase_split(const Tensor<T>& x) {
  if (x.length() % 2 != 0) throw DimensionError("polyphase_split: odd length " + std::to_string(x.length()));
  return {phase_pick(x, 0), phase_pick(x, 1)};
}

template <typename T>
Tensor<T> interleave(const Tensor<T>& even, const Tensor<T>& odd) {
  require_same_shape(even, odd, "interleave");
  const std::size_t half = even.length(), len = 2 * half, channels = even.channels();
  std::vector<T> out(len * channels);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t t = 0; t < half; ++t) {
      out[c * len + 2 * t] = even.data()[c * half + t];
      out[c * len + 2 * t + 1] = odd.data()[c * half + t];
    }
  }
  Node<T>* en = node_of(even);
  Node<T>* on = node_of(odd);
  return detail::make_result<T>(Shape{len, channels}, std::move(out), "interleave", {&even, &odd},
                                [en, on, half, len, channels](Node<T>& self) {
                                  for (std::size_t c = 0; c < channels; ++c) {
                                    for (std::size_t t = 0; t < half; ++t) {
                                      if (wants_grad(en)) en->ensure_grad()[c * half + t] += self.grad[c * len + 2 * t];
                                      if (wants_grad(on)) {
                                        on->ensure_grad()[c * half + t] += self.grad[c * len + 2 * t + 1];
                                      }
                                    }
                                  }
                                });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  const T total = std::accumulate(x.data().begin(), x.data().end(), T(0));
  Node<T>* xn = node_of(x);
  return detail::make_result<T>(Shape{1, 1}, {total}, "sum", {&x}, [xn](Node<T>& self) {
    auto& dx = xn->ensure_grad();
    for (T& d : dx) d += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> sum_abs(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += std::abs(v);
  Node<T>* xn = node_of(x);
  return detail::make_result<T>(Shape{1, 1}, {total}, "sum_abs", {&x}, [xn](Node<T>& self) {
    auto& dx = xn->ensure_grad();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const T v = xn->value[i];
      if (v > T(0)) {
        dx[i] += self.grad[0];
      } else if (v < T(0)) {
        dx[i] -= self.grad[0];
      }
    }
  });
}

template <typename T>
Tensor<T> mean_abs(const Tensor<T>& x) {
  return scale(sum_abs(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, std::vector<T> weights) {
  if (weights.size() != x.size()) throw DimensionError("weighted_sum: weight count mismatch");
  T total = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) total += weights[i] * x.data()[i];
  Node<T>* xn = node_of(x);
  return detail::make_result<T>(Shape{1, 1}, {total}, "weighted_sum", {&x},
                                [xn, weights = std::move(weights)](Node<T>& self) {
                                  auto& dx = xn->ensure_grad();
                                  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += weights[i] * self.grad[0];
                                });
}

#define LIFWAV_INSTANTIATE_OPS(T)                                                                      \
  template Tensor<T> conv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int);                \
  template Tensor<T> conv1d_transposed(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int);     \
  template Tensor<T> scaled_dot_product_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                                  std::size_t);                                        \
  template std::vector<std::vector<T>> attention_weights(const Tensor<T>&, const Tensor<T>&, std::size_t); \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);              \
  template Tensor<T> relu(const Tensor<T>&);                                                           \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                        \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> scale(const Tensor<T>&, T);                                                       \
  template std::pair<Tensor<T>, Tensor<T>> split_halves(const Tensor<T>&);                             \
  template Tensor<T> concat(const std::vector<Tensor<T>>&);                                            \
  template Tensor<T> channel_shuffle(const Tensor<T>&, std::size_t);                                   \
  template Tensor<T> channel_unshuffle(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                                \
  template std::pair<Tensor<T>, Tensor<T>> polyphase_split(const Tensor<T>&);                          \
  template Tensor<T> interleave(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> sum(const Tensor<T>&);                                                            \
  template Tensor<T> mean(const Tensor<T>&);                                                           \
  template Tensor<T> sum_abs(const Tensor<T>&);                                                        \
  template Tensor<T> mean_abs(const Tensor<T>&);                                                       \
  template Tensor<T> weighted_sum(const Tensor<T>&, std::vector<T>);

LIFWAV_INSTANTIATE_OPS(float)
LIFWAV_INSTANTIATE_OPS(double)

#undef LIFWAV_INSTANTIATE_OPS

}  // namespace lifwav
