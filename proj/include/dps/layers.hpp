// Copyright 2026 The dps Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Parameterized layers: embeddings, GLU convolution block, multi-head
// attention, position-wise feed forward, layer norm, inverted dropout.

#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "dps/rng.hpp"
#include "dps/tensor.hpp"

namespace dps {

template <typename T>
Tensor<T> randn_tensor(Shape shape, T stddev, RngStream& rng, bool requires_grad = true) {
  std::vector<T> data(static_cast<size_t>(numel(shape)));
  for (T& v : data) v = static_cast<T>(rng.normal(0.0, static_cast<double>(stddev)));
  return Tensor<T>(std::move(shape), std::move(data), requires_grad);
}

// Inverted dropout: zero with probability p, scale survivors by 1/(1-p) so
// expectation is preserved. Identity in eval mode or at p = 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, RngStream* rng) {
  if (p < 0.0 || p >= 1.0)
    throw ConfigError("dropout: probability must be in [0,1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  if (!rng) throw ContractError("dropout: training mode requires an rng stream");
  T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask_data(static_cast<size_t>(x.size()));
  for (T& v : mask_data) v = rng->bernoulli(p) ? T(0) : keep_scale;
  Tensor<T> mask(x.shape(), std::move(mask_data));
  return mul(x, mask);
}

// ---------------------------------------------------------------------------
// Embeddings: word table + learned position table, summed.

template <typename T>
struct EmbeddingParams {
  Tensor<T> word_table;      // [vocab, d]
  Tensor<T> position_table;  // [max_len, d]

  static EmbeddingParams init(int64_t vocab, int64_t max_len, int64_t d, RngStream& rng) {
    return {randn_tensor<T>({vocab, d}, T(0.1), rng),
            randn_tensor<T>({max_len, d}, T(0.1), rng)};
  }
  int64_t width() const { return word_table.dim(1); }
  int64_t vocab() const { return word_table.dim(0); }
  int64_t max_len() const { return position_table.dim(0); }
};

template <typename T>
Tensor<T> embed(std::span<const int32_t> ids, int64_t batch, int64_t time,
                const EmbeddingParams<T>& params, double dropout_p, bool training,
                RngStream* rng) {
  if (static_cast<int64_t>(ids.size()) != batch * time)
    throw DimensionError("embed: id count does not match batch*time");
  if (time > params.max_len())
    throw LengthError("embed: sequence length " + std::to_string(time) +
                      " exceeds position table of " + std::to_string(params.max_len()));
  Tensor<T> words = embedding_rows(params.word_table, ids, {batch, time});
  std::vector<int32_t> pos_ids(static_cast<size_t>(batch * time));
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t t = 0; t < time; ++t)
      pos_ids[static_cast<size_t>(b * time + t)] = static_cast<int32_t>(t);
  Tensor<T> pos = embedding_rows(params.position_table, pos_ids, {batch, time});
  return dropout(add(words, pos), dropout_p, training, rng);
}

// ---------------------------------------------------------------------------
// GLU convolution block: out = GLU(conv1d(dropout(h))) + h, where the 2d-wide
// pre-activation [a; b] gates as a * sigmoid(b).

template <typename T>
struct ConvLayerParams {
  Tensor<T> filter;  // [r*d, 2d]
  Tensor<T> bias;    // [2d]
  int64_t kernel = 0;
  int64_t hidden = 0;

  static ConvLayerParams init(int64_t r, int64_t d, RngStream& rng) {
    T std = static_cast<T>(std::sqrt(1.0 / static_cast<double>(r * d)));
    return {randn_tensor<T>({r * d, 2 * d}, std, rng),
            Tensor<T>::zeros({2 * d}, /*requires_grad=*/true), r, d};
  }
};

template <typename T>
Tensor<T> glu_conv_block(const Tensor<T>& h, const ConvLayerParams<T>& params, PadMode mode,
                         double dropout_p, bool training, RngStream* rng) {
  int64_t d = params.hidden;
  if (h.rank() != 3 || h.dim(2) != d)
    throw DimensionError("glu_conv_block: input must be [batch,time," + std::to_string(d) +
                         "], got " + shape_str(h.shape()));
  Tensor<T> x = dropout(h, dropout_p, training, rng);
  Tensor<T> pre = conv1d(x, params.filter, params.bias, mode);
  Tensor<T> lin = slice_last_dim(pre, 0, d);
  Tensor<T> gate = slice_last_dim(pre, d, d);
  return add(mul(lin, sigmoid(gate)), h);
}

// ---------------------------------------------------------------------------
// Multi-head attention. Per head: Att(q Wq / sqrt(d_s), k Wk, v Wv) with the
// dot-product attention softmax(q k^T) v; heads are concatenated and passed
// through an output projection so they can interact.

template <typename T>
struct AttentionParams {
  Tensor<T> wq, wk, wv;  // [d, d], column blocks of d_s per head
  Tensor<T> wo;          // [d, d]
  int64_t heads = 1;

  static AttentionParams init(int64_t d, int64_t s, RngStream& rng) {
    if (s <= 0 || d % s != 0)
      throw ConfigError("attention: head count " + std::to_string(s) +
                        " must divide hidden size " + std::to_string(d));
    T std = static_cast<T>(std::sqrt(1.0 / static_cast<double>(d)));
    return {randn_tensor<T>({d, d}, std, rng), randn_tensor<T>({d, d}, std, rng),
            randn_tensor<T>({d, d}, std, rng), randn_tensor<T>({d, d}, std, rng), s};
  }
  int64_t width() const { return wq.dim(0); }
};

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               const AttentionParams<T>& params,
                               const Tensor<T>* mask = nullptr) {
  int64_t d = params.width();
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3)
    throw DimensionError("multi_head_attention: q,k,v must be rank 3");
  if (q.dim(2) != d || k.dim(2) != d || v.dim(2) != d)
    throw DimensionError("multi_head_attention: q/k/v width must equal d=" + std::to_string(d));
  if (k.dim(1) != v.dim(1))
    throw DimensionError("multi_head_attention: k and v time dims differ");
  if (mask && (mask->rank() != 3 || mask->dim(0) != q.dim(0) || mask->dim(1) != q.dim(1) ||
               mask->dim(2) != k.dim(1)))
    throw DimensionError("multi_head_attention: mask shape " +
                         (mask ? shape_str(mask->shape()) : std::string("null")) +
                         " does not match scores");
  int64_t s = params.heads;
  int64_t ds = d / s;
  T qscale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(ds)));
  Tensor<T> qp = scale(matmul(q, params.wq), qscale);
  Tensor<T> kp = matmul(k, params.wk);
  Tensor<T> vp = matmul(v, params.wv);
  std::optional<Tensor<T>> cat;
  for (int64_t hidx = 0; hidx < s; ++hidx) {
    Tensor<T> qh = slice_last_dim(qp, hidx * ds, ds);
    Tensor<T> kh = slice_last_dim(kp, hidx * ds, ds);
    Tensor<T> vh = slice_last_dim(vp, hidx * ds, ds);
    Tensor<T> att = softmax_last_dim(matmul(qh, transpose_last2(kh)), mask);
    Tensor<T> ctx = matmul(att, vh);
    cat = cat ? concat_last_dim(*cat, ctx) : ctx;
  }
  return matmul(*cat, params.wo);
}

// ---------------------------------------------------------------------------
// Position-wise feed forward: f2(max(0, f1(x))).

template <typename T>
struct FeedForwardParams {
  Tensor<T> w1, b1;  // [d, d_ff], [d_ff]
  Tensor<T> w2, b2;  // [d_ff, d], [d]

  static FeedForwardParams init(int64_t d, int64_t d_ff, RngStream& rng) {
    T s1 = static_cast<T>(std::sqrt(1.0 / static_cast<double>(d)));
    T s2 = static_cast<T>(std::sqrt(1.0 / static_cast<double>(d_ff)));
    return {randn_tensor<T>({d, d_ff}, s1, rng), Tensor<T>::zeros({d_ff}, true),
            randn_tensor<T>({d_ff, d}, s2, rng), Tensor<T>::zeros({d}, true)};
  }
};

template <typename T>
Tensor<T> feed_forward(const Tensor<T>& x, const FeedForwardParams<T>& params) {
  if (x.dim(-1) != params.w1.dim(0))
    throw DimensionError("feed_forward: input width " + std::to_string(x.dim(-1)) +
                         " does not match " + std::to_string(params.w1.dim(0)));
  Tensor<T> hidden = relu(add(matmul(x, params.w1), params.b1));
  return add(matmul(hidden, params.w2), params.b2);
}

// ---------------------------------------------------------------------------
// Layer normalization over the last dim with affine gain/bias.

template <typename T>
struct LayerNormParams {
  Tensor<T> gain;  // [d]
  Tensor<T> bias;  // [d]
  T eps = T(1e-5);

  static LayerNormParams init(int64_t d) {
    return {Tensor<T>::full({d}, T(1), true), Tensor<T>::zeros({d}, true), T(1e-5)};
  }
};

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const LayerNormParams<T>& params) {
  if (x.dim(-1) != params.gain.size())
    throw DimensionError("layer_norm: input width " + std::to_string(x.dim(-1)) +
                         " does not match gain size " + std::to_string(params.gain.size()));
  return add(mul(normalize_last_dim(x, params.eps), params.gain), params.bias);
}

}  // namespace dps
