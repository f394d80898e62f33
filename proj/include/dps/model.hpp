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
// The double-path sequence-to-sequence network: a convolutional (GLU) path
// and a self-attention path run side by side in both the encoder and the
// decoder. Each decoder layer attends to both encoder paths with plain
// dot-product attention and blends the two contexts with a scalar sigmoid
// gate; the two decoder outputs are blended by one more gate before the
// vocabulary projection.

#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dps/capture.hpp"
#include "dps/config.hpp"
#include "dps/data.hpp"
#include "dps/layers.hpp"

namespace dps {

// Scalar fusion gate: g = sigmoid([ctx_same, ctx_cross] w + b), one value per
// (batch, time) position. Zero-initialized so training starts at g = 0.5.
template <typename T>
struct FusionGateParams {
  Tensor<T> w;  // [2d, 1]
  Tensor<T> b;  // [1]

  static FusionGateParams init(int64_t d) {
    return {Tensor<T>::zeros({2 * d, 1}, true), Tensor<T>::zeros({1}, true)};
  }
};

template <typename T>
struct SanEncoderLayer {
  AttentionParams<T> self_attn;
  LayerNormParams<T> ln_self;
  FeedForwardParams<T> ff;
  LayerNormParams<T> ln_ff;
};

template <typename T>
struct CnnDecoderLayer {
  ConvLayerParams<T> conv;
  std::optional<FusionGateParams<T>> gate;  // present only with both encoder paths
};

template <typename T>
struct SanDecoderLayer {
  AttentionParams<T> self_attn;
  LayerNormParams<T> ln_self;
  std::optional<FusionGateParams<T>> gate;
  LayerNormParams<T> ln_ctx;
  FeedForwardParams<T> ff;
  LayerNormParams<T> ln_ff;
};

template <typename T>
struct OutputFusionParams {
  std::optional<FusionGateParams<T>> gate;  // present only with both decoder paths
  Tensor<T> w_vocab;                        // [d, tgt_vocab]
  Tensor<T> b_vocab;                        // [tgt_vocab]
};

template <typename T>
class DoublePathModel {
 public:
  DoublePathModel(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    RngStream rng(mix_seed(seed, 0x1417));
    const int64_t d = cfg_.d;
    word_src_ = randn_tensor<T>({cfg_.src_vocab, d}, T(0.1), rng);
    if (!cfg_.share_embeddings) word_tgt_ = randn_tensor<T>({cfg_.tgt_vocab, d}, T(0.1), rng);
    pos_src_ = randn_tensor<T>({cfg_.max_len, d}, T(0.1), rng);
    pos_tgt_ = randn_tensor<T>({cfg_.max_len, d}, T(0.1), rng);
    const bool dual_enc = cfg_.enc_cnn && cfg_.enc_san;
    if (cfg_.enc_cnn)
      for (int64_t i = 0; i < cfg_.cnn_enc_layers; ++i)
        enc_cnn_.push_back(ConvLayerParams<T>::init(cfg_.kernel, d, rng));
    if (cfg_.enc_san)
      for (int64_t i = 0; i < cfg_.san_enc_layers; ++i)
        enc_san_.push_back(SanEncoderLayer<T>{AttentionParams<T>::init(d, cfg_.heads, rng),
                                              LayerNormParams<T>::init(d),
                                              FeedForwardParams<T>::init(d, cfg_.d_ff, rng),
                                              LayerNormParams<T>::init(d)});
    if (cfg_.dec_cnn)
      for (int64_t i = 0; i < cfg_.cnn_dec_layers; ++i) {
        CnnDecoderLayer<T> layer{ConvLayerParams<T>::init(cfg_.kernel, d, rng), std::nullopt};
        if (dual_enc) layer.gate = FusionGateParams<T>::init(d);
        dec_cnn_.push_back(std::move(layer));
      }
    if (cfg_.dec_san)
      for (int64_t i = 0; i < cfg_.san_dec_layers; ++i) {
        SanDecoderLayer<T> layer{AttentionParams<T>::init(d, cfg_.heads, rng),
                                 LayerNormParams<T>::init(d),
                                 std::nullopt,
                                 LayerNormParams<T>::init(d),
                                 FeedForwardParams<T>::init(d, cfg_.d_ff, rng),
                                 LayerNormParams<T>::init(d)};
        if (dual_enc) layer.gate = FusionGateParams<T>::init(d);
        dec_san_.push_back(std::move(layer));
      }
    if (cfg_.dec_cnn && cfg_.dec_san) out_.gate = FusionGateParams<T>::init(d);
    out_.w_vocab = randn_tensor<T>({d, cfg_.tgt_vocab},
                                   static_cast<T>(std::sqrt(1.0 / static_cast<double>(d))), rng);
    out_.b_vocab = Tensor<T>::zeros({cfg_.tgt_vocab}, true);
    build_registry();
  }

  // The registry holds pointers into this object, so moves must rebuild it
  // and copies re-point it at the copy's own members.
  DoublePathModel(DoublePathModel&& other) noexcept
      : cfg_(std::move(other.cfg_)),
        word_src_(std::move(other.word_src_)),
        word_tgt_(std::move(other.word_tgt_)),
        pos_src_(std::move(other.pos_src_)),
        pos_tgt_(std::move(other.pos_tgt_)),
        enc_cnn_(std::move(other.enc_cnn_)),
        enc_san_(std::move(other.enc_san_)),
        dec_cnn_(std::move(other.dec_cnn_)),
        dec_san_(std::move(other.dec_san_)),
        out_(std::move(other.out_)) {
    build_registry();
  }
  DoublePathModel& operator=(DoublePathModel&& other) noexcept {
    cfg_ = std::move(other.cfg_);
    word_src_ = std::move(other.word_src_);
    word_tgt_ = std::move(other.word_tgt_);
    pos_src_ = std::move(other.pos_src_);
    pos_tgt_ = std::move(other.pos_tgt_);
    enc_cnn_ = std::move(other.enc_cnn_);
    enc_san_ = std::move(other.enc_san_);
    dec_cnn_ = std::move(other.dec_cnn_);
    dec_san_ = std::move(other.dec_san_);
    out_ = std::move(other.out_);
    build_registry();
    return *this;
  }
  DoublePathModel(const DoublePathModel& other)
      : cfg_(other.cfg_),
        word_src_(other.word_src_),
        word_tgt_(other.word_tgt_),
        pos_src_(other.pos_src_),
        pos_tgt_(other.pos_tgt_),
        enc_cnn_(other.enc_cnn_),
        enc_san_(other.enc_san_),
        dec_cnn_(other.dec_cnn_),
        dec_san_(other.dec_san_),
        out_(other.out_) {
    build_registry();
  }
  DoublePathModel& operator=(const DoublePathModel& other) {
    if (this == &other) return *this;
    *this = DoublePathModel(other);
    return *this;
  }

  const ModelConfig& config() const { return cfg_; }

  const Tensor<T>& src_word_table() const { return word_src_; }
  const Tensor<T>& tgt_word_table() const {
    return cfg_.share_embeddings ? word_src_ : word_tgt_;
  }
  const Tensor<T>& src_pos_table() const { return pos_src_; }
  const Tensor<T>& tgt_pos_table() const { return pos_tgt_; }

  const std::vector<ConvLayerParams<T>>& encoder_cnn() const { return enc_cnn_; }
  const std::vector<SanEncoderLayer<T>>& encoder_san() const { return enc_san_; }
  const std::vector<CnnDecoderLayer<T>>& decoder_cnn() const { return dec_cnn_; }
  const std::vector<SanDecoderLayer<T>>& decoder_san() const { return dec_san_; }
  const OutputFusionParams<T>& output_fusion() const { return out_; }

  // Ordered traversal; the order and names match enumerate_param_shapes().
  void visit_params(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    for (auto& [name, ptr] : registry_) fn(name, *ptr);
  }
  void visit_params(const std::function<void(const std::string&, const Tensor<T>&)>& fn) const {
    for (const auto& [name, ptr] : registry_) fn(name, *ptr);
  }

  Tensor<T>* param(const std::string& name) {
    for (auto& [n, ptr] : registry_) {
      if (n == name) return ptr;
    }
    return nullptr;
  }

  std::vector<std::string> param_names() const {
    std::vector<std::string> names;
    for (const auto& [n, ptr] : registry_) names.push_back(n);
    return names;
  }

  int64_t parameter_count() const {
    int64_t total = 0;
    for (const auto& [n, ptr] : registry_) total += ptr->size();
    return total;
  }

 private:
  void build_registry() {
    registry_.clear();
    auto reg = [this](const std::string& name, Tensor<T>& t) {
      registry_.emplace_back(name, &t);
    };
    if (cfg_.share_embeddings) {
      reg("embed.word", word_src_);
    } else {
      reg("src_embed.word", word_src_);
      reg("tgt_embed.word", word_tgt_);
    }
    reg("src_embed.pos", pos_src_);
    reg("tgt_embed.pos", pos_tgt_);
    auto reg_attn = [&](const std::string& pre, AttentionParams<T>& a) {
      reg(pre + ".wq", a.wq);
      reg(pre + ".wk", a.wk);
      reg(pre + ".wv", a.wv);
      reg(pre + ".wo", a.wo);
    };
    auto reg_ff = [&](const std::string& pre, FeedForwardParams<T>& f) {
      reg(pre + ".w1", f.w1);
      reg(pre + ".b1", f.b1);
      reg(pre + ".w2", f.w2);
      reg(pre + ".b2", f.b2);
    };
    auto reg_ln = [&](const std::string& pre, LayerNormParams<T>& l) {
      reg(pre + ".gain", l.gain);
      reg(pre + ".bias", l.bias);
    };
    auto reg_gate = [&](const std::string& pre, FusionGateParams<T>& g) {
      reg(pre + ".w", g.w);
      reg(pre + ".b", g.b);
    };
    for (size_t i = 0; i < enc_cnn_.size(); ++i) {
      std::string pre = "enc.cnn." + std::to_string(i);
      reg(pre + ".filter", enc_cnn_[i].filter);
      reg(pre + ".bias", enc_cnn_[i].bias);
    }
    for (size_t i = 0; i < enc_san_.size(); ++i) {
      std::string pre = "enc.san." + std::to_string(i);
      reg_attn(pre + ".self", enc_san_[i].self_attn);
      reg_ln(pre + ".ln_self", enc_san_[i].ln_self);
      reg_ff(pre + ".ff", enc_san_[i].ff);
      reg_ln(pre + ".ln_ff", enc_san_[i].ln_ff);
    }
    for (size_t i = 0; i < dec_cnn_.size(); ++i) {
      std::string pre = "dec.cnn." + std::to_string(i);
      reg(pre + ".filter", dec_cnn_[i].conv.filter);
      reg(pre + ".bias", dec_cnn_[i].conv.bias);
      if (dec_cnn_[i].gate) reg_gate(pre + ".gate", *dec_cnn_[i].gate);
    }
    for (size_t i = 0; i < dec_san_.size(); ++i) {
      std::string pre = "dec.san." + std::to_string(i);
      reg_attn(pre + ".self", dec_san_[i].self_attn);
      reg_ln(pre + ".ln_self", dec_san_[i].ln_self);
      if (dec_san_[i].gate) reg_gate(pre + ".gate", *dec_san_[i].gate);
      reg_ln(pre + ".ln_ctx", dec_san_[i].ln_ctx);
      reg_ff(pre + ".ff", dec_san_[i].ff);
      reg_ln(pre + ".ln_ff", dec_san_[i].ln_ff);
    }
    if (out_.gate) reg_gate("out.gate", *out_.gate);
    reg("out.proj.w", out_.w_vocab);
    reg("out.proj.b", out_.b_vocab);
  }

  ModelConfig cfg_;
  Tensor<T> word_src_, word_tgt_, pos_src_, pos_tgt_;
  std::vector<ConvLayerParams<T>> enc_cnn_;
  std::vector<SanEncoderLayer<T>> enc_san_;
  std::vector<CnnDecoderLayer<T>> dec_cnn_;
  std::vector<SanDecoderLayer<T>> dec_san_;
  OutputFusionParams<T> out_;
  std::vector<std::pair<std::string, Tensor<T>*>> registry_;
};

// ---------------------------------------------------------------------------
// Attention masks. A batch row with zero real source tokens falls back to a
// degenerate mask (identity / position 0) so that softmax stays total; such
// rows carry filler sentences whose outputs are discarded downstream.

template <typename T>
Tensor<T> encoder_self_mask(std::span<const uint8_t> src_mask, int64_t batch, int64_t m) {
  std::vector<T> data(static_cast<size_t>(batch * m * m), T(0));
  for (int64_t b = 0; b < batch; ++b) {
    bool any = false;
    for (int64_t j = 0; j < m; ++j)
      if (src_mask.empty() || src_mask[static_cast<size_t>(b * m + j)]) any = true;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < m; ++j) {
        bool keep = any ? (src_mask.empty() || src_mask[static_cast<size_t>(b * m + j)] != 0)
                        : (i == j);
        data[static_cast<size_t>((b * m + i) * m + j)] = keep ? T(1) : T(0);
      }
  }
  return Tensor<T>({batch, m, m}, std::move(data));
}

template <typename T>
Tensor<T> cross_attention_mask(std::span<const uint8_t> src_mask, int64_t batch, int64_t n,
                               int64_t m) {
  std::vector<T> data(static_cast<size_t>(batch * n * m), T(0));
  for (int64_t b = 0; b < batch; ++b) {
    bool any = false;
    for (int64_t j = 0; j < m; ++j)
      if (src_mask.empty() || src_mask[static_cast<size_t>(b * m + j)]) any = true;
    for (int64_t t = 0; t < n; ++t)
      for (int64_t j = 0; j < m; ++j) {
        bool keep = any ? (src_mask.empty() || src_mask[static_cast<size_t>(b * m + j)] != 0)
                        : (j == 0);
        data[static_cast<size_t>((b * n + t) * m + j)] = keep ? T(1) : T(0);
      }
  }
  return Tensor<T>({batch, n, m}, std::move(data));
}

template <typename T>
Tensor<T> causal_mask(int64_t batch, int64_t n) {
  std::vector<T> data(static_cast<size_t>(batch * n * n), T(0));
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j <= i; ++j) data[static_cast<size_t>((b * n + i) * n + j)] = T(1);
  return Tensor<T>({batch, n, n}, std::move(data));
}

// ---------------------------------------------------------------------------
// Encoder.

template <typename T>
struct EncoderOutput {
  std::optional<Tensor<T>> cnn_states;  // [batch, m, d]
  std::optional<Tensor<T>> san_states;  // [batch, m, d]
  std::vector<uint8_t> src_mask;        // [batch, m], 1 = real token
  int64_t batch = 0;
  int64_t m = 0;

  bool has_cnn() const { return cnn_states.has_value(); }
  bool has_san() const { return san_states.has_value(); }
  const Tensor<T>& cnn() const {
    if (!cnn_states) throw ContractError("encoder CNN path is disabled");
    return *cnn_states;
  }
  const Tensor<T>& san() const {
    if (!san_states) throw ContractError("encoder SAN path is disabled");
    return *san_states;
  }
};

template <typename T>
EncoderOutput<T> encode(const DoublePathModel<T>& model, std::span<const int32_t> src_ids,
                        int64_t batch, int64_t m, std::span<const uint8_t> src_mask,
                        bool training, RngStream* rng) {
  const ModelConfig& cfg = model.config();
  EncoderOutput<T> out;
  out.batch = batch;
  out.m = m;
  out.src_mask.assign(static_cast<size_t>(batch * m), 1);
  if (!src_mask.empty())
    std::copy(src_mask.begin(), src_mask.end(), out.src_mask.begin());

  EmbeddingParams<T> embed_params{model.src_word_table(), model.src_pos_table()};
  Tensor<T> emb = embed(src_ids, batch, m, embed_params, cfg.dropout, training, rng);

  if (cfg.enc_cnn) {
    // Zero padded positions before each conv so pads never leak into the
    // receptive field of real tokens.
    std::vector<T> mask_data(static_cast<size_t>(batch * m));
    for (int64_t i = 0; i < batch * m; ++i)
      mask_data[static_cast<size_t>(i)] = out.src_mask[static_cast<size_t>(i)] ? T(1) : T(0);
    Tensor<T> pad_zero({batch, m, 1}, std::move(mask_data));
    Tensor<T> h = emb;
    for (const ConvLayerParams<T>& layer : model.encoder_cnn())
      h = glu_conv_block(mul(h, pad_zero), layer, PadMode::kSame, cfg.dropout, training, rng);
    out.cnn_states = h;
  }
  if (cfg.enc_san) {
    Tensor<T> mask = encoder_self_mask<T>(out.src_mask, batch, m);
    Tensor<T> h = emb;
    for (const SanEncoderLayer<T>& layer : model.encoder_san()) {
      Tensor<T> sa = multi_head_attention(h, h, h, layer.self_attn, &mask);
      h = layer_norm(add(h, dropout(sa, cfg.dropout, training, rng)), layer.ln_self);
      Tensor<T> f = feed_forward(h, layer.ff);
      h = layer_norm(add(h, dropout(f, cfg.dropout, training, rng)), layer.ln_ff);
    }
    out.san_states = h;
  }
  return out;
}

template <typename T>
EncoderOutput<T> encode(const DoublePathModel<T>& model, const Batch& batch, bool training,
                        RngStream* rng) {
  return encode(model, std::span<const int32_t>(batch.src), batch.size, batch.src_len,
                std::span<const uint8_t>(batch.src_mask), training, rng);
}

// ---------------------------------------------------------------------------
// Decoder-to-encoder attention: plain dot-product attention (no projections,
// keys = values = encoder states) for each available (query path, encoder
// path) combination.

template <typename T>
struct FourContexts {
  std::optional<Tensor<T>> ctx[4];  // Flow-indexed contexts [batch, n, d]
  std::optional<Tensor<T>> att[4];  // matching softmax matrices [batch, n, m]

  const Tensor<T>& get(Flow f) const {
    const auto& c = ctx[static_cast<int>(f)];
    if (!c)
      throw ContractError(std::string("cross attention flow ") + flow_name(f) +
                          " is unavailable (path disabled or query absent)");
    return *c;
  }
};

template <typename T>
FourContexts<T> cross_attention_contexts(const Tensor<T>* q_cnn, const Tensor<T>* q_san,
                                         const EncoderOutput<T>& enc, const Tensor<T>& mask) {
  FourContexts<T> out;
  auto attend = [&](const Tensor<T>& q, const Tensor<T>& states, Flow flow) {
    Tensor<T> att = softmax_last_dim(matmul(q, transpose_last2(states)), &mask);
    out.att[static_cast<int>(flow)] = att;
    out.ctx[static_cast<int>(flow)] = matmul(att, states);
  };
  if (q_cnn) {
    if (enc.has_cnn()) attend(*q_cnn, enc.cnn(), Flow::kCC);
    if (enc.has_san()) attend(*q_cnn, enc.san(), Flow::kCA);
  }
  if (q_san) {
    if (enc.has_san()) attend(*q_san, enc.san(), Flow::kAA);
    if (enc.has_cnn()) attend(*q_san, enc.cnn(), Flow::kAC);
  }
  return out;
}

// Scalar-gated blend: out = ctx_same * (1 - g) + ctx_cross * g with
// g = sigmoid([ctx_same, ctx_cross] w + b) per position.
template <typename T>
Tensor<T> gate_fuse(const Tensor<T>& ctx_same, const Tensor<T>& ctx_cross,
                    const FusionGateParams<T>& gate, GateStats* stats = nullptr) {
  if (ctx_same.shape() != ctx_cross.shape())
    throw DimensionError("gate_fuse: context shapes differ: " + shape_str(ctx_same.shape()) +
                         " vs " + shape_str(ctx_cross.shape()));
  Tensor<T> cat = concat_last_dim(ctx_same, ctx_cross);
  Tensor<T> g = sigmoid(add(matmul(cat, gate.w), gate.b));
  if (stats) stats->observe(g);
  Tensor<T> one = Tensor<T>::scalar(T(1));
  return add(mul(ctx_same, sub(one, g)), mul(ctx_cross, g));
}

// ---------------------------------------------------------------------------
// Decoder (teacher-forced, full prefix).

template <typename T>
struct DecoderStates {
  std::optional<Tensor<T>> z_cnn;  // [batch, n, d]
  std::optional<Tensor<T>> z_san;
};

template <typename T>
DecoderStates<T> decode_step_states(const DoublePathModel<T>& model, const EncoderOutput<T>& enc,
                                    std::span<const int32_t> tgt_in, int64_t batch, int64_t n,
                                    bool training, RngStream* rng,
                                    AttentionCapture* capture = nullptr,
                                    GateStats* gates = nullptr) {
  const ModelConfig& cfg = model.config();
  EmbeddingParams<T> embed_params{model.tgt_word_table(), model.tgt_pos_table()};
  Tensor<T> emb = embed(tgt_in, batch, n, embed_params, cfg.dropout, training, rng);
  Tensor<T> cross_mask = cross_attention_mask<T>(enc.src_mask, batch, n, enc.m);
  const bool dual_enc = enc.has_cnn() && enc.has_san();

  DecoderStates<T> out;
  if (cfg.dec_cnn) {
    Tensor<T> h = emb;
    for (const CnnDecoderLayer<T>& layer : model.decoder_cnn()) {
      Tensor<T> hb = glu_conv_block(h, layer.conv, PadMode::kCausal, cfg.dropout, training, rng);
      FourContexts<T> fc = cross_attention_contexts<T>(&hb, nullptr, enc, cross_mask);
      if (capture) {
        if (fc.att[static_cast<int>(Flow::kCC)]) capture->add(Flow::kCC, *fc.att[0]);
        if (fc.att[static_cast<int>(Flow::kCA)]) capture->add(Flow::kCA, *fc.att[1]);
      }
      Tensor<T> ctx = dual_enc ? gate_fuse(fc.get(Flow::kCC), fc.get(Flow::kCA), *layer.gate,
                                           gates)
                               : (enc.has_cnn() ? fc.get(Flow::kCC) : fc.get(Flow::kCA));
      h = add(hb, ctx);
    }
    out.z_cnn = h;
  }
  if (cfg.dec_san) {
    Tensor<T> self_mask = causal_mask<T>(batch, n);
    Tensor<T> h = emb;
    for (const SanDecoderLayer<T>& layer : model.decoder_san()) {
      Tensor<T> sa = multi_head_attention(h, h, h, layer.self_attn, &self_mask);
      h = layer_norm(add(h, dropout(sa, cfg.dropout, training, rng)), layer.ln_self);
      FourContexts<T> fc = cross_attention_contexts<T>(nullptr, &h, enc, cross_mask);
      if (capture) {
        if (fc.att[static_cast<int>(Flow::kAC)]) capture->add(Flow::kAC, *fc.att[2]);
        if (fc.att[static_cast<int>(Flow::kAA)]) capture->add(Flow::kAA, *fc.att[3]);
      }
      Tensor<T> ctx = dual_enc ? gate_fuse(fc.get(Flow::kAA), fc.get(Flow::kAC), *layer.gate,
                                           gates)
                               : (enc.has_san() ? fc.get(Flow::kAA) : fc.get(Flow::kAC));
      h = layer_norm(add(h, dropout(ctx, cfg.dropout, training, rng)), layer.ln_ctx);
      Tensor<T> f = feed_forward(h, layer.ff);
      h = layer_norm(add(h, dropout(f, cfg.dropout, training, rng)), layer.ln_ff);
    }
    out.z_san = h;
  }
  return out;
}

// Blends the two decoder outputs (when both exist) and projects to
// vocabulary log-probabilities.
template <typename T>
Tensor<T> output_fuse_and_project(const OutputFusionParams<T>& params,
                                  const std::optional<Tensor<T>>& z_cnn,
                                  const std::optional<Tensor<T>>& z_san,
                                  GateStats* gates = nullptr) {
  if (!z_cnn && !z_san)
    throw ContractError("output_fuse_and_project: both decoder paths absent");
  Tensor<T> z = [&] {
    if (z_cnn && z_san) {
      if (!params.gate) throw ContractError("output fusion gate missing for dual decoder");
      return gate_fuse(*z_cnn, *z_san, *params.gate, gates);
    }
    return z_cnn ? *z_cnn : *z_san;
  }();
  Tensor<T> logits = add(matmul(z, params.w_vocab), params.b_vocab);
  return log_softmax_last_dim(logits);
}

// Full forward pass: log P(y_t | y_<t, x) for every target position.
template <typename T>
Tensor<T> forward_log_probs(const DoublePathModel<T>& model, const Batch& batch, bool training,
                            RngStream* rng, AttentionCapture* capture = nullptr,
                            GateStats* gates = nullptr) {
  EncoderOutput<T> enc = encode(model, batch, training, rng);
  DecoderStates<T> states =
      decode_step_states(model, enc, batch.tgt_in, batch.size, batch.tgt_len, training, rng,
                         capture, gates);
  return output_fuse_and_project(model.output_fusion(), states.z_cnn, states.z_san, gates);
}

// ---------------------------------------------------------------------------
// Incremental decoding session. Holds per-layer caches so each new target
// token costs one layer stack evaluation: the CNN path keeps a rolling window
// of the last r-1 layer inputs, the SAN path keeps all previous projected
// keys/values. Raw (untaped) arithmetic; inference only.

template <typename T>
class DecoderSession {
 public:
  DecoderSession(const DoublePathModel<T>& model, const EncoderOutput<T>& enc, int64_t rows,
                 std::vector<int64_t> src_row_of)
      : model_(model), cfg_(model.config()), rows_(rows), src_row_of_(std::move(src_row_of)) {
    if (static_cast<int64_t>(src_row_of_.size()) != rows_)
      throw ContractError("DecoderSession: src_row_of size must equal rows");
    m_ = enc.m;
    if (enc.has_cnn()) enc_cnn_.assign(enc.cnn().data().begin(), enc.cnn().data().end());
    if (enc.has_san()) enc_san_.assign(enc.san().data().begin(), enc.san().data().end());
    has_enc_cnn_ = enc.has_cnn();
    has_enc_san_ = enc.has_san();
    allowed_.resize(static_cast<size_t>(enc.batch));
    for (int64_t b = 0; b < enc.batch; ++b) {
      auto& a = allowed_[static_cast<size_t>(b)];
      for (int64_t j = 0; j < m_; ++j)
        if (enc.src_mask[static_cast<size_t>(b * m_ + j)]) a.push_back(j);
      if (a.empty()) a.push_back(0);  // filler row fallback
    }
    cnn_hist_.resize(model_.decoder_cnn().size());
    san_k_.resize(model_.decoder_san().size());
    san_v_.resize(model_.decoder_san().size());
  }

  int64_t rows() const { return rows_; }
  int64_t position() const { return t_; }
  int64_t vocab() const { return cfg_.tgt_vocab; }

  // Re-indexes all cached state: new row i continues old row perm[i].
  void reorder(std::span<const int64_t> perm) {
    const int64_t d = cfg_.d;
    std::vector<int64_t> new_src(perm.size());
    for (size_t i = 0; i < perm.size(); ++i)
      new_src[i] = src_row_of_[static_cast<size_t>(perm[i])];
    int64_t new_rows = static_cast<int64_t>(perm.size());
    for (auto& hist : cnn_hist_)
      for (auto& slot : hist) slot = permute_rows(slot, perm, d);
    for (size_t l = 0; l < san_k_.size(); ++l) {
      san_k_[l] = permute_steps(san_k_[l], perm, d);
      san_v_[l] = permute_steps(san_v_[l], perm, d);
    }
    src_row_of_ = std::move(new_src);
    rows_ = new_rows;
  }

  // Feeds the token chosen at the previous position for every row (bos at
  // the first call) and returns log-probabilities [rows * tgt_vocab].
  std::vector<T> step(std::span<const int32_t> tokens) {
    if (static_cast<int64_t>(tokens.size()) != rows_)
      throw ContractError("DecoderSession::step: expected " + std::to_string(rows_) +
                          " tokens");
    if (t_ >= cfg_.max_len)
      throw LengthError("DecoderSession: position " + std::to_string(t_) +
                        " exceeds max_len " + std::to_string(cfg_.max_len));
    const int64_t d = cfg_.d;
    std::vector<T> x(static_cast<size_t>(rows_ * d));
    auto word = model_.tgt_word_table().data();
    auto pos = model_.tgt_pos_table().data();
    for (int64_t i = 0; i < rows_; ++i) {
      int32_t tok = tokens[static_cast<size_t>(i)];
      if (tok < 0 || tok >= cfg_.tgt_vocab)
        throw VocabularyError("DecoderSession: token id " + std::to_string(tok));
      for (int64_t j = 0; j < d; ++j)
        x[static_cast<size_t>(i * d + j)] = word[tok * d + j] + pos[t_ * d + j];
    }

    std::optional<std::vector<T>> z_cnn, z_san;
    const bool dual_enc = has_enc_cnn_ && has_enc_san_;
    if (cfg_.dec_cnn) {
      std::vector<T> h = x;
      const auto& layers = model_.decoder_cnn();
      for (size_t l = 0; l < layers.size(); ++l) {
        std::vector<T> conv_out = conv_step(h, layers[l].conv, cnn_hist_[l]);
        push_history(cnn_hist_[l], h);
        std::vector<T> ctx = cross_context(conv_out, layers[l].gate, dual_enc,
                                           /*query_is_cnn=*/true);
        for (size_t i = 0; i < conv_out.size(); ++i) conv_out[i] += ctx[i];
        h = std::move(conv_out);
      }
      z_cnn = std::move(h);
    }
    if (cfg_.dec_san) {
      std::vector<T> h = x;
      const auto& layers = model_.decoder_san();
      for (size_t l = 0; l < layers.size(); ++l) {
        std::vector<T> sa = self_attention_step(h, layers[l].self_attn, san_k_[l], san_v_[l]);
        h = layer_norm_rows(add_rows(h, sa), layers[l].ln_self);
        std::vector<T> ctx = cross_context(h, layers[l].gate, dual_enc, /*query_is_cnn=*/false);
        h = layer_norm_rows(add_rows(h, ctx), layers[l].ln_ctx);
        std::vector<T> f = feed_forward_rows(h, layers[l].ff);
        h = layer_norm_rows(add_rows(h, f), layers[l].ln_ff);
      }
      z_san = std::move(h);
    }
    ++t_;

    const OutputFusionParams<T>& out = model_.output_fusion();
    std::vector<T> z;
    if (z_cnn && z_san) {
      auto wg = out.gate->w.data();
      T bg = out.gate->b.data()[0];
      z.resize(static_cast<size_t>(rows_ * d));
      for (int64_t i = 0; i < rows_; ++i) {
        T logit = bg;
        for (int64_t j = 0; j < d; ++j) logit += (*z_cnn)[static_cast<size_t>(i * d + j)] * wg[j];
        for (int64_t j = 0; j < d; ++j)
          logit += (*z_san)[static_cast<size_t>(i * d + j)] * wg[d + j];
        T g = sigmoid_scalar(logit);
        for (int64_t j = 0; j < d; ++j)
          z[static_cast<size_t>(i * d + j)] = (*z_cnn)[static_cast<size_t>(i * d + j)] * (T(1) - g) +
                                              (*z_san)[static_cast<size_t>(i * d + j)] * g;
      }
    } else {
      z = z_cnn ? std::move(*z_cnn) : std::move(*z_san);
    }

    const int64_t v = cfg_.tgt_vocab;
    auto wv = out.w_vocab.data();
    auto bv = out.b_vocab.data();
    std::vector<T> logp(static_cast<size_t>(rows_ * v));
    for (int64_t i = 0; i < rows_; ++i) {
      T* row = logp.data() + i * v;
      for (int64_t o = 0; o < v; ++o) row[o] = bv[o];
      for (int64_t j = 0; j < d; ++j) {
        T xv = z[static_cast<size_t>(i * d + j)];
        if (xv == T(0)) continue;
        const T* wrow = wv.data() + j * v;
        for (int64_t o = 0; o < v; ++o) row[o] += xv * wrow[o];
      }
      T mx = row[0];
      for (int64_t o = 1; o < v; ++o) mx = std::max(mx, row[o]);
      T sum = T(0);
      for (int64_t o = 0; o < v; ++o) sum += std::exp(row[o] - mx);
      T lse = mx + std::log(sum);
      for (int64_t o = 0; o < v; ++o) row[o] -= lse;
    }
    return logp;
  }

 private:
  static T sigmoid_scalar(T x) {
    return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
  }

  std::vector<T> permute_rows(const std::vector<T>& data, std::span<const int64_t> perm,
                              int64_t width) const {
    std::vector<T> out(perm.size() * static_cast<size_t>(width));
    for (size_t i = 0; i < perm.size(); ++i)
      std::copy(data.begin() + perm[i] * width, data.begin() + (perm[i] + 1) * width,
                out.begin() + static_cast<int64_t>(i) * width);
    return out;
  }

  // Cache layout [step][row][d]; permutes the row dim of every step block.
  std::vector<T> permute_steps(const std::vector<T>& data, std::span<const int64_t> perm,
                               int64_t width) const {
    int64_t steps = rows_ == 0 ? 0 : static_cast<int64_t>(data.size()) / (rows_ * width);
    std::vector<T> out(static_cast<size_t>(steps) * perm.size() * static_cast<size_t>(width));
    for (int64_t s = 0; s < steps; ++s)
      for (size_t i = 0; i < perm.size(); ++i)
        std::copy(data.begin() + (s * rows_ + perm[i]) * width,
                  data.begin() + (s * rows_ + perm[i] + 1) * width,
                  out.begin() + (s * static_cast<int64_t>(perm.size()) +
                                 static_cast<int64_t>(i)) *
                                    width);
    return out;
  }

  void push_history(std::deque<std::vector<T>>& hist, const std::vector<T>& input) {
    hist.push_back(input);
    while (static_cast<int64_t>(hist.size()) > cfg_.kernel - 1) hist.pop_front();
  }

  // Causal conv at the current position: window = [t-r+1 .. t] inputs.
  std::vector<T> conv_step(const std::vector<T>& cur, const ConvLayerParams<T>& conv,
                           const std::deque<std::vector<T>>& hist) {
    const int64_t d = cfg_.d, r = cfg_.kernel;
    auto w = conv.filter.data();
    auto bias = conv.bias.data();
    std::vector<T> out(static_cast<size_t>(rows_ * d));
    std::vector<T> pre(static_cast<size_t>(2 * d));
    for (int64_t i = 0; i < rows_; ++i) {
      for (int64_t o = 0; o < 2 * d; ++o) pre[static_cast<size_t>(o)] = bias[o];
      for (int64_t j = 0; j < r; ++j) {
        // j indexes the filter block; block r-1 sees the current input.
        int64_t back = r - 1 - j;  // steps into the past
        const T* xrow = nullptr;
        if (back == 0) {
          xrow = cur.data() + i * d;
        } else if (back <= static_cast<int64_t>(hist.size())) {
          xrow = hist[hist.size() - static_cast<size_t>(back)].data() + i * d;
        } else {
          continue;  // before the sequence start: zero padding
        }
        const T* wblock = w.data() + j * d * (2 * d);
        for (int64_t c = 0; c < d; ++c) {
          T xv = xrow[c];
          if (xv == T(0)) continue;
          const T* wrow = wblock + c * (2 * d);
          for (int64_t o = 0; o < 2 * d; ++o) pre[static_cast<size_t>(o)] += xv * wrow[o];
        }
      }
      // GLU + residual
      for (int64_t c = 0; c < d; ++c)
        out[static_cast<size_t>(i * d + c)] =
            pre[static_cast<size_t>(c)] * sigmoid_scalar(pre[static_cast<size_t>(d + c)]) +
            cur[static_cast<size_t>(i * d + c)];
    }
    return out;
  }

  // Dot attention of the row query against one encoder path.
  void dot_attend(const std::vector<T>& enc_states, const T* q, int64_t enc_row,
                  std::vector<T>& ctx_out) const {
    const int64_t d = cfg_.d;
    const auto& allowed = allowed_[static_cast<size_t>(enc_row)];
    std::vector<T> scores(allowed.size());
    T mx = -std::numeric_limits<T>::infinity();
    for (size_t a = 0; a < allowed.size(); ++a) {
      const T* key = enc_states.data() + (enc_row * m_ + allowed[a]) * d;
      T s = T(0);
      for (int64_t j = 0; j < d; ++j) s += q[j] * key[j];
      scores[a] = s;
      mx = std::max(mx, s);
    }
    T sum = T(0);
    for (T& s : scores) {
      s = std::exp(s - mx);
      sum += s;
    }
    std::fill(ctx_out.begin(), ctx_out.end(), T(0));
    for (size_t a = 0; a < allowed.size(); ++a) {
      T wgt = scores[a] / sum;
      const T* val = enc_states.data() + (enc_row * m_ + allowed[a]) * d;
      for (int64_t j = 0; j < d; ++j) ctx_out[static_cast<size_t>(j)] += wgt * val[j];
    }
  }

  std::vector<T> cross_context(const std::vector<T>& q,
                               const std::optional<FusionGateParams<T>>& gate, bool dual_enc,
                               bool query_is_cnn) {
    const int64_t d = cfg_.d;
    std::vector<T> out(static_cast<size_t>(rows_ * d));
    std::vector<T> ctx_same(static_cast<size_t>(d)), ctx_cross(static_cast<size_t>(d));
    const std::vector<T>& same_states = query_is_cnn
                                            ? (has_enc_cnn_ ? enc_cnn_ : enc_san_)
                                            : (has_enc_san_ ? enc_san_ : enc_cnn_);
    const std::vector<T>& cross_states = query_is_cnn ? enc_san_ : enc_cnn_;
    for (int64_t i = 0; i < rows_; ++i) {
      int64_t enc_row = src_row_of_[static_cast<size_t>(i)];
      const T* qrow = q.data() + i * d;
      dot_attend(same_states, qrow, enc_row, ctx_same);
      if (dual_enc) {
        dot_attend(cross_states, qrow, enc_row, ctx_cross);
        auto wg = gate->w.data();
        T logit = gate->b.data()[0];
        for (int64_t j = 0; j < d; ++j) logit += ctx_same[static_cast<size_t>(j)] * wg[j];
        for (int64_t j = 0; j < d; ++j) logit += ctx_cross[static_cast<size_t>(j)] * wg[d + j];
        T g = sigmoid_scalar(logit);
        for (int64_t j = 0; j < d; ++j)
          out[static_cast<size_t>(i * d + j)] =
              ctx_same[static_cast<size_t>(j)] * (T(1) - g) +
              ctx_cross[static_cast<size_t>(j)] * g;
      } else {
        for (int64_t j = 0; j < d; ++j)
          out[static_cast<size_t>(i * d + j)] = ctx_same[static_cast<size_t>(j)];
      }
    }
    return out;
  }

  std::vector<T> self_attention_step(const std::vector<T>& x, const AttentionParams<T>& attn,
                                     std::vector<T>& k_cache, std::vector<T>& v_cache) {
    const int64_t d = cfg_.d, s = cfg_.heads, ds = d / s;
    const T qscale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(ds)));
    auto wq = attn.wq.data();
    auto wk = attn.wk.data();
    auto wv = attn.wv.data();
    auto wo = attn.wo.data();
    std::vector<T> qp(static_cast<size_t>(rows_ * d)), kp(static_cast<size_t>(rows_ * d)),
        vp(static_cast<size_t>(rows_ * d));
    for (int64_t i = 0; i < rows_; ++i) {
      const T* xrow = x.data() + i * d;
      for (int64_t o = 0; o < d; ++o) {
        T aq = T(0), ak = T(0), av = T(0);
        for (int64_t j = 0; j < d; ++j) {
          T xv = xrow[j];
          aq += xv * wq[j * d + o];
          ak += xv * wk[j * d + o];
          av += xv * wv[j * d + o];
        }
        qp[static_cast<size_t>(i * d + o)] = aq * qscale;
        kp[static_cast<size_t>(i * d + o)] = ak;
        vp[static_cast<size_t>(i * d + o)] = av;
      }
    }
    k_cache.insert(k_cache.end(), kp.begin(), kp.end());
    v_cache.insert(v_cache.end(), vp.begin(), vp.end());
    const int64_t steps = static_cast<int64_t>(k_cache.size()) / (rows_ * d);
    std::vector<T> ctx(static_cast<size_t>(rows_ * d), T(0));
    std::vector<T> scores(static_cast<size_t>(steps));
    for (int64_t i = 0; i < rows_; ++i) {
      for (int64_t h = 0; h < s; ++h) {
        const T* qh = qp.data() + i * d + h * ds;
        T mx = -std::numeric_limits<T>::infinity();
        for (int64_t st = 0; st < steps; ++st) {
          const T* kh = k_cache.data() + (st * rows_ + i) * d + h * ds;
          T sc = T(0);
          for (int64_t j = 0; j < ds; ++j) sc += qh[j] * kh[j];
          scores[static_cast<size_t>(st)] = sc;
          mx = std::max(mx, sc);
        }
        T sum = T(0);
        for (int64_t st = 0; st < steps; ++st) {
          T e = std::exp(scores[static_cast<size_t>(st)] - mx);
          scores[static_cast<size_t>(st)] = e;
          sum += e;
        }
        for (int64_t st = 0; st < steps; ++st) {
          T wgt = scores[static_cast<size_t>(st)] / sum;
          const T* vh = v_cache.data() + (st * rows_ + i) * d + h * ds;
          for (int64_t j = 0; j < ds; ++j)
            ctx[static_cast<size_t>(i * d + h * ds + j)] += wgt * vh[j];
        }
      }
    }
    std::vector<T> out(static_cast<size_t>(rows_ * d));
    for (int64_t i = 0; i < rows_; ++i) {
      const T* crow = ctx.data() + i * d;
      for (int64_t o = 0; o < d; ++o) {
        T acc = T(0);
        for (int64_t j = 0; j < d; ++j) acc += crow[j] * wo[j * d + o];
        out[static_cast<size_t>(i * d + o)] = acc;
      }
    }
    return out;
  }

  std::vector<T> feed_forward_rows(const std::vector<T>& x, const FeedForwardParams<T>& ff) {
    const int64_t d = cfg_.d, dff = cfg_.d_ff;
    auto w1 = ff.w1.data();
    auto b1 = ff.b1.data();
    auto w2 = ff.w2.data();
    auto b2 = ff.b2.data();
    std::vector<T> out(static_cast<size_t>(rows_ * d));
    std::vector<T> hid(static_cast<size_t>(dff));
    for (int64_t i = 0; i < rows_; ++i) {
      const T* xrow = x.data() + i * d;
      for (int64_t o = 0; o < dff; ++o) hid[static_cast<size_t>(o)] = b1[o];
      for (int64_t j = 0; j < d; ++j) {
        T xv = xrow[j];
        if (xv == T(0)) continue;
        const T* wrow = w1.data() + j * dff;
        for (int64_t o = 0; o < dff; ++o) hid[static_cast<size_t>(o)] += xv * wrow[o];
      }
      for (int64_t o = 0; o < dff; ++o)
        if (hid[static_cast<size_t>(o)] < T(0)) hid[static_cast<size_t>(o)] = T(0);
      T* orow = out.data() + i * d;
      for (int64_t o = 0; o < d; ++o) orow[o] = b2[o];
      for (int64_t j = 0; j < dff; ++j) {
        T hv = hid[static_cast<size_t>(j)];
        if (hv == T(0)) continue;
        const T* wrow = w2.data() + j * d;
        for (int64_t o = 0; o < d; ++o) orow[o] += hv * wrow[o];
      }
    }
    return out;
  }

  std::vector<T> add_rows(const std::vector<T>& a, const std::vector<T>& b) {
    std::vector<T> out(a.size());
    for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
  }

  std::vector<T> layer_norm_rows(const std::vector<T>& x, const LayerNormParams<T>& ln) {
    const int64_t d = cfg_.d;
    auto gain = ln.gain.data();
    auto bias = ln.bias.data();
    std::vector<T> out(x.size());
    for (int64_t i = 0; i < rows_; ++i) {
      const T* xrow = x.data() + i * d;
      T mean = T(0);
      for (int64_t j = 0; j < d; ++j) mean += xrow[j];
      mean /= static_cast<T>(d);
      T var = T(0);
      for (int64_t j = 0; j < d; ++j) var += (xrow[j] - mean) * (xrow[j] - mean);
      var /= static_cast<T>(d);
      T inv = T(1) / std::sqrt(var + ln.eps);
      for (int64_t j = 0; j < d; ++j)
        out[static_cast<size_t>(i * d + j)] = (xrow[j] - mean) * inv * gain[j] + bias[j];
    }
    return out;
  }

  const DoublePathModel<T>& model_;
  const ModelConfig& cfg_;
  int64_t rows_;
  std::vector<int64_t> src_row_of_;
  int64_t m_ = 0;
  int64_t t_ = 0;
  bool has_enc_cnn_ = false, has_enc_san_ = false;
  std::vector<T> enc_cnn_, enc_san_;
  std::vector<std::vector<int64_t>> allowed_;
  std::vector<std::deque<std::vector<T>>> cnn_hist_;
  std::vector<std::vector<T>> san_k_, san_v_;
};

}  // namespace dps
