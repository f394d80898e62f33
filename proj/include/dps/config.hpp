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

#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dps/error.hpp"
#include "dps/tensor.hpp"

namespace dps {

// Architectural hyperparameters for the double-path network. The four path
// switches select which of the convolutional / self-attention stacks exist
// on each side (the M1..M9 grid).
struct ModelConfig {
  int64_t d = 64;        // hidden and embedding width
  int64_t d_ff = 256;    // feed-forward inner width
  int64_t heads = 4;     // attention heads
  int64_t kernel = 3;    // conv kernel width (odd)
  int64_t cnn_enc_layers = 2;
  int64_t san_enc_layers = 1;
  int64_t cnn_dec_layers = 2;
  int64_t san_dec_layers = 1;
  int64_t src_vocab = 0;
  int64_t tgt_vocab = 0;
  int64_t max_len = 64;  // position table size
  double dropout = 0.1;
  bool enc_cnn = true;
  bool enc_san = true;
  bool dec_cnn = true;
  bool dec_san = true;
  // One word table serves both sides (requires equal vocab sizes). Natural
  // for a joint source/target vocabulary.
  bool share_embeddings = false;

  void validate() const {
    if (d <= 0) throw ConfigError("model: d must be positive");
    if (d_ff <= 0) throw ConfigError("model: d_ff must be positive");
    if (heads <= 0 || d % heads != 0)
      throw ConfigError("model: heads (" + std::to_string(heads) + ") must divide d (" +
                        std::to_string(d) + ")");
    if (kernel < 1 || kernel % 2 == 0)
      throw ConfigError("model: kernel must be odd and >= 1, got " + std::to_string(kernel));
    if (!enc_cnn && !enc_san) throw ConfigError("model: encoder needs at least one path");
    if (!dec_cnn && !dec_san) throw ConfigError("model: decoder needs at least one path");
    if (cnn_enc_layers < 0 || san_enc_layers < 0 || cnn_dec_layers < 0 || san_dec_layers < 0)
      throw ConfigError("model: layer counts must be >= 0");
    // One self-attention layer holds two sublayers, so depth parity between
    // the paths means cnn_layers = 2 * san_layers.
    if (enc_cnn && enc_san && cnn_enc_layers != 2 * san_enc_layers)
      throw ConfigError("model: encoder depth consistency requires cnn_enc_layers == 2 * "
                        "san_enc_layers, got " + std::to_string(cnn_enc_layers) + " vs " +
                        std::to_string(san_enc_layers));
    if (dec_cnn && dec_san && cnn_dec_layers != 2 * san_dec_layers)
      throw ConfigError("model: decoder depth consistency requires cnn_dec_layers == 2 * "
                        "san_dec_layers, got " + std::to_string(cnn_dec_layers) + " vs " +
                        std::to_string(san_dec_layers));
    if (src_vocab < 1 || tgt_vocab < 1)
      throw ConfigError("model: vocab sizes must be positive");
    if (max_len < 1) throw ConfigError("model: max_len must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0)
      throw ConfigError("model: dropout must be in [0,1), got " + std::to_string(dropout));
    if (share_embeddings && src_vocab != tgt_vocab)
      throw ConfigError("model: share_embeddings requires equal vocab sizes");
  }

  std::string to_kv() const {
    std::ostringstream os;
    os << "d=" << d << "\nd_ff=" << d_ff << "\nheads=" << heads << "\nkernel=" << kernel
       << "\ncnn_enc_layers=" << cnn_enc_layers << "\nsan_enc_layers=" << san_enc_layers
       << "\ncnn_dec_layers=" << cnn_dec_layers << "\nsan_dec_layers=" << san_dec_layers
       << "\nsrc_vocab=" << src_vocab << "\ntgt_vocab=" << tgt_vocab << "\nmax_len=" << max_len
       << "\ndropout=" << dropout << "\nenc_cnn=" << (enc_cnn ? 1 : 0)
       << "\nenc_san=" << (enc_san ? 1 : 0) << "\ndec_cnn=" << (dec_cnn ? 1 : 0)
       << "\ndec_san=" << (dec_san ? 1 : 0) << "\nshare_embeddings=" << (share_embeddings ? 1 : 0)
       << "\n";
    return os.str();
  }

  static ModelConfig from_kv(const std::string& text) {
    ModelConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("model config: bad line '" + line + "'");
      std::string key = line.substr(0, eq), val = line.substr(eq + 1);
      if (key == "d") c.d = std::stoll(val);
      else if (key == "d_ff") c.d_ff = std::stoll(val);
      else if (key == "heads") c.heads = std::stoll(val);
      else if (key == "kernel") c.kernel = std::stoll(val);
      else if (key == "cnn_enc_layers") c.cnn_enc_layers = std::stoll(val);
      else if (key == "san_enc_layers") c.san_enc_layers = std::stoll(val);
      else if (key == "cnn_dec_layers") c.cnn_dec_layers = std::stoll(val);
      else if (key == "san_dec_layers") c.san_dec_layers = std::stoll(val);
      else if (key == "src_vocab") c.src_vocab = std::stoll(val);
      else if (key == "tgt_vocab") c.tgt_vocab = std::stoll(val);
      else if (key == "max_len") c.max_len = std::stoll(val);
      else if (key == "dropout") c.dropout = std::stod(val);
      else if (key == "enc_cnn") c.enc_cnn = val != "0";
      else if (key == "enc_san") c.enc_san = val != "0";
      else if (key == "dec_cnn") c.dec_cnn = val != "0";
      else if (key == "dec_san") c.dec_san = val != "0";
      else if (key == "share_embeddings") c.share_embeddings = val != "0";
      else throw ConfigError("model config: unknown key '" + key + "'");
    }
    return c;
  }
};

// Applies one row of the four-switch ablation grid:
//   id   encoder        decoder
//   M1   CNN            CNN
//   M2   CNN            SAN
//   M3   CNN            CNN+SAN
//   M4   SAN            CNN
//   M5   SAN            SAN
//   M6   SAN            CNN+SAN
//   M7   CNN+SAN        CNN
//   M8   CNN+SAN        SAN
//   M9   CNN+SAN        CNN+SAN
inline ModelConfig build_ablation(const std::string& id, ModelConfig base) {
  struct Row {
    bool ec, ea, dc, da;
  };
  static const std::map<std::string, Row> grid = {
      {"M1", {true, false, true, false}},  {"M2", {true, false, false, true}},
      {"M3", {true, false, true, true}},   {"M4", {false, true, true, false}},
      {"M5", {false, true, false, true}},  {"M6", {false, true, true, true}},
      {"M7", {true, true, true, false}},   {"M8", {true, true, false, true}},
      {"M9", {true, true, true, true}},
  };
  auto it = grid.find(id);
  if (it == grid.end()) throw ConfigError("unknown ablation id '" + id + "' (expected M1..M9)");
  base.enc_cnn = it->second.ec;
  base.enc_san = it->second.ea;
  base.dec_cnn = it->second.dc;
  base.dec_san = it->second.da;
  return base;
}

inline std::vector<std::string> ablation_ids() {
  return {"M1", "M2", "M3", "M4", "M5", "M6", "M7", "M8", "M9"};
}

struct ParamSpec {
  std::string name;
  Shape shape;
};

// The single source of truth for which parameters exist, their names and
// shapes. Model construction, checkpointing and parameter counting all walk
// this list.
inline std::vector<ParamSpec> enumerate_param_shapes(const ModelConfig& c) {
  c.validate();
  std::vector<ParamSpec> out;
  auto p = [&out](std::string name, Shape shape) {
    out.push_back({std::move(name), std::move(shape)});
  };
  const int64_t d = c.d;
  if (c.share_embeddings) {
    p("embed.word", {c.src_vocab, d});
  } else {
    p("src_embed.word", {c.src_vocab, d});
    p("tgt_embed.word", {c.tgt_vocab, d});
  }
  p("src_embed.pos", {c.max_len, d});
  p("tgt_embed.pos", {c.max_len, d});

  auto attention = [&](const std::string& prefix) {
    p(prefix + ".wq", {d, d});
    p(prefix + ".wk", {d, d});
    p(prefix + ".wv", {d, d});
    p(prefix + ".wo", {d, d});
  };
  auto feed_fwd = [&](const std::string& prefix) {
    p(prefix + ".w1", {d, c.d_ff});
    p(prefix + ".b1", {c.d_ff});
    p(prefix + ".w2", {c.d_ff, d});
    p(prefix + ".b2", {d});
  };
  auto norm = [&](const std::string& prefix) {
    p(prefix + ".gain", {d});
    p(prefix + ".bias", {d});
  };
  auto gate = [&](const std::string& prefix) {
    p(prefix + ".w", {2 * d, 1});
    p(prefix + ".b", {1});
  };

  if (c.enc_cnn)
    for (int64_t i = 0; i < c.cnn_enc_layers; ++i) {
      std::string pre = "enc.cnn." + std::to_string(i);
      p(pre + ".filter", {c.kernel * d, 2 * d});
      p(pre + ".bias", {2 * d});
    }
  if (c.enc_san)
    for (int64_t i = 0; i < c.san_enc_layers; ++i) {
      std::string pre = "enc.san." + std::to_string(i);
      attention(pre + ".self");
      norm(pre + ".ln_self");
      feed_fwd(pre + ".ff");
      norm(pre + ".ln_ff");
    }
  const bool dual_enc = c.enc_cnn && c.enc_san;
  if (c.dec_cnn)
    for (int64_t i = 0; i < c.cnn_dec_layers; ++i) {
      std::string pre = "dec.cnn." + std::to_string(i);
      p(pre + ".filter", {c.kernel * d, 2 * d});
      p(pre + ".bias", {2 * d});
      if (dual_enc) gate(pre + ".gate");
    }
  if (c.dec_san)
    for (int64_t i = 0; i < c.san_dec_layers; ++i) {
      std::string pre = "dec.san." + std::to_string(i);
      attention(pre + ".self");
      norm(pre + ".ln_self");
      if (dual_enc) gate(pre + ".gate");
      norm(pre + ".ln_ctx");
      feed_fwd(pre + ".ff");
      norm(pre + ".ln_ff");
    }
  if (c.dec_cnn && c.dec_san) gate("out.gate");
  p("out.proj.w", {d, c.tgt_vocab});
  p("out.proj.b", {c.tgt_vocab});
  return out;
}

// Exact scalar parameter count for a configuration.
inline int64_t count_parameters(const ModelConfig& c) {
  int64_t total = 0;
  for (const ParamSpec& spec : enumerate_param_shapes(c)) total += numel(spec.shape);
  return total;
}

}  // namespace dps
