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
// Shared helpers for the test binaries.

#pragma once

#include <vector>

#include "dps/config.hpp"
#include "dps/data.hpp"
#include "dps/rng.hpp"
#include "dps/tensor.hpp"

namespace dps::testing {

template <typename T>
Tensor<T> random_tensor(Shape shape, RngStream& rng, T stddev = T(1),
                        bool requires_grad = true) {
  std::vector<T> data(static_cast<size_t>(numel(shape)));
  for (T& v : data) v = static_cast<T>(rng.normal(0.0, static_cast<double>(stddev)));
  return Tensor<T>(std::move(shape), std::move(data), requires_grad);
}

// Small dual-path configuration for fast structural tests.
inline ModelConfig mini_config(int64_t vocab = 9) {
  ModelConfig cfg;
  cfg.d = 4;
  cfg.d_ff = 8;
  cfg.heads = 2;
  cfg.kernel = 3;
  cfg.cnn_enc_layers = cfg.cnn_dec_layers = 2;
  cfg.san_enc_layers = cfg.san_dec_layers = 1;
  cfg.src_vocab = cfg.tgt_vocab = vocab;
  cfg.max_len = 12;
  cfg.dropout = 0.0;
  return cfg;
}

// The acceptance-scale tiny configuration (d=8, vocab 11).
inline ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.d_ff = 16;
  cfg.heads = 2;
  cfg.kernel = 3;
  cfg.cnn_enc_layers = cfg.cnn_dec_layers = 2;
  cfg.san_enc_layers = cfg.san_dec_layers = 1;
  cfg.src_vocab = cfg.tgt_vocab = 11;
  cfg.max_len = 16;
  cfg.dropout = 0.0;
  return cfg;
}

inline SentencePair make_pair(std::vector<int32_t> src, std::vector<int32_t> tgt_no_eos) {
  SentencePair p;
  p.src = std::move(src);
  p.tgt = std::move(tgt_no_eos);
  p.tgt.push_back(Vocabulary::kEos);
  return p;
}

inline std::vector<int32_t> random_ids(RngStream& rng, int64_t len, int32_t vocab) {
  std::vector<int32_t> ids(static_cast<size_t>(len));
  for (int32_t& id : ids)
    id = Vocabulary::kNumSpecials +
         static_cast<int32_t>(rng.uniform_int(
             static_cast<uint64_t>(vocab - Vocabulary::kNumSpecials)));
  return ids;
}

}  // namespace dps::testing
