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
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dps/error.hpp"

namespace dps {

enum class TokenMode { kWord, kChar };

// Splits a line into tokens. Word mode splits on whitespace; char mode
// yields one token per UTF-8 code point, spaces included, so that
// detokenize(tokenize(s)) == s exactly.
std::vector<std::string> tokenize(const std::string& line, TokenMode mode);
std::string detokenize(const std::vector<std::string>& tokens, TokenMode mode);

// Bidirectional token <-> id map. Ids 0..3 are reserved for the specials
// pad, bos, eos, unk in that order.
class Vocabulary {
 public:
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kBos = 1;
  static constexpr int32_t kEos = 2;
  static constexpr int32_t kUnk = 3;
  static constexpr int32_t kNumSpecials = 4;

  Vocabulary();
  // Appends non-special tokens in the given order.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  int32_t id_of(const std::string& token) const;  // unk if absent
  const std::string& token_of(int32_t id) const;
  bool contains(const std::string& token) const;
  int32_t size() const { return static_cast<int32_t>(id_to_token_.size()); }

  std::vector<int32_t> ids_of(const std::vector<std::string>& tokens) const;
  std::vector<std::string> tokens_of(std::span<const int32_t> ids) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  void push(const std::string& token);
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int32_t> token_to_id_;
};

// Builds a frequency-sorted vocabulary (ties broken lexicographically) from
// raw lines, truncated to max_size entries including the four specials.
Vocabulary build_vocab(const std::vector<std::string>& lines, TokenMode mode, int32_t max_size);

// One sentence pair; tgt carries a trailing eos.
struct SentencePair {
  std::vector<int32_t> src;
  std::vector<int32_t> tgt;
};

struct LoadReport {
  std::vector<SentencePair> pairs;
  int64_t dropped_too_long = 0;
};

// Loads line-aligned parallel files. Pairs whose source or target (with eos)
// exceed max_len are dropped and counted.
LoadReport load_parallel(const std::string& src_path, const std::string& tgt_path,
                         const Vocabulary& vocab_src, const Vocabulary& vocab_tgt,
                         int64_t max_len, TokenMode mode);

std::vector<std::string> read_lines(const std::string& path);

// Synthetic sequence tasks for desk-scale verification.
enum class SynthTask { kCopy, kReverse, kSort };

struct SyntheticData {
  std::vector<SentencePair> pairs;
  Vocabulary vocab;  // shared by source and target
};

SyntheticData gen_synthetic(SynthTask task, int64_t n_pairs, int32_t vocab_k, int64_t len_lo,
                            int64_t len_hi, uint64_t seed);

// Padded token-id matrices for one training/eval step. tgt_in is the
// teacher-forcing input (bos + y), tgt_out the prediction target (y + eos).
struct Batch {
  int64_t size = 0;     // sentence pairs
  int64_t src_len = 0;  // padded source length
  int64_t tgt_len = 0;  // padded target length
  std::vector<int32_t> src;      // [size, src_len]
  std::vector<int32_t> tgt_in;   // [size, tgt_len]
  std::vector<int32_t> tgt_out;  // [size, tgt_len]
  std::vector<int32_t> src_lens;
  std::vector<int32_t> tgt_lens;          // includes eos
  std::vector<uint8_t> src_mask;          // [size, src_len], 1 = real token
  std::vector<uint8_t> tgt_mask;          // [size, tgt_len]
  int64_t real_target_tokens = 0;
};

Batch make_batch(std::span<const SentencePair> pairs);

}  // namespace dps
