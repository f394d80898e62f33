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

#include "dps/data.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "dps/rng.hpp"

namespace dps {

namespace {
const char* kSpecialNames[] = {"<pad>", "<bos>", "<eos>", "<unk>"};
}

std::vector<std::string> tokenize(const std::string& line, TokenMode mode) {
  std::vector<std::string> out;
  if (mode == TokenMode::kWord) {
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) out.push_back(tok);
  } else {
    size_t i = 0;
    while (i < line.size()) {
      unsigned char c = static_cast<unsigned char>(line[i]);
      size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xe ? 3 : 4;
      len = std::min(len, line.size() - i);
      out.push_back(line.substr(i, len));
      i += len;
    }
  }
  return out;
}

std::string detokenize(const std::vector<std::string>& tokens, TokenMode mode) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (mode == TokenMode::kWord && i > 0) out += ' ';
    out += tokens[i];
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (const char* s : kSpecialNames) push(s);
}

void Vocabulary::push(const std::string& token) {
  token_to_id_.emplace(token, static_cast<int32_t>(id_to_token_.size()));
  id_to_token_.push_back(token);
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  for (const std::string& t : tokens) {
    if (v.contains(t))
      throw ConfigError("vocabulary: duplicate token '" + t + "'");
    v.push(t);
  }
  return v;
}

int32_t Vocabulary::id_of(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(int32_t id) const {
  if (id < 0 || id >= size())
    throw VocabularyError("vocabulary: id " + std::to_string(id) + " out of range " +
                          std::to_string(size()));
  return id_to_token_[static_cast<size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const {
  return token_to_id_.count(token) > 0;
}

std::vector<int32_t> Vocabulary::ids_of(const std::vector<std::string>& tokens) const {
  std::vector<int32_t> out;
  out.reserve(tokens.size());
  for (const std::string& t : tokens) out.push_back(id_of(t));
  return out;
}

std::vector<std::string> Vocabulary::tokens_of(std::span<const int32_t> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int32_t id : ids) out.push_back(token_of(id));
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open vocabulary file for writing: " + path);
  for (int32_t i = kNumSpecials; i < size(); ++i) os << id_to_token_[static_cast<size_t>(i)] << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open vocabulary file: " + path);
  Vocabulary v;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) v.push(line);
  }
  return v;
}

Vocabulary build_vocab(const std::vector<std::string>& lines, TokenMode mode,
                       int32_t max_size) {
  if (max_size < Vocabulary::kNumSpecials)
    throw ConfigError("build_vocab: max_size must be at least " +
                      std::to_string(Vocabulary::kNumSpecials));
  std::unordered_map<std::string, int64_t> counts;
  for (const std::string& line : lines)
    for (const std::string& tok : tokenize(line, mode)) ++counts[tok];
  if (counts.empty()) throw CorpusError("build_vocab: empty corpus");
  std::vector<std::pair<std::string, int64_t>> sorted(counts.begin(), counts.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> keep;
  for (const auto& [tok, cnt] : sorted) {
    if (static_cast<int32_t>(keep.size()) + Vocabulary::kNumSpecials >= max_size) break;
    keep.push_back(tok);
  }
  return Vocabulary::from_tokens(keep);
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

LoadReport load_parallel(const std::string& src_path, const std::string& tgt_path,
                         const Vocabulary& vocab_src, const Vocabulary& vocab_tgt,
                         int64_t max_len, TokenMode mode) {
  std::vector<std::string> src_lines = read_lines(src_path);
  std::vector<std::string> tgt_lines = read_lines(tgt_path);
  if (src_lines.size() != tgt_lines.size())
    throw CorpusError("load_parallel: line counts differ: " + src_path + " has " +
                      std::to_string(src_lines.size()) + " lines, " + tgt_path + " has " +
                      std::to_string(tgt_lines.size()));
  LoadReport report;
  for (size_t i = 0; i < src_lines.size(); ++i) {
    SentencePair pair;
    pair.src = vocab_src.ids_of(tokenize(src_lines[i], mode));
    pair.tgt = vocab_tgt.ids_of(tokenize(tgt_lines[i], mode));
    pair.tgt.push_back(Vocabulary::kEos);
    if (static_cast<int64_t>(pair.src.size()) > max_len ||
        static_cast<int64_t>(pair.tgt.size()) > max_len) {
      ++report.dropped_too_long;
      continue;
    }
    report.pairs.push_back(std::move(pair));
  }
  return report;
}

SyntheticData gen_synthetic(SynthTask task, int64_t n_pairs, int32_t vocab_k, int64_t len_lo,
                            int64_t len_hi, uint64_t seed) {
  if (vocab_k < 2) throw ConfigError("gen_synthetic: vocab_k must be >= 2");
  if (len_lo < 1 || len_hi < len_lo)
    throw ConfigError("gen_synthetic: invalid length range");
  std::vector<std::string> symbols;
  for (int32_t i = 0; i < vocab_k; ++i) symbols.push_back(std::to_string(i));
  SyntheticData data{.pairs = {}, .vocab = Vocabulary::from_tokens(symbols)};
  RngStream rng(seed);
  for (int64_t p = 0; p < n_pairs; ++p) {
    int64_t len = len_lo + static_cast<int64_t>(rng.uniform_int(
                               static_cast<uint64_t>(len_hi - len_lo + 1)));
    SentencePair pair;
    pair.src.reserve(static_cast<size_t>(len));
    for (int64_t i = 0; i < len; ++i)
      pair.src.push_back(Vocabulary::kNumSpecials +
                         static_cast<int32_t>(rng.uniform_int(static_cast<uint64_t>(vocab_k))));
    pair.tgt = pair.src;
    if (task == SynthTask::kReverse) std::reverse(pair.tgt.begin(), pair.tgt.end());
    if (task == SynthTask::kSort) std::sort(pair.tgt.begin(), pair.tgt.end());
    pair.tgt.push_back(Vocabulary::kEos);
    data.pairs.push_back(std::move(pair));
  }
  return data;
}

Batch make_batch(std::span<const SentencePair> pairs) {
  Batch b;
  b.size = static_cast<int64_t>(pairs.size());
  for (const SentencePair& p : pairs) {
    b.src_len = std::max(b.src_len, static_cast<int64_t>(p.src.size()));
    b.tgt_len = std::max(b.tgt_len, static_cast<int64_t>(p.tgt.size()));
  }
  b.src.assign(static_cast<size_t>(b.size * b.src_len), Vocabulary::kPad);
  b.tgt_in.assign(static_cast<size_t>(b.size * b.tgt_len), Vocabulary::kPad);
  b.tgt_out.assign(static_cast<size_t>(b.size * b.tgt_len), Vocabulary::kPad);
  b.src_mask.assign(static_cast<size_t>(b.size * b.src_len), 0);
  b.tgt_mask.assign(static_cast<size_t>(b.size * b.tgt_len), 0);
  for (int64_t i = 0; i < b.size; ++i) {
    const SentencePair& p = pairs[static_cast<size_t>(i)];
    b.src_lens.push_back(static_cast<int32_t>(p.src.size()));
    b.tgt_lens.push_back(static_cast<int32_t>(p.tgt.size()));
    for (size_t j = 0; j < p.src.size(); ++j) {
      b.src[static_cast<size_t>(i * b.src_len) + j] = p.src[j];
      b.src_mask[static_cast<size_t>(i * b.src_len) + j] = 1;
    }
    // tgt stores y + eos; teacher forcing shifts it right behind a bos.
    for (size_t j = 0; j < p.tgt.size(); ++j) {
      b.tgt_out[static_cast<size_t>(i * b.tgt_len) + j] = p.tgt[j];
      b.tgt_in[static_cast<size_t>(i * b.tgt_len) + j] =
          j == 0 ? Vocabulary::kBos : p.tgt[j - 1];
      b.tgt_mask[static_cast<size_t>(i * b.tgt_len) + j] = 1;
    }
    b.real_target_tokens += static_cast<int64_t>(p.tgt.size());
  }
  return b;
}

}  // namespace dps
