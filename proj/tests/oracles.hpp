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
// Test-only oracles, independent of the production implementations they
// check: a corpus BLEU scorer built on ordered maps, a deterministic toy
// step decoder, and exhaustive search over its decodable sequences.

#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dps/beam.hpp"
#include "dps/metrics.hpp"
#include "dps/rng.hpp"

namespace dps::testing {

inline TokenLines token_lines(std::initializer_list<const char*> sentences) {
  TokenLines out;
  for (const char* s : sentences) {
    std::istringstream is(s);
    std::vector<std::string> toks;
    std::string t;
    while (is >> t) toks.push_back(t);
    out.push_back(std::move(toks));
  }
  return out;
}

// Independent corpus BLEU with explicit n-gram vectors and per-gram clipping.
inline double bleu_oracle(const TokenLines& hyps, const TokenLines& refs) {
  long long match[4] = {0, 0, 0, 0}, total[4] = {0, 0, 0, 0};
  long long hyp_len = 0, ref_len = 0;
  for (size_t i = 0; i < hyps.size(); ++i) {
    hyp_len += static_cast<long long>(hyps[i].size());
    ref_len += static_cast<long long>(refs[i].size());
    for (int n = 1; n <= 4; ++n) {
      std::map<std::vector<std::string>, long long> rc;
      for (size_t j = 0; j + n <= refs[i].size(); ++j)
        ++rc[std::vector<std::string>(refs[i].begin() + j, refs[i].begin() + j + n)];
      for (size_t j = 0; j + n <= hyps[i].size(); ++j) {
        ++total[n - 1];
        std::vector<std::string> gram(hyps[i].begin() + j, hyps[i].begin() + j + n);
        auto it = rc.find(gram);
        if (it != rc.end() && it->second > 0) {
          ++match[n - 1];
          --it->second;
        }
      }
    }
  }
  if (hyp_len == 0) return 0.0;
  double lp = 0;
  for (int n = 0; n < 4; ++n) {
    if (match[n] == 0 || total[n] == 0) return 0.0;
    lp += std::log(static_cast<double>(match[n]) / static_cast<double>(total[n]));
  }
  double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / hyp_len);
  return 100.0 * bp * std::exp(lp / 4.0);
}

// Ten fixed sentence pairs for corpus-level scoring checks.
inline std::pair<TokenLines, TokenLines> bleu_fixture() {
  TokenLines hyps = token_lines({
      "the cat sat on the mat",
      "a quick brown fox jumps over the lazy dog",
      "it rained all day yesterday",
      "she sells sea shells by the shore",
      "the model translates short sentences well",
      "numbers like 1 2 3 are tokens too",
      "this line matches its reference exactly",
      "long winded sentences are hard to score",
      "attention weights form a distribution",
      "the final line ends the fixture",
  });
  TokenLines refs = token_lines({
      "the cat sat on the mat",
      "the quick brown fox jumped over a lazy dog",
      "it rained for the whole day yesterday",
      "she sells sea shells on the sea shore",
      "the model translates short sentences very well",
      "numbers such as 1 2 3 are tokens as well",
      "this line matches its reference exactly",
      "long sentences are quite hard to score",
      "the attention weights form one distribution",
      "a final line ends this fixture",
  });
  return {hyps, refs};
}

// Deterministic toy model: next-token log-probabilities depend on the whole
// prefix through a seeded hash. Vocab {pad, bos, eos, a, b}: three decodable
// token choices.
class ToyDecoder : public StepDecoder {
 public:
  explicit ToyDecoder(uint64_t seed, int64_t vocab = 5) : seed_(seed), vocab_(vocab) {}

  int64_t vocab() const override { return vocab_; }

  void start(int64_t rows) override { prefixes_.assign(static_cast<size_t>(rows), {}); }

  void reorder(std::span<const int64_t> perm) override {
    std::vector<std::vector<int32_t>> next;
    next.reserve(perm.size());
    for (int64_t p : perm) next.push_back(prefixes_[static_cast<size_t>(p)]);
    prefixes_ = std::move(next);
  }

  std::vector<double> step(std::span<const int32_t> last_tokens) override {
    std::vector<double> out(prefixes_.size() * static_cast<size_t>(vocab_));
    for (size_t i = 0; i < prefixes_.size(); ++i) {
      prefixes_[i].push_back(last_tokens[i]);
      row_logp(prefixes_[i], out.data() + i * static_cast<size_t>(vocab_));
    }
    return out;
  }

  // Total log-probability of choosing `tokens` after bos, plus eos if finish.
  double score_sequence(const std::vector<int32_t>& tokens, bool finish) const {
    std::vector<int32_t> prefix{Vocabulary::kBos};
    double total = 0;
    std::vector<double> row(static_cast<size_t>(vocab_));
    for (int32_t tok : tokens) {
      row_logp(prefix, row.data());
      total += row[static_cast<size_t>(tok)];
      prefix.push_back(tok);
    }
    if (finish) {
      row_logp(prefix, row.data());
      total += row[static_cast<size_t>(Vocabulary::kEos)];
    }
    return total;
  }

 private:
  void row_logp(const std::vector<int32_t>& prefix, double* out) const {
    uint64_t h = seed_;
    for (int32_t t : prefix) h = mix_seed(h, 0x9E, static_cast<uint64_t>(t) + 1);
    double mx = -1e300;
    for (int64_t v = 0; v < vocab_; ++v) {
      uint64_t hv = mix_seed(h, 0x51, static_cast<uint64_t>(v));
      out[v] = 6.0 * (static_cast<double>(hv >> 11) * 0x1.0p-53) - 3.0;
      mx = std::max(mx, out[v]);
    }
    double sum = 0;
    for (int64_t v = 0; v < vocab_; ++v) sum += std::exp(out[v] - mx);
    double lse = mx + std::log(sum);
    for (int64_t v = 0; v < vocab_; ++v) out[v] -= lse;
  }

  uint64_t seed_;
  int64_t vocab_;
  std::vector<std::vector<int32_t>> prefixes_;
};

// Exhaustive search over every decodable sequence up to max_len, with the
// same suppression and ranking rules as beam_search.
inline Hypothesis exhaustive_best(const ToyDecoder& model, int64_t max_len, int64_t min_len,
                                  double alpha) {
  std::vector<Hypothesis> pool;
  std::vector<int32_t> letters{3, 4};
  std::function<void(std::vector<int32_t>&)> walk = [&](std::vector<int32_t>& tokens) {
    int64_t len = static_cast<int64_t>(tokens.size());
    if (len >= min_len && len + 1 <= max_len) {
      Hypothesis h;
      h.tokens = tokens;
      h.sum_logp = model.score_sequence(tokens, /*finish=*/true);
      h.finished = true;
      h.finish_step = len;
      pool.push_back(h);
    }
    if (len == max_len) {
      Hypothesis h;
      h.tokens = tokens;
      h.sum_logp = model.score_sequence(tokens, /*finish=*/false);
      pool.push_back(h);
      return;
    }
    for (int32_t tok : letters) {
      tokens.push_back(tok);
      walk(tokens);
      tokens.pop_back();
    }
  };
  std::vector<int32_t> tokens;
  walk(tokens);
  Hypothesis best = pool.front();
  for (size_t i = 1; i < pool.size(); ++i) {
    const Hypothesis& h = pool[i];
    double na = h.normalized(alpha), nb = best.normalized(alpha);
    bool better = na > nb;
    if (na == nb) {
      int64_t fa = h.finished ? h.finish_step : std::numeric_limits<int64_t>::max();
      int64_t fb = best.finished ? best.finish_step : std::numeric_limits<int64_t>::max();
      better = fa < fb || (fa == fb && h.tokens < best.tokens);
    }
    if (better) best = h;
  }
  return best;
}

}  // namespace dps::testing
