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
// Beam-search and greedy decoding over an abstract step decoder, plus the
// adapter that drives the incremental model session.

#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dps/data.hpp"
#include "dps/model.hpp"

namespace dps {

// Anything that can emit next-token log-probabilities for a set of parallel
// hypothesis rows. start(rows) resets to `rows` streams at position 0;
// reorder(perm) makes new row i continue old row perm[i] (rows may repeat).
class StepDecoder {
 public:
  virtual ~StepDecoder() = default;
  virtual int64_t vocab() const = 0;
  virtual void start(int64_t rows) = 0;
  virtual void reorder(std::span<const int64_t> perm) = 0;
  // last_tokens: the token chosen at the previous position per row (bos on
  // the first call). Returns [rows * vocab] log-probabilities.
  virtual std::vector<double> step(std::span<const int32_t> last_tokens) = 0;
};

// A finished or in-flight decode. tokens excludes bos and eos; sum_logp
// includes the eos term when finished. Normalized score divides by
// (#scored tokens)^alpha.
struct Hypothesis {
  std::vector<int32_t> tokens;
  double sum_logp = 0.0;
  bool finished = false;
  int64_t finish_step = -1;

  double normalized(double alpha) const {
    double len = static_cast<double>(tokens.size() + (finished ? 1 : 0));
    if (len < 1.0) len = 1.0;
    return sum_logp / std::pow(len, alpha);
  }
};

namespace detail {

// Final ranking: higher normalized score first; ties broken by earlier
// finish, then lexicographically smaller token ids.
inline bool better_final(const Hypothesis& a, const Hypothesis& b, double alpha) {
  double na = a.normalized(alpha), nb = b.normalized(alpha);
  if (na != nb) return na > nb;
  int64_t fa = a.finished ? a.finish_step : std::numeric_limits<int64_t>::max();
  int64_t fb = b.finished ? b.finish_step : std::numeric_limits<int64_t>::max();
  if (fa != fb) return fa < fb;
  return a.tokens < b.tokens;
}

}  // namespace detail

struct BeamOptions {
  int64_t beam = 5;
  int64_t max_len = 64;
  int64_t min_len = 0;  // eos suppressed until this many real tokens exist
  double alpha = 1.0;   // length-normalization exponent
};

inline Hypothesis greedy_decode(StepDecoder& decoder, int64_t max_len, int64_t min_len = 0);

// Standard beam expansion over log P(y_t | y_<t, x). While a hypothesis has
// fewer than min_len tokens its eos continuation is suppressed. At every
// step each live hypothesis retires a finished (eos-terminated) copy of
// itself to the pool, and the top-beam non-eos continuations keep searching;
// at max_len the survivors join the pool without an eos. The best pool entry
// under length normalization wins, ties broken by earlier finish then
// lexicographic token ids. Beam size 1 short-circuits to greedy decoding
// (identical by definition).
inline Hypothesis beam_search(StepDecoder& decoder, const BeamOptions& opts) {
  if (opts.beam < 1) throw ConfigError("beam_search: beam size must be >= 1");
  if (opts.max_len < 1) throw ConfigError("beam_search: max_len must be >= 1");
  if (opts.min_len >= opts.max_len)
    throw ConfigError("beam_search: min_len must be below max_len");
  if (opts.beam == 1) return greedy_decode(decoder, opts.max_len, opts.min_len);
  const int64_t vocab = decoder.vocab();

  std::vector<Hypothesis> live(1);
  std::vector<Hypothesis> finished;
  decoder.start(1);
  std::vector<int32_t> feed{Vocabulary::kBos};

  for (int64_t step = 0; step < opts.max_len && !live.empty(); ++step) {
    std::vector<double> logp = decoder.step(feed);
    const bool eos_ok = step >= opts.min_len;
    struct Cand {
      double score;
      int64_t parent;
      int32_t token;
    };
    std::vector<Cand> cands;
    cands.reserve(live.size() * static_cast<size_t>(vocab));
    for (size_t i = 0; i < live.size(); ++i) {
      const double* row = logp.data() + static_cast<int64_t>(i) * vocab;
      if (eos_ok) {
        Hypothesis done = live[i];
        done.sum_logp += row[Vocabulary::kEos];
        done.finished = true;
        done.finish_step = step;
        finished.push_back(std::move(done));
      }
      for (int32_t v = 0; v < vocab; ++v) {
        if (v == Vocabulary::kPad || v == Vocabulary::kBos || v == Vocabulary::kEos) continue;
        cands.push_back({live[i].sum_logp + row[v], static_cast<int64_t>(i), v});
      }
    }
    size_t keep = std::min(cands.size(), static_cast<size_t>(opts.beam));
    std::partial_sort(cands.begin(), cands.begin() + static_cast<int64_t>(keep), cands.end(),
                      [](const Cand& a, const Cand& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    std::vector<Hypothesis> next_live;
    std::vector<int64_t> next_parent;
    std::vector<int32_t> next_token;
    for (size_t c = 0; c < keep; ++c) {
      const Cand& cand = cands[c];
      Hypothesis h = live[static_cast<size_t>(cand.parent)];
      h.tokens.push_back(cand.token);
      h.sum_logp = cand.score;
      next_live.push_back(std::move(h));
      next_parent.push_back(cand.parent);
      next_token.push_back(cand.token);
    }
    live = std::move(next_live);
    if (live.empty()) break;
    if (step + 1 < opts.max_len) {
      decoder.reorder(next_parent);
      feed = next_token;
    }
  }
  // Unfinished survivors are eligible results (output without eos).
  for (Hypothesis& h : live) finished.push_back(std::move(h));
  if (finished.empty()) return Hypothesis{};
  Hypothesis best = finished.front();
  for (size_t i = 1; i < finished.size(); ++i)
    if (detail::better_final(finished[i], best, opts.alpha)) best = finished[i];
  return best;
}

// Argmax decoding until eos or max_len; eos suppressed below min_len.
inline Hypothesis greedy_decode(StepDecoder& decoder, int64_t max_len, int64_t min_len) {
  if (max_len < 1) throw ConfigError("greedy_decode: max_len must be >= 1");
  const int64_t vocab = decoder.vocab();
  Hypothesis hyp;
  decoder.start(1);
  std::vector<int32_t> feed{Vocabulary::kBos};
  for (int64_t step = 0; step < max_len; ++step) {
    std::vector<double> logp = decoder.step(feed);
    const bool eos_ok = step >= min_len;
    int32_t best = -1;
    for (int32_t v = 0; v < vocab; ++v) {
      if (v == Vocabulary::kPad || v == Vocabulary::kBos) continue;
      if (v == Vocabulary::kEos && !eos_ok) continue;
      if (best < 0 || logp[static_cast<size_t>(v)] > logp[static_cast<size_t>(best)]) best = v;
    }
    hyp.sum_logp += logp[static_cast<size_t>(best)];
    if (best == Vocabulary::kEos) {
      hyp.finished = true;
      hyp.finish_step = step;
      break;
    }
    hyp.tokens.push_back(best);
    feed[0] = best;
  }
  return hyp;
}

// ---------------------------------------------------------------------------
// Adapter driving the incremental model session for one source sentence.

template <typename T>
class ModelStepDecoder : public StepDecoder {
 public:
  ModelStepDecoder(const DoublePathModel<T>& model, EncoderOutput<T> enc)
      : model_(model), enc_(std::move(enc)) {
    if (enc_.batch != 1)
      throw ContractError("ModelStepDecoder expects a single-sentence encoding");
  }

  int64_t vocab() const override { return model_.config().tgt_vocab; }

  void start(int64_t rows) override {
    session_.emplace(model_, enc_, rows, std::vector<int64_t>(static_cast<size_t>(rows), 0));
  }

  void reorder(std::span<const int64_t> perm) override { session_->reorder(perm); }

  std::vector<double> step(std::span<const int32_t> last_tokens) override {
    std::vector<T> logp = session_->step(last_tokens);
    return std::vector<double>(logp.begin(), logp.end());
  }

 private:
  const DoublePathModel<T>& model_;
  EncoderOutput<T> enc_;
  std::optional<DecoderSession<T>> session_;
};

// Encodes one source sentence (no padding, batch of 1).
template <typename T>
EncoderOutput<T> encode_single(const DoublePathModel<T>& model,
                               std::span<const int32_t> src_ids) {
  std::vector<uint8_t> mask(src_ids.size(), 1);
  int64_t m = static_cast<int64_t>(src_ids.size());
  if (m == 0) {  // empty source: feed a single pad position
    static const int32_t pad = Vocabulary::kPad;
    std::vector<uint8_t> none{0};
    return encode(model, std::span<const int32_t>(&pad, 1), 1, 1,
                  std::span<const uint8_t>(none), /*training=*/false, nullptr);
  }
  return encode(model, src_ids, 1, m, std::span<const uint8_t>(mask), /*training=*/false,
                nullptr);
}

// Decodes one sentence with beam search (beam) or greedy (beam == 1 uses the
// same path; they coincide).
template <typename T>
Hypothesis decode_sentence(const DoublePathModel<T>& model, std::span<const int32_t> src_ids,
                           const BeamOptions& opts) {
  ModelStepDecoder<T> decoder(model, encode_single(model, src_ids));
  return beam_search(decoder, opts);
}

}  // namespace dps
