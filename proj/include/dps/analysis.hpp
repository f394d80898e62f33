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
// Alignment-matrix export and attention-entropy statistics. Matrices are
// written with 6 decimals for inspection; per-token entropies are written at
// full precision so downstream aggregation reproduces in-memory values.

#pragma once

#include <array>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "dps/capture.hpp"
#include "dps/data.hpp"
#include "dps/model.hpp"

namespace dps {

struct AlignmentMatrix {
  int64_t rows = 0;  // target length n
  int64_t cols = 0;  // source length m
  std::vector<double> values;

  double at(int64_t r, int64_t c) const { return values[static_cast<size_t>(r * cols + c)]; }
};

// Per-sentence alignment record: one matrix and one entropy vector per
// available flow.
struct AttentionRecord {
  int64_t id = 0;
  int64_t m = 0;  // source length
  int64_t n = 0;  // target length
  std::vector<std::string> src_tokens, tgt_tokens;
  std::array<std::optional<AlignmentMatrix>, 4> flows;    // Flow-indexed
  std::array<std::vector<double>, 4> entropies;           // per target token
};

// -sum x ln x with 0 ln 0 = 0.
double entropy_of_row(std::span<const double> row);

// Validates every matrix row (sum within 1e-4 of 1) and fills the per-token
// entropy vectors.
void fill_entropies(AttentionRecord& record);

// Per-flow mean entropy over the record's target tokens; validates rows.
std::array<std::optional<double>, 4> attention_entropy(const AttentionRecord& record);

void write_alignment_dump(const std::vector<AttentionRecord>& records, std::ostream& os);
std::vector<AttentionRecord> parse_alignment_dump(std::istream& is);

// Mean alignment entropy per (encoder path, decoder path) cell, averaged per
// sentence and then over sentences (from the dumps' full-precision entropy
// fields).
struct EntropyReport {
  // cells[encoder][decoder], 0 = cnn path, 1 = san path
  std::array<std::array<std::optional<double>, 2>, 2> cells;
  int64_t sentences = 0;

  std::string to_string() const;
};

EntropyReport entropy_report(const std::vector<AttentionRecord>& records);

// ---------------------------------------------------------------------------
// Record construction from a trained model (teacher-forced forwards).

template <typename T>
AttentionRecord attention_record_for_pair(const DoublePathModel<T>& model,
                                          const SentencePair& pair,
                                          const Vocabulary& vocab_src,
                                          const Vocabulary& vocab_tgt, int64_t id) {
  Batch batch = make_batch(std::span<const SentencePair>(&pair, 1));
  AttentionCapture capture;
  forward_log_probs(model, batch, /*training=*/false, nullptr, &capture);
  AttentionRecord rec;
  rec.id = id;
  rec.m = batch.src_len;
  rec.n = batch.tgt_len;
  rec.src_tokens = vocab_src.tokens_of(pair.src);
  rec.tgt_tokens = vocab_tgt.tokens_of(pair.tgt);
  for (int f = 0; f < 4; ++f) {
    Flow flow = static_cast<Flow>(f);
    if (!capture.has(flow)) continue;
    AlignmentMatrix mat;
    mat.rows = rec.n;
    mat.cols = rec.m;
    mat.values = capture.mean(flow);
    rec.flows[static_cast<size_t>(f)] = std::move(mat);
  }
  fill_entropies(rec);
  return rec;
}

template <typename T>
std::vector<AttentionRecord> build_attention_records(const DoublePathModel<T>& model,
                                                     std::span<const SentencePair> pairs,
                                                     const Vocabulary& vocab_src,
                                                     const Vocabulary& vocab_tgt) {
  std::vector<AttentionRecord> records;
  records.reserve(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i)
    records.push_back(attention_record_for_pair(model, pairs[i], vocab_src, vocab_tgt,
                                                static_cast<int64_t>(i)));
  return records;
}

// Writes the alignment dump for a corpus to out_path and returns the records.
template <typename T>
std::vector<AttentionRecord> dump_alignments(const DoublePathModel<T>& model,
                                             std::span<const SentencePair> pairs,
                                             const Vocabulary& vocab_src,
                                             const Vocabulary& vocab_tgt,
                                             const std::string& out_path) {
  std::vector<AttentionRecord> records =
      build_attention_records(model, pairs, vocab_src, vocab_tgt);
  std::ofstream os(out_path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open alignment dump for writing: " + out_path);
  write_alignment_dump(records, os);
  if (!os) throw IoError("failed writing alignment dump: " + out_path);
  return records;
}

}  // namespace dps
