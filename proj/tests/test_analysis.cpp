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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "dps/analysis.hpp"
#include "helpers.hpp"

using namespace dps;
using dps::testing::make_pair;
using dps::testing::mini_config;

namespace {

AlignmentMatrix uniform_matrix(int64_t n, int64_t m) {
  AlignmentMatrix mat;
  mat.rows = n;
  mat.cols = m;
  mat.values.assign(static_cast<size_t>(n * m), 1.0 / static_cast<double>(m));
  return mat;
}

AlignmentMatrix one_hot_matrix(int64_t n, int64_t m) {
  AlignmentMatrix mat;
  mat.rows = n;
  mat.cols = m;
  mat.values.assign(static_cast<size_t>(n * m), 0.0);
  for (int64_t r = 0; r < n; ++r) mat.values[static_cast<size_t>(r * m + r % m)] = 1.0;
  return mat;
}

AttentionRecord record_with(int64_t id, int64_t n, int64_t m,
                            const AlignmentMatrix& every_flow) {
  AttentionRecord rec;
  rec.id = id;
  rec.m = m;
  rec.n = n;
  for (int64_t j = 0; j < m; ++j) rec.src_tokens.push_back("s" + std::to_string(j));
  for (int64_t t = 0; t < n; ++t) rec.tgt_tokens.push_back("t" + std::to_string(t));
  for (int f = 0; f < 4; ++f) rec.flows[static_cast<size_t>(f)] = every_flow;
  fill_entropies(rec);
  return rec;
}

}  // namespace

TEST_CASE("entropy of rows: one-hot, uniform, bounds") {
  std::vector<double> hot{0.0, 1.0, 0.0, 0.0};
  CHECK(entropy_of_row(hot) == 0.0);
  std::vector<double> quarter(4, 0.25);
  CHECK(entropy_of_row(quarter) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  // Entropy is bounded by ln(m), equality only at uniform.
  std::vector<double> skew{0.7, 0.1, 0.1, 0.1};
  CHECK(entropy_of_row(skew) < std::log(4.0));
  CHECK(entropy_of_row(skew) > 0.0);
}

TEST_CASE("attention_entropy validates and averages per flow") {
  AttentionRecord rec = record_with(0, 3, 4, uniform_matrix(3, 4));
  auto means = attention_entropy(rec);
  for (int f = 0; f < 4; ++f) {
    REQUIRE(means[static_cast<size_t>(f)].has_value());
    CHECK(*means[static_cast<size_t>(f)] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }

  AttentionRecord bad = rec;
  bad.flows[0]->values[0] = 0.9;  // row no longer sums to 1
  CHECK_THROWS_AS(attention_entropy(bad), DataError);

  AttentionRecord partial;
  partial.id = 1;
  partial.m = 2;
  partial.n = 2;
  partial.flows[0] = uniform_matrix(2, 2);
  fill_entropies(partial);
  auto partial_means = attention_entropy(partial);
  CHECK(partial_means[0].has_value());
  CHECK(!partial_means[1].has_value());
}

TEST_CASE("alignment dump round-trips exactly") {
  std::vector<AttentionRecord> records;
  records.push_back(record_with(0, 2, 3, uniform_matrix(2, 3)));
  records.push_back(record_with(1, 3, 2, one_hot_matrix(3, 2)));
  records[1].src_tokens[0] = "with space";  // escaping survives round trips
  records[1].tgt_tokens[0] = "back\\slash";

  std::ostringstream first;
  write_alignment_dump(records, first);
  std::istringstream parse1(first.str());
  std::vector<AttentionRecord> parsed = parse_alignment_dump(parse1);
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[1].src_tokens[0] == "with space");
  CHECK(parsed[1].tgt_tokens[0] == "back\\slash");

  // Dumping the parsed records again reproduces the bytes exactly.
  std::ostringstream second;
  write_alignment_dump(parsed, second);
  CHECK(first.str() == second.str());

  // Matrix values survive within the 6-decimal format resolution.
  for (int64_t r = 0; r < 2; ++r)
    for (int64_t c = 0; c < 3; ++c)
      CHECK(std::abs(parsed[0].flows[0]->at(r, c) - records[0].flows[0]->at(r, c)) < 5e-7);

  // Entropies carried at full precision: re-aggregating matches in-memory.
  for (int f = 0; f < 4; ++f)
    for (int64_t t = 0; t < 2; ++t)
      CHECK(std::abs(parsed[0].entropies[static_cast<size_t>(f)][static_cast<size_t>(t)] -
                     records[0].entropies[static_cast<size_t>(f)][static_cast<size_t>(t)]) <
            1e-9);

  std::istringstream garbage("not a dump\n");
  CHECK_THROWS_AS(parse_alignment_dump(garbage), DataError);
}

TEST_CASE("entropy report: uniform rows give ln m in all four cells") {
  std::vector<AttentionRecord> records;
  for (int64_t i = 0; i < 5; ++i) records.push_back(record_with(i, 4, 7, uniform_matrix(4, 7)));
  EntropyReport report = entropy_report(records);
  for (int e = 0; e < 2; ++e)
    for (int d = 0; d < 2; ++d) {
      REQUIRE(report.cells[e][d].has_value());
      CHECK(std::abs(*report.cells[e][d] - std::log(7.0)) < 1e-9);
    }
  CHECK(report.sentences == 5);
  std::string text = report.to_string();
  CHECK(text.find("enc-cnn") != std::string::npos);
  CHECK(text.find("dec-san") != std::string::npos);

  // One-hot rows give zero cells.
  std::vector<AttentionRecord> sharp{record_with(0, 4, 7, one_hot_matrix(4, 7))};
  EntropyReport zero = entropy_report(sharp);
  for (int e = 0; e < 2; ++e)
    for (int d = 0; d < 2; ++d) CHECK(*zero.cells[e][d] == doctest::Approx(0.0));

  CHECK_THROWS_AS(entropy_report({}), DataError);
}

TEST_CASE("entropy report maps flows onto the encoder/decoder grid") {
  // Distinct entropies per flow: cc uniform over 4 (ln 4), ca one-hot (0),
  // ac uniform over 2 of 4 (ln 2), aa uniform over 4 (ln 4).
  AttentionRecord rec;
  rec.id = 0;
  rec.m = 4;
  rec.n = 1;
  rec.src_tokens = {"a", "b", "c", "d"};
  rec.tgt_tokens = {"x"};
  AlignmentMatrix cc = uniform_matrix(1, 4);
  AlignmentMatrix ca = one_hot_matrix(1, 4);
  AlignmentMatrix ac;
  ac.rows = 1;
  ac.cols = 4;
  ac.values = {0.5, 0.5, 0.0, 0.0};
  AlignmentMatrix aa = uniform_matrix(1, 4);
  rec.flows[static_cast<int>(Flow::kCC)] = cc;
  rec.flows[static_cast<int>(Flow::kCA)] = ca;
  rec.flows[static_cast<int>(Flow::kAC)] = ac;
  rec.flows[static_cast<int>(Flow::kAA)] = aa;
  fill_entropies(rec);
  EntropyReport report = entropy_report({rec});
  // cc -> (enc cnn, dec cnn); ca -> (enc san, dec cnn);
  // ac -> (enc cnn, dec san); aa -> (enc san, dec san).
  CHECK(*report.cells[0][0] == doctest::Approx(std::log(4.0)));
  CHECK(*report.cells[1][0] == doctest::Approx(0.0));
  CHECK(*report.cells[0][1] == doctest::Approx(std::log(2.0)));
  CHECK(*report.cells[1][1] == doctest::Approx(std::log(4.0)));
}

TEST_CASE("model-backed records: stochastic rows, single-source column") {
  ModelConfig cfg = build_ablation("M9", mini_config());
  DoublePathModel<double> model(cfg, 55);
  Vocabulary vocab = Vocabulary::from_tokens({"u", "v", "w", "x", "y"});

  // Single source token: every alignment matrix is an all-ones column.
  SentencePair single = make_pair({4}, {5, 6});
  AttentionRecord rec = attention_record_for_pair(model, single, vocab, vocab, 0);
  for (int f = 0; f < 4; ++f) {
    REQUIRE(rec.flows[static_cast<size_t>(f)].has_value());
    const AlignmentMatrix& mat = *rec.flows[static_cast<size_t>(f)];
    CHECK(mat.cols == 1);
    for (int64_t r = 0; r < mat.rows; ++r) CHECK(mat.at(r, 0) == doctest::Approx(1.0));
    for (double h : rec.entropies[static_cast<size_t>(f)])
      CHECK(h == doctest::Approx(0.0));
  }

  // General pair: rows are stochastic and entropies within [0, ln m].
  SentencePair pair = make_pair({4, 5, 6, 7}, {8, 4, 5});
  AttentionRecord rec2 = attention_record_for_pair(model, pair, vocab, vocab, 1);
  for (int f = 0; f < 4; ++f) {
    const AlignmentMatrix& mat = *rec2.flows[static_cast<size_t>(f)];
    for (int64_t r = 0; r < mat.rows; ++r) {
      double sum = 0;
      for (int64_t c = 0; c < mat.cols; ++c) {
        CHECK(mat.at(r, c) >= 0.0);
        sum += mat.at(r, c);
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
    for (double h : rec2.entropies[static_cast<size_t>(f)]) {
      CHECK(h >= 0.0);
      CHECK(h <= std::log(4.0) + 1e-9);
    }
  }

  // Single-path model dumps only its available flows.
  ModelConfig m1 = build_ablation("M1", mini_config());
  DoublePathModel<double> model1(m1, 56);
  AttentionRecord rec3 = attention_record_for_pair(model1, pair, vocab, vocab, 2);
  CHECK(rec3.flows[static_cast<int>(Flow::kCC)].has_value());
  CHECK(!rec3.flows[static_cast<int>(Flow::kCA)].has_value());
  CHECK(!rec3.flows[static_cast<int>(Flow::kAA)].has_value());
}
