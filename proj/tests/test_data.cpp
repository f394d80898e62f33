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

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dps/data.hpp"

using namespace dps;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("dps_data_test_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name, const std::string& content) const {
    std::string p = (path / name).string();
    std::ofstream os(p, std::ios::binary);
    os << content;
    return p;
  }
};

}  // namespace

TEST_CASE("tokenize and detokenize") {
  auto words = tokenize("the  quick \t fox", TokenMode::kWord);
  CHECK(words == std::vector<std::string>{"the", "quick", "fox"});
  CHECK(detokenize(words, TokenMode::kWord) == "the quick fox");

  std::string s = "ab c";
  auto chars = tokenize(s, TokenMode::kChar);
  CHECK(chars == std::vector<std::string>{"a", "b", " ", "c"});
  CHECK(detokenize(chars, TokenMode::kChar) == s);

  // Multibyte characters stay intact in char mode.
  std::string umlaut = "h\xc3\xa4t";  // UTF-8 a-umlaut
  CHECK(detokenize(tokenize(umlaut, TokenMode::kChar), TokenMode::kChar) == umlaut);
  CHECK(tokenize(umlaut, TokenMode::kChar).size() == 3);
}

TEST_CASE("build_vocab ordering and truncation") {
  std::vector<std::string> corpus{"a a b"};
  Vocabulary v = build_vocab(corpus, TokenMode::kWord, 100);
  CHECK(v.size() == Vocabulary::kNumSpecials + 2);
  CHECK(v.id_of("a") == Vocabulary::kNumSpecials);
  CHECK(v.id_of("b") == Vocabulary::kNumSpecials + 1);
  CHECK(v.token_of(Vocabulary::kPad) == "<pad>");

  // max_size keeps only the most frequent token beyond the specials.
  Vocabulary small = build_vocab({"x y y"}, TokenMode::kWord, Vocabulary::kNumSpecials + 1);
  CHECK(small.size() == Vocabulary::kNumSpecials + 1);
  CHECK(small.contains("y"));
  CHECK(!small.contains("x"));
  CHECK(small.id_of("x") == Vocabulary::kUnk);

  // Frequency ties break lexicographically.
  Vocabulary ties = build_vocab({"b a"}, TokenMode::kWord, 100);
  CHECK(ties.id_of("a") < ties.id_of("b"));

  CHECK_THROWS_AS(build_vocab({}, TokenMode::kWord, 100), CorpusError);
  CHECK_THROWS_AS(build_vocab({"a"}, TokenMode::kWord, 2), ConfigError);
}

TEST_CASE("vocabulary round trips") {
  Vocabulary v = Vocabulary::from_tokens({"alpha", "beta", "gamma"});
  for (int32_t id = 0; id < v.size(); ++id) CHECK(v.id_of(v.token_of(id)) == id);
  CHECK(v.id_of("missing") == Vocabulary::kUnk);

  TempDir tmp;
  std::string path = (tmp.path / "vocab.txt").string();
  v.save(path);
  Vocabulary loaded = Vocabulary::load(path);
  CHECK(loaded.size() == v.size());
  for (int32_t id = 0; id < v.size(); ++id) CHECK(loaded.token_of(id) == v.token_of(id));
}

TEST_CASE("load_parallel basics, unk mapping, drops, errors") {
  TempDir tmp;
  std::string src = tmp.file("s.txt", "a b\nc d e\n");
  std::string tgt = tmp.file("t.txt", "x y\nz z z\n");
  Vocabulary vs = build_vocab({"a b", "c d e"}, TokenMode::kWord, 100);
  Vocabulary vt = build_vocab({"x y", "z z z"}, TokenMode::kWord, 100);

  LoadReport rep = load_parallel(src, tgt, vs, vt, 16, TokenMode::kWord);
  CHECK(rep.pairs.size() == 2);
  CHECK(rep.dropped_too_long == 0);
  CHECK(rep.pairs[0].src.size() == 2);
  CHECK(rep.pairs[0].tgt.back() == Vocabulary::kEos);  // eos appended
  CHECK(rep.pairs[0].tgt.size() == 3);

  // Out-of-vocabulary tokens map to unk.
  std::string oov = tmp.file("oov.txt", "a zzz\n");
  std::string oov_t = tmp.file("oov_t.txt", "x y\n");
  LoadReport rep2 = load_parallel(oov, oov_t, vs, vt, 16, TokenMode::kWord);
  CHECK(rep2.pairs[0].src[1] == Vocabulary::kUnk);

  // max_len drops and reports.
  std::string long_src = tmp.file("l.txt", "a a a a a a\nc d\n");
  std::string long_tgt = tmp.file("lt.txt", "x\ny\n");
  LoadReport rep3 = load_parallel(long_src, long_tgt, vs, vt, 5, TokenMode::kWord);
  CHECK(rep3.pairs.size() == 1);
  CHECK(rep3.dropped_too_long == 1);

  std::string shorter = tmp.file("mismatch.txt", "only one line\n");
  CHECK_THROWS_AS(load_parallel(src, shorter, vs, vt, 16, TokenMode::kWord), CorpusError);
  CHECK_THROWS_AS(load_parallel("/nonexistent/file", tgt, vs, vt, 16, TokenMode::kWord),
                  IoError);
}

TEST_CASE("gen_synthetic tasks and determinism") {
  SyntheticData copy = gen_synthetic(SynthTask::kCopy, 50, 10, 1, 8, 42);
  CHECK(copy.pairs.size() == 50);
  for (const SentencePair& p : copy.pairs) {
    REQUIRE(p.tgt.size() == p.src.size() + 1);
    CHECK(p.tgt.back() == Vocabulary::kEos);
    for (size_t i = 0; i < p.src.size(); ++i) {
      CHECK(p.tgt[i] == p.src[i]);
      CHECK(p.src[i] >= Vocabulary::kNumSpecials);
      CHECK(p.src[i] < Vocabulary::kNumSpecials + 10);
    }
  }
  SyntheticData rev = gen_synthetic(SynthTask::kReverse, 20, 10, 2, 6, 43);
  for (const SentencePair& p : rev.pairs)
    for (size_t i = 0; i < p.src.size(); ++i)
      CHECK(p.tgt[i] == p.src[p.src.size() - 1 - i]);
  SyntheticData sorted = gen_synthetic(SynthTask::kSort, 20, 10, 2, 6, 44);
  for (const SentencePair& p : sorted.pairs) {
    for (size_t i = 0; i + 2 < p.tgt.size(); ++i) CHECK(p.tgt[i] <= p.tgt[i + 1]);
  }

  SyntheticData again = gen_synthetic(SynthTask::kCopy, 50, 10, 1, 8, 42);
  REQUIRE(again.pairs.size() == copy.pairs.size());
  for (size_t i = 0; i < again.pairs.size(); ++i) {
    CHECK(again.pairs[i].src == copy.pairs[i].src);
    CHECK(again.pairs[i].tgt == copy.pairs[i].tgt);
  }
  CHECK_THROWS_AS(gen_synthetic(SynthTask::kCopy, 5, 1, 1, 4, 1), ConfigError);
}

TEST_CASE("make_batch framing and masks") {
  SentencePair a{{5, 6, 7}, {8, 9, Vocabulary::kEos}};
  SentencePair b{{4}, {5, Vocabulary::kEos}};
  std::vector<SentencePair> pairs{a, b};
  Batch batch = make_batch(pairs);
  CHECK(batch.size == 2);
  CHECK(batch.src_len == 3);
  CHECK(batch.tgt_len == 3);
  // Row 0: teacher forcing input is bos + y.
  CHECK(batch.tgt_in[0] == Vocabulary::kBos);
  CHECK(batch.tgt_in[1] == 8);
  CHECK(batch.tgt_in[2] == 9);
  CHECK(batch.tgt_out[0] == 8);
  CHECK(batch.tgt_out[2] == Vocabulary::kEos);
  // Row 1 padding and masks.
  CHECK(batch.src[3] == 4);
  CHECK(batch.src[4] == Vocabulary::kPad);
  CHECK(batch.src_mask[3] == 1);
  CHECK(batch.src_mask[4] == 0);
  CHECK(batch.tgt_out[4] == Vocabulary::kEos);
  CHECK(batch.tgt_out[5] == Vocabulary::kPad);
  CHECK(batch.tgt_mask[5] == 0);  // row 1 position 2 is padding
  CHECK(batch.real_target_tokens == 5);
  // Mask consistency with lengths.
  for (int64_t i = 0; i < batch.size; ++i)
    for (int64_t t = 0; t < batch.src_len; ++t)
      CHECK(batch.src_mask[static_cast<size_t>(i * batch.src_len + t)] ==
            (t < batch.src_lens[static_cast<size_t>(i)] ? 1 : 0));
}

#include "dps/runconfig.hpp"

TEST_CASE("run config: sections, comments, overrides, unknown keys") {
  RunConfig base = preset_config("tiny");
  RunConfig cfg = parse_run_config_text(
      "# comment line\n"
      "[model]\n"
      "d = 32\n"
      "heads = 2   # trailing comment\n"
      "[train]\n"
      "lr = 0.5\n"
      "lr_patience = 3\n"
      "[decode]\n"
      "beam = 7\n",
      base);
  CHECK(cfg.model.d == 32);
  CHECK(cfg.model.heads == 2);
  CHECK(cfg.train.lr == doctest::Approx(0.5));
  CHECK(cfg.train.lr_patience == 3);
  CHECK(cfg.decode.beam == 7);
  CHECK(cfg.model.kernel == base.model.kernel);  // untouched keys keep preset values

  CHECK_THROWS_AS(parse_run_config_text("[train]\nnot_a_key = 1\n", base), ConfigError);
  CHECK_THROWS_AS(parse_run_config_text("[nowhere]\nlr = 1\n", base), ConfigError);
  CHECK_THROWS_AS(parse_run_config_text("lr = 1\n", base), ConfigError);  // outside sections
  CHECK_THROWS_AS(parse_run_config_text("[train]\nlr = abc\n", base), ConfigError);

  apply_override(cfg, "model.dropout=0.2");
  CHECK(cfg.model.dropout == doctest::Approx(0.2));
  CHECK_THROWS_AS(apply_override(cfg, "model.bogus=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "nodot"), ConfigError);

  // Snapshot text parses back to the same snapshot.
  RunConfig back = parse_run_config_text(cfg.to_text(), preset_config("tiny"));
  CHECK(back.to_text() == cfg.to_text());

  CHECK_THROWS_AS(preset_config("nosuch"), ConfigError);
  CHECK(preset_config("iwslt").model.share_embeddings);
  CHECK(preset_config("nist").model.cnn_enc_layers == 12);
}
