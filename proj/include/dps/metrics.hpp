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

#include <string>
#include <vector>

namespace dps {

using TokenLines = std::vector<std::vector<std::string>>;

// Corpus-level BLEU in [0, 100]: geometric mean of clipped n-gram precisions
// (n = 1..max_ngram) times the brevity penalty, case-sensitive on
// already-tokenized text, one reference per hypothesis. Any n with zero
// matches zeroes the score.
double bleu(const TokenLines& hypotheses, const TokenLines& references, int max_ngram = 4);

enum class RougeVariant { k1, k2, kL };

// Mean per-sentence F1 in [0, 1]. Variants 1/2 use clipped n-gram overlap;
// L uses the longest common subsequence. Empty hypotheses contribute 0.
double rouge(const TokenLines& hypotheses, const TokenLines& references, RougeVariant variant);

int64_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b);

}  // namespace dps
