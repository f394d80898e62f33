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

#include "dps/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "dps/error.hpp"

namespace dps {

namespace {

// n-grams as joined strings; '\x1f' cannot occur inside tokens read from
// whitespace-tokenized text.
std::unordered_map<std::string, int64_t> ngram_counts(const std::vector<std::string>& tokens,
                                                      int n) {
  std::unordered_map<std::string, int64_t> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (int j = 1; j < n; ++j) {
      key += '\x1f';
      key += tokens[i + j];
    }
    ++counts[key];
  }
  return counts;
}

int64_t clipped_overlap(const std::unordered_map<std::string, int64_t>& hyp,
                        const std::unordered_map<std::string, int64_t>& ref) {
  int64_t match = 0;
  for (const auto& [gram, count] : hyp) {
    auto it = ref.find(gram);
    if (it != ref.end()) match += std::min(count, it->second);
  }
  return match;
}

void check_aligned(const TokenLines& hyps, const TokenLines& refs) {
  if (hyps.empty()) throw DataError("metric: empty hypothesis set");
  if (hyps.size() != refs.size())
    throw DataError("metric: hypothesis/reference counts differ: " +
                    std::to_string(hyps.size()) + " vs " + std::to_string(refs.size()));
}

}  // namespace

double bleu(const TokenLines& hyps, const TokenLines& refs, int max_ngram) {
  check_aligned(hyps, refs);
  std::vector<int64_t> match(static_cast<size_t>(max_ngram), 0);
  std::vector<int64_t> total(static_cast<size_t>(max_ngram), 0);
  int64_t hyp_len = 0, ref_len = 0;
  for (size_t i = 0; i < hyps.size(); ++i) {
    hyp_len += static_cast<int64_t>(hyps[i].size());
    ref_len += static_cast<int64_t>(refs[i].size());
    for (int n = 1; n <= max_ngram; ++n) {
      auto h = ngram_counts(hyps[i], n);
      auto r = ngram_counts(refs[i], n);
      match[static_cast<size_t>(n - 1)] += clipped_overlap(h, r);
      total[static_cast<size_t>(n - 1)] +=
          std::max<int64_t>(0, static_cast<int64_t>(hyps[i].size()) - n + 1);
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_precision = 0.0;
  for (int n = 0; n < max_ngram; ++n) {
    if (match[static_cast<size_t>(n)] == 0 || total[static_cast<size_t>(n)] == 0) return 0.0;
    log_precision += std::log(static_cast<double>(match[static_cast<size_t>(n)]) /
                              static_cast<double>(total[static_cast<size_t>(n)]));
  }
  double bp = hyp_len >= ref_len
                  ? 1.0
                  : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return 100.0 * bp * std::exp(log_precision / max_ngram);
}

int64_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<int64_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t j = 1; j <= b.size(); ++j) {
      if (a[i - 1] == b[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge(const TokenLines& hyps, const TokenLines& refs, RougeVariant variant) {
  check_aligned(hyps, refs);
  double f1_sum = 0.0;
  for (size_t i = 0; i < hyps.size(); ++i) {
    const auto& hyp = hyps[i];
    const auto& ref = refs[i];
    double p = 0.0, r = 0.0;
    if (variant == RougeVariant::kL) {
      int64_t lcs = lcs_length(hyp, ref);
      p = hyp.empty() ? 0.0 : static_cast<double>(lcs) / static_cast<double>(hyp.size());
      r = ref.empty() ? 0.0 : static_cast<double>(lcs) / static_cast<double>(ref.size());
    } else {
      int n = variant == RougeVariant::k1 ? 1 : 2;
      auto h = ngram_counts(hyp, n);
      auto g = ngram_counts(ref, n);
      int64_t h_total = std::max<int64_t>(0, static_cast<int64_t>(hyp.size()) - n + 1);
      int64_t g_total = std::max<int64_t>(0, static_cast<int64_t>(ref.size()) - n + 1);
      int64_t overlap = clipped_overlap(h, g);
      p = h_total == 0 ? 0.0 : static_cast<double>(overlap) / static_cast<double>(h_total);
      r = g_total == 0 ? 0.0 : static_cast<double>(overlap) / static_cast<double>(g_total);
    }
    if (p + r > 0.0) f1_sum += 2.0 * p * r / (p + r);
  }
  return f1_sum / static_cast<double>(hyps.size());
}

}  // namespace dps
