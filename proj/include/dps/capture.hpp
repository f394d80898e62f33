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

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dps/error.hpp"

namespace dps {

// The four decoder-to-encoder attention flows. First letter: decoder path
// issuing the query; second: encoder path providing keys/values.
enum class Flow : int { kCC = 0, kCA = 1, kAC = 2, kAA = 3 };

inline const char* flow_name(Flow f) {
  static const char* names[] = {"cc", "ca", "ac", "aa"};
  return names[static_cast<int>(f)];
}

inline Flow flow_from_name(const std::string& s) {
  for (int i = 0; i < 4; ++i)
    if (s == flow_name(static_cast<Flow>(i))) return static_cast<Flow>(i);
  throw DataError("unknown attention flow '" + s + "'");
}

// Accumulates cross-attention matrices during a forward pass. Each decoder
// layer contributes one [batch, n, m] matrix per flow it computes; matrices
// are summed here and divided by the layer count when read out, so the
// exported alignment is the mean over that path's layers.
struct AttentionCapture {
  int64_t batch = 0, n = 0, m = 0;
  std::array<std::vector<double>, 4> sum;
  std::array<int64_t, 4> layer_count{0, 0, 0, 0};

  template <typename TensorT>
  void add(Flow flow, const TensorT& att) {
    if (batch == 0) {
      batch = att.dim(0);
      n = att.dim(1);
      m = att.dim(2);
    }
    auto& dst = sum[static_cast<size_t>(flow)];
    if (dst.empty()) dst.assign(static_cast<size_t>(batch * n * m), 0.0);
    auto src = att.data();
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += static_cast<double>(src[i]);
    ++layer_count[static_cast<size_t>(flow)];
  }

  bool has(Flow flow) const { return layer_count[static_cast<size_t>(flow)] > 0; }

  // Mean over layers, still [batch, n, m] flat.
  std::vector<double> mean(Flow flow) const {
    const auto& s = sum[static_cast<size_t>(flow)];
    std::vector<double> out(s);
    double c = static_cast<double>(layer_count[static_cast<size_t>(flow)]);
    for (double& v : out) v /= c;
    return out;
  }
};

// Min/max/count over every gate activation seen during a forward pass.
struct GateStats {
  double min = std::numeric_limits<double>::infinity();
  double max = -std::numeric_limits<double>::infinity();
  int64_t count = 0;

  void observe_value(double v) {
    if (v < min) min = v;
    if (v > max) max = v;
    ++count;
  }
  template <typename TensorT>
  void observe(const TensorT& g) {
    for (auto v : g.data()) observe_value(static_cast<double>(v));
  }
};

}  // namespace dps
