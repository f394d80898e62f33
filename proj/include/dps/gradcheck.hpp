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
// Central finite-difference verification of reverse-mode gradients. Intended
// to run at double precision; f32 step sizes cannot resolve the differences.

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dps/tensor.hpp"

namespace dps {

template <typename T>
struct GradCheckReport {
  struct PerInput {
    T max_rel_err = T(0);
    int64_t worst_index = -1;
    T ad_at_worst = T(0);
    T fd_at_worst = T(0);
  };
  std::vector<PerInput> inputs;
  T max_rel_err = T(0);

  bool passed(T tol) const { return max_rel_err <= tol; }
};

// f must be a deterministic scalar-valued function of *inputs (dropout off).
// The tensors behind the pointers are replaced during perturbation and
// restored afterwards. Relative error per element is
//   |g_ad - g_fd| / (|g_ad| + |g_fd| + denom_eps).
template <typename T>
GradCheckReport<T> grad_check(const std::function<Tensor<T>()>& f,
                              std::vector<Tensor<T>*> inputs, T h,
                              T denom_eps = T(1e-8)) {
  // Reference gradients from one taped evaluation.
  std::vector<std::vector<T>> ad_grads;
  {
    Tape<T> tape;
    typename Tape<T>::Scope scope(tape);
    Tensor<T> loss = f();
    tape.backward(loss);
    for (Tensor<T>* in : inputs) {
      auto g = tape.grad(*in);
      ad_grads.emplace_back(g.begin(), g.end());
      if (ad_grads.back().empty())
        ad_grads.back().assign(static_cast<size_t>(in->size()), T(0));
    }
  }

  GradCheckReport<T> report;
  report.inputs.resize(inputs.size());
  for (size_t i = 0; i < inputs.size(); ++i) {
    Tensor<T>* in = inputs[i];
    const Shape shape = in->shape();
    std::vector<T> base(in->vec());
    auto& per = report.inputs[i];
    for (size_t e = 0; e < base.size(); ++e) {
      std::vector<T> bumped = base;
      bumped[e] = base[e] + h;
      *in = Tensor<T>(shape, bumped, /*requires_grad=*/true);
      T lp = f().item();
      bumped[e] = base[e] - h;
      *in = Tensor<T>(shape, bumped, /*requires_grad=*/true);
      T lm = f().item();
      T fd = (lp - lm) / (T(2) * h);
      T ad = ad_grads[i][e];
      T rel = std::abs(ad - fd) / (std::abs(ad) + std::abs(fd) + denom_eps);
      if (rel > per.max_rel_err) {
        per.max_rel_err = rel;
        per.worst_index = static_cast<int64_t>(e);
        per.ad_at_worst = ad;
        per.fd_at_worst = fd;
      }
    }
    *in = Tensor<T>(shape, base, /*requires_grad=*/true);
    report.max_rel_err = std::max(report.max_rel_err, per.max_rel_err);
  }
  return report;
}

}  // namespace dps
