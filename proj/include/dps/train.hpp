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
// Training: per-token negative log likelihood, Nesterov accelerated gradient,
// validation-driven learning-rate decay, token-count batching, and the
// training loop with checkpoint/resume.
//
// All randomness is a pure function of (seed, epoch, global_step): the epoch
// shuffle uses mix_seed(seed, kShuffleTag, epoch) and each step's dropout
// stream uses mix_seed(seed, kDropoutTag, global_step). Resuming from a
// checkpoint therefore reproduces the uninterrupted run exactly.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "dps/checkpoint.hpp"
#include "dps/data.hpp"
#include "dps/model.hpp"

namespace dps {

constexpr uint64_t kShuffleTag = 0x5u;
constexpr uint64_t kDropoutTag = 0xDu;

// Mean over non-pad target tokens of -log P(y_t | y_<t, x). Padding is
// excluded from both the sum and the normalizer.
template <typename T>
Tensor<T> nll_loss(const Tensor<T>& log_probs, std::span<const int32_t> targets,
                   int32_t pad_id) {
  const int64_t vocab = log_probs.dim(-1);
  const int64_t rows = log_probs.size() / vocab;
  if (static_cast<int64_t>(targets.size()) != rows)
    throw DimensionError("nll_loss: targets size " + std::to_string(targets.size()) +
                         " does not match log_probs rows " + std::to_string(rows));
  int64_t n_real = 0;
  std::vector<T> weights(static_cast<size_t>(rows));
  std::vector<int32_t> safe_targets(targets.begin(), targets.end());
  for (int64_t i = 0; i < rows; ++i) {
    bool real = targets[static_cast<size_t>(i)] != pad_id;
    weights[static_cast<size_t>(i)] = real ? T(1) : T(0);
    if (!real) safe_targets[static_cast<size_t>(i)] = 0;  // any valid column
    n_real += real;
  }
  if (n_real == 0) throw EmptyBatchError("nll_loss: batch has no real target tokens");
  Tensor<T> picked = pick_last_dim(log_probs, std::span<const int32_t>(safe_targets));
  Tensor<T> w(picked.shape(), std::move(weights));
  return scale(sum_all(mul(picked, w)), T(-1) / static_cast<T>(n_real));
}

// ---------------------------------------------------------------------------
// Nesterov accelerated gradient.

template <typename T>
struct OptimizerState {
  double lr = 0.25;
  double momentum = 0.99;
  double decay_factor = 10.0;
  int64_t patience = 1;  // validation rounds without improvement before decay
  double best_valid = std::numeric_limits<double>::infinity();
  int64_t stall_rounds = 0;
  std::unordered_map<std::string, std::vector<T>> velocity;
};

// One NAG update for a single parameter. Formulation:
//   v <- momentum * v - lr * g
//   p <- p + momentum * v - lr * g          (v already updated)
// which is the lookahead form p <- p + momentum^2 * v_old - (1+momentum)*lr*g.
// momentum = 0 reduces to plain SGD: p <- p - lr * g.
template <typename T>
void nag_apply(OptimizerState<T>& state, const std::string& name, Tensor<T>& param,
               std::span<const T> grad, T grad_scale = T(1)) {
  auto [it, inserted] = state.velocity.try_emplace(name);
  std::vector<T>& v = it->second;
  if (inserted) v.assign(static_cast<size_t>(param.size()), T(0));
  if (grad.size() != v.size() || grad.size() != static_cast<size_t>(param.size()))
    throw DimensionError("nag_apply: gradient/velocity size mismatch for '" + name + "'");
  const T mu = static_cast<T>(state.momentum);
  const T lr = static_cast<T>(state.lr);
  std::vector<T> data(param.vec());
  for (size_t i = 0; i < data.size(); ++i) {
    T g = grad[i] * grad_scale;
    v[i] = mu * v[i] - lr * g;
    data[i] += mu * v[i] - lr * g;
  }
  param = Tensor<T>(param.shape(), std::move(data), /*requires_grad=*/true);
}

// NAG over every model parameter, with optional global-norm gradient
// clipping (clip_norm > 0 rescales the joint gradient down to clip_norm).
// Non-finite gradients abort with the offending parameter named.
template <typename T>
void nag_step(OptimizerState<T>& state, DoublePathModel<T>& model, Tape<T>& tape,
              double clip_norm = 0.0) {
  struct Entry {
    std::string name;
    Tensor<T>* param;
    std::vector<T> grad;
  };
  std::vector<Entry> entries;
  model.visit_params([&](const std::string& name, Tensor<T>& p) {
    auto g = tape.grad(p);
    std::vector<T> grad(g.begin(), g.end());
    if (grad.empty()) grad.assign(static_cast<size_t>(p.size()), T(0));
    entries.push_back({name, &p, std::move(grad)});
  });
  double sq_norm = 0.0;
  for (const Entry& e : entries)
    for (T g : e.grad) {
      if (!std::isfinite(static_cast<double>(g)))
        throw NumericError("nag_step: non-finite gradient in parameter '" + e.name + "'");
      sq_norm += static_cast<double>(g) * static_cast<double>(g);
    }
  T factor = T(1);
  if (clip_norm > 0.0) {
    double norm = std::sqrt(sq_norm);
    if (norm > clip_norm) factor = static_cast<T>(clip_norm / norm);
  }
  for (Entry& e : entries)
    nag_apply(state, e.name, *e.param, std::span<const T>(e.grad), factor);
}

// Shrinks the learning rate by decay_factor whenever the validation loss has
// not improved for `patience` consecutive validation rounds.
template <typename T>
void lr_schedule(OptimizerState<T>& state, double validation_loss) {
  if (validation_loss < state.best_valid) {
    state.best_valid = validation_loss;
    state.stall_rounds = 0;
    return;
  }
  if (++state.stall_rounds >= state.patience) {
    state.lr /= state.decay_factor;
    state.stall_rounds = 0;
  }
}

// ---------------------------------------------------------------------------
// Batching: sort by length, then fill batches up to a padded-token budget.

struct BatchPlan {
  std::vector<Batch> batches;
  int64_t oversize_pairs = 0;  // single pairs beyond max_tokens, emitted alone
};

inline BatchPlan make_batches(std::span<const SentencePair> pairs, int64_t max_tokens) {
  if (max_tokens < 1) throw ConfigError("make_batches: max_tokens must be >= 1");
  std::vector<size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    auto key = [&](size_t i) {
      return std::make_tuple(pairs[i].src.size() + pairs[i].tgt.size(), pairs[i].src.size(), i);
    };
    return key(a) < key(b);
  });
  BatchPlan plan;
  std::vector<SentencePair> group;
  int64_t max_src = 0, max_tgt = 0;
  auto flush = [&] {
    if (!group.empty()) {
      plan.batches.push_back(make_batch(group));
      group.clear();
      max_src = max_tgt = 0;
    }
  };
  for (size_t idx : order) {
    const SentencePair& p = pairs[idx];
    int64_t ns = std::max<int64_t>(max_src, static_cast<int64_t>(p.src.size()));
    int64_t nt = std::max<int64_t>(max_tgt, static_cast<int64_t>(p.tgt.size()));
    int64_t cost = static_cast<int64_t>(group.size() + 1) * (ns + nt);
    if (!group.empty() && cost > max_tokens) {
      flush();
      ns = static_cast<int64_t>(p.src.size());
      nt = static_cast<int64_t>(p.tgt.size());
    }
    if (group.empty() && ns + nt > max_tokens) ++plan.oversize_pairs;
    group.push_back(p);
    max_src = std::max(max_src, ns);
    max_tgt = std::max(max_tgt, nt);
    if (static_cast<int64_t>(group.size()) * (max_src + max_tgt) >= max_tokens) flush();
  }
  flush();
  return plan;
}

// ---------------------------------------------------------------------------
// Evaluation helpers (no dropout, no tape).

template <typename T>
double validation_loss(const DoublePathModel<T>& model, const std::vector<Batch>& batches) {
  double total = 0.0;
  int64_t tokens = 0;
  for (const Batch& b : batches) {
    Tensor<T> logp = forward_log_probs(model, b, /*training=*/false, nullptr);
    Tensor<T> loss = nll_loss(logp, std::span<const int32_t>(b.tgt_out), Vocabulary::kPad);
    total += static_cast<double>(loss.item()) * static_cast<double>(b.real_target_tokens);
    tokens += b.real_target_tokens;
  }
  return tokens == 0 ? 0.0 : total / static_cast<double>(tokens);
}

// Teacher-forced next-token argmax accuracy over non-pad targets.
template <typename T>
double token_accuracy(const DoublePathModel<T>& model, const std::vector<Batch>& batches) {
  int64_t hit = 0, total = 0;
  for (const Batch& b : batches) {
    Tensor<T> logp = forward_log_probs(model, b, /*training=*/false, nullptr);
    const int64_t vocab = logp.dim(-1);
    auto data = logp.data();
    for (int64_t row = 0; row < b.size * b.tgt_len; ++row) {
      if (b.tgt_out[static_cast<size_t>(row)] == Vocabulary::kPad) continue;
      const T* p = data.data() + row * vocab;
      int64_t best = 0;
      for (int64_t vI = 1; vI < vocab; ++vI)
        if (p[vI] > p[best]) best = vI;
      hit += best == b.tgt_out[static_cast<size_t>(row)];
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Training loop.

struct TrainOptions {
  int64_t max_epochs = 10;
  int64_t max_steps = -1;  // > 0: stop after this many optimizer steps
  int64_t max_tokens_per_batch = 2000;
  int64_t valid_every_steps = -1;  // <= 0: validate at epoch ends
  double init_lr = 0.25;
  double momentum = 0.99;
  double clip_norm = 0.0;  // <= 0: no clipping
  int64_t lr_patience = 1;  // stalled validation rounds before lr decays
  uint64_t seed = 1;
  std::string checkpoint_dir;  // empty: no checkpoints written
};

struct StepRecord {
  int64_t step = 0;
  int64_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double tokens_per_sec = 0.0;
  double wall_sec = 0.0;
};

struct EvalRecord {
  int64_t step = 0;
  int64_t epoch = 0;
  double valid_loss = 0.0;
  double accuracy = 0.0;
  double lr_after = 0.0;
};

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<bool(const EvalRecord&)> on_eval;  // return true to stop
};

template <typename T>
struct TrainState {
  int64_t epoch = 0;
  int64_t step_in_epoch = 0;
  int64_t global_step = 0;
  OptimizerState<T> opt;
  uint64_t seed = 1;
};

template <typename T>
TrainPersist<T> to_persist(const TrainState<T>& st) {
  TrainPersist<T> p;
  p.lr = st.opt.lr;
  p.momentum = st.opt.momentum;
  p.best_valid = st.opt.best_valid;
  p.stall_rounds = st.opt.stall_rounds;
  p.epoch = st.epoch;
  p.step_in_epoch = st.step_in_epoch;
  p.global_step = st.global_step;
  p.seed = st.seed;
  for (const auto& [name, v] : st.opt.velocity) p.velocities.emplace_back(name, v);
  std::sort(p.velocities.begin(), p.velocities.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return p;
}

template <typename T>
TrainState<T> from_persist(const TrainPersist<T>& p) {
  TrainState<T> st;
  st.opt.lr = p.lr;
  st.opt.momentum = p.momentum;
  st.opt.best_valid = p.best_valid;
  st.opt.stall_rounds = p.stall_rounds;
  st.epoch = p.epoch;
  st.step_in_epoch = p.step_in_epoch;
  st.global_step = p.global_step;
  st.seed = p.seed;
  for (const auto& [name, v] : p.velocities) st.opt.velocity[name] = v;
  return st;
}

inline std::vector<size_t> epoch_order(size_t n, uint64_t seed, int64_t epoch) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  RngStream rng(mix_seed(seed, kShuffleTag, static_cast<uint64_t>(epoch)));
  // Fisher-Yates with the deterministic stream.
  for (size_t i = n; i > 1; --i) {
    size_t j = static_cast<size_t>(rng.uniform_int(i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

template <typename T>
void write_step_log(std::ostream* log, const StepRecord& r) {
  if (!log) return;
  (*log) << "step=" << r.step << " epoch=" << r.epoch << " loss=" << r.loss << " lr=" << r.lr
         << " tok_per_s=" << r.tokens_per_sec << " wall=" << r.wall_sec << "\n";
}

// Runs (or resumes) training. Checkpoints land in opts.checkpoint_dir as
// last.ckpt (every validation round) and best.ckpt (best validation loss).
// Throws NumericError on divergence, leaving the checkpoints in place.
template <typename T>
void train_loop(DoublePathModel<T>& model, const std::vector<SentencePair>& train_pairs,
                const std::vector<SentencePair>& valid_pairs, const TrainOptions& opts,
                TrainState<T>& state, std::ostream* log = nullptr,
                const TrainHooks& hooks = {}) {
  if (train_pairs.empty()) throw EmptyBatchError("train_loop: empty training corpus");
  BatchPlan plan = make_batches(train_pairs, opts.max_tokens_per_batch);
  BatchPlan valid_plan =
      valid_pairs.empty() ? BatchPlan{} : make_batches(valid_pairs, opts.max_tokens_per_batch);
  if (state.global_step == 0) {
    state.opt.lr = opts.init_lr;
    state.opt.momentum = opts.momentum;
    state.opt.patience = opts.lr_patience;
    state.seed = opts.seed;
  }
  const auto t0 = std::chrono::steady_clock::now();
  double prev_wall = 0.0;
  bool stop = false;

  auto validate = [&]() {
    if (valid_plan.batches.empty()) return;
    EvalRecord ev;
    ev.step = state.global_step;
    ev.epoch = state.epoch;
    ev.valid_loss = validation_loss(model, valid_plan.batches);
    ev.accuracy = token_accuracy(model, valid_plan.batches);
    double prev_best = state.opt.best_valid;
    lr_schedule(state.opt, ev.valid_loss);
    ev.lr_after = state.opt.lr;
    if (log)
      (*log) << "valid step=" << ev.step << " epoch=" << ev.epoch << " loss=" << ev.valid_loss
             << " acc=" << ev.accuracy << " lr=" << ev.lr_after << "\n";
    if (!opts.checkpoint_dir.empty()) {
      std::filesystem::create_directories(opts.checkpoint_dir);
      TrainPersist<T> persist = to_persist(state);
      save_checkpoint(opts.checkpoint_dir + "/last.ckpt", model, &persist);
      if (ev.valid_loss < prev_best)
        save_checkpoint(opts.checkpoint_dir + "/best.ckpt", model, &persist);
    }
    if (hooks.on_eval && hooks.on_eval(ev)) stop = true;
  };

  while (state.epoch < opts.max_epochs && !stop) {
    std::vector<size_t> order = epoch_order(plan.batches.size(), state.seed, state.epoch);
    while (state.step_in_epoch < static_cast<int64_t>(order.size()) && !stop) {
      const Batch& batch = plan.batches[order[static_cast<size_t>(state.step_in_epoch)]];
      RngStream step_rng(
          mix_seed(state.seed, kDropoutTag, static_cast<uint64_t>(state.global_step)));
      Tape<T> tape;
      double loss_value;
      {
        typename Tape<T>::Scope scope(tape);
        Tensor<T> logp = forward_log_probs(model, batch, /*training=*/true, &step_rng);
        Tensor<T> loss = nll_loss(logp, std::span<const int32_t>(batch.tgt_out),
                                  Vocabulary::kPad);
        loss_value = static_cast<double>(loss.item());
        if (!std::isfinite(loss_value))
          throw NumericError("train_loop: loss diverged at step " +
                             std::to_string(state.global_step));
        tape.backward(loss);
        nag_step(state.opt, model, tape, opts.clip_norm);
      }
      // Counters advance before any validation checkpoint so that a resumed
      // run continues exactly after this step.
      ++state.global_step;
      ++state.step_in_epoch;
      double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      double dt = wall - prev_wall;
      prev_wall = wall;
      StepRecord rec{state.global_step, state.epoch, loss_value, state.opt.lr,
                     dt > 0 ? static_cast<double>(batch.real_target_tokens) / dt : 0.0,
                     wall};
      write_step_log<T>(log, rec);
      if (hooks.on_step) hooks.on_step(rec);
      if (opts.valid_every_steps > 0 && state.global_step % opts.valid_every_steps == 0)
        validate();
      if (opts.max_steps > 0 && state.global_step >= opts.max_steps) stop = true;
    }
    if (!stop) {
      ++state.epoch;
      state.step_in_epoch = 0;
      if (opts.valid_every_steps <= 0) validate();
    }
  }
}

}  // namespace dps
