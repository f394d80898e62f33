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
// Acceptance suite: one pass/fail line per criterion, nonzero exit if any
// criterion fails. Tolerances are pinned in code next to each check.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <vector>

#include "dps/analysis.hpp"
#include "dps/beam.hpp"
#include "dps/checkpoint.hpp"
#include "dps/gradcheck.hpp"
#include "dps/metrics.hpp"
#include "dps/model.hpp"
#include "dps/train.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace dps;
using dps::testing::bleu_fixture;
using dps::testing::bleu_oracle;
using dps::testing::exhaustive_best;
using dps::testing::make_pair;
using dps::testing::random_ids;
using dps::testing::tiny_config;
using dps::testing::ToyDecoder;

namespace {

struct Criterion {
  int id;
  const char* name;
  std::function<bool(std::string&)> run;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// --------------------------------------------------------------------------
// 1. Full-model gradient soundness at f64 on the tiny configuration.

bool criterion_gradients(std::string& detail) {
  auto t0 = std::chrono::steady_clock::now();
  ModelConfig cfg = tiny_config();  // d=8, vocab 11, 2 CNN / 1 SAN per side
  // Central differences at h=1e-4 need a well-conditioned evaluation point;
  // this init keeps third derivatives moderate (most seeds do).
  DoublePathModel<double> model(cfg, 3);
  std::vector<SentencePair> pairs{make_pair({4, 5, 6, 7}, {8, 9, 10}),
                                  make_pair({9, 10}, {4, 5, 6, 7})};
  Batch batch = make_batch(pairs);
  auto loss_fn = [&] {
    Tensor<double> logp = forward_log_probs(model, batch, /*training=*/false, nullptr);
    return nll_loss(logp, std::span<const int32_t>(batch.tgt_out), Vocabulary::kPad);
  };
  std::vector<Tensor<double>*> params;
  int64_t n_params = 0;
  model.visit_params([&](const std::string&, Tensor<double>& t) {
    params.push_back(&t);
    n_params += t.size();
  });
  GradCheckReport<double> report = grad_check<double>(loss_fn, params, 1e-4);
  double elapsed = seconds_since(t0);
  std::ostringstream os;
  os << n_params << " parameters, max rel err " << report.max_rel_err << ", " << elapsed
     << " s";
  detail = os.str();
  return report.max_rel_err <= 1e-3 && elapsed < 300.0;
}

// --------------------------------------------------------------------------
// 2. Decoder causality for 100 random inputs per ablation, bit identical.

bool criterion_causality(std::string& detail) {
  RngStream rng(7);
  int64_t checked = 0;
  for (const std::string& id : ablation_ids()) {
    ModelConfig cfg = build_ablation(id, tiny_config());
    DoublePathModel<double> model(cfg, 31 + checked);
    for (int trial = 0; trial < 100; ++trial) {
      int64_t src_len = 2 + static_cast<int64_t>(rng.uniform_int(5));
      int64_t tgt_len = 2 + static_cast<int64_t>(rng.uniform_int(5));
      std::vector<SentencePair> pairs{
          make_pair(random_ids(rng, src_len, 11), random_ids(rng, tgt_len, 11))};
      Batch batch = make_batch(pairs);
      EncoderOutput<double> enc = encode(model, batch, false, nullptr);
      DecoderStates<double> base = decode_step_states(
          model, enc, std::span<const int32_t>(batch.tgt_in), 1, batch.tgt_len, false,
          nullptr);
      Tensor<double> base_logp =
          output_fuse_and_project(model.output_fusion(), base.z_cnn, base.z_san);

      int64_t cut = 1 + static_cast<int64_t>(
                            rng.uniform_int(static_cast<uint64_t>(batch.tgt_len - 1)));
      Batch mutated = batch;
      for (int64_t t = cut; t < batch.tgt_len; ++t)
        mutated.tgt_in[static_cast<size_t>(t)] =
            static_cast<int32_t>(Vocabulary::kNumSpecials + rng.uniform_int(7));
      DecoderStates<double> alt = decode_step_states(
          model, enc, std::span<const int32_t>(mutated.tgt_in), 1, batch.tgt_len, false,
          nullptr);
      Tensor<double> alt_logp =
          output_fuse_and_project(model.output_fusion(), alt.z_cnn, alt.z_san);
      for (int64_t t = 0; t < cut; ++t) {
        for (int64_t c = 0; c < cfg.d; ++c) {
          if (base.z_cnn && base.z_cnn->at({0, t, c}) != alt.z_cnn->at({0, t, c})) {
            detail = id + ": CNN path state differs at position " + std::to_string(t);
            return false;
          }
          if (base.z_san && base.z_san->at({0, t, c}) != alt.z_san->at({0, t, c})) {
            detail = id + ": SAN path state differs at position " + std::to_string(t);
            return false;
          }
        }
        for (int64_t v = 0; v < cfg.tgt_vocab; ++v)
          if (base_logp.at({0, t, v}) != alt_logp.at({0, t, v})) {
            detail = id + ": log-probs differ at position " + std::to_string(t);
            return false;
          }
      }
      ++checked;
    }
  }
  detail = std::to_string(checked) + " random perturbation trials across M1..M9";
  return true;
}

// --------------------------------------------------------------------------
// 3. Gating contracts: strict (0,1) over 1000 forwards; zeroed-gate mean.

bool criterion_gating(std::string& detail) {
  ModelConfig cfg = build_ablation("M9", tiny_config());
  cfg.dropout = 0.1;
  DoublePathModel<double> model(cfg, 99);
  RngStream rng(100);
  // Gates initialize to zero (g = 0.5 everywhere); randomize them so the
  // strict-(0,1) contract is exercised away from the neutral point.
  model.visit_params([&](const std::string& name, Tensor<double>& t) {
    if (name.find(".gate.") != std::string::npos)
      t = dps::testing::random_tensor<double>(t.shape(), rng, 0.5);
  });
  GateStats stats;
  for (int pass = 0; pass < 1000; ++pass) {
    std::vector<SentencePair> pairs{make_pair(random_ids(rng, 1 + pass % 6, 11),
                                              random_ids(rng, 1 + (pass / 2) % 6, 11))};
    Batch batch = make_batch(pairs);
    RngStream drop(mix_seed(5, 0xD, static_cast<uint64_t>(pass)));
    forward_log_probs(model, batch, /*training=*/true, &drop, nullptr, &stats);
  }
  bool open_interval = stats.count > 0 && stats.min > 0.0 && stats.max < 1.0;

  // Zeroed gate weights: fused context equals the arithmetic mean (1e-7).
  RngStream rng2(101);
  bool mean_ok = true;
  FusionGateParams<double> zero_gate = FusionGateParams<double>::init(cfg.d);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor<double> a = dps::testing::random_tensor<double>({2, 3, cfg.d}, rng2, 1.0, false);
    Tensor<double> b = dps::testing::random_tensor<double>({2, 3, cfg.d}, rng2, 1.0, false);
    Tensor<double> fused = gate_fuse(a, b, zero_gate);
    for (int64_t i = 0; i < fused.size(); ++i) {
      double mean = (a.vec()[static_cast<size_t>(i)] + b.vec()[static_cast<size_t>(i)]) / 2.0;
      if (std::abs(fused.vec()[static_cast<size_t>(i)] - mean) > 1e-7) mean_ok = false;
    }
  }
  // Output fusion degenerate case uses the same gate form.
  OutputFusionParams<double> out;
  out.gate = FusionGateParams<double>::init(cfg.d);
  out.w_vocab = dps::testing::random_tensor<double>({cfg.d, 11}, rng2, 0.5, false);
  out.b_vocab = Tensor<double>::zeros({11});
  Tensor<double> zc = dps::testing::random_tensor<double>({1, 2, cfg.d}, rng2, 1.0, false);
  Tensor<double> za = dps::testing::random_tensor<double>({1, 2, cfg.d}, rng2, 1.0, false);
  Tensor<double> logp = output_fuse_and_project<double>(out, zc, za);
  Tensor<double> mean_logp = log_softmax_last_dim(
      matmul(scale(add(zc, za), 0.5), out.w_vocab));
  for (int64_t i = 0; i < logp.size(); ++i)
    if (std::abs(logp.vec()[static_cast<size_t>(i)] -
                 mean_logp.vec()[static_cast<size_t>(i)]) > 1e-7)
      mean_ok = false;

  std::ostringstream os;
  os << stats.count << " gate values in [" << stats.min << ", " << stats.max
     << "], zero-gate mean check " << (mean_ok ? "ok" : "FAILED");
  detail = os.str();
  return open_interval && mean_ok;
}

// --------------------------------------------------------------------------
// 4. All nine ablations learn the copy task (vocab 20, len <= 20, d=64).

bool criterion_ablation_training(std::string& detail) {
  SyntheticData train = gen_synthetic(SynthTask::kCopy, 1500, 20, 1, 20, 5001);
  SyntheticData valid = gen_synthetic(SynthTask::kCopy, 200, 20, 1, 20, 5002);
  std::ostringstream os;
  bool all_ok = true;
  for (const std::string& id : ablation_ids()) {
    auto t0 = std::chrono::steady_clock::now();
    ModelConfig base;
    base.d = 64;
    base.d_ff = 256;
    base.heads = 4;
    base.kernel = 3;
    base.cnn_enc_layers = base.cnn_dec_layers = 2;
    base.san_enc_layers = base.san_dec_layers = 1;
    base.src_vocab = base.tgt_vocab = train.vocab.size();
    base.max_len = 24;
    base.dropout = 0.1;
    ModelConfig cfg = build_ablation(id, base);
    DoublePathModel<float> model(cfg, 7000 + id.back());

    const int64_t step_budget = id == "M9" ? 2000 : 5000;
    const double target = id == "M9" ? 0.99 : 0.95;
    TrainOptions opts;
    opts.max_epochs = 1000000;
    opts.max_steps = step_budget;
    opts.max_tokens_per_batch = 2000;
    opts.valid_every_steps = 50;
    opts.init_lr = 0.25;
    opts.momentum = 0.99;
    opts.clip_norm = 0.1;
    // Validation runs every 50 steps here; ten stalled rounds before a
    // decay keeps the shrink-by-10 schedule from starving slow starters.
    opts.lr_patience = 10;
    opts.seed = 42;
    TrainState<float> state;
    double best_acc = 0.0;
    int64_t steps_at_target = -1;
    TrainHooks hooks;
    hooks.on_eval = [&](const EvalRecord& ev) {
      best_acc = std::max(best_acc, ev.accuracy);
      if (ev.accuracy >= target) {
        steps_at_target = ev.step;
        return true;  // stop early
      }
      return false;
    };
    train_loop(model, train.pairs, valid.pairs, opts, state, nullptr, hooks);
    double elapsed = seconds_since(t0);
    bool ok = steps_at_target > 0 && elapsed < 900.0;
    all_ok = all_ok && ok;
    os << id << ":" << (ok ? "ok" : "FAIL") << " acc=" << best_acc << " steps="
       << (steps_at_target > 0 ? steps_at_target : state.global_step) << " ("
       << static_cast<int>(elapsed) << "s) ";
  }
  detail = os.str();
  return all_ok;
}

// --------------------------------------------------------------------------
// 5. Parameter count of the published IWSLT-scale setting.

bool criterion_param_count(std::string& detail) {
  ModelConfig cfg;
  cfg.d = 256;
  cfg.d_ff = 1024;
  cfg.heads = 4;
  cfg.kernel = 3;
  cfg.cnn_enc_layers = cfg.cnn_dec_layers = 4;
  cfg.san_enc_layers = cfg.san_dec_layers = 2;
  cfg.src_vocab = cfg.tgt_vocab = 10000;
  cfg.max_len = 256;
  cfg.share_embeddings = true;  // joint 10k vocabulary
  int64_t count = count_parameters(cfg);
  double reference = 11.57e6;
  double deviation = std::abs(static_cast<double>(count) - reference) / reference;
  std::ostringstream os;
  os << count << " parameters vs reference 11.57M (deviation "
     << static_cast<int>(deviation * 1000) / 10.0 << "%); assumes shared word table, "
     << "untied output projection, kernel 3, 256 positions";
  detail = os.str();
  return deviation <= 0.10;
}

// --------------------------------------------------------------------------
// 6. Metric oracles: corpus BLEU fixture and the hand-computed ROUGE case.

bool criterion_metric_oracles(std::string& detail) {
  auto [hyps, refs] = bleu_fixture();
  double got = bleu(hyps, refs);
  double want = bleu_oracle(hyps, refs);
  bool bleu_ok = std::abs(got - want) < 0.1;

  TokenLines h = dps::testing::token_lines({"a b c"});
  TokenLines r = dps::testing::token_lines({"a c d"});
  double r1 = rouge(h, r, RougeVariant::k1);
  double rl = rouge(h, r, RougeVariant::kL);
  bool rouge_ok = std::abs(r1 - 0.6667) <= 1e-4 && std::abs(rl - 0.6667) <= 1e-4;

  std::ostringstream os;
  os << "bleu " << got << " vs oracle " << want << "; rouge1 " << r1 << ", rougeL " << rl;
  detail = os.str();
  return bleu_ok && rouge_ok;
}

// --------------------------------------------------------------------------
// 7. Beam correctness: exhaustive oracle at beam=2 and greedy at beam=1.

bool criterion_beam(std::string& detail) {
  int exhaustive_hits = 0;
  const uint64_t kTableSeeds[] = {3, 7, 11, 19, 23, 31, 42, 59, 77, 101};
  for (uint64_t seed : kTableSeeds) {
    ToyDecoder model(seed);
    Hypothesis got = beam_search(model, BeamOptions{2, 3, 0, 1.0});
    Hypothesis want = exhaustive_best(ToyDecoder(seed), 3, 0, 1.0);
    if (got.tokens == want.tokens && got.finished == want.finished) ++exhaustive_hits;
  }
  int greedy_hits = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    ToyDecoder via_beam(seed);
    ToyDecoder via_greedy(seed);
    Hypothesis b = beam_search(via_beam, BeamOptions{1, 12, 0, 1.0});
    Hypothesis g = greedy_decode(via_greedy, 12, 0);
    if (b.tokens == g.tokens && b.finished == g.finished &&
        std::abs(b.sum_logp - g.sum_logp) < 1e-12)
      ++greedy_hits;
  }
  std::ostringstream os;
  os << exhaustive_hits << "/10 exhaustive matches, " << greedy_hits
     << "/100 greedy agreements";
  detail = os.str();
  return exhaustive_hits == 10 && greedy_hits == 100;
}

// --------------------------------------------------------------------------
// 8. Entropy analysis on synthetic dumps (published trained-model entropies
//    2.208/1.406/1.886/1.377 are explicitly not reproduced at this scale).

bool criterion_entropy(std::string& detail) {
  auto build = [](int64_t n, int64_t m, bool uniform) {
    AttentionRecord rec;
    rec.id = 0;
    rec.m = m;
    rec.n = n;
    for (int64_t j = 0; j < m; ++j) rec.src_tokens.push_back("s" + std::to_string(j));
    for (int64_t t = 0; t < n; ++t) rec.tgt_tokens.push_back("t" + std::to_string(t));
    for (int f = 0; f < 4; ++f) {
      AlignmentMatrix mat;
      mat.rows = n;
      mat.cols = m;
      mat.values.assign(static_cast<size_t>(n * m), uniform ? 1.0 / m : 0.0);
      if (!uniform)
        for (int64_t t = 0; t < n; ++t)
          mat.values[static_cast<size_t>(t * m + t % m)] = 1.0;
      rec.flows[static_cast<size_t>(f)] = std::move(mat);
    }
    fill_entropies(rec);
    return rec;
  };

  // Round-trip through the text dump, then aggregate: ln 7 within 1e-9.
  std::vector<AttentionRecord> uniform{build(5, 7, true), build(3, 7, true)};
  std::ostringstream dump;
  write_alignment_dump(uniform, dump);
  std::istringstream parse(dump.str());
  EntropyReport report = entropy_report(parse_alignment_dump(parse));
  bool uniform_ok = true;
  for (int e = 0; e < 2; ++e)
    for (int d = 0; d < 2; ++d)
      uniform_ok = uniform_ok && report.cells[e][d] &&
                   std::abs(*report.cells[e][d] - std::log(7.0)) <= 1e-9;

  std::vector<AttentionRecord> hot{build(5, 7, false)};
  std::ostringstream dump2;
  write_alignment_dump(hot, dump2);
  std::istringstream parse2(dump2.str());
  EntropyReport zero = entropy_report(parse_alignment_dump(parse2));
  bool hot_ok = true;
  for (int e = 0; e < 2; ++e)
    for (int d = 0; d < 2; ++d)
      hot_ok = hot_ok && zero.cells[e][d] && std::abs(*zero.cells[e][d]) <= 1e-9;

  // Entropy is maximal exactly at the uniform distribution.
  std::vector<double> skew{0.4, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1};
  bool max_ok = entropy_of_row(skew) < std::log(7.0);

  std::ostringstream os;
  os << "uniform cells = ln 7 " << (uniform_ok ? "ok" : "FAIL") << ", one-hot cells = 0 "
     << (hot_ok ? "ok" : "FAIL")
     << "; published trained-model entropies intentionally not reproduced";
  detail = os.str();
  return uniform_ok && hot_ok && max_ok;
}

// --------------------------------------------------------------------------
// 9. Determinism over 200 steps and exact checkpoint resume.

bool criterion_determinism(std::string& detail) {
  SyntheticData data = gen_synthetic(SynthTask::kCopy, 60, 7, 2, 9, 301);
  SyntheticData valid = gen_synthetic(SynthTask::kCopy, 12, 7, 2, 9, 302);
  ModelConfig cfg = dps::testing::mini_config(11);
  cfg.dropout = 0.1;

  auto opts_for = [&](int64_t max_steps, const std::string& dir) {
    TrainOptions opts;
    opts.max_epochs = 1000000;
    opts.max_steps = max_steps;
    opts.max_tokens_per_batch = 160;
    opts.valid_every_steps = 40;
    opts.init_lr = 0.05;
    opts.momentum = 0.99;
    opts.clip_norm = 0.1;
    opts.seed = 77;
    opts.checkpoint_dir = dir;
    return opts;
  };
  namespace fs = std::filesystem;
  fs::path tmp = fs::temp_directory_path() / "dps_acceptance_ckpt";
  fs::remove_all(tmp);

  auto run = [&](int64_t steps, const std::string& dir, std::vector<double>* losses) {
    DoublePathModel<float> model(cfg, 55);
    TrainState<float> state;
    TrainHooks hooks;
    if (losses)
      hooks.on_step = [&](const StepRecord& r) { losses->push_back(r.loss); };
    train_loop(model, data.pairs, valid.pairs, opts_for(steps, dir), state, nullptr, hooks);
    std::vector<float> flat;
    model.visit_params([&](const std::string&, Tensor<float>& t) {
      flat.insert(flat.end(), t.data().begin(), t.data().end());
    });
    return flat;
  };

  std::vector<double> la, lb;
  std::vector<float> pa = run(200, (tmp / "a").string(), &la);
  std::vector<float> pb = run(200, (tmp / "b").string(), &lb);
  bool rerun_ok = la == lb && pa == pb && la.size() == 200;

  // Interrupt at 120 steps (checkpoint written there), resume to 200.
  std::vector<float> px = run(120, (tmp / "x").string(), nullptr);
  LoadedCheckpoint<float> loaded = load_checkpoint<float>((tmp / "x/last.ckpt").string());
  TrainState<float> resumed = from_persist(*loaded.train);
  train_loop(loaded.model, data.pairs, valid.pairs, opts_for(200, (tmp / "y").string()),
             resumed, nullptr);
  std::vector<float> presumed;
  loaded.model.visit_params([&](const std::string&, Tensor<float>& t) {
    presumed.insert(presumed.end(), t.data().begin(), t.data().end());
  });
  bool resume_ok = presumed == pa;
  fs::remove_all(tmp);

  std::ostringstream os;
  os << "rerun " << (rerun_ok ? "bit-identical" : "DIVERGED") << ", resume "
     << (resume_ok ? "exact" : "DIVERGED");
  detail = os.str();
  return rerun_ok && resume_ok;
}

// --------------------------------------------------------------------------
// 10. Published headline scores are declared out of desk-scale reach.

bool criterion_out_of_scope(std::string& detail) {
  detail =
      "published corpus-level BLEU/ROUGE results (e.g. 31.99 IWSLT BLEU) require full-data "
      "training and are not asserted by this suite";
  return true;
}

}  // namespace

int main() {
  std::vector<Criterion> criteria = {
      {1, "gradient soundness (tiny config, f64 finite differences)", criterion_gradients},
      {2, "decoder causality across ablations", criterion_causality},
      {3, "gating contracts", criterion_gating},
      {4, "ablation grid copy-task training", criterion_ablation_training},
      {5, "parameter count vs published 11.57M", criterion_param_count},
      {6, "metric oracles (BLEU fixture, ROUGE hand case)", criterion_metric_oracles},
      {7, "beam search correctness", criterion_beam},
      {8, "entropy analysis on synthetic dumps", criterion_entropy},
      {9, "determinism and checkpoint resume", criterion_determinism},
      {10, "headline corpus scores declared out of scope", criterion_out_of_scope},
  };
  int failures = 0;
  for (Criterion& c : criteria) {
    auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = false;
    try {
      ok = c.run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    double elapsed = seconds_since(t0);
    std::printf("[%s] criterion %2d: %s (%.1fs)%s%s\n", ok ? "PASS" : "FAIL", c.id, c.name,
                elapsed, detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  if (failures == 0) {
    std::printf("acceptance: all %zu criteria passed\n", criteria.size());
  } else {
    std::printf("acceptance: %d criteria FAILED\n", failures);
  }
  return failures == 0 ? 0 : 1;
}
