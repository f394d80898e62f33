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
// Command-line entry point: train, decode, evaluate, analyze, count-params,
// ablate. Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dps/analysis.hpp"
#include "dps/beam.hpp"
#include "dps/checkpoint.hpp"
#include "dps/metrics.hpp"
#include "dps/runconfig.hpp"
#include "dps/train.hpp"

namespace fs = std::filesystem;
using namespace dps;

namespace {

struct ConfigArgs {
  std::string preset = "tiny";
  std::string config_path;
  std::vector<std::string> overrides;
  std::string ablation;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--preset", args.preset, "named preset: tiny | iwslt | nist")
      ->default_val("tiny");
  cmd->add_option("--config", args.config_path, "config file merged over the preset");
  cmd->add_option("--set", args.overrides, "override, e.g. --set model.d=128");
  cmd->add_option("--ablation", args.ablation, "apply an ablation row M1..M9");
}

RunConfig resolve_config(const ConfigArgs& args) {
  RunConfig cfg = preset_config(args.preset);
  if (!args.config_path.empty()) cfg = parse_run_config_file(args.config_path, cfg);
  for (const std::string& ov : args.overrides) apply_override(cfg, ov);
  if (!args.ablation.empty()) cfg.model = build_ablation(args.ablation, cfg.model);
  return cfg;
}

struct PreparedData {
  std::vector<SentencePair> train_pairs, valid_pairs;
  Vocabulary vocab_src, vocab_tgt;
  TokenMode mode = TokenMode::kWord;
};

PreparedData prepare_data(RunConfig& cfg) {
  PreparedData out;
  out.mode = token_mode_of(cfg.data.mode);
  if (cfg.data.task == "files") {
    if (cfg.data.train_src.empty() || cfg.data.train_tgt.empty())
      throw ConfigError("data.task=files requires data.train_src and data.train_tgt");
    std::vector<std::string> src_lines = read_lines(cfg.data.train_src);
    std::vector<std::string> tgt_lines = read_lines(cfg.data.train_tgt);
    out.vocab_src = build_vocab(src_lines, out.mode,
                                static_cast<int32_t>(cfg.data.vocab_size));
    out.vocab_tgt = cfg.model.share_embeddings
                        ? out.vocab_src
                        : build_vocab(tgt_lines, out.mode,
                                      static_cast<int32_t>(cfg.data.vocab_size));
    if (cfg.model.share_embeddings) {
      std::vector<std::string> joint = src_lines;
      joint.insert(joint.end(), tgt_lines.begin(), tgt_lines.end());
      out.vocab_src = out.vocab_tgt =
          build_vocab(joint, out.mode, static_cast<int32_t>(cfg.data.vocab_size));
    }
    LoadReport train = load_parallel(cfg.data.train_src, cfg.data.train_tgt, out.vocab_src,
                                     out.vocab_tgt, cfg.model.max_len, out.mode);
    if (train.dropped_too_long > 0)
      std::cerr << "dropped " << train.dropped_too_long << " over-length training pairs\n";
    out.train_pairs = std::move(train.pairs);
    if (!cfg.data.valid_src.empty()) {
      LoadReport valid = load_parallel(cfg.data.valid_src, cfg.data.valid_tgt, out.vocab_src,
                                       out.vocab_tgt, cfg.model.max_len, out.mode);
      out.valid_pairs = std::move(valid.pairs);
    }
  } else {
    SynthTask task = cfg.data.task == "copy"      ? SynthTask::kCopy
                     : cfg.data.task == "reverse" ? SynthTask::kReverse
                                                  : SynthTask::kSort;
    SyntheticData train =
        gen_synthetic(task, cfg.data.synth_pairs, static_cast<int32_t>(cfg.data.vocab_k),
                      cfg.data.len_lo, cfg.data.len_hi, cfg.train.seed);
    SyntheticData valid =
        gen_synthetic(task, cfg.data.synth_valid_pairs, static_cast<int32_t>(cfg.data.vocab_k),
                      cfg.data.len_lo, cfg.data.len_hi, cfg.train.seed + 1);
    out.train_pairs = std::move(train.pairs);
    out.valid_pairs = std::move(valid.pairs);
    out.vocab_src = out.vocab_tgt = train.vocab;
  }
  cfg.model.src_vocab = out.vocab_src.size();
  cfg.model.tgt_vocab = out.vocab_tgt.size();
  return out;
}

void save_run_vocab(const std::string& ckpt_dir, const PreparedData& data,
                    const std::string& mode) {
  data.vocab_src.save(ckpt_dir + "/vocab.src.txt");
  data.vocab_tgt.save(ckpt_dir + "/vocab.tgt.txt");
  std::ofstream meta(ckpt_dir + "/vocab.meta");
  meta << "mode=" << mode << "\n";
}

template <typename T>
int run_train(RunConfig cfg, const std::string& run_dir, const std::string& resume_path) {
  PreparedData data = prepare_data(cfg);
  cfg.validate();
  fs::create_directories(run_dir);
  fs::create_directories(run_dir + "/checkpoints");
  fs::create_directories(run_dir + "/outputs");
  {
    std::ofstream snap(run_dir + "/config.snapshot.cfg");
    snap << cfg.to_text();
  }
  save_run_vocab(run_dir + "/checkpoints", data, cfg.data.mode);

  TrainOptions opts;
  opts.max_epochs = cfg.train.max_epochs;
  opts.max_steps = cfg.train.max_steps;
  opts.max_tokens_per_batch = cfg.train.max_tokens;
  opts.valid_every_steps = cfg.train.valid_every_steps;
  opts.init_lr = cfg.train.lr;
  opts.momentum = cfg.train.momentum;
  opts.clip_norm = cfg.train.clip_norm;
  opts.lr_patience = cfg.train.lr_patience;
  opts.seed = cfg.train.seed;
  opts.checkpoint_dir = run_dir + "/checkpoints";

  std::ofstream log(run_dir + "/train.log", std::ios::app);
  TrainState<T> state;
  std::optional<DoublePathModel<T>> model;
  if (!resume_path.empty()) {
    LoadedCheckpoint<T> loaded = load_checkpoint<T>(resume_path);
    if (!loaded.train)
      throw VersionError("checkpoint has no training state, cannot resume: " + resume_path);
    model.emplace(std::move(loaded.model));
    state = from_persist(*loaded.train);
  } else {
    model.emplace(cfg.model, cfg.train.seed);
  }
  train_loop(*model, data.train_pairs, data.valid_pairs, opts, state, &log);
  // Final checkpoint even without a validation pass.
  TrainPersist<T> persist = to_persist(state);
  save_checkpoint(opts.checkpoint_dir + "/last.ckpt", *model, &persist);
  if (!fs::exists(opts.checkpoint_dir + "/best.ckpt"))
    save_checkpoint(opts.checkpoint_dir + "/best.ckpt", *model, &persist);
  std::cout << "trained " << state.global_step << " steps; checkpoints in "
            << opts.checkpoint_dir << "\n";
  return 0;
}

Vocabulary load_vocab_or_default(const std::string& explicit_path,
                                 const std::string& default_path) {
  const std::string& path = explicit_path.empty() ? default_path : explicit_path;
  return Vocabulary::load(path);
}

template <typename T>
int run_decode(const std::string& ckpt_path, const std::string& input_path,
               const std::string& output_path, int64_t beam, int64_t max_len, int64_t min_len,
               double alpha, bool greedy, const std::string& vocab_src_path,
               const std::string& vocab_tgt_path, const std::string& mode_name,
               const std::string& scores_path) {
  LoadedCheckpoint<T> loaded = load_checkpoint<T>(ckpt_path);
  DoublePathModel<T>& model = loaded.model;
  std::string ckpt_dir = fs::path(ckpt_path).parent_path().string();
  if (ckpt_dir.empty()) ckpt_dir = ".";
  std::string mode = mode_name;
  if (mode.empty()) {
    mode = "word";
    std::ifstream meta(ckpt_dir + "/vocab.meta");
    std::string line;
    while (meta && std::getline(meta, line))
      if (line.rfind("mode=", 0) == 0) mode = line.substr(5);
  }
  TokenMode tok_mode = token_mode_of(mode);
  Vocabulary vocab_src = load_vocab_or_default(vocab_src_path, ckpt_dir + "/vocab.src.txt");
  Vocabulary vocab_tgt = load_vocab_or_default(vocab_tgt_path, ckpt_dir + "/vocab.tgt.txt");
  if (vocab_src.size() != model.config().src_vocab ||
      vocab_tgt.size() != model.config().tgt_vocab)
    throw VersionError("vocabulary sizes do not match the checkpoint config");

  std::vector<std::string> lines = read_lines(input_path);
  std::ostream* out = &std::cout;
  std::ofstream out_file;
  if (!output_path.empty()) {
    out_file.open(output_path, std::ios::trunc);
    if (!out_file) throw IoError("cannot open output file: " + output_path);
    out = &out_file;
  }
  std::ofstream scores;
  if (!scores_path.empty()) {
    scores.open(scores_path, std::ios::trunc);
    if (!scores) throw IoError("cannot open scores file: " + scores_path);
  }
  if (max_len <= 0) max_len = model.config().max_len - 1;
  max_len = std::min<int64_t>(max_len, model.config().max_len - 1);
  for (const std::string& line : lines) {
    std::vector<int32_t> src = vocab_src.ids_of(tokenize(line, tok_mode));
    if (static_cast<int64_t>(src.size()) > model.config().max_len)
      src.resize(static_cast<size_t>(model.config().max_len));
    Hypothesis hyp;
    if (greedy || beam == 1) {
      ModelStepDecoder<T> decoder(model, encode_single(model, std::span<const int32_t>(src)));
      hyp = greedy_decode(decoder, max_len, min_len);
    } else {
      hyp = decode_sentence(model, std::span<const int32_t>(src),
                            BeamOptions{beam, max_len, min_len, alpha});
    }
    (*out) << detokenize(vocab_tgt.tokens_of(hyp.tokens), tok_mode) << "\n";
    if (scores.is_open()) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6f", hyp.normalized(alpha));
      scores << buf << "\n";
    }
  }
  return 0;
}

int run_evaluate(const std::string& hyp_path, const std::string& ref_path,
                 const std::string& metric) {
  std::vector<std::string> hyp_lines = read_lines(hyp_path);
  std::vector<std::string> ref_lines = read_lines(ref_path);
  if (hyp_lines.size() != ref_lines.size())
    throw CorpusError("evaluate: line counts differ: " + std::to_string(hyp_lines.size()) +
                      " vs " + std::to_string(ref_lines.size()));
  TokenLines hyps, refs;
  for (const auto& l : hyp_lines) hyps.push_back(tokenize(l, TokenMode::kWord));
  for (const auto& l : ref_lines) refs.push_back(tokenize(l, TokenMode::kWord));
  double score;
  if (metric == "bleu") score = bleu(hyps, refs);
  else if (metric == "rouge1") score = rouge(hyps, refs, RougeVariant::k1);
  else if (metric == "rouge2") score = rouge(hyps, refs, RougeVariant::k2);
  else if (metric == "rougeL") score = rouge(hyps, refs, RougeVariant::kL);
  else throw ConfigError("unknown metric '" + metric + "'");
  std::printf("%.2f\n", score);
  return 0;
}

template <typename T>
int run_analyze(const std::string& ckpt_path, const std::string& src_path,
                const std::string& tgt_path, const std::string& out_dir, int64_t limit) {
  LoadedCheckpoint<T> loaded = load_checkpoint<T>(ckpt_path);
  DoublePathModel<T>& model = loaded.model;
  std::string ckpt_dir = fs::path(ckpt_path).parent_path().string();
  if (ckpt_dir.empty()) ckpt_dir = ".";
  std::string mode = "word";
  {
    std::ifstream meta(ckpt_dir + "/vocab.meta");
    std::string line;
    while (meta && std::getline(meta, line))
      if (line.rfind("mode=", 0) == 0) mode = line.substr(5);
  }
  Vocabulary vocab_src = Vocabulary::load(ckpt_dir + "/vocab.src.txt");
  Vocabulary vocab_tgt = Vocabulary::load(ckpt_dir + "/vocab.tgt.txt");
  LoadReport corpus = load_parallel(src_path, tgt_path, vocab_src, vocab_tgt,
                                    model.config().max_len, token_mode_of(mode));
  if (limit > 0 && static_cast<int64_t>(corpus.pairs.size()) > limit)
    corpus.pairs.resize(static_cast<size_t>(limit));
  if (corpus.pairs.empty()) throw CorpusError("analyze: no sentence pairs to analyze");
  if (!(model.config().dec_cnn && model.config().dec_san &&
        model.config().enc_cnn && model.config().enc_san))
    std::cerr << "warning: single-path checkpoint, only the available attention flows are "
                 "dumped\n";
  fs::create_directories(out_dir);
  std::vector<AttentionRecord> records = dump_alignments(
      model, std::span<const SentencePair>(corpus.pairs), vocab_src, vocab_tgt,
      out_dir + "/alignments.txt");
  EntropyReport report = entropy_report(records);
  {
    std::ofstream os(out_dir + "/entropy_report.txt");
    os << report.to_string();
  }
  std::cout << report.to_string();
  return 0;
}

int run_count_params(const ConfigArgs& args) {
  RunConfig cfg = resolve_config(args);
  std::cout << count_parameters(cfg.model) << "\n";
  return 0;
}

int run_ablate(const ConfigArgs& args) {
  RunConfig base = resolve_config(args);
  std::printf("id   enc-cnn enc-san dec-cnn dec-san  parameters\n");
  for (const std::string& id : ablation_ids()) {
    ModelConfig cfg = build_ablation(id, base.model);
    std::printf("%-4s %7s %7s %7s %7s  %10lld\n", id.c_str(), cfg.enc_cnn ? "x" : "-",
                cfg.enc_san ? "x" : "-", cfg.dec_cnn ? "x" : "-", cfg.dec_san ? "x" : "-",
                static_cast<long long>(count_parameters(cfg)));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dps: double-path sequence-to-sequence toolkit"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model");
  ConfigArgs train_args;
  add_config_options(train_cmd, train_args);
  std::string run_dir = "runs/default";
  std::string resume_path;
  std::string task_flag;
  bool use_f64 = false;
  train_cmd->add_option("--run-dir", run_dir, "output directory")->capture_default_str();
  train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");
  train_cmd->add_option("--task", task_flag, "shortcut for --set data.task=...");
  train_cmd->add_flag("--f64", use_f64, "train in double precision (default float)");

  // decode
  auto* decode_cmd = app.add_subcommand("decode", "translate an input file");
  std::string ckpt_path, input_path, output_path, vocab_src_path, vocab_tgt_path, mode_name,
      scores_path;
  int64_t beam = 5, dec_max_len = 0, min_len = 0;
  double alpha = 1.0;
  bool greedy = false, decode_f64 = false;
  decode_cmd->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  decode_cmd->add_option("--input", input_path, "source sentences, one per line")->required();
  decode_cmd->add_option("--output", output_path, "output file (default stdout)");
  decode_cmd->add_option("--beam", beam, "beam size")->capture_default_str();
  decode_cmd->add_option("--max-len", dec_max_len, "max output length (default from model)");
  decode_cmd->add_option("--min-len", min_len, "minimum output length")->capture_default_str();
  decode_cmd->add_option("--alpha", alpha, "length-normalization exponent")
      ->capture_default_str();
  decode_cmd->add_flag("--greedy", greedy, "greedy decoding (equals --beam 1)");
  decode_cmd->add_option("--vocab-src", vocab_src_path, "source vocabulary file");
  decode_cmd->add_option("--vocab-tgt", vocab_tgt_path, "target vocabulary file");
  decode_cmd->add_option("--mode", mode_name, "token mode: word | char");
  decode_cmd->add_option("--scores", scores_path, "write per-sentence log-prob scores here");
  decode_cmd->add_flag("--f64", decode_f64, "checkpoint was trained with --f64");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "score hypotheses against references");
  std::string hyp_path, ref_path, metric = "bleu";
  eval_cmd->add_option("--hyp", hyp_path, "hypothesis file")->required();
  eval_cmd->add_option("--ref", ref_path, "reference file")->required();
  eval_cmd->add_option("--metric", metric, "bleu | rouge1 | rouge2 | rougeL")
      ->capture_default_str();

  // analyze
  auto* analyze_cmd = app.add_subcommand("analyze", "export alignments and entropy report");
  std::string ana_ckpt, ana_src, ana_tgt, ana_out = "analysis";
  int64_t ana_limit = 0;
  bool ana_f64 = false;
  analyze_cmd->add_option("--checkpoint", ana_ckpt, "model checkpoint")->required();
  analyze_cmd->add_option("--src", ana_src, "source file")->required();
  analyze_cmd->add_option("--tgt", ana_tgt, "target file")->required();
  analyze_cmd->add_option("--out-dir", ana_out, "output directory")->capture_default_str();
  analyze_cmd->add_option("--limit", ana_limit, "analyze at most this many pairs");
  analyze_cmd->add_flag("--f64", ana_f64, "checkpoint was trained with --f64");

  // count-params
  auto* count_cmd = app.add_subcommand("count-params", "print the parameter count");
  ConfigArgs count_args;
  add_config_options(count_cmd, count_args);

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "print the M1..M9 ablation grid");
  ConfigArgs ablate_args;
  add_config_options(ablate_cmd, ablate_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train_cmd) {
      if (!task_flag.empty()) train_args.overrides.push_back("data.task=" + task_flag);
      RunConfig cfg = resolve_config(train_args);
      return use_f64 ? run_train<double>(cfg, run_dir, resume_path)
                     : run_train<float>(cfg, run_dir, resume_path);
    }
    if (*decode_cmd) {
      if (beam < 1) throw ConfigError("decode: beam must be >= 1");
      return decode_f64
                 ? run_decode<double>(ckpt_path, input_path, output_path, beam, dec_max_len,
                                      min_len, alpha, greedy, vocab_src_path, vocab_tgt_path,
                                      mode_name, scores_path)
                 : run_decode<float>(ckpt_path, input_path, output_path, beam, dec_max_len,
                                     min_len, alpha, greedy, vocab_src_path, vocab_tgt_path,
                                     mode_name, scores_path);
    }
    if (*eval_cmd) return run_evaluate(hyp_path, ref_path, metric);
    if (*analyze_cmd)
      return ana_f64 ? run_analyze<double>(ana_ckpt, ana_src, ana_tgt, ana_out, ana_limit)
                     : run_analyze<float>(ana_ckpt, ana_src, ana_tgt, ana_out, ana_limit);
    if (*count_cmd) return run_count_params(count_args);
    if (*ablate_cmd) return run_ablate(ablate_args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
