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

#include "dps/runconfig.hpp"

#include <fstream>
#include <sstream>

namespace dps {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError("config: bad boolean for '" + key + "': " + v);
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int64_t x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for '" + key + "': " + v);
  }
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: bad number for '" + key + "': " + v);
  }
}

void set_key(RunConfig& cfg, const std::string& section, const std::string& key,
             const std::string& value) {
  const std::string full = section + "." + key;
  if (section == "model") {
    auto& m = cfg.model;
    if (key == "d") m.d = parse_int(full, value);
    else if (key == "d_ff") m.d_ff = parse_int(full, value);
    else if (key == "heads") m.heads = parse_int(full, value);
    else if (key == "kernel") m.kernel = parse_int(full, value);
    else if (key == "cnn_enc_layers") m.cnn_enc_layers = parse_int(full, value);
    else if (key == "san_enc_layers") m.san_enc_layers = parse_int(full, value);
    else if (key == "cnn_dec_layers") m.cnn_dec_layers = parse_int(full, value);
    else if (key == "san_dec_layers") m.san_dec_layers = parse_int(full, value);
    else if (key == "src_vocab") m.src_vocab = parse_int(full, value);
    else if (key == "tgt_vocab") m.tgt_vocab = parse_int(full, value);
    else if (key == "max_len") m.max_len = parse_int(full, value);
    else if (key == "dropout") m.dropout = parse_real(full, value);
    else if (key == "enc_cnn") m.enc_cnn = parse_bool(full, value);
    else if (key == "enc_san") m.enc_san = parse_bool(full, value);
    else if (key == "dec_cnn") m.dec_cnn = parse_bool(full, value);
    else if (key == "dec_san") m.dec_san = parse_bool(full, value);
    else if (key == "share_embeddings") m.share_embeddings = parse_bool(full, value);
    else throw ConfigError("config: unknown key '" + full + "'");
  } else if (section == "train") {
    auto& t = cfg.train;
    if (key == "lr") t.lr = parse_real(full, value);
    else if (key == "momentum") t.momentum = parse_real(full, value);
    else if (key == "clip_norm") t.clip_norm = parse_real(full, value);
    else if (key == "lr_patience") t.lr_patience = parse_int(full, value);
    else if (key == "max_tokens") t.max_tokens = parse_int(full, value);
    else if (key == "max_epochs") t.max_epochs = parse_int(full, value);
    else if (key == "max_steps") t.max_steps = parse_int(full, value);
    else if (key == "valid_every_steps") t.valid_every_steps = parse_int(full, value);
    else if (key == "seed") t.seed = static_cast<uint64_t>(parse_int(full, value));
    else throw ConfigError("config: unknown key '" + full + "'");
  } else if (section == "decode") {
    auto& d = cfg.decode;
    if (key == "beam") d.beam = parse_int(full, value);
    else if (key == "max_len") d.max_len = parse_int(full, value);
    else if (key == "min_len") d.min_len = parse_int(full, value);
    else if (key == "alpha") d.alpha = parse_real(full, value);
    else throw ConfigError("config: unknown key '" + full + "'");
  } else if (section == "data") {
    auto& d = cfg.data;
    if (key == "task") d.task = value;
    else if (key == "train_src") d.train_src = value;
    else if (key == "train_tgt") d.train_tgt = value;
    else if (key == "valid_src") d.valid_src = value;
    else if (key == "valid_tgt") d.valid_tgt = value;
    else if (key == "mode") d.mode = value;
    else if (key == "vocab_size") d.vocab_size = parse_int(full, value);
    else if (key == "synth_pairs") d.synth_pairs = parse_int(full, value);
    else if (key == "synth_valid_pairs") d.synth_valid_pairs = parse_int(full, value);
    else if (key == "vocab_k") d.vocab_k = parse_int(full, value);
    else if (key == "len_lo") d.len_lo = parse_int(full, value);
    else if (key == "len_hi") d.len_hi = parse_int(full, value);
    else throw ConfigError("config: unknown key '" + full + "'");
  } else {
    throw ConfigError("config: unknown section '" + section + "'");
  }
}

}  // namespace

TokenMode token_mode_of(const std::string& name) {
  if (name == "word") return TokenMode::kWord;
  if (name == "char") return TokenMode::kChar;
  throw ConfigError("config: data.mode must be 'word' or 'char', got '" + name + "'");
}

void RunConfig::validate() const {
  model.validate();
  if (train.lr <= 0) throw ConfigError("config: train.lr must be positive");
  if (train.momentum < 0 || train.momentum >= 1)
    throw ConfigError("config: train.momentum must be in [0,1)");
  if (train.max_tokens < 1) throw ConfigError("config: train.max_tokens must be >= 1");
  if (decode.beam < 1) throw ConfigError("config: decode.beam must be >= 1");
  if (decode.min_len >= decode.max_len)
    throw ConfigError("config: decode.min_len must be below decode.max_len");
  if (data.task != "copy" && data.task != "reverse" && data.task != "sort" &&
      data.task != "files")
    throw ConfigError("config: data.task must be copy|reverse|sort|files, got '" + data.task +
                      "'");
  token_mode_of(data.mode);
  if (data.task == "files" && (data.train_src.empty() || data.train_tgt.empty()))
    throw ConfigError("config: data.task=files requires data.train_src and data.train_tgt");
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "[model]\n";
  std::istringstream model_kv(model.to_kv());
  std::string line;
  while (std::getline(model_kv, line)) os << line << "\n";
  os << "[train]\nlr=" << train.lr << "\nmomentum=" << train.momentum
     << "\nclip_norm=" << train.clip_norm << "\nlr_patience=" << train.lr_patience
     << "\nmax_tokens=" << train.max_tokens
     << "\nmax_epochs=" << train.max_epochs << "\nmax_steps=" << train.max_steps
     << "\nvalid_every_steps=" << train.valid_every_steps << "\nseed=" << train.seed << "\n";
  os << "[decode]\nbeam=" << decode.beam << "\nmax_len=" << decode.max_len
     << "\nmin_len=" << decode.min_len << "\nalpha=" << decode.alpha << "\n";
  os << "[data]\ntask=" << data.task << "\nmode=" << data.mode
     << "\nvocab_size=" << data.vocab_size << "\nsynth_pairs=" << data.synth_pairs
     << "\nsynth_valid_pairs=" << data.synth_valid_pairs << "\nvocab_k=" << data.vocab_k
     << "\nlen_lo=" << data.len_lo << "\nlen_hi=" << data.len_hi;
  if (!data.train_src.empty()) os << "\ntrain_src=" << data.train_src;
  if (!data.train_tgt.empty()) os << "\ntrain_tgt=" << data.train_tgt;
  if (!data.valid_src.empty()) os << "\nvalid_src=" << data.valid_src;
  if (!data.valid_tgt.empty()) os << "\nvalid_tgt=" << data.valid_tgt;
  os << "\n";
  return os.str();
}

std::vector<std::string> preset_names() { return {"tiny", "iwslt", "nist"}; }

RunConfig preset_config(const std::string& name) {
  RunConfig cfg;
  if (name == "tiny") {
    cfg.model.d = 64;
    cfg.model.d_ff = 256;
    cfg.model.heads = 4;
    cfg.model.kernel = 3;
    cfg.model.cnn_enc_layers = cfg.model.cnn_dec_layers = 2;
    cfg.model.san_enc_layers = cfg.model.san_dec_layers = 1;
    cfg.model.max_len = 64;
    cfg.model.dropout = 0.1;
    cfg.model.src_vocab = cfg.model.tgt_vocab = 24;  // synthetic default
    cfg.train.lr = 0.25;
    cfg.train.clip_norm = 0.1;
    cfg.train.max_tokens = 2000;
    cfg.train.max_epochs = 20;
    cfg.decode.beam = 5;
    cfg.decode.max_len = 40;
  } else if (name == "iwslt") {
    cfg.model.d = 256;
    cfg.model.d_ff = 1024;
    cfg.model.heads = 4;
    cfg.model.kernel = 3;
    cfg.model.cnn_enc_layers = cfg.model.cnn_dec_layers = 4;
    cfg.model.san_enc_layers = cfg.model.san_dec_layers = 2;
    cfg.model.max_len = 256;
    cfg.model.dropout = 0.1;
    cfg.model.src_vocab = cfg.model.tgt_vocab = 10000;
    cfg.model.share_embeddings = true;  // joint vocabulary
    cfg.train.lr = 0.25;
    cfg.train.clip_norm = 0.1;
    cfg.train.max_tokens = 4000;
    cfg.data.task = "files";
    cfg.data.vocab_size = 10000;
    cfg.decode.beam = 5;
    cfg.decode.max_len = 256;
  } else if (name == "nist") {
    cfg.model.d = 256;
    cfg.model.d_ff = 1024;
    cfg.model.heads = 4;
    cfg.model.kernel = 3;
    cfg.model.cnn_enc_layers = cfg.model.cnn_dec_layers = 12;
    cfg.model.san_enc_layers = cfg.model.san_dec_layers = 6;
    cfg.model.max_len = 256;
    cfg.model.dropout = 0.2;
    cfg.model.src_vocab = 37000;
    cfg.model.tgt_vocab = 25000;
    cfg.train.lr = 0.50;
    cfg.train.clip_norm = 0.1;
    cfg.train.max_tokens = 4000;
    cfg.data.task = "files";
    cfg.data.vocab_size = 37000;
    cfg.decode.beam = 10;
    cfg.decode.max_len = 256;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected tiny|iwslt|nist)");
  }
  // Files-based presets pass only partially validated here; data paths are
  // required at train time.
  if (cfg.data.task != "files") cfg.validate();
  return cfg;
}

RunConfig parse_run_config_text(const std::string& text, RunConfig base) {
  std::istringstream is(text);
  std::string line, section;
  int64_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (section.empty())
      throw ConfigError("config line " + std::to_string(line_no) + ": key outside any section");
    set_key(base, section, key, value);
  }
  return base;
}

RunConfig parse_run_config_file(const std::string& path, RunConfig base) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_run_config_text(buf.str(), std::move(base));
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must look like section.key=value, got '" + assignment + "'");
  std::string path = trim(assignment.substr(0, eq));
  std::string value = trim(assignment.substr(eq + 1));
  auto dot = path.find('.');
  if (dot == std::string::npos)
    throw ConfigError("override must look like section.key=value, got '" + assignment + "'");
  set_key(cfg, path.substr(0, dot), path.substr(dot + 1), value);
}

}  // namespace dps
