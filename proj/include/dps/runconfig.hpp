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
// Run configuration: a sectioned key=value file merged over a named preset,
// with command-line overrides. Every key is validated; unknown keys are
// rejected before any work starts.

#pragma once

#include <string>
#include <vector>

#include "dps/config.hpp"
#include "dps/data.hpp"

namespace dps {

struct TrainSection {
  double lr = 0.25;
  double momentum = 0.99;
  double clip_norm = 0.1;
  int64_t lr_patience = 1;  // stalled validation rounds before lr /= 10
  int64_t max_tokens = 2000;
  int64_t max_epochs = 10;
  int64_t max_steps = -1;
  int64_t valid_every_steps = -1;
  uint64_t seed = 1;
};

struct DecodeSection {
  int64_t beam = 5;
  int64_t max_len = 64;
  int64_t min_len = 0;
  double alpha = 1.0;
};

struct DataSection {
  std::string task = "copy";  // copy | reverse | sort | files
  std::string train_src, train_tgt, valid_src, valid_tgt;
  std::string mode = "word";  // word | char
  int64_t vocab_size = 10000;
  int64_t synth_pairs = 3000;
  int64_t synth_valid_pairs = 200;
  int64_t vocab_k = 20;
  int64_t len_lo = 1;
  int64_t len_hi = 20;
};

struct RunConfig {
  ModelConfig model;
  TrainSection train;
  DecodeSection decode;
  DataSection data;

  void validate() const;
  std::string to_text() const;  // snapshot, parseable by parse_run_config
};

TokenMode token_mode_of(const std::string& name);

// Named presets: "tiny" (d=64 smoke-scale), "iwslt" (d=256, 4 conv + 2
// attention layers per side, 1024 filter size, shared 10k vocabulary),
// "nist" (deep: 12 conv + 6 attention layers, dropout 0.2, lr 0.5, beam 10).
RunConfig preset_config(const std::string& name);
std::vector<std::string> preset_names();

// Parses a sectioned config file ([model] / [train] / [decode] / [data];
// '#' starts a comment). Unknown sections or keys throw ConfigError naming
// them. `base` supplies defaults.
RunConfig parse_run_config_text(const std::string& text, RunConfig base);
RunConfig parse_run_config_file(const std::string& path, RunConfig base);

// Applies one "section.key=value" override.
void apply_override(RunConfig& cfg, const std::string& assignment);

}  // namespace dps
