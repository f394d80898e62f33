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
// End-to-end checks on the command-line binary (path injected by CMake).

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct Sandbox {
  fs::path dir;
  Sandbox() {
    dir = fs::temp_directory_path() / ("dps_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~Sandbox() { fs::remove_all(dir); }

  std::string file(const std::string& name, const std::string& content) const {
    fs::path p = dir / name;
    std::ofstream os(p, std::ios::binary);
    os << content;
    return p.string();
  }

  std::string slurp(const std::string& name) const {
    std::ifstream is(dir / name, std::ios::binary);
    std::ostringstream buf;
    buf << is.rdbuf();
    return buf.str();
  }
};

// Runs the CLI, capturing stdout into `out_file` under the sandbox.
int run_cli(const Sandbox& box, const std::string& args, const std::string& out_file = "") {
  std::string redirect =
      out_file.empty() ? " > /dev/null 2>> cli_err.log" : " > " + out_file + " 2>> cli_err.log";
  std::string cmd = "cd " + box.dir.string() + " && " + DPS_CLI_PATH + " " + args + redirect;
  int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

const char* kTrainArgs =
    "train --preset tiny --task copy --run-dir run "
    "--set train.max_steps=160 --set data.synth_pairs=300 --set data.vocab_k=10 "
    "--set data.len_hi=8 --set data.synth_valid_pairs=40 --set model.max_len=32 "
    "--set train.valid_every_steps=40 --set decode.max_len=20 "
    "--set train.max_epochs=100000";

}  // namespace

TEST_CASE("cli end-to-end: train, decode, evaluate, analyze") {
  Sandbox box;
  REQUIRE(run_cli(box, kTrainArgs) == 0);
  CHECK(fs::exists(box.dir / "run/checkpoints/best.ckpt"));
  CHECK(fs::exists(box.dir / "run/checkpoints/last.ckpt"));
  CHECK(fs::exists(box.dir / "run/config.snapshot.cfg"));
  CHECK(fs::exists(box.dir / "run/train.log"));
  CHECK(fs::exists(box.dir / "run/checkpoints/vocab.src.txt"));

  box.file("in.txt", "7 8 9 5 6\n5 6 7 8\n");
  REQUIRE(run_cli(box, "decode --checkpoint run/checkpoints/best.ckpt --input in.txt "
                       "--output hyp.txt --beam 5") == 0);
  std::string hyp = box.slurp("hyp.txt");
  CHECK(std::count(hyp.begin(), hyp.end(), '\n') == 2);

  // Optional per-sentence score side file, one value per line.
  REQUIRE(run_cli(box, "decode --checkpoint run/checkpoints/best.ckpt --input in.txt "
                       "--output hyp2.txt --beam 5 --scores scores.txt") == 0);
  std::string scores = box.slurp("scores.txt");
  CHECK(std::count(scores.begin(), scores.end(), '\n') == 2);

  // beam=1 equals greedy mode output.
  REQUIRE(run_cli(box, "decode --checkpoint run/checkpoints/best.ckpt --input in.txt "
                       "--output b1.txt --beam 1") == 0);
  REQUIRE(run_cli(box, "decode --checkpoint run/checkpoints/best.ckpt --input in.txt "
                       "--output greedy.txt --greedy") == 0);
  CHECK(box.slurp("b1.txt") == box.slurp("greedy.txt"));

  // Identical files score 100.00 BLEU and 1.00 ROUGE-L.
  REQUIRE(run_cli(box, "evaluate --hyp hyp.txt --ref hyp.txt --metric bleu", "bleu.txt") == 0);
  CHECK(box.slurp("bleu.txt") == "100.00\n");
  REQUIRE(run_cli(box, "evaluate --hyp hyp.txt --ref hyp.txt --metric rougeL", "rl.txt") == 0);
  CHECK(box.slurp("rl.txt") == "1.00\n");

  // min_len is honored on every line.
  REQUIRE(run_cli(box, "decode --checkpoint run/checkpoints/best.ckpt --input in.txt "
                       "--output long.txt --beam 2 --min-len 6") == 0);
  std::istringstream lines(box.slurp("long.txt"));
  std::string line;
  int n_lines = 0;
  while (std::getline(lines, line)) {
    ++n_lines;
    std::istringstream ws(line);
    int words = 0;
    std::string w;
    while (ws >> w) ++words;
    CHECK(words >= 6);
  }
  CHECK(n_lines == 2);

  // Analyze produces the dump and the 2x2 report; rerunning is idempotent.
  box.file("src.txt", "7 8 9 5 6\n5 6 7 8\n");
  box.file("tgt.txt", "7 8 9 5 6\n5 6 7 8\n");
  REQUIRE(run_cli(box, "analyze --checkpoint run/checkpoints/best.ckpt --src src.txt "
                       "--tgt tgt.txt --out-dir ana") == 0);
  std::string report = box.slurp("ana/entropy_report.txt");
  CHECK(report.find("enc-cnn") != std::string::npos);
  CHECK(report.find("enc-san") != std::string::npos);
  CHECK(report.find("--") == std::string::npos);  // all four cells present
  std::string dump1 = box.slurp("ana/alignments.txt");
  REQUIRE(run_cli(box, "analyze --checkpoint run/checkpoints/best.ckpt --src src.txt "
                       "--tgt tgt.txt --out-dir ana") == 0);
  CHECK(box.slurp("ana/alignments.txt") == dump1);
  CHECK(!dump1.empty());
}

TEST_CASE("cli: empty input decodes to empty output with exit 0") {
  Sandbox box;
  REQUIRE(run_cli(box, kTrainArgs) == 0);
  box.file("empty.txt", "");
  CHECK(run_cli(box, "decode --checkpoint run/checkpoints/best.ckpt --input empty.txt "
                     "--output out.txt") == 0);
  CHECK(box.slurp("out.txt").empty());
}

TEST_CASE("cli: config errors exit with code 2 and name the key") {
  Sandbox box;
  box.file("bad.cfg", "[train]\nlearning_rate_typo = 1\n");
  CHECK(run_cli(box, "train --preset tiny --config bad.cfg --run-dir run2") == 2);
  std::string err = box.slurp("cli_err.log");
  CHECK(err.find("learning_rate_typo") != std::string::npos);

  CHECK(run_cli(box, "train --preset nosuch --run-dir run3") == 2);
  CHECK(run_cli(box, "decode --beam 1") == 2);           // missing required options
  CHECK(run_cli(box, "train --ablation M42 --run-dir run4") == 2);
  CHECK(run_cli(box, "count-params --set model.dd=3") == 2);
  // No partial run directory appears on config errors.
  CHECK(!fs::exists(box.dir / "run2"));
  CHECK(!fs::exists(box.dir / "run3"));
  CHECK(!fs::exists(box.dir / "run4"));
}

TEST_CASE("cli: runtime failures exit with code 1") {
  Sandbox box;
  box.file("in.txt", "7 8\n");
  CHECK(run_cli(box, "decode --checkpoint missing.ckpt --input in.txt") == 1);
  box.file("hyp.txt", "a b\n");
  box.file("ref2.txt", "a b\nc d\n");
  CHECK(run_cli(box, "evaluate --hyp hyp.txt --ref ref2.txt --metric bleu") == 1);
}

TEST_CASE("cli: count-params and ablate") {
  Sandbox box;
  REQUIRE(run_cli(box, "count-params --preset iwslt", "count.txt") == 0);
  CHECK(box.slurp("count.txt") == "11570455\n");

  REQUIRE(run_cli(box, "count-params --preset tiny --ablation M1", "m1.txt") == 0);
  REQUIRE(run_cli(box, "count-params --preset tiny --ablation M9", "m9.txt") == 0);
  CHECK(std::stoll(box.slurp("m1.txt")) < std::stoll(box.slurp("m9.txt")));

  REQUIRE(run_cli(box, "ablate --preset tiny", "grid.txt") == 0);
  std::string grid = box.slurp("grid.txt");
  for (const char* id : {"M1", "M5", "M9"}) CHECK(grid.find(id) != std::string::npos);
  // M9 row has all four switches on.
  std::istringstream lines(grid);
  std::string line;
  bool saw_m9 = false;
  while (std::getline(lines, line)) {
    if (line.rfind("M9", 0) == 0) {
      saw_m9 = true;
      CHECK(std::count(line.begin(), line.end(), 'x') == 4);
    }
    if (line.rfind("M1", 0) == 0 && line[2] == ' ')
      CHECK(std::count(line.begin(), line.end(), 'x') == 2);
  }
  CHECK(saw_m9);
}

TEST_CASE("cli: resume produces a longer trajectory") {
  Sandbox box;
  REQUIRE(run_cli(box, kTrainArgs) == 0);
  std::string resumed =
      "train --preset tiny --task copy --run-dir run_resumed "
      "--resume run/checkpoints/last.ckpt "
      "--set train.max_steps=180 --set data.synth_pairs=300 --set data.vocab_k=10 "
      "--set data.len_hi=8 --set data.synth_valid_pairs=40 --set model.max_len=32 "
      "--set train.valid_every_steps=40 --set decode.max_len=20 "
      "--set train.max_epochs=100000";
  REQUIRE(run_cli(box, resumed, "resumed.txt") == 0);
  CHECK(box.slurp("resumed.txt").find("trained 180 steps") != std::string::npos);
}
