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

#include "dps/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace dps {

namespace {

std::string escape_token(const std::string& t) {
  std::string out;
  for (char c : t) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case ' ': out += "\\s"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      default: out += c;
    }
  }
  return out;
}

std::string unescape_token(const std::string& t) {
  std::string out;
  for (size_t i = 0; i < t.size(); ++i) {
    if (t[i] == '\\' && i + 1 < t.size()) {
      char n = t[++i];
      out += n == 's' ? ' ' : n == 't' ? '\t' : n == 'n' ? '\n' : n;
    } else {
      out += t[i];
    }
  }
  return out;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

void validate_row(std::span<const double> row, int64_t record_id, int64_t row_index) {
  double sum = 0.0;
  for (double v : row) {
    if (v < 0.0)
      throw DataError("alignment record " + std::to_string(record_id) + ": negative weight in row " +
                      std::to_string(row_index));
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-4)
    throw DataError("alignment record " + std::to_string(record_id) + ": row " +
                    std::to_string(row_index) + " sums to " + std::to_string(sum));
}

}  // namespace

double entropy_of_row(std::span<const double> row) {
  double h = 0.0;
  for (double x : row)
    if (x > 0.0) h -= x * std::log(x);
  return h;
}

void fill_entropies(AttentionRecord& record) {
  for (int f = 0; f < 4; ++f) {
    auto& mat = record.flows[static_cast<size_t>(f)];
    auto& ent = record.entropies[static_cast<size_t>(f)];
    ent.clear();
    if (!mat) continue;
    for (int64_t r = 0; r < mat->rows; ++r) {
      std::span<const double> row(mat->values.data() + r * mat->cols,
                                  static_cast<size_t>(mat->cols));
      validate_row(row, record.id, r);
      ent.push_back(entropy_of_row(row));
    }
  }
}

std::array<std::optional<double>, 4> attention_entropy(const AttentionRecord& record) {
  std::array<std::optional<double>, 4> out;
  for (int f = 0; f < 4; ++f) {
    const auto& mat = record.flows[static_cast<size_t>(f)];
    if (!mat) continue;
    double sum = 0.0;
    for (int64_t r = 0; r < mat->rows; ++r) {
      std::span<const double> row(mat->values.data() + r * mat->cols,
                                  static_cast<size_t>(mat->cols));
      validate_row(row, record.id, r);
      sum += entropy_of_row(row);
    }
    out[static_cast<size_t>(f)] = mat->rows == 0 ? 0.0 : sum / static_cast<double>(mat->rows);
  }
  return out;
}

void write_alignment_dump(const std::vector<AttentionRecord>& records, std::ostream& os) {
  os << "alignments v1\n";
  char buf[64];
  for (const AttentionRecord& rec : records) {
    os << "sentence id=" << rec.id << " m=" << rec.m << " n=" << rec.n << "\n";
    os << "src:";
    for (const auto& t : rec.src_tokens) os << ' ' << escape_token(t);
    os << "\ntgt:";
    for (const auto& t : rec.tgt_tokens) os << ' ' << escape_token(t);
    os << "\n";
    for (int f = 0; f < 4; ++f) {
      const auto& mat = rec.flows[static_cast<size_t>(f)];
      if (!mat) continue;
      os << "flow " << flow_name(static_cast<Flow>(f)) << "\n";
      for (int64_t r = 0; r < mat->rows; ++r) {
        for (int64_t c = 0; c < mat->cols; ++c) {
          std::snprintf(buf, sizeof buf, "%.6f", mat->at(r, c));
          os << (c ? "\t" : "") << buf;
        }
        os << "\n";
      }
      os << "entropy";
      for (double h : rec.entropies[static_cast<size_t>(f)]) {
        std::snprintf(buf, sizeof buf, "%.17g", h);
        os << ' ' << buf;
      }
      os << "\n";
    }
    os << "end\n";
  }
}

std::vector<AttentionRecord> parse_alignment_dump(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "alignments v1")
    throw DataError("alignment dump: missing 'alignments v1' header");
  std::vector<AttentionRecord> records;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line.rfind("sentence ", 0) != 0)
      throw DataError("alignment dump: expected sentence header, got '" + line + "'");
    AttentionRecord rec;
    if (std::sscanf(line.c_str(), "sentence id=%ld m=%ld n=%ld", &rec.id, &rec.m, &rec.n) != 3)
      throw DataError("alignment dump: bad sentence header '" + line + "'");
    if (!std::getline(is, line) || line.rfind("src:", 0) != 0)
      throw DataError("alignment dump: missing src line");
    for (const std::string& t : split_ws(line.substr(4))) rec.src_tokens.push_back(unescape_token(t));
    if (!std::getline(is, line) || line.rfind("tgt:", 0) != 0)
      throw DataError("alignment dump: missing tgt line");
    for (const std::string& t : split_ws(line.substr(4))) rec.tgt_tokens.push_back(unescape_token(t));
    while (std::getline(is, line) && line != "end") {
      if (line.rfind("flow ", 0) != 0)
        throw DataError("alignment dump: expected flow or end, got '" + line + "'");
      Flow flow = flow_from_name(line.substr(5));
      AlignmentMatrix mat;
      mat.rows = rec.n;
      mat.cols = rec.m;
      mat.values.reserve(static_cast<size_t>(rec.n * rec.m));
      for (int64_t r = 0; r < rec.n; ++r) {
        if (!std::getline(is, line)) throw DataError("alignment dump: truncated matrix");
        std::istringstream row(line);
        double v;
        int64_t c = 0;
        while (row >> v) {
          mat.values.push_back(v);
          ++c;
        }
        if (c != rec.m)
          throw DataError("alignment dump: row has " + std::to_string(c) + " values, expected " +
                          std::to_string(rec.m));
      }
      if (!std::getline(is, line) || line.rfind("entropy", 0) != 0)
        throw DataError("alignment dump: missing entropy line");
      std::istringstream ent(line.substr(7));
      std::vector<double> hs;
      double h;
      while (ent >> h) hs.push_back(h);
      if (static_cast<int64_t>(hs.size()) != rec.n)
        throw DataError("alignment dump: entropy count mismatch");
      rec.flows[static_cast<size_t>(flow)] = std::move(mat);
      rec.entropies[static_cast<size_t>(flow)] = std::move(hs);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

EntropyReport entropy_report(const std::vector<AttentionRecord>& records) {
  if (records.empty()) throw DataError("entropy_report: no records");
  EntropyReport report;
  report.sentences = static_cast<int64_t>(records.size());
  // flow -> (encoder path, decoder path): cc=(0,0) ca=(1,0) ac=(0,1) aa=(1,1)
  const int enc_of[4] = {0, 1, 0, 1};
  const int dec_of[4] = {0, 0, 1, 1};
  std::array<double, 4> sum{0, 0, 0, 0};
  std::array<int64_t, 4> cnt{0, 0, 0, 0};
  for (const AttentionRecord& rec : records) {
    for (int f = 0; f < 4; ++f) {
      const auto& ent = rec.entropies[static_cast<size_t>(f)];
      if (ent.empty()) continue;
      double mean = 0.0;
      for (double h : ent) mean += h;
      mean /= static_cast<double>(ent.size());
      sum[static_cast<size_t>(f)] += mean;
      ++cnt[static_cast<size_t>(f)];
    }
  }
  for (int f = 0; f < 4; ++f)
    if (cnt[static_cast<size_t>(f)] > 0)
      report.cells[static_cast<size_t>(enc_of[f])][static_cast<size_t>(dec_of[f])] =
          sum[static_cast<size_t>(f)] / static_cast<double>(cnt[static_cast<size_t>(f)]);
  return report;
}

std::string EntropyReport::to_string() const {
  auto cell = [&](int e, int d) {
    const auto& c = cells[static_cast<size_t>(e)][static_cast<size_t>(d)];
    if (!c) return std::string("     --");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%7.4f", *c);
    return std::string(buf);
  };
  std::ostringstream os;
  os << "mean alignment entropy (nats) over " << sentences
     << " sentences; rows: encoder path, cols: decoder path\n";
  os << "          dec-cnn  dec-san\n";
  os << "enc-cnn   " << cell(0, 0) << "  " << cell(0, 1) << "\n";
  os << "enc-san   " << cell(1, 0) << "  " << cell(1, 1) << "\n";
  return os.str();
}

}  // namespace dps
