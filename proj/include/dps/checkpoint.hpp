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
// Checkpoint container. Layout (all integers and floats little endian):
//
//   8 bytes   magic "DPSCKPT\n"
//   u32       format version (1)
//   u64       config text length, then that many bytes (key=value lines)
//   u64       parameter count; per parameter:
//               u32 name length, name bytes,
//               u32 rank, i64 dims[rank],
//               f32 data[numel]
//   u8        1 if optimizer/training state follows, else 0
//   f64 lr, f64 momentum, f64 best_valid, i64 stall_rounds,
//   i64 epoch, i64 step_in_epoch, i64 global_step, u64 seed
//   u64       velocity count; per velocity: u32 name length, name,
//             u64 element count, f32 data[]
//
// Parameter payloads are 32-bit floats, so float-precision models round-trip
// bit exactly; double-precision models are truncated on save (documented).

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "dps/config.hpp"
#include "dps/model.hpp"

namespace dps {

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

constexpr char kCheckpointMagic[8] = {'D', 'P', 'S', 'C', 'K', 'P', 'T', '\n'};
constexpr uint32_t kCheckpointVersion = 1;

template <typename T>
struct TrainPersist {
  double lr = 0.25;
  double momentum = 0.99;
  double best_valid = std::numeric_limits<double>::infinity();
  int64_t stall_rounds = 0;
  int64_t epoch = 0;
  int64_t step_in_epoch = 0;
  int64_t global_step = 0;
  uint64_t seed = 1;
  std::vector<std::pair<std::string, std::vector<T>>> velocities;
};

namespace detail {

template <typename V>
void write_pod(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& is) {
  V v;
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw VersionError("checkpoint: unexpected end of file");
  return v;
}

inline void write_str(std::ostream& os, const std::string& s) {
  write_pod<uint32_t>(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_str(std::istream& is) {
  uint32_t len = read_pod<uint32_t>(is);
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw VersionError("checkpoint: unexpected end of file");
  return s;
}

template <typename T>
void write_f32_array(std::ostream& os, std::span<const T> data) {
  for (T v : data) write_pod<float>(os, static_cast<float>(v));
}

template <typename T>
std::vector<T> read_f32_array(std::istream& is, uint64_t count) {
  std::vector<T> out(count);
  for (uint64_t i = 0; i < count; ++i) out[i] = static_cast<T>(read_pod<float>(is));
  return out;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, DoublePathModel<T>& model,
                     const TrainPersist<T>* train = nullptr) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, 8);
  detail::write_pod<uint32_t>(os, kCheckpointVersion);
  std::string cfg_text = model.config().to_kv();
  detail::write_pod<uint64_t>(os, cfg_text.size());
  os.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));

  std::vector<std::pair<std::string, const Tensor<T>*>> params;
  model.visit_params([&](const std::string& name, Tensor<T>& t) {
    params.emplace_back(name, &t);
  });
  detail::write_pod<uint64_t>(os, params.size());
  for (auto& [name, tensor] : params) {
    detail::write_str(os, name);
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(tensor->rank()));
    for (int64_t d : tensor->shape()) detail::write_pod<int64_t>(os, d);
    detail::write_f32_array<T>(os, tensor->data());
  }
  detail::write_pod<uint8_t>(os, train ? 1 : 0);
  if (train) {
    detail::write_pod<double>(os, train->lr);
    detail::write_pod<double>(os, train->momentum);
    detail::write_pod<double>(os, train->best_valid);
    detail::write_pod<int64_t>(os, train->stall_rounds);
    detail::write_pod<int64_t>(os, train->epoch);
    detail::write_pod<int64_t>(os, train->step_in_epoch);
    detail::write_pod<int64_t>(os, train->global_step);
    detail::write_pod<uint64_t>(os, train->seed);
    detail::write_pod<uint64_t>(os, train->velocities.size());
    for (auto& [name, vel] : train->velocities) {
      detail::write_str(os, name);
      detail::write_pod<uint64_t>(os, vel.size());
      detail::write_f32_array<T>(os, std::span<const T>(vel));
    }
  }
  if (!os) throw IoError("failed writing checkpoint: " + path);
}

template <typename T>
struct LoadedCheckpoint {
  DoublePathModel<T> model;
  std::optional<TrainPersist<T>> train;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw VersionError("not a checkpoint file: " + path);
  uint32_t version = detail::read_pod<uint32_t>(is);
  if (version != kCheckpointVersion)
    throw VersionError("unsupported checkpoint version " + std::to_string(version));
  uint64_t cfg_len = detail::read_pod<uint64_t>(is);
  std::string cfg_text(cfg_len, '\0');
  is.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
  if (!is) throw VersionError("checkpoint: truncated config");
  ModelConfig cfg = ModelConfig::from_kv(cfg_text);

  LoadedCheckpoint<T> out{DoublePathModel<T>(cfg, /*seed=*/0), std::nullopt};
  uint64_t n_params = detail::read_pod<uint64_t>(is);
  std::vector<ParamSpec> specs = enumerate_param_shapes(cfg);
  if (n_params != specs.size())
    throw VersionError("checkpoint parameter count " + std::to_string(n_params) +
                       " does not match config (" + std::to_string(specs.size()) + ")");
  for (uint64_t i = 0; i < n_params; ++i) {
    std::string name = detail::read_str(is);
    uint32_t rank = detail::read_pod<uint32_t>(is);
    Shape shape(rank);
    for (uint32_t r = 0; r < rank; ++r) shape[r] = detail::read_pod<int64_t>(is);
    std::vector<T> data = detail::read_f32_array<T>(is, static_cast<uint64_t>(numel(shape)));
    Tensor<T>* slot = out.model.param(name);
    if (!slot) throw VersionError("checkpoint parameter '" + name + "' not in model");
    if (slot->shape() != shape)
      throw VersionError("checkpoint parameter '" + name + "' shape " + shape_str(shape) +
                         " does not match model " + shape_str(slot->shape()));
    *slot = Tensor<T>(shape, std::move(data), /*requires_grad=*/true);
  }
  uint8_t has_train = detail::read_pod<uint8_t>(is);
  if (has_train) {
    TrainPersist<T> tp;
    tp.lr = detail::read_pod<double>(is);
    tp.momentum = detail::read_pod<double>(is);
    tp.best_valid = detail::read_pod<double>(is);
    tp.stall_rounds = detail::read_pod<int64_t>(is);
    tp.epoch = detail::read_pod<int64_t>(is);
    tp.step_in_epoch = detail::read_pod<int64_t>(is);
    tp.global_step = detail::read_pod<int64_t>(is);
    tp.seed = detail::read_pod<uint64_t>(is);
    uint64_t n_vel = detail::read_pod<uint64_t>(is);
    for (uint64_t i = 0; i < n_vel; ++i) {
      std::string name = detail::read_str(is);
      uint64_t count = detail::read_pod<uint64_t>(is);
      tp.velocities.emplace_back(name, detail::read_f32_array<T>(is, count));
    }
    out.train = std::move(tp);
  }
  return out;
}

}  // namespace dps
