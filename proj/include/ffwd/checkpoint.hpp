/* Copyright 2026 The ffwd Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Self-describing binary checkpoint format.
//
// Layout, all integers little-endian:
//
//   "FFWD"                      4-byte magic
//   u32 version                 currently 1
//   u64 config_len, bytes       ModelConfig as UTF-8 JSON
//   u32 tensor_count
//   tensor_count x {
//     u32 name_len, bytes       tensor name
//     u32 dtype                 0 = f32 (only value in version 1)
//     u32 ndim, u64 dims[ndim]
//     u64 offset, u64 nbytes    relative to the start of the payload
//   }
//   payload                     raw little-endian tensor data
//
// Tensors are addressed by name; directory order carries no meaning.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ffwd/compensator.hpp"
#include "ffwd/model.hpp"
#include "ffwd/predictor.hpp"

namespace ffwd {

inline constexpr char kCheckpointMagic[4] = {'F', 'F', 'W', 'D'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kDtypeF32 = 0;

struct TensorEntry {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<float> data;

  friend bool operator==(const TensorEntry&, const TensorEntry&) = default;
};

class TensorArchive {
 public:
  nlohmann::json config;

  void put(const std::string& name, const Matrix& m);
  void put(const std::string& name, std::span<const float> v);
  void put(TensorEntry entry);

  bool contains(const std::string& name) const;
  const TensorEntry& get(const std::string& name) const;
  // 2-D tensor; a 1-D tensor of length n reads as 1 x n.
  Matrix matrix(const std::string& name) const;
  std::vector<float> vector(const std::string& name) const;

  const std::vector<TensorEntry>& entries() const { return entries_; }
  std::vector<TensorEntry>& mutable_entries() { return entries_; }

 private:
  std::vector<TensorEntry> entries_;
};

std::vector<std::uint8_t> encode_archive(const TensorArchive& archive);
// Throws ValidationError on bad magic, unknown version or dtype, truncation,
// out-of-bounds or overlapping payload ranges, and duplicate names.
TensorArchive decode_archive(std::span<const std::uint8_t> bytes);

void write_archive(const TensorArchive& archive, const std::string& path);
TensorArchive read_archive(const std::string& path);

struct EngineCheckpoint {
  ModelConfig config;
  std::optional<ModelWeights> model;
  std::vector<PredictorParams> predictors;
  std::vector<CompensatorParams> compensators;

  friend bool operator==(const EngineCheckpoint&, const EngineCheckpoint&) = default;
};

TensorArchive to_archive(const EngineCheckpoint& ckpt);
EngineCheckpoint from_archive(const TensorArchive& archive);

void write_checkpoint(const EngineCheckpoint& ckpt, const std::string& path);
EngineCheckpoint read_checkpoint(const std::string& path);

// Loads model weights; when `config_path` is given and disagrees with the
// config stored in the checkpoint, the checkpoint wins and a warning is
// printed to stderr.
ModelWeights load_model(const std::string& checkpoint_path,
                        const std::optional<std::string>& config_path = std::nullopt);

}  // namespace ffwd
