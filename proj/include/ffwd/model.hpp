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

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ffwd/tensor.hpp"

namespace ffwd {

using Token = std::int32_t;

struct ModelConfig {
  std::size_t n_layers = 1;
  std::size_t d_model = 16;
  std::size_t d_ffn = 64;
  std::size_t n_heads = 1;
  std::size_t vocab_size = 32;
  std::size_t block_size = 128;
  std::size_t max_context = 1024;
  float rope_base = 10000.0f;
  float norm_eps = 1e-5f;
  bool tie_embeddings = false;

  std::size_t d_head() const { return d_model / n_heads; }
  std::size_t blocks_for(std::size_t tokens) const {
    return (tokens + block_size - 1) / block_size;
  }

  // Throws ValidationError naming the first violated constraint.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const nlohmann::json& j);
ModelConfig load_config(const std::string& path);
void save_config(const ModelConfig& cfg, const std::string& path);

struct LayerWeights {
  Matrix wq, wk, wv, wo;       // d_model x d_model, applied as x * W
  Matrix w_gate, w_up;         // d_model x d_ffn
  Matrix w_down;               // d_ffn x d_model
  std::vector<float> attn_norm;
  std::vector<float> ffn_norm;

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

struct ModelWeights {
  ModelConfig config;
  Matrix embedding;             // vocab_size x d_model
  std::vector<LayerWeights> layers;
  std::vector<float> final_norm;
  std::optional<Matrix> lm_head;  // d_model x vocab_size; absent when tied

  void validate() const;

  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

// All-zero weights with unit norm gains.
ModelWeights zero_weights(const ModelConfig& cfg);

}  // namespace ffwd
