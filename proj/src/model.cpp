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

#include "ffwd/model.hpp"

#include <fstream>
#include <sstream>

#include "ffwd/errors.hpp"

namespace ffwd {
namespace {

void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const std::string& name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ValidationError(name + ": expected (" + std::to_string(rows) + ", " +
                          std::to_string(cols) + "), got " + m.shape_string());
  }
}

void require_length(const std::vector<float>& v, std::size_t n, const std::string& name) {
  if (v.size() != n) {
    throw ValidationError(name + ": expected length " + std::to_string(n) + ", got " +
                          std::to_string(v.size()));
  }
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ValidationError("ModelConfig: " + what); };
  if (n_layers < 1) fail("n_layers must be >= 1");
  if (n_heads < 1) fail("n_heads must be >= 1");
  if (d_model < 1 || d_model % n_heads != 0) fail("n_heads must divide d_model");
  if (d_head() % 2 != 0) fail("d_head must be even for rotary embeddings");
  if (d_ffn <= d_model) fail("d_ffn must exceed d_model");
  if (vocab_size < 1) fail("vocab_size must be >= 1");
  if (block_size < 1) fail("block_size must be >= 1");
  if (max_context < 1) fail("max_context must be >= 1");
  if (!(rope_base > 0.0f)) fail("rope_base must be positive");
  if (!(norm_eps > 0.0f)) fail("norm_eps must be positive");
}

nlohmann::json config_to_json(const ModelConfig& cfg) {
  return {
      {"n_layers", cfg.n_layers},     {"d_model", cfg.d_model},
      {"d_ffn", cfg.d_ffn},           {"n_heads", cfg.n_heads},
      {"vocab_size", cfg.vocab_size}, {"block_size", cfg.block_size},
      {"max_context", cfg.max_context}, {"rope_base", cfg.rope_base},
      {"norm_eps", cfg.norm_eps},     {"tie_embeddings", cfg.tie_embeddings},
  };
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  try {
    cfg.n_layers = j.at("n_layers").get<std::size_t>();
    cfg.d_model = j.at("d_model").get<std::size_t>();
    cfg.d_ffn = j.at("d_ffn").get<std::size_t>();
    cfg.n_heads = j.at("n_heads").get<std::size_t>();
    cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
    cfg.block_size = j.value("block_size", std::size_t{128});
    cfg.max_context = j.at("max_context").get<std::size_t>();
    cfg.rope_base = j.value("rope_base", 10000.0f);
    cfg.norm_eps = j.value("norm_eps", 1e-5f);
    cfg.tie_embeddings = j.value("tie_embeddings", false);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("ModelConfig JSON: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config " + path + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const ModelConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config " + path);
  out << config_to_json(cfg).dump(2) << "\n";
}

void ModelWeights::validate() const {
  config.validate();
  const std::size_t d = config.d_model, f = config.d_ffn;
  require_shape(embedding, config.vocab_size, d, "embedding");
  if (layers.size() != config.n_layers) {
    throw ValidationError("ModelWeights: " + std::to_string(layers.size()) + " layers, config says " +
                          std::to_string(config.n_layers));
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& w = layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    require_shape(w.wq, d, d, p + "wq");
    require_shape(w.wk, d, d, p + "wk");
    require_shape(w.wv, d, d, p + "wv");
    require_shape(w.wo, d, d, p + "wo");
    require_shape(w.w_gate, d, f, p + "w_gate");
    require_shape(w.w_up, d, f, p + "w_up");
    require_shape(w.w_down, f, d, p + "w_down");
    require_length(w.attn_norm, d, p + "attn_norm");
    require_length(w.ffn_norm, d, p + "ffn_norm");
  }
  require_length(final_norm, d, "final_norm");
  if (config.tie_embeddings) {
    if (lm_head) throw ValidationError("ModelWeights: tied embeddings but lm_head present");
  } else {
    if (!lm_head) throw ValidationError("ModelWeights: untied model without lm_head");
    require_shape(*lm_head, d, config.vocab_size, "lm_head");
  }
}

ModelWeights zero_weights(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model, f = cfg.d_ffn;
  ModelWeights w;
  w.config = cfg;
  w.embedding = Matrix(cfg.vocab_size, d);
  w.layers.resize(cfg.n_layers);
  for (auto& layer : w.layers) {
    layer.wq = layer.wk = layer.wv = layer.wo = Matrix(d, d);
    layer.w_gate = layer.w_up = Matrix(d, f);
    layer.w_down = Matrix(f, d);
    layer.attn_norm.assign(d, 1.0f);
    layer.ffn_norm.assign(d, 1.0f);
  }
  w.final_norm.assign(d, 1.0f);
  if (!cfg.tie_embeddings) w.lm_head = Matrix(d, cfg.vocab_size);
  return w;
}

}  // namespace ffwd
