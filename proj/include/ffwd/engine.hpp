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

// Decoder-only transformer: pre-norm residual blocks with RMS normalization,
// rotary causal multi-head attention and a SiLU-gated FFN. Supports a
// full-sequence dense reference pass and block-wise prefill over a KV cache
// where each (block, layer) FFN runs either densely or on a top-K neuron
// subset chosen by the selected expert source.

#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "ffwd/compensator.hpp"
#include "ffwd/cost_model.hpp"
#include "ffwd/model.hpp"
#include "ffwd/plan.hpp"
#include "ffwd/predictor.hpp"
#include "ffwd/sparse_ffn.hpp"
#include "ffwd/tensor.hpp"

namespace ffwd {

// Rotated keys and values, per layer and head, appended block by block.
class KVCache {
 public:
  KVCache() = default;
  explicit KVCache(const ModelConfig& cfg);

  std::size_t length() const { return length_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t n_layers() const { return keys_.size(); }

  const Matrix& keys(std::size_t layer, std::size_t head) const { return keys_[layer][head]; }
  const Matrix& values(std::size_t layer, std::size_t head) const { return values_[layer][head]; }

  // Appends per-head keys/values (tokens x d_head each) for one layer. All
  // layers must be appended before length() advances.
  void append(std::size_t layer, std::span<const Matrix> keys, std::span<const Matrix> values);

 private:
  std::size_t length_ = 0;
  std::size_t capacity_ = 0;
  std::vector<std::size_t> layer_lengths_;
  std::vector<std::vector<Matrix>> keys_;
  std::vector<std::vector<Matrix>> values_;
};

// Attention probabilities per layer and head, tokens x tokens, lower
// triangular.
struct AttentionTrace {
  std::vector<std::vector<Matrix>> heads;

  std::size_t n_layers() const { return heads.size(); }
  std::size_t n_heads() const { return heads.empty() ? 0 : heads.front().size(); }
};

// Head-averaged attention mass received by keys outside the sink block, summed
// over all queries, one value per layer.
std::vector<double> attention_mass_from_trace(const AttentionTrace& trace, std::size_t block_size,
                                              std::size_t sink_block = 0);

struct AuxNetworks {
  std::span<const PredictorParams> predictors;
  std::span<const CompensatorParams> compensators;
};

struct PrefillOptions {
  PrefillMode mode = PrefillMode::Dense;
  // When set, sparse cells add the compensator output.
  bool compensate = true;
  // Keep the mask used by every sparse (block, layer) cell.
  bool record_masks = false;
  // Also compute the per-block oracle mask for every sparse cell and report
  // recall against it. The diagnostic matmuls are not charged to the report
  // but are visible to any FlopCounter the caller holds.
  bool record_oracle_recall = false;
  AttentionTrace* trace = nullptr;
  // Receives the normalized FFN input of every block, [layer][block].
  LayerBlocks* ffn_inputs = nullptr;
};

struct MaskRecord {
  std::size_t layer = 0;
  std::size_t block = 0;
  ExpertMask mask;
  std::optional<double> oracle_recall;
};

struct PrefillResult {
  Matrix hidden;  // residual stream after the last layer, tokens x d_model
  KVCache cache;
  std::vector<float> last_logits;
  FlopsReport flops;
  std::vector<MaskRecord> masks;

  // Mean oracle recall per layer over recorded sparse cells; NaN where none.
  std::vector<double> layer_recall(std::size_t n_layers) const;
};

class Engine {
 public:
  explicit Engine(std::shared_ptr<const ModelWeights> weights);
  explicit Engine(ModelWeights weights);

  const ModelConfig& config() const { return weights_->config; }
  const ModelWeights& weights() const { return *weights_; }

  // Attention sublayer on normalized input `x` for tokens at positions
  // [cache.length(), cache.length() + x.rows()). Appends this layer's keys
  // and values to the cache.
  Matrix attention_layer(const Matrix& x, KVCache& cache, std::size_t layer,
                         AttentionTrace* trace = nullptr) const;

  Matrix dense_ffn(const Matrix& x, std::size_t layer) const;

  // Whole prompt as a single block, all FFNs dense.
  PrefillResult prefill_dense(std::span<const Token> tokens) const;

  PrefillResult prefill_blockwise(std::span<const Token> tokens, const SparsityPlan& plan,
                                  const AuxNetworks& aux, const PrefillOptions& options) const;

  // Dense prefill with tracing; per-layer head-averaged non-sink mass for
  // this one sequence.
  std::vector<double> capture_attention_mass(std::span<const Token> tokens,
                                             std::size_t sink_block = 0) const;

  // One generation step on an existing cache. Predicted and oracle modes
  // treat the token as a one-token block under `plan`.
  std::vector<float> decode_step(Token token, KVCache& cache, const SparsityPlan& plan,
                                 const AuxNetworks& aux, PrefillMode mode) const;

 private:
  struct BlockContext;

  void validate_tokens(std::span<const Token> tokens, std::size_t cached) const;
  Matrix embed(std::span<const Token> tokens) const;
  Matrix attention_impl(const Matrix& x, KVCache& cache, std::size_t layer, AttentionTrace* trace,
                        FlopsReport* report) const;
  Matrix ffn_cell(const Matrix& x, std::size_t layer, BlockContext& ctx) const;
  Matrix run_block(std::span<const Token> tokens, KVCache& cache, BlockContext& ctx) const;
  std::vector<float> logits_for(std::span<const float> hidden_row, FlopsReport* report) const;

  std::shared_ptr<const ModelWeights> weights_;
};

}  // namespace ffwd
