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

// Gated FFN evaluation: dense reference path, top-K neuron masks, weight
// sub-selection and the sparsified forward pass, plus the two expert
// selection baselines (per-block oracle and first-block static).

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ffwd/model.hpp"
#include "ffwd/tensor.hpp"

namespace ffwd {

// silu(x * W_gate) (.) (x * W_up), one column per FFN neuron.
Matrix gated_activations(const Matrix& x, const Matrix& w_gate, const Matrix& w_up);

struct DenseFfnOutput {
  Matrix activations;  // tokens x d_ffn
  Matrix output;       // tokens x d_model
};

DenseFfnOutput dense_ffn_with_activations(const Matrix& x, const LayerWeights& w);
Matrix dense_ffn(const Matrix& x, const LayerWeights& w);

class ExpertMask {
 public:
  ExpertMask() = default;
  ExpertMask(IndexSet neurons, std::size_t layer = 0, std::size_t block = 0);

  static ExpertMask full(std::size_t d_ffn, std::size_t layer = 0, std::size_t block = 0);

  std::size_t layer() const { return layer_; }
  std::size_t block() const { return block_; }
  std::size_t k() const { return neurons_.size(); }
  std::size_t width() const { return neurons_.bound(); }
  const IndexSet& neurons() const { return neurons_; }
  // 0/1 per neuron.
  std::vector<std::uint8_t> bits() const;

  // Same selection, ignoring the layer/block provenance.
  bool same_selection(const ExpertMask& other) const { return neurons_ == other.neurons_; }

 private:
  IndexSet neurons_;
  std::size_t layer_ = 0;
  std::size_t block_ = 0;
};

ExpertMask build_mask(std::span<const float> scores, std::size_t k, std::size_t layer = 0,
                      std::size_t block = 0);

// Fraction of `reference` neurons also selected by `candidate`.
double mask_recall(const ExpertMask& candidate, const ExpertMask& reference);
double mask_jaccard(const ExpertMask& a, const ExpertMask& b);

struct SubWeights {
  Matrix w_gate;  // d_model x K, column i = neuron neurons[i]
  Matrix w_up;    // d_model x K
  Matrix w_down;  // K x d_model, row i = neuron neurons[i]
  IndexSet neurons;
};

SubWeights select_subweights(const LayerWeights& w, const ExpertMask& mask);
SubWeights select_subweights(const ModelWeights& weights, std::size_t layer,
                             const ExpertMask& mask);

Matrix sparse_ffn_forward(const Matrix& x, const SubWeights& sub);

// Top-k neurons by L2 norm of the dense gated activation column over the
// block's tokens.
ExpertMask oracle_experts(const Matrix& x, const ModelWeights& weights, std::size_t layer,
                          std::size_t k, std::size_t block = 0);
ExpertMask oracle_mask_from_activations(const Matrix& activations, std::size_t k,
                                        std::size_t layer = 0, std::size_t block = 0);

// Reuses the mask chosen on the first block for every later block.
class FirstBlockStaticExperts {
 public:
  FirstBlockStaticExperts() = default;
  explicit FirstBlockStaticExperts(ExpertMask first_block_mask);

  bool ready() const { return mask_.has_value(); }
  // Throws std::logic_error before the first block's mask has been recorded.
  const ExpertMask& mask_for_block(std::size_t block) const;

 private:
  std::optional<ExpertMask> mask_;
};

}  // namespace ffwd
