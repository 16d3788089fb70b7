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

#include "ffwd/sparse_ffn.hpp"

#include <stdexcept>

#include "ffwd/errors.hpp"

namespace ffwd {

Matrix gated_activations(const Matrix& x, const Matrix& w_gate, const Matrix& w_up) {
  return hadamard(silu(matmul(x, w_gate)), matmul(x, w_up));
}

DenseFfnOutput dense_ffn_with_activations(const Matrix& x, const LayerWeights& w) {
  DenseFfnOutput out;
  out.activations = gated_activations(x, w.w_gate, w.w_up);
  out.output = matmul(out.activations, w.w_down);
  return out;
}

Matrix dense_ffn(const Matrix& x, const LayerWeights& w) {
  return dense_ffn_with_activations(x, w).output;
}

ExpertMask::ExpertMask(IndexSet neurons, std::size_t layer, std::size_t block)
    : neurons_(std::move(neurons)), layer_(layer), block_(block) {
  if (neurons_.empty()) throw ValidationError("ExpertMask: at least one neuron must be selected");
}

ExpertMask ExpertMask::full(std::size_t d_ffn, std::size_t layer, std::size_t block) {
  return ExpertMask(IndexSet::all(d_ffn), layer, block);
}

std::vector<std::uint8_t> ExpertMask::bits() const {
  std::vector<std::uint8_t> out(width(), 0);
  for (std::size_t j : neurons_) out[j] = 1;
  return out;
}

ExpertMask build_mask(std::span<const float> scores, std::size_t k, std::size_t layer,
                      std::size_t block) {
  return ExpertMask(topk_indices(scores, k), layer, block);
}

double mask_recall(const ExpertMask& candidate, const ExpertMask& reference) {
  std::size_t hit = 0;
  for (std::size_t j : reference.neurons())
    if (candidate.neurons().contains(j)) ++hit;
  return static_cast<double>(hit) / static_cast<double>(reference.k());
}

double mask_jaccard(const ExpertMask& a, const ExpertMask& b) {
  std::size_t inter = 0;
  for (std::size_t j : a.neurons())
    if (b.neurons().contains(j)) ++inter;
  const std::size_t uni = a.k() + b.k() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

SubWeights select_subweights(const LayerWeights& w, const ExpertMask& mask) {
  if (mask.width() != w.w_gate.cols()) {
    throw ValidationError("select_subweights: mask over " + std::to_string(mask.width()) +
                          " neurons for d_ffn " + std::to_string(w.w_gate.cols()));
  }
  SubWeights sub;
  sub.w_gate = gather_cols(w.w_gate, mask.neurons());
  sub.w_up = gather_cols(w.w_up, mask.neurons());
  sub.w_down = gather_rows(w.w_down, mask.neurons());
  sub.neurons = mask.neurons();
  return sub;
}

SubWeights select_subweights(const ModelWeights& weights, std::size_t layer,
                             const ExpertMask& mask) {
  if (layer >= weights.layers.size()) {
    throw ValidationError("select_subweights: layer " + std::to_string(layer) + " out of range");
  }
  return select_subweights(weights.layers[layer], mask);
}

Matrix sparse_ffn_forward(const Matrix& x, const SubWeights& sub) {
  return matmul(gated_activations(x, sub.w_gate, sub.w_up), sub.w_down);
}

ExpertMask oracle_mask_from_activations(const Matrix& activations, std::size_t k,
                                        std::size_t layer, std::size_t block) {
  const auto norms = column_l2_norms(activations);
  return build_mask(norms, k, layer, block);
}

ExpertMask oracle_experts(const Matrix& x, const ModelWeights& weights, std::size_t layer,
                          std::size_t k, std::size_t block) {
  const auto& w = weights.layers.at(layer);
  return oracle_mask_from_activations(gated_activations(x, w.w_gate, w.w_up), k, layer, block);
}

FirstBlockStaticExperts::FirstBlockStaticExperts(ExpertMask first_block_mask)
    : mask_(std::move(first_block_mask)) {}

const ExpertMask& FirstBlockStaticExperts::mask_for_block(std::size_t) const {
  if (!mask_) throw std::logic_error("first-block static experts requested before block 0 ran");
  return *mask_;
}

}  // namespace ffwd
