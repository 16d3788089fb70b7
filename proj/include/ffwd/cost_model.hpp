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

// Analytical FLOPs accounting for block-wise prefill.
//
// Convention: one multiply-accumulate is 2 FLOPs, matching the matmul
// counter in tensor.hpp. Causal masking does not reduce counted attention
// work: each block's queries are scored against every cached key, as a dense
// kernel would. Elementwise work (norms, activations, softmax, rotary) is
// not counted.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ffwd/model.hpp"
#include "ffwd/plan.hpp"

namespace ffwd {

enum class FlopComponent : std::size_t {
  AttentionProjections,  // Q, K, V, O
  AttentionScores,       // QK^T and AV
  Ffn,                   // gate + up + down, dense or sparse
  Predictor,
  Compensator,
  OracleSelection,       // dense gate/up evaluated to rank neurons
};
inline constexpr std::size_t kFlopComponents = 6;

std::string_view component_name(FlopComponent c);

struct FlopsReport {
  using LayerCounts = std::array<std::uint64_t, kFlopComponents>;

  std::size_t context_length = 0;
  std::string plan_label;
  std::vector<LayerCounts> per_layer;
  std::uint64_t lm_head = 0;

  explicit FlopsReport(std::size_t n_layers = 0) : per_layer(n_layers, LayerCounts{}) {}

  void add(std::size_t layer, FlopComponent c, std::uint64_t flops) {
    per_layer.at(layer)[static_cast<std::size_t>(c)] += flops;
  }
  std::uint64_t at(std::size_t layer, FlopComponent c) const {
    return per_layer.at(layer)[static_cast<std::size_t>(c)];
  }
  std::uint64_t component_total(FlopComponent c) const;
  std::uint64_t total() const;
  // Predictor + compensator + oracle selection.
  std::uint64_t auxiliary_total() const;

  nlohmann::json to_json() const;

  friend bool operator==(const FlopsReport&, const FlopsReport&) = default;
};

// Full-sequence dense attention layer: 8*T*d^2 + 4*T^2*d.
std::uint64_t flops_attention(std::size_t tokens, const ModelConfig& cfg);
// One block of `queries` tokens attending to `keys` cached keys.
std::uint64_t flops_attention_block(std::size_t queries, std::size_t keys, const ModelConfig& cfg);
// 6*T*d*floor(keep*d_ffn).
std::uint64_t flops_ffn(std::size_t tokens, const ModelConfig& cfg, double keep_fraction);
std::uint64_t flops_ffn_topk(std::size_t tokens, const ModelConfig& cfg, std::size_t k);
// Pooling (4*n*d) plus the two projections (2*d*r + 2*r*d_ffn).
std::uint64_t flops_predictor_block(std::size_t tokens, const ModelConfig& cfg);
std::uint64_t flops_compensator(std::size_t tokens, const ModelConfig& cfg);
std::uint64_t flops_oracle_selection(std::size_t tokens, const ModelConfig& cfg);
std::uint64_t flops_lm_head(const ModelConfig& cfg);

// Coarse FFN-dominance boundary T < 2*d_ffn.
std::size_t crossover_simplified(const ModelConfig& cfg);
// Boundary where the gated FFN (6*T*d*d_ffn) equals the attention T^2 terms
// (4*T^2*d): T = 1.5*d_ffn.
double crossover_detailed(const ModelConfig& cfg);
// FFN share of total under the simplified model (two FFN projections against
// the QK^T product alone), which puts the 50% point at crossover_simplified.
double simplified_ffn_share(std::size_t tokens, const ModelConfig& cfg);

// FLOPs a block-wise prefill of `tokens` tokens performs under `plan` and
// `mode`, with the compensator applied on sparse cells when `compensated`.
FlopsReport analytical_report(std::size_t tokens, const ModelConfig& cfg, const SparsityPlan& plan,
                              PrefillMode mode, bool compensated);

// Dense FLOPs / sparse FLOPs for predicted-mode prefill under `plan`. With
// `aux_costs` the predictor and compensator FLOPs are charged to the sparse
// run.
double estimate_speedup(std::size_t tokens, const ModelConfig& cfg, const SparsityPlan& plan,
                        bool aux_costs);

struct NamedPlan {
  std::string label;
  SparsityPlan plan;
};

struct CurveRow {
  std::size_t tokens = 0;
  std::string component;  // component name, "lm_head" or "total"
  std::uint64_t flops = 0;
  std::string plan;
  double speedup = 1.0;
};

std::vector<CurveRow> emit_curves(const ModelConfig& cfg, std::span<const NamedPlan> plans,
                                  std::span<const std::size_t> contexts, bool aux_costs);
void write_curves_csv(std::ostream& out, std::span<const CurveRow> rows);
nlohmann::json curves_to_json(std::span<const CurveRow> rows);

}  // namespace ffwd
