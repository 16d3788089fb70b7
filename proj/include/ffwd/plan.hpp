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

// Per-layer FFN keep-fraction plans and the block execution policy shared by
// the prefill engine and the analytical cost model.

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace ffwd {

enum class PrefillMode {
  Dense,             // every block uses the dense FFN
  Oracle,            // per-block top-K from the block's own dense activations
  Predicted,         // per-block top-K from the trained expert predictor
  FirstBlockStatic,  // block 0 dense; its top-K mask reused for later blocks
};

std::string to_string(PrefillMode mode);
PrefillMode parse_prefill_mode(const std::string& name);

struct SparsityPlan {
  // Keep fraction (density) per layer. 1.0 means fully dense.
  std::vector<double> keep;
  bool dense_first_last = true;
  double global_budget = 1.0;

  static SparsityPlan dense(std::size_t n_layers);
  static SparsityPlan uniform(std::size_t n_layers, double keep, bool dense_first_last);

  std::size_t n_layers() const { return keep.size(); }
  void validate(std::size_t n_layers) const;
};

// K_l = max(1, round(b_l * d_ffn)).
std::vector<std::size_t> budgets_to_topk(std::span<const double> keep, std::size_t d_ffn);

// Whether block `block` of `n_blocks` runs its FFN densely regardless of the
// layer budget.
bool block_forced_dense(std::size_t block, std::size_t n_blocks, bool dense_first_last,
                        PrefillMode mode);

// Whether the (block, layer) cell runs the dense FFN. A layer whose K equals
// d_ffn is dense in every block.
bool ffn_cell_dense(std::size_t block, std::size_t n_blocks, bool dense_first_last,
                    PrefillMode mode, std::size_t k, std::size_t d_ffn);

}  // namespace ffwd
