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

#include "ffwd/plan.hpp"

#include <algorithm>
#include <cmath>

#include "ffwd/errors.hpp"

namespace ffwd {

std::string to_string(PrefillMode mode) {
  switch (mode) {
    case PrefillMode::Dense: return "dense";
    case PrefillMode::Oracle: return "oracle";
    case PrefillMode::Predicted: return "predicted";
    case PrefillMode::FirstBlockStatic: return "static";
  }
  return "unknown";
}

PrefillMode parse_prefill_mode(const std::string& name) {
  if (name == "dense") return PrefillMode::Dense;
  if (name == "oracle") return PrefillMode::Oracle;
  if (name == "predicted") return PrefillMode::Predicted;
  if (name == "static" || name == "first_block_static") return PrefillMode::FirstBlockStatic;
  throw ValidationError("unknown prefill mode '" + name + "'");
}

SparsityPlan SparsityPlan::dense(std::size_t n_layers) {
  SparsityPlan plan;
  plan.keep.assign(n_layers, 1.0);
  plan.dense_first_last = true;
  plan.global_budget = 1.0;
  return plan;
}

SparsityPlan SparsityPlan::uniform(std::size_t n_layers, double keep, bool dense_first_last) {
  SparsityPlan plan;
  plan.keep.assign(n_layers, keep);
  plan.dense_first_last = dense_first_last;
  plan.global_budget = keep;
  plan.validate(n_layers);
  return plan;
}

void SparsityPlan::validate(std::size_t n_layers) const {
  if (keep.size() != n_layers) {
    throw ValidationError("SparsityPlan: " + std::to_string(keep.size()) +
                          " layer budgets for a " + std::to_string(n_layers) + "-layer model");
  }
  // Zero keep only arises from zero importance; budgets_to_topk lifts it to K=1.
  for (double b : keep) {
    if (!(b >= 0.0 && b <= 1.0)) {
      throw ValidationError("SparsityPlan: keep fraction " + std::to_string(b) +
                            " outside [0, 1]");
    }
  }
  if (!(global_budget > 0.0 && global_budget <= 1.0)) {
    throw ValidationError("SparsityPlan: global budget must lie in (0, 1]");
  }
}

std::vector<std::size_t> budgets_to_topk(std::span<const double> keep, std::size_t d_ffn) {
  std::vector<std::size_t> k(keep.size());
  for (std::size_t l = 0; l < keep.size(); ++l) {
    const auto rounded = static_cast<std::size_t>(std::llround(keep[l] * static_cast<double>(d_ffn)));
    k[l] = std::clamp<std::size_t>(rounded, 1, d_ffn);
  }
  return k;
}

bool block_forced_dense(std::size_t block, std::size_t n_blocks, bool dense_first_last,
                        PrefillMode mode) {
  if (mode == PrefillMode::Dense) return true;
  if (mode == PrefillMode::FirstBlockStatic && block == 0) return true;
  return dense_first_last && (block == 0 || block + 1 == n_blocks);
}

bool ffn_cell_dense(std::size_t block, std::size_t n_blocks, bool dense_first_last,
                    PrefillMode mode, std::size_t k, std::size_t d_ffn) {
  return k >= d_ffn || block_forced_dense(block, n_blocks, dense_first_last, mode);
}

}  // namespace ffwd
