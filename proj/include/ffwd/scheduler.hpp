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

// Layerwise sparsity scheduling: importance from non-sink attention mass on a
// calibration set, then a sequential proportional budget allocation.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ffwd/engine.hpp"
#include "ffwd/plan.hpp"

namespace ffwd {

struct AttentionMassProfile {
  std::vector<double> s;  // one importance score per layer
  std::size_t n_samples = 0;
  std::size_t n_heads = 0;
  bool per_token_normalized = false;
};

// s_l = (1 / (|D| * H)) * sum over samples, heads, non-sink keys and all
// queries of the attention weight. Block 0 is the sink block. With
// `per_token_normalize` the divisor is H times the total non-sink token count
// instead. Sequences must extend past the first block.
AttentionMassProfile importance_scores(const Engine& engine,
                                       std::span<const std::vector<Token>> calibration,
                                       bool per_token_normalize = false);

// In layer order: b_i = min(1, s_i / S * T), then T -= b_i, S -= s_i, starting
// from T = budget * L and S = sum(s). Unspent budget is not redistributed.
std::vector<double> allocate_budgets(std::span<const double> s, double budget);

SparsityPlan plan_from_scores(std::span<const double> s, double budget, bool dense_first_last);

struct PlanFile {
  SparsityPlan plan;
  std::vector<double> s;
  std::uint64_t seed = 0;
  std::string calibration;
};

nlohmann::json plan_to_json(const PlanFile& file);
PlanFile plan_from_json(const nlohmann::json& j);
PlanFile load_plan(const std::string& path);
void save_plan(const PlanFile& file, const std::string& path);

}  // namespace ffwd
