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

#include "ffwd/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ffwd/errors.hpp"

namespace ffwd {

AttentionMassProfile importance_scores(const Engine& engine,
                                       std::span<const std::vector<Token>> calibration,
                                       bool per_token_normalize) {
  const auto& cfg = engine.config();
  if (calibration.empty()) throw ValidationError("importance_scores: empty calibration set");
  AttentionMassProfile profile;
  profile.s.assign(cfg.n_layers, 0.0);
  profile.n_heads = cfg.n_heads;
  profile.per_token_normalized = per_token_normalize;
  std::size_t non_sink_tokens = 0;
  for (const auto& seq : calibration) {
    if (seq.size() <= cfg.block_size) {
      throw ValidationError("importance_scores: calibration sequence of " +
                            std::to_string(seq.size()) + " tokens does not reach past the sink block (" +
                            std::to_string(cfg.block_size) + " tokens)");
    }
    const auto mass = engine.capture_attention_mass(seq, 0);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) profile.s[l] += mass[l];
    non_sink_tokens += seq.size() - cfg.block_size;
    ++profile.n_samples;
  }
  const double divisor = per_token_normalize ? static_cast<double>(non_sink_tokens)
                                             : static_cast<double>(profile.n_samples);
  for (double& v : profile.s) v /= divisor;
  return profile;
}

std::vector<double> allocate_budgets(std::span<const double> s, double budget) {
  if (!(budget > 0.0 && budget <= 1.0)) {
    throw ValidationError("allocate_budgets: budget must lie in (0, 1]");
  }
  double s_total = 0.0;
  for (double v : s) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ValidationError("allocate_budgets: importance scores must be finite and non-negative");
    }
    s_total += v;
  }
  if (!(s_total > 0.0)) throw ValidationError("allocate_budgets: all importance scores are zero");

  double remaining = budget * static_cast<double>(s.size());
  std::vector<double> b;
  b.reserve(s.size());
  for (double si : s) {
    const double share = s_total > 0.0 ? si / s_total * remaining : 0.0;
    const double bi = std::clamp(share, 0.0, 1.0);
    remaining -= bi;
    s_total -= si;
    b.push_back(bi);
  }
  return b;
}

SparsityPlan plan_from_scores(std::span<const double> s, double budget, bool dense_first_last) {
  SparsityPlan plan;
  plan.keep = allocate_budgets(s, budget);
  plan.dense_first_last = dense_first_last;
  plan.global_budget = budget;
  return plan;
}

nlohmann::json plan_to_json(const PlanFile& file) {
  return {{"budget", file.plan.global_budget},
          {"dense_first_last", file.plan.dense_first_last},
          {"b", file.plan.keep},
          {"s", file.s},
          {"seed", file.seed},
          {"calibration", file.calibration}};
}

PlanFile plan_from_json(const nlohmann::json& j) {
  PlanFile file;
  try {
    file.plan.global_budget = j.at("budget").get<double>();
    file.plan.dense_first_last = j.at("dense_first_last").get<bool>();
    file.plan.keep = j.at("b").get<std::vector<double>>();
    file.s = j.value("s", std::vector<double>{});
    file.seed = j.value("seed", std::uint64_t{0});
    file.calibration = j.value("calibration", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("plan JSON: ") + e.what());
  }
  file.plan.validate(file.plan.keep.size());
  return file;
}

PlanFile load_plan(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open plan " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("plan " + path + ": " + e.what());
  }
  return plan_from_json(j);
}

void save_plan(const PlanFile& file, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write plan " + path);
  out << plan_to_json(file).dump(2) << "\n";
}

}  // namespace ffwd
