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

#include "ffwd/cost_model.hpp"

#include <cmath>

#include "ffwd/compensator.hpp"
#include "ffwd/errors.hpp"
#include "ffwd/predictor.hpp"

namespace ffwd {

std::string_view component_name(FlopComponent c) {
  switch (c) {
    case FlopComponent::AttentionProjections: return "attention_projections";
    case FlopComponent::AttentionScores: return "attention_scores";
    case FlopComponent::Ffn: return "ffn";
    case FlopComponent::Predictor: return "predictor";
    case FlopComponent::Compensator: return "compensator";
    case FlopComponent::OracleSelection: return "oracle_selection";
  }
  return "unknown";
}

std::uint64_t FlopsReport::component_total(FlopComponent c) const {
  std::uint64_t sum = 0;
  for (const auto& layer : per_layer) sum += layer[static_cast<std::size_t>(c)];
  return sum;
}

std::uint64_t FlopsReport::total() const {
  std::uint64_t sum = lm_head;
  for (const auto& layer : per_layer)
    for (auto v : layer) sum += v;
  return sum;
}

std::uint64_t FlopsReport::auxiliary_total() const {
  return component_total(FlopComponent::Predictor) + component_total(FlopComponent::Compensator) +
         component_total(FlopComponent::OracleSelection);
}

nlohmann::json FlopsReport::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& counts : per_layer) {
    nlohmann::json entry;
    for (std::size_t c = 0; c < kFlopComponents; ++c)
      entry[std::string(component_name(static_cast<FlopComponent>(c)))] = counts[c];
    layers.push_back(entry);
  }
  nlohmann::json totals;
  for (std::size_t c = 0; c < kFlopComponents; ++c) {
    const auto comp = static_cast<FlopComponent>(c);
    totals[std::string(component_name(comp))] = component_total(comp);
  }
  totals["lm_head"] = lm_head;
  totals["total"] = total();
  return {{"context_length", context_length},
          {"plan", plan_label},
          {"per_layer", layers},
          {"totals", totals}};
}

std::uint64_t flops_attention_block(std::size_t queries, std::size_t keys, const ModelConfig& cfg) {
  const std::uint64_t d = cfg.d_model, n = queries, t = keys;
  return 8 * n * d * d + 4 * n * t * d;
}

std::uint64_t flops_attention(std::size_t tokens, const ModelConfig& cfg) {
  if (tokens < 1) throw ValidationError("flops_attention: T must be >= 1");
  return flops_attention_block(tokens, tokens, cfg);
}

std::uint64_t flops_ffn_topk(std::size_t tokens, const ModelConfig& cfg, std::size_t k) {
  return 6ull * tokens * cfg.d_model * k;
}

std::uint64_t flops_ffn(std::size_t tokens, const ModelConfig& cfg, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw ValidationError("flops_ffn: keep fraction must lie in (0, 1]");
  }
  const auto k = static_cast<std::size_t>(std::floor(keep_fraction * static_cast<double>(cfg.d_ffn)));
  return flops_ffn_topk(tokens, cfg, k);
}

std::uint64_t flops_predictor_block(std::size_t tokens, const ModelConfig& cfg) {
  const std::uint64_t d = cfg.d_model, f = cfg.d_ffn, r = predictor_rank(cfg.d_model);
  return 4ull * tokens * d + 2 * d * r + 2 * r * f;
}

std::uint64_t flops_compensator(std::size_t tokens, const ModelConfig& cfg) {
  const std::uint64_t d = cfg.d_model, r = compensator_rank(cfg.d_model);
  return 4ull * tokens * d * r;
}

std::uint64_t flops_oracle_selection(std::size_t tokens, const ModelConfig& cfg) {
  return 4ull * tokens * cfg.d_model * cfg.d_ffn;
}

std::uint64_t flops_lm_head(const ModelConfig& cfg) {
  return 2ull * cfg.d_model * cfg.vocab_size;
}

std::size_t crossover_simplified(const ModelConfig& cfg) { return 2 * cfg.d_ffn; }

double crossover_detailed(const ModelConfig& cfg) { return 1.5 * static_cast<double>(cfg.d_ffn); }

double simplified_ffn_share(std::size_t tokens, const ModelConfig& cfg) {
  const double t = static_cast<double>(tokens), d = static_cast<double>(cfg.d_model),
               f = static_cast<double>(cfg.d_ffn);
  const double ffn = 4.0 * t * d * f;
  const double attn = 2.0 * t * t * d;
  return ffn / (ffn + attn);
}

FlopsReport analytical_report(std::size_t tokens, const ModelConfig& cfg, const SparsityPlan& plan,
                              PrefillMode mode, bool compensated) {
  if (tokens < 1) throw ValidationError("analytical_report: T must be >= 1");
  plan.validate(cfg.n_layers);
  const auto topk = budgets_to_topk(plan.keep, cfg.d_ffn);
  const std::size_t n_blocks = cfg.blocks_for(tokens);

  FlopsReport report(cfg.n_layers);
  report.context_length = tokens;
  report.plan_label = to_string(mode);
  for (std::size_t b = 0; b < n_blocks; ++b) {
    const std::size_t start = b * cfg.block_size;
    const std::size_t n = std::min(cfg.block_size, tokens - start);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      report.add(l, FlopComponent::AttentionProjections, 8ull * n * cfg.d_model * cfg.d_model);
      report.add(l, FlopComponent::AttentionScores, 4ull * n * (start + n) * cfg.d_model);
      if (ffn_cell_dense(b, n_blocks, plan.dense_first_last, mode, topk[l], cfg.d_ffn)) {
        report.add(l, FlopComponent::Ffn, flops_ffn_topk(n, cfg, cfg.d_ffn));
        continue;
      }
      report.add(l, FlopComponent::Ffn, flops_ffn_topk(n, cfg, topk[l]));
      if (mode == PrefillMode::Oracle)
        report.add(l, FlopComponent::OracleSelection, flops_oracle_selection(n, cfg));
      if (mode == PrefillMode::Predicted)
        report.add(l, FlopComponent::Predictor, flops_predictor_block(n, cfg));
      if (compensated) report.add(l, FlopComponent::Compensator, flops_compensator(n, cfg));
    }
  }
  report.lm_head = flops_lm_head(cfg);
  return report;
}

double estimate_speedup(std::size_t tokens, const ModelConfig& cfg, const SparsityPlan& plan,
                        bool aux_costs) {
  const auto dense =
      analytical_report(tokens, cfg, SparsityPlan::dense(cfg.n_layers), PrefillMode::Dense, false);
  const auto sparse = analytical_report(tokens, cfg, plan, PrefillMode::Predicted, aux_costs);
  std::uint64_t sparse_total = sparse.total();
  if (!aux_costs) sparse_total -= sparse.component_total(FlopComponent::Predictor);
  return static_cast<double>(dense.total()) / static_cast<double>(sparse_total);
}

std::vector<CurveRow> emit_curves(const ModelConfig& cfg, std::span<const NamedPlan> plans,
                                  std::span<const std::size_t> contexts, bool aux_costs) {
  if (contexts.empty()) throw ValidationError("emit_curves: empty context range");
  std::vector<CurveRow> rows;
  for (std::size_t t : contexts) {
    for (const auto& named : plans) {
      const double speedup = estimate_speedup(t, cfg, named.plan, aux_costs);
      auto report = analytical_report(t, cfg, named.plan, PrefillMode::Predicted, aux_costs);
      if (!aux_costs) {
        for (auto& layer : report.per_layer)
          layer[static_cast<std::size_t>(FlopComponent::Predictor)] = 0;
      }
      for (std::size_t c = 0; c < kFlopComponents; ++c) {
        const auto comp = static_cast<FlopComponent>(c);
        rows.push_back({t, std::string(component_name(comp)), report.component_total(comp),
                        named.label, speedup});
      }
      rows.push_back({t, "lm_head", report.lm_head, named.label, speedup});
      rows.push_back({t, "total", report.total(), named.label, speedup});
    }
  }
  return rows;
}

void write_curves_csv(std::ostream& out, std::span<const CurveRow> rows) {
  out << "T,component,flops,plan,speedup\n";
  for (const auto& r : rows) {
    out << r.tokens << ',' << r.component << ',' << r.flops << ',' << r.plan << ',';
    out.precision(6);
    out << std::fixed << r.speedup << '\n';
    out.unsetf(std::ios::floatfield);
  }
}

nlohmann::json curves_to_json(std::span<const CurveRow> rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    arr.push_back({{"T", r.tokens},
                   {"component", r.component},
                   {"flops", r.flops},
                   {"plan", r.plan},
                   {"speedup", r.speedup}});
  }
  return arr;
}

}  // namespace ffwd
