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

// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "ffwd/compensator.hpp"
#include "ffwd/cost_model.hpp"
#include "ffwd/engine.hpp"
#include "ffwd/predictor.hpp"
#include "ffwd/scheduler.hpp"
#include "ffwd/sparse_ffn.hpp"
#include "ffwd/synthetic.hpp"
#include "oracles.hpp"

using namespace ffwd;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Masked-dense equivalence.
Outcome a1() {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  bool full_identical = true;
  const int triples = 200;
  for (int t = 0; t < triples; ++t) {
    const std::size_t d = 1 + rng() % 16, f = 1 + rng() % 64, n = 1 + rng() % 8;
    LayerWeights w;
    w.w_gate = oracle::random_matrix(d, f, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    w.w_up = oracle::random_matrix(d, f, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    w.w_down = oracle::random_matrix(f, d, rng, 1.0 / std::sqrt(static_cast<double>(f)));
    const Matrix x = oracle::random_matrix(n, d, rng);
    std::vector<std::size_t> keep_idx;
    for (std::size_t j = 0; j < f; ++j)
      if (rng() % 2) keep_idx.push_back(j);
    if (keep_idx.empty()) keep_idx.push_back(rng() % f);
    const ExpertMask mask(IndexSet(keep_idx, f));
    const auto bits = mask.bits();
    const std::vector<bool> keep(bits.begin(), bits.end());
    const auto ref = oracle::ffn(oracle::from(x), w, &keep);
    worst = std::max(worst, oracle::max_abs(ref, sparse_ffn_forward(x, select_subweights(w, mask))));
    const Matrix full = sparse_ffn_forward(x, select_subweights(w, ExpertMask::full(f)));
    full_identical = full_identical && bit_equal(full, dense_ffn(x, w));
  }
  return {worst <= 1e-6 && full_identical,
          std::to_string(triples) + " triples, max |diff| " + fmt("%.3g", worst) +
              " (tol 1e-6), full mask bit-identical: " + (full_identical ? "yes" : "no")};
}

// Block-wise vs full-sequence.
Outcome a2() {
  std::mt19937_64 rng(202);
  double worst_h = 0.0, worst_l = 0.0;
  const int cases = 24;
  for (int c = 0; c < cases; ++c) {
    ModelConfig cfg;
    cfg.n_layers = 1 + rng() % 3;
    cfg.n_heads = 1 + rng() % 2;
    cfg.d_model = 8 * cfg.n_heads;
    cfg.d_ffn = cfg.d_model * (2 + rng() % 3);
    cfg.vocab_size = 16 + rng() % 32;
    cfg.block_size = 1 + rng() % 16;
    cfg.max_context = 4 * cfg.block_size;
    cfg.tie_embeddings = rng() % 2 == 0;
    const Engine engine(generate_synthetic_model(cfg, 1000 + c, 0.3f));
    const std::size_t T = 1 + rng() % (4 * cfg.block_size);
    std::vector<Token> tokens(T);
    for (auto& t : tokens) t = static_cast<Token>(rng() % cfg.vocab_size);
    const auto full = engine.prefill_dense(tokens);
    const auto block = engine.prefill_blockwise(tokens, SparsityPlan::dense(cfg.n_layers), {},
                                                PrefillOptions{});
    worst_h = std::max<double>(worst_h, max_abs_diff(full.hidden, block.hidden));
    worst_l = std::max<double>(worst_l, max_abs_diff(Matrix::row_vector(full.last_logits),
                                                     Matrix::row_vector(block.last_logits)));
  }
  return {worst_h <= 1e-5 && worst_l <= 1e-5,
          std::to_string(cases) + " models, max |diff| hidden " + fmt("%.3g", worst_h) +
              ", logits " + fmt("%.3g", worst_l) + " (tol 1e-5)"};
}

// Predictor and compensator gradient checks.
Outcome a3() {
  std::mt19937_64 rng(303);
  const int instances = 60;
  double worst_p = 0.0, worst_c = 0.0;
  int done = 0, resampled = 0;
  while (done < instances) {
    const std::size_t d = 2 + rng() % 7, f = 2 + rng() % 11, n = 1 + rng() % 6;
    const std::size_t r = predictor_rank(d);
    PredictorParams p{oracle::random_matrix(1, d, rng), oracle::random_matrix(d, r, rng, 0.7),
                      oracle::random_matrix(r, f, rng, 0.7)};
    const Matrix x = oracle::random_matrix(n, d, rng);
    oracle::PredictorD pd{oracle::from(p.query), oracle::from(p.w1), oracle::from(p.w2)};
    const auto xd = oracle::from(x);
    // Central differences straddling a ReLU kink are not derivatives.
    oracle::Vec z;
    oracle::predictor_scores(pd, xd, &z);
    if (std::any_of(z.begin(), z.end(), [](double v) { return std::abs(v) < 1e-2; })) {
      ++resampled;
      continue;
    }
    const auto labels = generate_labels(oracle::random_matrix(3, f, rng));
    const auto bce = weighted_bce_loss(predictor_forward(p, x), labels.labels, labels.weights);
    const auto g = predictor_backward(p, x, bce.grad);
    auto pobj = [&] { return oracle::bce(oracle::predictor_scores(pd, xd), labels.labels, labels.weights); };
    worst_p = std::max({worst_p,
                        oracle::max_relative_error(g.query, oracle::finite_difference(pd.q, pobj), 1e-6),
                        oracle::max_relative_error(g.w1, oracle::finite_difference(pd.w1, pobj), 1e-6),
                        oracle::max_relative_error(g.w2, oracle::finite_difference(pd.w2, pobj), 1e-6)});

    const std::size_t dc = 2 + rng() % 15, rc = compensator_rank(dc);
    CompensatorParams c{oracle::random_matrix(dc, rc, rng, 0.7), oracle::random_matrix(rc, dc, rng, 0.7)};
    const Matrix xc = oracle::random_matrix(n, dc, rng), ys = oracle::random_matrix(n, dc, rng),
                 yd = oracle::random_matrix(n, dc, rng);
    const auto mse = mse_distill_loss(c, xc, ys, yd);
    auto w1 = oracle::from(c.w1), w2 = oracle::from(c.w2);
    const auto X = oracle::from(xc), YS = oracle::from(ys), YD = oracle::from(yd);
    auto cobj = [&] { return oracle::compensator_objective(w1, w2, X, YS, YD); };
    worst_c = std::max({worst_c,
                        oracle::max_relative_error(mse.grad.w1, oracle::finite_difference(w1, cobj), 1e-6),
                        oracle::max_relative_error(mse.grad.w2, oracle::finite_difference(w2, cobj), 1e-6)});
    ++done;
  }
  return {worst_p <= 1e-4 && worst_c <= 1e-4,
          std::to_string(instances) + " instances each, max rel err predictor " +
              fmt("%.3g", worst_p) + ", compensator " + fmt("%.3g", worst_c) +
              " (tol 1e-4, denominator floor 1e-6, " + std::to_string(resampled) +
              " near-kink draws resampled)"};
}

// Budget allocation.
Outcome a4() {
  bool ok = true;
  const auto t1 = allocate_budgets(std::vector<double>{4, 2, 1, 1}, 0.5);
  ok = ok && t1 == std::vector<double>{1.0, 0.5, 0.25, 0.25};
  const auto t2 = allocate_budgets(std::vector<double>{1, 4}, 0.9);
  ok = ok && std::abs(t2[0] - 0.36) < 1e-15 && t2[1] == 1.0;

  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int cap_free = 0, conserve_fail = 0, bound_fail = 0;
  double worst_closed = 0.0;
  while (cap_free < 1000) {
    const std::size_t L = 1 + rng() % 16;
    std::vector<double> s(L);
    for (auto& v : s) v = std::exp(4.0 * u(rng));
    const double B = 0.01 + 0.99 * u(rng);
    const auto b = allocate_budgets(s, B);
    const double total = std::accumulate(b.begin(), b.end(), 0.0);
    if (total > B * static_cast<double>(L) + 1e-9) ++bound_fail;
    const double S = std::accumulate(s.begin(), s.end(), 0.0);
    const double peak = *std::max_element(s.begin(), s.end()) * B * static_cast<double>(L) / S;
    if (peak >= 1.0) continue;
    ++cap_free;
    if (std::abs(total - B * static_cast<double>(L)) > 1e-9) ++conserve_fail;
    for (std::size_t i = 0; i < L; ++i)
      worst_closed = std::max(worst_closed, std::abs(b[i] - s[i] * B * static_cast<double>(L) / S));
  }
  ok = ok && conserve_fail == 0 && bound_fail == 0 && worst_closed <= 1e-9;
  return {ok, std::string("hand traces ") + (t1 == std::vector<double>{1.0, 0.5, 0.25, 0.25} ? "ok" : "MISMATCH") +
                  ", 1000 cap-free instances: closed-form max |diff| " + fmt("%.3g", worst_closed) +
                  ", conservation failures " + std::to_string(conserve_fail) +
                  ", budget-bound failures " + std::to_string(bound_fail)};
}

ModelConfig analytic_config(std::size_t d, std::size_t f, std::size_t layers) {
  ModelConfig cfg;
  cfg.n_layers = layers;
  cfg.d_model = d;
  cfg.d_ffn = f;
  cfg.n_heads = 32;
  cfg.vocab_size = 128256;
  cfg.block_size = 128;
  cfg.max_context = 32768;
  return cfg;
}

Outcome a5() {
  const auto big = crossover_simplified(analytic_config(4096, 14336, 32));
  const auto small = crossover_simplified(analytic_config(2048, 8192, 16));
  return {big == 28672 && small == 16384,
          "d_ffn=14336 -> " + std::to_string(big) + ", d_ffn=8192 -> " + std::to_string(small)};
}

Outcome a6() {
  const auto cfg = analytic_config(4096, 14336, 32);
  const auto plan = SparsityPlan::uniform(32, 0.5, true);
  const std::vector<std::size_t> Ts = {1024, 2048, 4096, 8192, 16384, 32768};
  std::vector<double> s;
  for (auto T : Ts) s.push_back(estimate_speedup(T, cfg, plan, true));
  const std::size_t peak = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
  bool unimodal = true;
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (i <= peak && !(s[i] > s[i - 1])) unimodal = false;
    if (i > peak && !(s[i] < s[i - 1])) unimodal = false;
  }
  const bool ok = unimodal && s[peak] >= 1.3 && s[peak] <= 1.5 && Ts[peak] >= 2048 &&
                  Ts[peak] <= 8192 && s.back() < s[peak];
  std::string d = "speedups";
  for (std::size_t i = 0; i < Ts.size(); ++i)
    d += " " + std::to_string(Ts[i] / 1024) + "K:" + fmt("%.3f", s[i]);
  d += ", peak at " + std::to_string(Ts[peak] / 1024) + "K (predictor and compensator charged)";
  return {ok, d};
}

// Analytical FLOPs vs the instrumented counter.
Outcome a7() {
  ModelConfig cfg;
  cfg.n_layers = 3;
  cfg.d_model = 16;
  cfg.d_ffn = 48;
  cfg.n_heads = 2;
  cfg.vocab_size = 40;
  cfg.block_size = 8;
  cfg.max_context = 64;
  const Engine engine(generate_synthetic_model(cfg, 77, 0.3f));
  std::vector<PredictorParams> preds;
  std::vector<CompensatorParams> comps;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    preds.push_back(init_predictor(cfg, l));
    comps.push_back(init_compensator(cfg, 10 + l));
  }
  SparsityPlan mixed;
  mixed.keep = {0.2, 1.0, 0.6};
  mixed.dense_first_last = false;
  std::vector<std::pair<std::string, SparsityPlan>> plans = {
      {"dense", SparsityPlan::dense(3)},
      {"uniform-0.5-dfl", SparsityPlan::uniform(3, 0.5, true)},
      {"mixed", mixed}};
  std::mt19937_64 rng(707);
  int configs = 0, mismatches = 0;
  for (auto mode : {PrefillMode::Dense, PrefillMode::Oracle, PrefillMode::Predicted,
                    PrefillMode::FirstBlockStatic}) {
    for (const auto& [label, plan] : plans) {
      for (std::size_t T : {5u, 16u, 29u}) {
        std::vector<Token> tokens(T);
        for (auto& t : tokens) t = static_cast<Token>(rng() % cfg.vocab_size);
        PrefillOptions opts;
        opts.mode = mode;
        FlopCounter counter;
        const auto res = engine.prefill_blockwise(tokens, plan, {preds, comps}, opts);
        const auto expected =
            analytical_report(T, cfg, plan, mode, mode != PrefillMode::Dense);
        if (!(res.flops == expected) || counter.count() != expected.total()) ++mismatches;
        ++configs;
      }
    }
  }
  return {configs >= 10 && mismatches == 0,
          std::to_string(configs) + " executed (mode, plan, T) configurations, " +
              std::to_string(mismatches) + " mismatches (per-layer, per-component integer equality)"};
}

struct ClusteredBench {
  ModelConfig cfg;
  ClusteredModel cm;
  ClusteredCorpus train, held;
  LayerBlocks train_in, held_in;
  std::vector<PredictorParams> preds;
};

ClusteredBench& clustered_bench() {
  static ClusteredBench b = [] {
    ClusteredBench b;
    b.cfg.n_layers = 2;
    b.cfg.d_model = 128;
    b.cfg.d_ffn = 256;
    b.cfg.n_heads = 4;
    b.cfg.vocab_size = 64;
    b.cfg.block_size = 16;
    b.cfg.max_context = 256;
    b.cm = generate_clustered_model(b.cfg, 4, 1);
    SyntheticCorpusSpec spec;
    spec.vocab_size = 64;
    spec.n_sequences = 24;
    spec.sequence_length = 128;
    spec.n_clusters = 4;
    spec.block_size = 16;
    spec.seed = 2;
    b.train = generate_clustered_corpus(spec);
    spec.seed = 3;
    spec.n_sequences = 10;
    b.held = generate_clustered_corpus(spec);
    const Engine engine(b.cm.model);
    b.train_in = collect_ffn_inputs(engine, b.train.sequences);
    b.held_in = collect_ffn_inputs(engine, b.held.sequences);
    TrainOptions opts;
    opts.epochs = 30;
    opts.lr = 0.05f;
    opts.seed = 4;
    b.preds = train_predictor(b.cm.model, b.train_in, b.held_in, opts);
    return b;
  }();
  return b;
}

// Predictor recall on the clustered corpus.
Outcome a8() {
  auto& b = clustered_bench();
  const Engine engine(b.cm.model);
  const auto plan = SparsityPlan::uniform(b.cfg.n_layers, 0.5, false);
  auto mean_recall = [&](PrefillMode mode) {
    PrefillOptions opts;
    opts.mode = mode;
    opts.compensate = false;
    opts.record_oracle_recall = true;
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& seq : b.held.sequences) {
      const auto res = engine.prefill_blockwise(seq, plan, {b.preds, {}}, opts);
      for (const auto& rec : res.masks) {
        sum += *rec.oracle_recall;
        ++n;
      }
    }
    return sum / static_cast<double>(n);
  };
  const double trained = mean_recall(PrefillMode::Predicted);
  const double oracle = mean_recall(PrefillMode::Oracle);
  const double stat = mean_recall(PrefillMode::FirstBlockStatic);
  return {trained >= 0.9 && trained > stat,
          "recall vs per-block oracle at k=d_ffn/2: oracle " + fmt("%.3f", oracle) + ", trained " +
              fmt("%.3f", trained) + ", first-block static " + fmt("%.3f", stat)};
}

// Compensator after two-phase training.
Outcome a9() {
  auto& b = clustered_bench();
  CompensatorTrainOptions opts;
  opts.base.epochs = 20;
  opts.base.lr = 0.05f;
  opts.base.seed = 5;
  opts.phase_split = 0.5;
  const std::vector<std::size_t> topk(b.cfg.n_layers, b.cfg.d_ffn / 2);
  const auto comps = train_compensator(b.cm.model, b.train_in, b.held_in, b.preds, topk, opts);
  bool ok = true;
  std::string d;
  std::size_t blocks = 0;
  for (std::size_t l = 0; l < b.cfg.n_layers; ++l) {
    const auto st = evaluate_compensation(b.cm.model.layers[l], b.held_in[l], b.cfg.d_ffn / 2,
                                          MaskSource::Predicted, &b.preds[l], comps[l]);
    ok = ok && st.mean_compensated_error < st.mean_sparse_error;
    blocks = st.blocks;
    d += (l ? "; " : "") + std::string("layer ") + std::to_string(l) + ": " +
         fmt("%.3g", st.mean_sparse_error) + " -> " + fmt("%.3g", st.mean_compensated_error) +
         " (|comp|/|ffn| " + fmt("%.3g", st.comp_to_ffn_norm_ratio) + ")";
  }
  ok = ok && blocks >= 64;
  return {ok, "held-out mean ||Y_dense - Y||^2 without -> with compensation over " +
                  std::to_string(blocks) + " blocks, " + d};
}

// Schedule benefit on a model with heterogeneous layer importance.
Outcome a10() {
  ModelConfig cfg;
  cfg.n_layers = 4;
  cfg.d_model = 16;
  cfg.d_ffn = 64;
  cfg.n_heads = 1;
  cfg.vocab_size = 64;
  cfg.block_size = 32;
  cfg.max_context = 256;
  const Engine engine(generate_heterogeneous_model(cfg, {false, true, false, true}, 5));
  const auto calibration = generate_sink_corpus(cfg.vocab_size, 8, 128, 6);
  const auto profile = importance_scores(engine, calibration);
  const double budget = 0.5;
  const auto scheduled = plan_from_scores(profile.s, budget, true);
  const auto test = generate_sink_corpus(cfg.vocab_size, 16, 128, 7);
  auto error = [&](SparsityPlan plan, bool dfl) {
    plan.dense_first_last = dfl;
    PrefillOptions opts;
    opts.mode = PrefillMode::Oracle;
    opts.compensate = false;
    double sum = 0.0;
    for (const auto& seq : test) {
      const auto dense = engine.prefill_dense(seq).last_logits;
      const auto sparse = engine.prefill_blockwise(seq, plan, {}, opts).last_logits;
      double e = 0.0;
      for (std::size_t i = 0; i < dense.size(); ++i)
        e += (static_cast<double>(dense[i]) - sparse[i]) * (static_cast<double>(dense[i]) - sparse[i]);
      sum += std::sqrt(e);
    }
    return sum / static_cast<double>(test.size());
  };
  const auto uniform = SparsityPlan::uniform(cfg.n_layers, budget, true);
  const double e_sched = error(scheduled, true), e_uni = error(uniform, true);
  const double e_sched_nd = error(scheduled, false), e_uni_nd = error(uniform, false);
  const double spent = std::accumulate(scheduled.keep.begin(), scheduled.keep.end(), 0.0);
  const bool ok = e_sched < e_uni && e_sched < e_sched_nd && e_uni < e_uni_nd &&
                  spent <= budget * cfg.n_layers + 1e-9;
  std::string b = "b=[";
  for (std::size_t l = 0; l < scheduled.keep.size(); ++l)
    b += (l ? "," : "") + fmt("%.3f", scheduled.keep[l]);
  b += "]";
  return {ok, "mean last-logit L2 error vs dense: scheduled " + fmt("%.4g", e_sched) +
                  " vs uniform " + fmt("%.4g", e_uni) + " (dense first/last); without dense "
                  "first/last: scheduled " + fmt("%.4g", e_sched_nd) + ", uniform " +
                  fmt("%.4g", e_uni_nd) + "; " + b + ", sum b " + fmt("%.3f", spent) +
                  " <= B*L " + fmt("%.1f", budget * cfg.n_layers)};
}

}  // namespace

int main() {
  struct Criterion {
    const char* id;
    const char* name;
    double time_limit_s;  // <= 0: none
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {"A1", "masked-dense equivalence", 5, a1},
      {"A2", "block-wise equals full-sequence", 30, a2},
      {"A3", "gradient checks", 30, a3},
      {"A4", "budget allocation fidelity", 0, a4},
      {"A5", "crossover numbers", 0, a5},
      {"A6", "speedup envelope", 0, a6},
      {"A7", "FLOPs trustworthiness", 0, a7},
      {"A8", "predictor learning efficacy", 300, a8},
      {"A9", "compensator efficacy", 300, a9},
      {"A10", "schedule benefit", 0, a10},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    bool pass = o.pass;
    std::string timing = fmt("%.2fs", secs);
    if (c.time_limit_s > 0) {
      timing += " (limit " + fmt("%.0fs", c.time_limit_s) + ")";
      pass = pass && secs < c.time_limit_s;
    }
    if (!pass) ++failures;
    std::printf("%-4s %s  %s: %s [%s]\n", c.id, pass ? "PASS" : "FAIL", c.name, o.detail.c_str(),
                timing.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
