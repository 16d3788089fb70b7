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

#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "ffwd/errors.hpp"
#include "ffwd/plan.hpp"
#include "ffwd/random.hpp"
#include "ffwd/sparse_ffn.hpp"
#include "oracles.hpp"

using namespace ffwd;

namespace {

LayerWeights random_layer(std::size_t d, std::size_t f, std::mt19937_64& rng) {
  LayerWeights w;
  w.w_gate = oracle::random_matrix(d, f, rng, 0.5);
  w.w_up = oracle::random_matrix(d, f, rng, 0.5);
  w.w_down = oracle::random_matrix(f, d, rng, 0.5);
  return w;
}

ExpertMask random_mask(std::size_t f, std::mt19937_64& rng) {
  std::vector<std::size_t> all(f);
  for (std::size_t i = 0; i < f; ++i) all[i] = i;
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(1 + rng() % f);
  std::sort(all.begin(), all.end());
  return ExpertMask(IndexSet(all, f));
}

}  // namespace

TEST_CASE("dense FFN scalar hand-roll") {
  // d_model = 1, d_ffn = 2.
  LayerWeights w;
  w.w_gate = Matrix::from_rows({{1.0f, -2.0f}});
  w.w_up = Matrix::from_rows({{3.0f, 0.5f}});
  w.w_down = Matrix::from_rows({{1.0f}, {4.0f}});
  const Matrix x = Matrix::from_rows({{2.0f}});
  // neuron 0: silu(2) * 6, neuron 1: silu(-4) * 1
  const double s2 = 2.0 / (1.0 + std::exp(-2.0));
  const double sm4 = -4.0 / (1.0 + std::exp(4.0));
  const double expected = s2 * 6.0 * 1.0 + sm4 * 1.0 * 4.0;
  CHECK(dense_ffn(x, w)(0, 0) == doctest::Approx(expected).epsilon(1e-6));
  const Matrix sparse = sparse_ffn_forward(x, select_subweights(w, ExpertMask(IndexSet({0}, 2))));
  CHECK(sparse(0, 0) == doctest::Approx(s2 * 6.0).epsilon(1e-6));
}

TEST_CASE("sparse forward equals zero-masked dense oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t d = 1 + rng() % 16, f = 1 + rng() % 64, n = 1 + rng() % 5;
    const LayerWeights w = random_layer(d, f, rng);
    const Matrix x = oracle::random_matrix(n, d, rng);
    const ExpertMask mask = random_mask(f, rng);
    const auto bits = mask.bits();
    std::vector<bool> keep(bits.begin(), bits.end());
    const auto ref = oracle::ffn(oracle::from(x), w, &keep);
    CHECK(oracle::max_abs(ref, sparse_ffn_forward(x, select_subweights(w, mask))) < 1e-5);
  }
}

TEST_CASE("full mask reproduces dense bit for bit") {
  std::mt19937_64 rng(12);
  const LayerWeights w = random_layer(8, 24, rng);
  const Matrix x = oracle::random_matrix(5, 8, rng);
  const Matrix sparse = sparse_ffn_forward(x, select_subweights(w, ExpertMask::full(24)));
  CHECK(bit_equal(sparse, dense_ffn(x, w)));
}

TEST_CASE("sub-weight layout") {
  std::mt19937_64 rng(13);
  const LayerWeights w = random_layer(4, 6, rng);
  const SubWeights sub = select_subweights(w, ExpertMask(IndexSet({1, 4}, 6)));
  CHECK(sub.w_gate.rows() == 4);
  CHECK(sub.w_gate.cols() == 2);
  CHECK(sub.w_down.rows() == 2);
  CHECK(sub.w_gate(2, 1) == w.w_gate(2, 4));
  CHECK(sub.w_up(0, 0) == w.w_up(0, 1));
  CHECK(sub.w_down(1, 3) == w.w_down(4, 3));
  CHECK_THROWS_AS(select_subweights(w, ExpertMask(IndexSet({0}, 5))), ValidationError);
}

TEST_CASE("empty masks are rejected") {
  CHECK_THROWS_AS(ExpertMask(IndexSet({}, 4)), ValidationError);
}

TEST_CASE("oracle experts rank by activation column norm") {
  std::mt19937_64 rng(14);
  ModelConfig cfg;
  cfg.d_model = 6;
  cfg.d_ffn = 10;
  ModelWeights mw = zero_weights(cfg);
  mw.layers[0] = random_layer(6, 10, rng);
  mw.layers[0].attn_norm.assign(6, 1.0f);
  mw.layers[0].ffn_norm.assign(6, 1.0f);
  const Matrix x = oracle::random_matrix(7, 6, rng);
  const auto acts = oracle::gated(oracle::from(x), oracle::from(mw.layers[0].w_gate),
                                  oracle::from(mw.layers[0].w_up));
  std::vector<std::pair<double, std::size_t>> norms;
  for (std::size_t j = 0; j < 10; ++j) {
    double s = 0.0;
    for (const auto& row : acts) s += row[j] * row[j];
    norms.push_back({-std::sqrt(s), j});
  }
  std::sort(norms.begin(), norms.end());
  std::vector<std::size_t> expected;
  for (int i = 0; i < 4; ++i) expected.push_back(norms[i].second);
  std::sort(expected.begin(), expected.end());
  CHECK(oracle_experts(x, mw, 0, 4).neurons().indices() == expected);
}

TEST_CASE("recall and jaccard") {
  const ExpertMask a(IndexSet({0, 1, 2, 3}, 8)), b(IndexSet({2, 3, 4, 5}, 8));
  CHECK(mask_recall(a, b) == doctest::Approx(0.5));
  CHECK(mask_jaccard(a, b) == doctest::Approx(2.0 / 6.0));
  CHECK(mask_jaccard(a, a) == 1.0);
  CHECK(ExpertMask::full(5).k() == 5);
  CHECK(a.bits() == std::vector<std::uint8_t>{1, 1, 1, 1, 0, 0, 0, 0});
}

TEST_CASE("first-block static experts") {
  FirstBlockStaticExperts none;
  CHECK_FALSE(none.ready());
  CHECK_THROWS_AS(none.mask_for_block(1), std::logic_error);
  const ExpertMask m(IndexSet({1, 3}, 4));
  FirstBlockStaticExperts fixed(m);
  CHECK(fixed.mask_for_block(7).same_selection(m));
}

TEST_CASE("budgets to top-k") {
  const std::vector<double> keep = {1.0, 0.5, 0.004, 0.0};
  CHECK(budgets_to_topk(keep, 64) == std::vector<std::size_t>{64, 32, 1, 1});
}

TEST_CASE("plan validation") {
  SparsityPlan p = SparsityPlan::uniform(3, 0.5, true);
  CHECK_NOTHROW(p.validate(3));
  CHECK_THROWS_AS(p.validate(4), ValidationError);
  p.keep[1] = 1.5;
  CHECK_THROWS_AS(p.validate(3), ValidationError);
  CHECK(parse_prefill_mode("static") == PrefillMode::FirstBlockStatic);
  CHECK(parse_prefill_mode(to_string(PrefillMode::Predicted)) == PrefillMode::Predicted);
  CHECK_THROWS_AS(parse_prefill_mode("bogus"), ValidationError);
}

TEST_CASE("block execution policy") {
  using M = PrefillMode;
  CHECK(ffn_cell_dense(0, 4, false, M::Dense, 8, 16));
  CHECK(ffn_cell_dense(0, 4, false, M::FirstBlockStatic, 8, 16));
  CHECK_FALSE(ffn_cell_dense(0, 4, false, M::Predicted, 8, 16));
  CHECK(ffn_cell_dense(0, 4, true, M::Predicted, 8, 16));
  CHECK(ffn_cell_dense(3, 4, true, M::Oracle, 8, 16));
  CHECK_FALSE(ffn_cell_dense(2, 4, true, M::Oracle, 8, 16));
  CHECK(ffn_cell_dense(2, 4, false, M::Predicted, 16, 16));
}
