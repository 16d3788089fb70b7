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

#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "ffwd/predictor.hpp"
#include "ffwd/random.hpp"
#include "oracles.hpp"

using namespace ffwd;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.d_ffn = 12;
  cfg.n_layers = 2;
  return cfg;
}

ModelWeights teacher(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelWeights w = zero_weights(cfg);
  for (auto& l : w.layers) {
    l.w_gate = oracle::random_matrix(cfg.d_model, cfg.d_ffn, rng, 0.5);
    l.w_up = oracle::random_matrix(cfg.d_model, cfg.d_ffn, rng, 0.5);
  }
  return w;
}

LayerBlocks blocks(const ModelConfig& cfg, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LayerBlocks out(cfg.n_layers);
  for (auto& layer : out)
    for (std::size_t i = 0; i < n; ++i) layer.push_back(oracle::random_matrix(4, cfg.d_model, rng));
  return out;
}

}  // namespace

TEST_CASE("predictor rank") {
  CHECK(predictor_rank(8) == 1);
  CHECK(predictor_rank(16) == 1);
  CHECK(predictor_rank(17) == 2);
  CHECK(predictor_rank(128) == 8);
  CHECK(predictor_rank(4096) == 256);
}

TEST_CASE("single-token block pools to the token itself") {
  std::mt19937_64 rng(41);
  PredictorParams p{oracle::random_matrix(1, 4, rng), oracle::random_matrix(4, 2, rng),
                    oracle::random_matrix(2, 3, rng)};
  const Matrix x = oracle::random_matrix(1, 4, rng);
  const auto s = predictor_forward(p, x);
  const auto expected = matmul(relu(matmul(x, p.w1)), p.w2);
  for (std::size_t j = 0; j < 3; ++j) CHECK(s[j] == doctest::Approx(expected(0, j)).epsilon(1e-6));
}

TEST_CASE("zero output projection gives zero scores") {
  std::mt19937_64 rng(42);
  PredictorParams p{oracle::random_matrix(1, 4, rng), oracle::random_matrix(4, 2, rng), Matrix(2, 3)};
  for (float s : predictor_forward(p, oracle::random_matrix(3, 4, rng))) CHECK(s == 0.0f);
}

TEST_CASE("predictor scalar hand-roll, d_model=4 r=2 d_ffn=3") {
  PredictorParams p;
  p.query = Matrix::from_rows({{1, 0, 0, 0}});
  p.w1 = Matrix::from_rows({{1, 0}, {0, 1}, {1, -1}, {0, 0}});
  p.w2 = Matrix::from_rows({{1, 2, 0}, {0, -1, 3}});
  const Matrix x = Matrix::from_rows({{2, 0, 1, 0}, {0, 1, 0, 1}});
  // logits q.x / sqrt(4): 1 and 0
  const double e = std::exp(1.0);
  const double a0 = e / (e + 1.0), a1 = 1.0 / (e + 1.0);
  const double pooled[4] = {2 * a0, a1, a0, a1};
  const double h0 = std::max(0.0, pooled[0] + pooled[2]);
  const double h1 = std::max(0.0, pooled[1] - pooled[2]);
  const double expected[3] = {h0, 2 * h0 - h1, 3 * h1};
  const auto s = predictor_forward(p, x);
  for (int j = 0; j < 3; ++j) CHECK(s[j] == doctest::Approx(expected[j]).epsilon(1e-6));
}

TEST_CASE("pooling ignores token order") {
  std::mt19937_64 rng(43);
  PredictorParams p{oracle::random_matrix(1, 6, rng), oracle::random_matrix(6, 2, rng),
                    oracle::random_matrix(2, 5, rng)};
  const Matrix x = oracle::random_matrix(4, 6, rng);
  Matrix shuffled(4, 6);
  const std::size_t perm[4] = {2, 0, 3, 1};
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 6; ++c) shuffled(r, c) = x(perm[r], c);
  const auto a = predictor_forward(p, x), b = predictor_forward(p, shuffled);
  for (std::size_t j = 0; j < 5; ++j) CHECK(a[j] == doctest::Approx(b[j]).epsilon(1e-6));
}

TEST_CASE("labels: tranche weights follow norm order") {
  // Column j has norm proportional to a fixed permutation of 1..10.
  const float ranks[10] = {3, 10, 1, 7, 5, 9, 2, 8, 4, 6};
  Matrix acts(1, 10);
  for (std::size_t j = 0; j < 10; ++j) acts(0, j) = ranks[j];
  const auto l = generate_labels(acts);
  const std::vector<float> labels = {0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
  const std::vector<float> weights = {1, 32, 1, 4, 1, 16, 1, 8, 1, 2};
  CHECK(l.labels == labels);
  CHECK(l.weights == weights);
}

TEST_CASE("labels: ties go to the lower index") {
  const auto l = generate_labels(Matrix(3, 10, 1.0f));
  CHECK(l.labels == std::vector<float>{1, 1, 1, 1, 1, 0, 0, 0, 0, 0});
  CHECK(l.weights == std::vector<float>{32, 16, 8, 4, 2, 1, 1, 1, 1, 1});
}

TEST_CASE("labels: two neurons") {
  const auto l = generate_labels(Matrix::from_rows({{0.1f, -3.0f}}));
  CHECK(l.labels == std::vector<float>{0, 1});
  CHECK(l.weights == std::vector<float>{1, 32});
}

TEST_CASE("labels: positive count is ceil(d_ffn / 2)") {
  std::mt19937_64 rng(44);
  for (std::size_t f : {1u, 3u, 7u, 12u, 33u}) {
    const auto l = generate_labels(oracle::random_matrix(2, f, rng));
    double pos = 0;
    for (float y : l.labels) pos += y;
    CHECK(pos == static_cast<double>((f + 1) / 2));
  }
}

TEST_CASE("weighted BCE values") {
  const std::vector<float> zero = {0.0f}, one = {1.0f}, w1 = {1.0f};
  CHECK(weighted_bce_loss(zero, one, w1).loss == doctest::Approx(std::log(2.0)));
  const std::vector<float> big = {40.0f};
  CHECK(weighted_bce_loss(big, one, w1).loss == doctest::Approx(0.0).epsilon(1e-6));
  // Saturated wrong answer hits the clamp instead of infinity.
  const std::vector<float> y0 = {0.0f};
  CHECK(weighted_bce_loss(big, y0, w1).loss == doctest::Approx(-std::log(1e-7)).epsilon(1e-6));
}

TEST_CASE("weighted BCE gradient against finite differences") {
  std::mt19937_64 rng(45);
  std::normal_distribution<double> nd(0.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> s(6), y(6), w(6);
    for (std::size_t j = 0; j < 6; ++j) {
      s[j] = static_cast<float>(nd(rng));
      y[j] = static_cast<float>(rng() % 2);
      w[j] = static_cast<float>(1 << (rng() % 6));
    }
    const auto r = weighted_bce_loss(s, y, w);
    for (std::size_t j = 0; j < 6; ++j) {
      oracle::Vec sd(s.begin(), s.end());
      const double h = 1e-4;
      sd[j] += h;
      const double up = oracle::bce(sd, y, w);
      sd[j] -= 2 * h;
      const double down = oracle::bce(sd, y, w);
      const double fd = (up - down) / (2 * h);
      CHECK(std::abs(r.grad[j] - fd) / std::max(std::abs(fd), 1e-6) < 1e-5);
    }
  }
}

TEST_CASE("predictor gradients against finite differences") {
  std::mt19937_64 rng(46);
  int checked = 0;
  while (checked < 25) {
    const std::size_t d = 2 + rng() % 7, f = 2 + rng() % 11, n = 1 + rng() % 5;
    const std::size_t r = predictor_rank(d);
    PredictorParams p{oracle::random_matrix(1, d, rng), oracle::random_matrix(d, r, rng, 0.7),
                      oracle::random_matrix(r, f, rng, 0.7)};
    const Matrix x = oracle::random_matrix(n, d, rng);
    oracle::PredictorD pd{oracle::from(p.query), oracle::from(p.w1), oracle::from(p.w2)};
    const auto xd = oracle::from(x);
    oracle::Vec z;
    oracle::predictor_scores(pd, xd, &z);
    bool kink = false;
    for (double v : z) kink = kink || std::abs(v) < 1e-2;
    if (kink) continue;
    const auto labels = generate_labels(oracle::random_matrix(3, f, rng));
    const auto bce = weighted_bce_loss(predictor_forward(p, x), labels.labels, labels.weights);
    const auto g = predictor_backward(p, x, bce.grad);
    auto obj = [&] { return oracle::bce(oracle::predictor_scores(pd, xd), labels.labels, labels.weights); };
    CHECK(oracle::max_relative_error(g.query, oracle::finite_difference(pd.q, obj), 1e-6) < 1e-4);
    CHECK(oracle::max_relative_error(g.w1, oracle::finite_difference(pd.w1, obj), 1e-6) < 1e-4);
    CHECK(oracle::max_relative_error(g.w2, oracle::finite_difference(pd.w2, obj), 1e-6) < 1e-4);
    ++checked;
  }
}

TEST_CASE("training: zero learning rate leaves the initialization") {
  const auto cfg = tiny_config();
  const auto w = teacher(cfg, 1);
  TrainOptions opts;
  opts.epochs = 3;
  opts.lr = 0.0f;
  opts.seed = 9;
  const auto trained = train_predictor(w, blocks(cfg, 6, 2), {}, opts);
  for (std::size_t l = 0; l < cfg.n_layers; ++l)
    CHECK(trained[l] == init_predictor(cfg, derive_seed(9, l)));
}

TEST_CASE("training: deterministic and reduces held-out loss") {
  const auto cfg = tiny_config();
  const auto w = teacher(cfg, 3);
  const auto train = blocks(cfg, 24, 4), held = blocks(cfg, 8, 5);
  TrainOptions opts;
  opts.epochs = 15;
  opts.lr = 0.1f;
  opts.seed = 1;
  TrainingLog log;
  const auto a = train_predictor(w, train, held, opts, &log);
  const auto b = train_predictor(w, train, held, opts);
  CHECK(a == b);
  REQUIRE(log.size() == cfg.n_layers * (opts.epochs + 1));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& first = log[l * (opts.epochs + 1)];
    const auto& last = log[l * (opts.epochs + 1) + opts.epochs];
    CHECK(first.epoch == 0);
    CHECK(last.heldout_loss < first.heldout_loss);
    CHECK(predictor_loss(a[l], w.layers[l], held[l]) == doctest::Approx(last.heldout_loss));
  }
}

TEST_CASE("training aborts on non-finite loss and keeps the last good parameters") {
  const auto cfg = tiny_config();
  const auto w = teacher(cfg, 6);
  auto train = blocks(cfg, 4, 7);
  train[1][2](0, 0) = std::numeric_limits<float>::infinity();
  TrainOptions opts;
  opts.epochs = 2;
  try {
    train_predictor(w, train, {}, opts);
    FAIL("expected TrainingAborted");
  } catch (const TrainingAborted<PredictorParams>& e) {
    REQUIRE(e.last_good().size() == cfg.n_layers);
    for (const auto& p : e.last_good()) CHECK(all_finite(p.w2));
    CHECK_FALSE(e.last_good()[0] == init_predictor(cfg, derive_seed(0, 0)));
  }
}
