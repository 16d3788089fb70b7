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

#include "ffwd/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ffwd/random.hpp"
#include "ffwd/sparse_ffn.hpp"

namespace ffwd {
namespace {

struct ForwardCache {
  Matrix probs;   // 1 x n
  Matrix pooled;  // 1 x d_model
  Matrix hidden_pre;  // 1 x r
  Matrix hidden;      // 1 x r
  Matrix scores;      // 1 x d_ffn
};

ForwardCache forward_cached(const PredictorParams& p, const Matrix& x) {
  if (x.rows() == 0) throw ValidationError("predictor_forward: empty block");
  if (x.cols() != p.query.cols()) {
    throw ValidationError("predictor_forward: block " + x.shape_string() + " for query " +
                          p.query.shape_string());
  }
  ForwardCache c;
  const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(x.cols()));
  c.probs = softmax_rows(scale(matmul_transposed(p.query, x), inv_sqrt_d));
  c.pooled = matmul(c.probs, x);
  c.hidden_pre = matmul(c.pooled, p.w1);
  c.hidden = relu(c.hidden_pre);
  c.scores = matmul(c.hidden, p.w2);
  return c;
}

void axpy(Matrix& dst, const Matrix& src, float alpha) {
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += alpha * s[i];
}

bool finite(const PredictorParams& p) {
  return all_finite(p.query) && all_finite(p.w1) && all_finite(p.w2);
}

struct LayerExample {
  const Matrix* x;
  NeuronLabels labels;
};

std::vector<LayerExample> label_examples(const LayerWeights& teacher, const std::vector<Matrix>& blocks) {
  std::vector<LayerExample> out;
  out.reserve(blocks.size());
  for (const auto& x : blocks) {
    out.push_back({&x, generate_labels(gated_activations(x, teacher.w_gate, teacher.w_up))});
  }
  return out;
}

double mean_loss(const PredictorParams& p, const std::vector<LayerExample>& examples) {
  if (examples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : examples) {
    const auto s = predictor_forward(p, *ex.x);
    total += weighted_bce_loss(s, ex.labels.labels, ex.labels.weights).loss;
  }
  return total / static_cast<double>(examples.size());
}

}  // namespace

std::size_t predictor_rank(std::size_t d_model) {
  const std::size_t target = (d_model + 15) / 16;
  std::size_t r = 1;
  while (r < target) r <<= 1;
  return r;
}

PredictorParams init_predictor(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t r = predictor_rank(cfg.d_model);
  PredictorParams p;
  p.query = random_normal(1, cfg.d_model, rng, 0.02f);
  p.w1 = random_normal(cfg.d_model, r, rng, std::sqrt(2.0f / static_cast<float>(cfg.d_model)));
  p.w2 = random_normal(r, cfg.d_ffn, rng, 0.01f);
  return p;
}

void validate_predictor(const PredictorParams& p, const ModelConfig& cfg) {
  const std::size_t r = p.w1.cols();
  if (p.query.rows() != 1 || p.query.cols() != cfg.d_model || p.w1.rows() != cfg.d_model ||
      p.w2.rows() != r || p.w2.cols() != cfg.d_ffn || r == 0) {
    throw ValidationError("predictor params " + p.query.shape_string() + "/" +
                          p.w1.shape_string() + "/" + p.w2.shape_string() +
                          " do not fit d_model=" + std::to_string(cfg.d_model) +
                          ", d_ffn=" + std::to_string(cfg.d_ffn));
  }
}

std::vector<float> predictor_forward(const PredictorParams& p, const Matrix& x) {
  const auto c = forward_cached(p, x);
  return c.scores.storage();
}

double PredictorGradients::squared_norm() const {
  return squared_frobenius(query) + squared_frobenius(w1) + squared_frobenius(w2);
}

PredictorGradients predictor_backward(const PredictorParams& p, const Matrix& x,
                                      std::span<const float> grad_scores) {
  const auto c = forward_cached(p, x);
  if (grad_scores.size() != p.w2.cols()) {
    throw ValidationError("predictor_backward: gradient length " +
                          std::to_string(grad_scores.size()) + " for d_ffn " +
                          std::to_string(p.w2.cols()));
  }
  const Matrix gs = Matrix::row_vector(grad_scores);
  PredictorGradients g;
  g.w2 = matmul(transpose(c.hidden), gs);
  Matrix gh = matmul_transposed(gs, p.w2);
  for (std::size_t j = 0; j < gh.cols(); ++j)
    if (!(c.hidden_pre(0, j) > 0.0f)) gh(0, j) = 0.0f;
  g.w1 = matmul(transpose(c.pooled), gh);
  const Matrix ga = matmul_transposed(gh, p.w1);
  const Matrix gp = matmul_transposed(ga, x);  // 1 x n
  double weighted = 0.0;
  for (std::size_t t = 0; t < gp.cols(); ++t)
    weighted += static_cast<double>(c.probs(0, t)) * gp(0, t);
  Matrix gz(1, gp.cols());
  for (std::size_t t = 0; t < gp.cols(); ++t)
    gz(0, t) = static_cast<float>(c.probs(0, t) * (gp(0, t) - weighted));
  const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(x.cols()));
  g.query = scale(matmul(gz, x), inv_sqrt_d);
  return g;
}

NeuronLabels generate_labels(const Matrix& dense_activations) {
  const auto norms = column_l2_norms(dense_activations);
  const std::size_t f = norms.size();
  std::vector<std::size_t> order(f);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });

  static constexpr float kTrancheWeights[] = {32.0f, 16.0f, 8.0f, 4.0f, 2.0f};
  const std::size_t positives = (f + 1) / 2;
  const std::size_t tranche = std::max<std::size_t>(1, (positives + 4) / 5);

  NeuronLabels out;
  out.labels.assign(f, 0.0f);
  out.weights.assign(f, 1.0f);
  for (std::size_t rank = 0; rank < positives; ++rank) {
    const std::size_t j = order[rank];
    out.labels[j] = 1.0f;
    out.weights[j] = kTrancheWeights[std::min<std::size_t>(rank / tranche, 4)];
  }
  return out;
}

BceResult weighted_bce_loss(std::span<const float> scores, std::span<const float> labels,
                            std::span<const float> weights) {
  if (scores.size() != labels.size() || scores.size() != weights.size()) {
    throw ValidationError("weighted_bce_loss: length mismatch");
  }
  constexpr double kLo = 1e-7, kHi = 1.0 - 1e-7;
  BceResult r;
  r.grad.resize(scores.size());
  for (std::size_t j = 0; j < scores.size(); ++j) {
    const double s = scores[j];
    const double sig = s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
    const double clamped = std::clamp(sig, kLo, kHi);
    const double y = labels[j], w = weights[j];
    r.loss -= w * (y * std::log(clamped) + (1.0 - y) * std::log(1.0 - clamped));
    r.grad[j] = static_cast<float>(w * (sig - y));
  }
  return r;
}

double predictor_loss(const PredictorParams& p, const LayerWeights& teacher_layer,
                      const std::vector<Matrix>& blocks) {
  return mean_loss(p, label_examples(teacher_layer, blocks));
}

std::vector<PredictorParams> train_predictor(const ModelWeights& teacher, const LayerBlocks& train,
                                             const LayerBlocks& heldout, const TrainOptions& opts,
                                             TrainingLog* log) {
  const auto& cfg = teacher.config;
  if (train.size() != cfg.n_layers) {
    throw ValidationError("train_predictor: training blocks for " + std::to_string(train.size()) +
                          " layers, model has " + std::to_string(cfg.n_layers));
  }
  if (opts.batch_size == 0) throw ValidationError("train_predictor: batch_size must be >= 1");

  std::vector<PredictorParams> params;
  params.reserve(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l)
    params.push_back(init_predictor(cfg, derive_seed(opts.seed, l)));

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& teacher_layer = teacher.layers[l];
    const auto examples = label_examples(teacher_layer, train[l]);
    const auto held = heldout.size() > l ? label_examples(teacher_layer, heldout[l])
                                         : std::vector<LayerExample>{};
    auto& p = params[l];
    if (log) log->push_back({"predictor", 0, l, mean_loss(p, examples), mean_loss(p, held)});

    std::mt19937_64 rng(derive_seed(opts.seed, 1000 + l));
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      double epoch_loss = 0.0;
      for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
        const std::size_t stop = std::min(order.size(), start + opts.batch_size);
        const float inv_batch = 1.0f / static_cast<float>(stop - start);
        PredictorGradients acc{Matrix(p.query.rows(), p.query.cols()),
                               Matrix(p.w1.rows(), p.w1.cols()),
                               Matrix(p.w2.rows(), p.w2.cols())};
        for (std::size_t i = start; i < stop; ++i) {
          const auto& ex = examples[order[i]];
          const auto s = predictor_forward(p, *ex.x);
          const auto bce = weighted_bce_loss(s, ex.labels.labels, ex.labels.weights);
          if (!std::isfinite(bce.loss)) {
            throw TrainingAborted<PredictorParams>(
                "predictor training diverged at layer " + std::to_string(l) + ", epoch " +
                    std::to_string(epoch), params);
          }
          epoch_loss += bce.loss;
          const auto g = predictor_backward(p, *ex.x, bce.grad);
          axpy(acc.query, g.query, inv_batch);
          axpy(acc.w1, g.w1, inv_batch);
          axpy(acc.w2, g.w2, inv_batch);
        }
        const double norm = std::sqrt(acc.squared_norm());
        float step = opts.lr;
        if (norm > opts.clip_norm && norm > 0.0) step *= static_cast<float>(opts.clip_norm / norm);
        PredictorParams next = p;
        axpy(next.query, acc.query, -step);
        axpy(next.w1, acc.w1, -step);
        axpy(next.w2, acc.w2, -step);
        if (!finite(next)) {
          throw TrainingAborted<PredictorParams>(
              "predictor parameters became non-finite at layer " + std::to_string(l), params);
        }
        p = std::move(next);
      }
      if (log) {
        const double train_mean = examples.empty() ? 0.0 : epoch_loss / static_cast<double>(examples.size());
        log->push_back({"predictor", epoch, l, train_mean, mean_loss(p, held)});
      }
    }
  }
  return params;
}

}  // namespace ffwd
