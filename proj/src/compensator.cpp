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

#include "ffwd/compensator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ffwd/random.hpp"
#include "ffwd/sparse_ffn.hpp"

namespace ffwd {
namespace {

struct Sample {
  const Matrix* x;
  Matrix y_dense;
  Matrix y_oracle;
  Matrix y_predicted;
};

Matrix sparse_output(const Matrix& x, const LayerWeights& w, const ExpertMask& mask) {
  return sparse_ffn_forward(x, select_subweights(w, mask));
}

ExpertMask choose_mask(const Matrix& x, std::size_t k, MaskSource source,
                       const PredictorParams* predictor, const Matrix& activations) {
  if (source == MaskSource::Oracle) return oracle_mask_from_activations(activations, k);
  if (!predictor) throw ValidationError("predicted masks requested without a predictor");
  return build_mask(predictor_forward(*predictor, x), k);
}

void axpy(Matrix& dst, const Matrix& src, float alpha) {
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += alpha * s[i];
}

double mean_loss(const CompensatorParams& p, const std::vector<Sample>& samples, MaskSource source) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : samples) {
    const Matrix& ys = source == MaskSource::Oracle ? s.y_oracle : s.y_predicted;
    total += squared_frobenius(
        add(s.y_dense, scale(apply_compensation(ys, compensator_forward(p, *s.x)), -1.0f)));
  }
  return total / static_cast<double>(samples.size());
}

std::vector<Sample> build_samples(const LayerWeights& w, const std::vector<Matrix>& blocks,
                                  std::size_t k, const PredictorParams* predictor) {
  std::vector<Sample> out;
  out.reserve(blocks.size());
  for (const auto& x : blocks) {
    const auto dense = dense_ffn_with_activations(x, w);
    Sample s{&x, dense.output, {}, {}};
    s.y_oracle = sparse_output(x, w, oracle_mask_from_activations(dense.activations, k));
    if (predictor) {
      s.y_predicted = sparse_output(x, w, build_mask(predictor_forward(*predictor, x), k));
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

std::size_t compensator_rank(std::size_t d_model) { return std::max<std::size_t>(1, d_model / 8); }

CompensatorParams init_compensator(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t r = compensator_rank(cfg.d_model);
  CompensatorParams p;
  p.w1 = random_normal(cfg.d_model, r, rng, 1.0f / std::sqrt(static_cast<float>(cfg.d_model)));
  p.w2 = Matrix(r, cfg.d_model);
  return p;
}

void validate_compensator(const CompensatorParams& p, const ModelConfig& cfg) {
  if (p.w1.rows() != cfg.d_model || p.w1.cols() == 0 || p.w2.rows() != p.w1.cols() ||
      p.w2.cols() != cfg.d_model) {
    throw ValidationError("compensator params " + p.w1.shape_string() + "/" +
                          p.w2.shape_string() + " do not fit d_model=" +
                          std::to_string(cfg.d_model));
  }
}

Matrix compensator_forward(const CompensatorParams& p, const Matrix& x) {
  return matmul(silu(matmul(x, p.w1)), p.w2);
}

Matrix apply_compensation(const Matrix& sparse_out, const Matrix& comp_out) {
  return add(sparse_out, comp_out);
}

double CompensatorGradients::squared_norm() const {
  return squared_frobenius(w1) + squared_frobenius(w2);
}

MseResult mse_distill_loss(const CompensatorParams& p, const Matrix& x, const Matrix& y_sparse,
                           const Matrix& y_dense) {
  const Matrix pre = matmul(x, p.w1);
  const Matrix act = silu(pre);
  const Matrix comp = matmul(act, p.w2);
  Matrix residual = add(y_dense, scale(apply_compensation(y_sparse, comp), -1.0f));

  MseResult r;
  r.loss = squared_frobenius(residual);
  const Matrix g_out = scale(residual, -2.0f);
  r.grad.w2 = matmul(transpose(act), g_out);
  Matrix g_act = matmul_transposed(g_out, p.w2);
  auto ga = g_act.values();
  auto pv = pre.values();
  for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= silu_grad(pv[i]);
  r.grad.w1 = matmul(transpose(x), g_act);
  return r;
}

std::vector<CompensatorParams> train_compensator(const ModelWeights& teacher,
                                                 const LayerBlocks& train,
                                                 const LayerBlocks& heldout,
                                                 std::span<const PredictorParams> predictors,
                                                 std::span<const std::size_t> topk,
                                                 const CompensatorTrainOptions& opts,
                                                 TrainingLog* log) {
  const auto& cfg = teacher.config;
  if (train.size() != cfg.n_layers || topk.size() != cfg.n_layers) {
    throw ValidationError("train_compensator: per-layer inputs do not match the model depth");
  }
  if (!(opts.phase_split >= 0.0 && opts.phase_split <= 1.0)) {
    throw ValidationError("train_compensator: phase_split must lie in [0, 1]");
  }
  const bool needs_predictor = opts.phase_split < 1.0;
  if (needs_predictor && predictors.size() != cfg.n_layers) {
    throw ValidationError("train_compensator: predictor-mask phase requires trained predictors");
  }
  if (opts.base.batch_size == 0) throw ValidationError("train_compensator: batch_size must be >= 1");

  std::vector<CompensatorParams> params;
  params.reserve(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l)
    params.push_back(init_compensator(cfg, derive_seed(opts.base.seed, 2000 + l)));

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& w = teacher.layers[l];
    const PredictorParams* pred = needs_predictor ? &predictors[l] : nullptr;
    const auto samples = build_samples(w, train[l], topk[l], pred);
    const auto held = heldout.size() > l ? build_samples(w, heldout[l], topk[l], pred)
                                         : std::vector<Sample>{};
    auto& p = params[l];

    const std::size_t batches = (samples.size() + opts.base.batch_size - 1) / opts.base.batch_size;
    const std::size_t total_steps = batches * opts.base.epochs;
    const auto oracle_steps =
        static_cast<std::size_t>(std::ceil(opts.phase_split * static_cast<double>(total_steps)));

    if (log) {
      log->push_back({"oracle", 0, l, mean_loss(p, samples, MaskSource::Oracle),
                      mean_loss(p, held, MaskSource::Oracle)});
    }

    std::mt19937_64 rng(derive_seed(opts.base.seed, 3000 + l));
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= opts.base.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      double epoch_loss = 0.0;
      MaskSource source = MaskSource::Oracle;
      for (std::size_t start = 0; start < order.size(); start += opts.base.batch_size, ++step) {
        source = step < oracle_steps ? MaskSource::Oracle : MaskSource::Predicted;
        const std::size_t stop = std::min(order.size(), start + opts.base.batch_size);
        const float inv_batch = 1.0f / static_cast<float>(stop - start);
        CompensatorGradients acc{Matrix(p.w1.rows(), p.w1.cols()), Matrix(p.w2.rows(), p.w2.cols())};
        for (std::size_t i = start; i < stop; ++i) {
          const auto& s = samples[order[i]];
          const Matrix& ys = source == MaskSource::Oracle ? s.y_oracle : s.y_predicted;
          const auto mse = mse_distill_loss(p, *s.x, ys, s.y_dense);
          if (!std::isfinite(mse.loss)) {
            throw TrainingAborted<CompensatorParams>(
                "compensator training diverged at layer " + std::to_string(l) + ", epoch " +
                    std::to_string(epoch), params);
          }
          epoch_loss += mse.loss;
          axpy(acc.w1, mse.grad.w1, inv_batch);
          axpy(acc.w2, mse.grad.w2, inv_batch);
        }
        const double norm = std::sqrt(acc.squared_norm());
        float lr = opts.base.lr;
        if (norm > opts.base.clip_norm && norm > 0.0)
          lr *= static_cast<float>(opts.base.clip_norm / norm);
        CompensatorParams next = p;
        axpy(next.w1, acc.w1, -lr);
        axpy(next.w2, acc.w2, -lr);
        if (!all_finite(next.w1) || !all_finite(next.w2)) {
          throw TrainingAborted<CompensatorParams>(
              "compensator parameters became non-finite at layer " + std::to_string(l), params);
        }
        p = std::move(next);
      }
      if (log) {
        const double train_mean =
            samples.empty() ? 0.0 : epoch_loss / static_cast<double>(samples.size());
        log->push_back({source == MaskSource::Oracle ? "oracle" : "predicted", epoch, l, train_mean,
                        mean_loss(p, held, source)});
      }
    }
  }
  return params;
}

CompensationStats evaluate_compensation(const LayerWeights& teacher_layer,
                                        const std::vector<Matrix>& blocks, std::size_t k,
                                        MaskSource source, const PredictorParams* predictor,
                                        const CompensatorParams& comp) {
  CompensationStats st;
  for (const auto& x : blocks) {
    const auto dense = dense_ffn_with_activations(x, teacher_layer);
    const auto mask = choose_mask(x, k, source, predictor, dense.activations);
    const Matrix sparse = sparse_output(x, teacher_layer, mask);
    const Matrix c = compensator_forward(comp, x);
    st.mean_sparse_error += squared_frobenius(add(dense.output, scale(sparse, -1.0f)));
    st.mean_compensated_error +=
        squared_frobenius(add(dense.output, scale(apply_compensation(sparse, c), -1.0f)));
    const double sparse_norm = std::sqrt(squared_frobenius(sparse));
    if (sparse_norm > 0.0) st.comp_to_ffn_norm_ratio += std::sqrt(squared_frobenius(c)) / sparse_norm;
    ++st.blocks;
  }
  if (st.blocks > 0) {
    const auto n = static_cast<double>(st.blocks);
    st.mean_sparse_error /= n;
    st.mean_compensated_error /= n;
    st.comp_to_ffn_norm_ratio /= n;
  }
  return st;
}

}  // namespace ffwd
