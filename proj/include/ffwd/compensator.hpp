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

// Low-rank error compensator added to the sparse FFN output, trained by
// layerwise distillation against the dense FFN.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ffwd/model.hpp"
#include "ffwd/predictor.hpp"
#include "ffwd/tensor.hpp"

namespace ffwd {

struct CompensatorParams {
  Matrix w1;  // d_model x r'
  Matrix w2;  // r' x d_model

  std::size_t rank() const { return w1.cols(); }
  friend bool operator==(const CompensatorParams&, const CompensatorParams&) = default;
};

// d_model / 8, at least 1.
std::size_t compensator_rank(std::size_t d_model);

// w2 starts at zero so an untrained compensator is the identity on the
// sparse output.
CompensatorParams init_compensator(const ModelConfig& cfg, std::uint64_t seed);
void validate_compensator(const CompensatorParams& p, const ModelConfig& cfg);

// silu(x * W1) * W2, token by token.
Matrix compensator_forward(const CompensatorParams& p, const Matrix& x);
Matrix apply_compensation(const Matrix& sparse_out, const Matrix& comp_out);

struct CompensatorGradients {
  Matrix w1, w2;
  double squared_norm() const;
};

struct MseResult {
  double loss = 0.0;  // ||y_dense - (y_sparse + comp(x))||^2 summed over the block
  CompensatorGradients grad;
};

MseResult mse_distill_loss(const CompensatorParams& p, const Matrix& x, const Matrix& y_sparse,
                           const Matrix& y_dense);

enum class MaskSource { Oracle, Predicted };

struct CompensatorTrainOptions {
  TrainOptions base;
  // Fraction of optimizer steps that use oracle masks before switching to
  // predictor masks.
  double phase_split = 0.5;
};

// `topk[l]` is the neuron count used when sparsifying layer l. `predictors`
// may be empty only when phase_split >= 1.
std::vector<CompensatorParams> train_compensator(const ModelWeights& teacher,
                                                 const LayerBlocks& train,
                                                 const LayerBlocks& heldout,
                                                 std::span<const PredictorParams> predictors,
                                                 std::span<const std::size_t> topk,
                                                 const CompensatorTrainOptions& opts,
                                                 TrainingLog* log = nullptr);

struct CompensationStats {
  double mean_sparse_error = 0.0;       // mean ||Y_dense - FFN_hat||^2 per block
  double mean_compensated_error = 0.0;  // mean ||Y_dense - (FFN_hat + Y_comp)||^2 per block
  double comp_to_ffn_norm_ratio = 0.0;  // mean ||Y_comp|| / ||FFN_hat||
  std::size_t blocks = 0;
};

CompensationStats evaluate_compensation(const LayerWeights& teacher_layer,
                                        const std::vector<Matrix>& blocks, std::size_t k,
                                        MaskSource source, const PredictorParams* predictor,
                                        const CompensatorParams& comp);

}  // namespace ffwd
