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

// Expert neuron predictor: attention pooling over the block with a learned
// query, then a ReLU bottleneck MLP that scores every FFN neuron. Trained per
// layer against dense-teacher activation labels with a weighted BCE loss.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ffwd/errors.hpp"
#include "ffwd/model.hpp"
#include "ffwd/tensor.hpp"

namespace ffwd {

struct PredictorParams {
  Matrix query;  // 1 x d_model
  Matrix w1;     // d_model x r
  Matrix w2;     // r x d_ffn

  std::size_t rank() const { return w1.cols(); }
  friend bool operator==(const PredictorParams&, const PredictorParams&) = default;
};

// Smallest power of two >= d_model / 16.
std::size_t predictor_rank(std::size_t d_model);

PredictorParams init_predictor(const ModelConfig& cfg, std::uint64_t seed);
void validate_predictor(const PredictorParams& p, const ModelConfig& cfg);

std::vector<float> predictor_forward(const PredictorParams& p, const Matrix& x);

struct PredictorGradients {
  Matrix query, w1, w2;
  double squared_norm() const;
};

// Backpropagates dL/ds through the MLP and the pooling attention.
PredictorGradients predictor_backward(const PredictorParams& p, const Matrix& x,
                                      std::span<const float> grad_scores);

struct NeuronLabels {
  std::vector<float> labels;   // 1 for the top ceil(d_ffn/2) neurons
  std::vector<float> weights;  // 32,16,8,4,2 over positive tranches, 1 on negatives
};

// Labels from the dense gated activation (tokens x d_ffn) of one block.
NeuronLabels generate_labels(const Matrix& dense_activations);

struct BceResult {
  double loss = 0.0;
  std::vector<float> grad;  // dL/ds
};

BceResult weighted_bce_loss(std::span<const float> scores, std::span<const float> labels,
                            std::span<const float> weights);

// FFN inputs of the dense teacher, blocks[layer][i].
using LayerBlocks = std::vector<std::vector<Matrix>>;

struct TrainOptions {
  std::size_t epochs = 20;
  float lr = 0.05f;
  std::uint64_t seed = 0;
  std::size_t batch_size = 8;
  float clip_norm = 1.0f;
};

struct LossPoint {
  std::string phase;
  std::size_t epoch = 0;
  std::size_t layer = 0;
  double train_loss = 0.0;
  double heldout_loss = 0.0;
};
using TrainingLog = std::vector<LossPoint>;

template <typename Params>
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, std::vector<Params> last_good)
      : NumericError(what), last_good_(std::move(last_good)) {}
  const std::vector<Params>& last_good() const { return last_good_; }

 private:
  std::vector<Params> last_good_;
};

// Plain mini-batch gradient descent with global-norm clipping, one predictor
// per layer. Log rows are written at epoch 0 (initial) and after each epoch.
std::vector<PredictorParams> train_predictor(const ModelWeights& teacher, const LayerBlocks& train,
                                             const LayerBlocks& heldout, const TrainOptions& opts,
                                             TrainingLog* log = nullptr);

// Mean weighted BCE of `p` over `blocks` of one layer.
double predictor_loss(const PredictorParams& p, const LayerWeights& teacher_layer,
                      const std::vector<Matrix>& blocks);

}  // namespace ffwd
