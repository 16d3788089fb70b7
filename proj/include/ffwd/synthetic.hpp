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

// Desk-scale synthetic models and corpora: plain random models, a clustered
// construction with known expert-neuron structure, and a model whose layers
// differ sharply in attention pattern and FFN importance.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ffwd/engine.hpp"
#include "ffwd/model.hpp"
#include "ffwd/predictor.hpp"
#include "ffwd/tensor.hpp"

namespace ffwd {

// N(0, stddev) for every projection and the embedding, unit norm gains.
ModelWeights generate_synthetic_model(const ModelConfig& cfg, std::uint64_t seed,
                                      float stddev = 0.02f);

enum class BlockPattern {
  Random,  // each block draws its cluster independently
  Halves,  // first half of the blocks from one cluster, the rest from the farthest one
};

struct SyntheticCorpusSpec {
  std::size_t vocab_size = 64;
  std::size_t n_sequences = 16;
  std::size_t sequence_length = 256;
  std::size_t n_clusters = 2;
  std::uint64_t seed = 0;
  std::size_t block_size = 128;
  BlockPattern pattern = BlockPattern::Random;
};

// Token t belongs to cluster t % n_clusters. Each layer splits its neurons into
// n_clusters groups; a cluster drives its own group hardest and the next
// n_clusters/2 - 1 groups progressively weaker.
struct ClusterLayout {
  std::size_t n_clusters = 0;
  std::size_t d_ffn = 0;
  // groups[layer][g]: neurons of group g, increasing.
  std::vector<std::vector<std::vector<std::size_t>>> groups;

  std::size_t cluster_of(Token t) const { return static_cast<std::size_t>(t) % n_clusters; }
  // Neurons of the n_clusters/2 groups (at least one) a cluster activates.
  IndexSet hot_neurons(std::size_t layer, std::size_t cluster) const;
};

struct ClusteredModel {
  ModelWeights model;
  ClusterLayout layout;
};

// Requires 2 <= n_clusters <= d_model and n_clusters dividing d_ffn.
ClusteredModel generate_clustered_model(const ModelConfig& cfg, std::size_t n_clusters,
                                        std::uint64_t seed);

struct ClusteredCorpus {
  std::vector<std::vector<Token>> sequences;
  // block_clusters[s][b]: cluster every token of block b of sequence s came from.
  std::vector<std::vector<std::size_t>> block_clusters;
};

ClusteredCorpus generate_clustered_corpus(const SyntheticCorpusSpec& spec);

// Layers flagged in `sink_layers` send nearly all attention to token 0 and
// have a small FFN; the others attend uniformly and carry a large FFN.
// Sequences for this model should start with token 0 and avoid it elsewhere.
ModelWeights generate_heterogeneous_model(const ModelConfig& cfg,
                                          const std::vector<bool>& sink_layers,
                                          std::uint64_t seed);

// Sequences of length `length` that start with the sink token 0 followed by
// tokens drawn uniformly from [1, vocab_size).
std::vector<std::vector<Token>> generate_sink_corpus(std::size_t vocab_size,
                                                     std::size_t n_sequences, std::size_t length,
                                                     std::uint64_t seed);

// Normalized FFN inputs of every block of every sequence under dense
// block-wise prefill, [layer][block].
LayerBlocks collect_ffn_inputs(const Engine& engine,
                               std::span<const std::vector<Token>> sequences);

// Whitespace-separated ids, one sequence per line. Blank lines are skipped.
std::vector<std::vector<Token>> read_token_file(const std::string& path);
void write_token_file(const std::vector<std::vector<Token>>& sequences, const std::string& path);

}  // namespace ffwd
