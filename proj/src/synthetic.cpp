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

#include "ffwd/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "ffwd/errors.hpp"
#include "ffwd/random.hpp"

namespace ffwd {
namespace {

enum Stream : std::uint64_t {
  kEmbeddingStream = 1,
  kHeadStream = 2,
  kDirectionStream = 3,
  kLayerStream = 100,
};

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  return std::mt19937_64(derive_seed(seed, stream));
}

ModelWeights unit_norm_shell(const ModelConfig& cfg) {
  ModelWeights w;
  w.config = cfg;
  w.layers.resize(cfg.n_layers);
  for (auto& layer : w.layers) {
    layer.attn_norm.assign(cfg.d_model, 1.0f);
    layer.ffn_norm.assign(cfg.d_model, 1.0f);
  }
  w.final_norm.assign(cfg.d_model, 1.0f);
  return w;
}

void normalize(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
}

// n orthonormal directions in R^d by Gram-Schmidt over Gaussian draws.
std::vector<std::vector<double>> orthonormal_directions(std::size_t n, std::size_t d,
                                                        std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> dirs;
  while (dirs.size() < n) {
    std::vector<double> v(d);
    for (double& x : v) x = normal(rng);
    for (const auto& u : dirs) {
      const double dot = std::inner_product(v.begin(), v.end(), u.begin(), 0.0);
      for (std::size_t i = 0; i < d; ++i) v[i] -= dot * u[i];
    }
    double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (norm < 1e-6) continue;
    for (double& x : v) x /= norm;
    dirs.push_back(std::move(v));
  }
  return dirs;
}

void check_corpus_spec(const SyntheticCorpusSpec& spec) {
  if (spec.n_clusters < 2) throw ValidationError("clustered corpus needs n_clusters >= 2");
  if (spec.vocab_size < spec.n_clusters) {
    throw ValidationError("vocab_size must be at least n_clusters");
  }
  if (spec.block_size == 0 || spec.sequence_length == 0) {
    throw ValidationError("block_size and sequence_length must be positive");
  }
}

}  // namespace

ModelWeights generate_synthetic_model(const ModelConfig& cfg, std::uint64_t seed, float stddev) {
  cfg.validate();
  ModelWeights w = unit_norm_shell(cfg);
  const std::size_t d = cfg.d_model, f = cfg.d_ffn;
  auto rng = stream_rng(seed, kEmbeddingStream);
  w.embedding = random_normal(cfg.vocab_size, d, rng, stddev);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    auto lr = stream_rng(seed, kLayerStream + l);
    auto& layer = w.layers[l];
    layer.wq = random_normal(d, d, lr, stddev);
    layer.wk = random_normal(d, d, lr, stddev);
    layer.wv = random_normal(d, d, lr, stddev);
    layer.wo = random_normal(d, d, lr, stddev);
    layer.w_gate = random_normal(d, f, lr, stddev);
    layer.w_up = random_normal(d, f, lr, stddev);
    layer.w_down = random_normal(f, d, lr, stddev);
  }
  if (!cfg.tie_embeddings) {
    auto hr = stream_rng(seed, kHeadStream);
    w.lm_head = random_normal(d, cfg.vocab_size, hr, stddev);
  }
  return w;
}

IndexSet ClusterLayout::hot_neurons(std::size_t layer, std::size_t cluster) const {
  const std::size_t reach = std::max<std::size_t>(1, n_clusters / 2);
  const auto& layer_groups = groups.at(layer);
  std::vector<std::size_t> out;
  for (std::size_t m = 0; m < reach; ++m) {
    const auto& g = layer_groups[(cluster + m) % n_clusters];
    out.insert(out.end(), g.begin(), g.end());
  }
  std::sort(out.begin(), out.end());
  return IndexSet(std::move(out), d_ffn);
}

ClusteredModel generate_clustered_model(const ModelConfig& cfg, std::size_t n_clusters,
                                        std::uint64_t seed) {
  cfg.validate();
  const std::size_t d = cfg.d_model, f = cfg.d_ffn, n = n_clusters;
  if (n < 2 || n > d) throw ValidationError("n_clusters must lie in [2, d_model]");
  if (f % n != 0) throw ValidationError("n_clusters must divide d_ffn");
  if (cfg.vocab_size < n) throw ValidationError("vocab_size must be at least n_clusters");

  ClusteredModel out;
  out.model = generate_synthetic_model(cfg, seed, 0.02f);
  out.layout.n_clusters = n;
  out.layout.d_ffn = f;

  auto drng = stream_rng(seed, kDirectionStream);
  const auto dirs = orthonormal_directions(n, d, drng);

  // Embeddings: cluster direction plus isotropic noise, rescaled to norm sqrt(d).
  auto erng = stream_rng(seed, kEmbeddingStream);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t t = 0; t < cfg.vocab_size; ++t) {
    const auto& u = dirs[t % n];
    std::vector<double> e(d);
    for (std::size_t i = 0; i < d; ++i) e[i] = u[i] + 0.3 * normal(erng) * inv_sqrt_d;
    normalize(e);
    for (std::size_t i = 0; i < d; ++i) {
      out.model.embedding(t, i) = static_cast<float>(e[i] * std::sqrt(static_cast<double>(d)));
    }
  }

  const std::size_t group = f / n;
  const std::size_t reach = std::max<std::size_t>(1, n / 2);
  const double beta = 2.0 * inv_sqrt_d;
  const double gamma = 0.5;
  out.layout.groups.resize(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    auto lr = stream_rng(seed, kLayerStream + 1000 + l);
    std::vector<std::size_t> perm(f);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), lr);
    auto& layer = out.model.layers[l];
    auto& groups = out.layout.groups[l];
    groups.resize(n);
    for (std::size_t g = 0; g < n; ++g) {
      groups[g].assign(perm.begin() + g * group, perm.begin() + (g + 1) * group);
      std::sort(groups[g].begin(), groups[g].end());
      for (std::size_t j : groups[g]) {
        for (std::size_t i = 0; i < d; ++i) {
          double base = 0.0;
          for (std::size_t m = 0; m < reach; ++m) {
            base += std::pow(gamma, static_cast<double>(m)) * dirs[(g + n - m) % n][i];
          }
          layer.w_gate(i, j) = static_cast<float>(beta * base + 0.02 * normal(lr));
          layer.w_up(i, j) = static_cast<float>(beta * base + 0.02 * normal(lr));
        }
      }
    }
    layer.w_down = random_normal(f, d, lr, 0.004f);
  }
  return out;
}

ClusteredCorpus generate_clustered_corpus(const SyntheticCorpusSpec& spec) {
  check_corpus_spec(spec);
  std::mt19937_64 rng(derive_seed(spec.seed, 7));
  const std::size_t n = spec.n_clusters;
  // Tokens of cluster c are c, c + n, c + 2n, ...
  const std::size_t per_cluster_min = spec.vocab_size / n;
  ClusteredCorpus corpus;
  const std::size_t n_blocks = (spec.sequence_length + spec.block_size - 1) / spec.block_size;
  for (std::size_t s = 0; s < spec.n_sequences; ++s) {
    std::vector<std::size_t> clusters(n_blocks);
    if (spec.pattern == BlockPattern::Random) {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (auto& c : clusters) c = pick(rng);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      const std::size_t a = pick(rng);
      const std::size_t b = (a + n / 2) % n;
      const std::size_t split = (n_blocks + 1) / 2;
      for (std::size_t i = 0; i < n_blocks; ++i) clusters[i] = i < split ? a : b;
    }
    std::vector<Token> seq(spec.sequence_length);
    std::uniform_int_distribution<std::size_t> member(0, per_cluster_min - 1);
    for (std::size_t i = 0; i < spec.sequence_length; ++i) {
      const std::size_t c = clusters[i / spec.block_size];
      seq[i] = static_cast<Token>(c + n * member(rng));
    }
    corpus.sequences.push_back(std::move(seq));
    corpus.block_clusters.push_back(std::move(clusters));
  }
  return corpus;
}

ModelWeights generate_heterogeneous_model(const ModelConfig& cfg,
                                          const std::vector<bool>& sink_layers,
                                          std::uint64_t seed) {
  cfg.validate();
  const std::size_t d = cfg.d_model, f = cfg.d_ffn, dh = cfg.d_head();
  if (sink_layers.size() != cfg.n_layers) {
    throw ValidationError("sink_layers must have one flag per layer");
  }
  if (d < 4 || dh < 8) throw ValidationError("heterogeneous model needs d_model >= 4, d_head >= 8");

  // Channel 0 is present in every token, channel 1 only in token 0. Neither
  // is written by any sublayer, so the routing signal survives every layer.
  constexpr std::size_t kBias = 0, kSink = 1;
  constexpr float kLambda = 6.0f;
  ModelWeights w = unit_norm_shell(cfg);
  auto erng = stream_rng(seed, kEmbeddingStream);
  w.embedding = random_normal(cfg.vocab_size, d, erng, 1.0f);
  for (std::size_t t = 0; t < cfg.vocab_size; ++t) {
    w.embedding(t, kBias) = 2.0f;
    w.embedding(t, kSink) = t == 0 ? 2.0f : 0.0f;
  }
  const float proj = 1.0f / std::sqrt(static_cast<float>(d));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    auto lr = stream_rng(seed, kLayerStream + l);
    auto& layer = w.layers[l];
    layer.wq = Matrix(d, d);
    layer.wk = Matrix(d, d);
    if (sink_layers[l]) {
      // The slowest rotary pair of each head carries the sink match.
      for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        const std::size_t col = h * dh + dh - 2;
        layer.wq(kBias, col) = kLambda;
        layer.wk(kSink, col) = kLambda;
      }
    }
    layer.wv = random_normal(d, d, lr, proj);
    layer.wo = random_normal(d, d, lr, 0.3f * proj);
    layer.w_gate = random_normal(d, f, lr, proj);
    layer.w_up = random_normal(d, f, lr, proj);
    layer.w_down = random_normal(f, d, lr, sink_layers[l] ? 0.002f : 0.05f);
    for (std::size_t r = 0; r < d; ++r) {
      layer.wo(r, kBias) = layer.wo(r, kSink) = 0.0f;
    }
    for (std::size_t r = 0; r < f; ++r) {
      layer.w_down(r, kBias) = layer.w_down(r, kSink) = 0.0f;
    }
  }
  if (!cfg.tie_embeddings) {
    auto hr = stream_rng(seed, kHeadStream);
    w.lm_head = random_normal(d, cfg.vocab_size, hr, proj);
  }
  return w;
}

std::vector<std::vector<Token>> generate_sink_corpus(std::size_t vocab_size,
                                                     std::size_t n_sequences, std::size_t length,
                                                     std::uint64_t seed) {
  if (vocab_size < 2 || length == 0) throw ValidationError("sink corpus needs vocab >= 2, length >= 1");
  std::mt19937_64 rng(derive_seed(seed, 11));
  std::uniform_int_distribution<Token> pick(1, static_cast<Token>(vocab_size - 1));
  std::vector<std::vector<Token>> out(n_sequences);
  for (auto& seq : out) {
    seq.resize(length);
    seq[0] = 0;
    for (std::size_t i = 1; i < length; ++i) seq[i] = pick(rng);
  }
  return out;
}

LayerBlocks collect_ffn_inputs(const Engine& engine,
                               std::span<const std::vector<Token>> sequences) {
  const auto& cfg = engine.config();
  LayerBlocks blocks(cfg.n_layers);
  const SparsityPlan plan = SparsityPlan::dense(cfg.n_layers);
  for (const auto& seq : sequences) {
    PrefillOptions opts;
    opts.ffn_inputs = &blocks;
    engine.prefill_blockwise(seq, plan, AuxNetworks{}, opts);
  }
  return blocks;
}

std::vector<std::vector<Token>> read_token_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open token file " + path);
  std::vector<std::vector<Token>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::vector<Token> seq;
    std::string word;
    while (ss >> word) {
      std::size_t used = 0;
      long long v = 0;
      try {
        v = std::stoll(word, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != word.size() || v < 0 || v > std::numeric_limits<Token>::max()) {
        throw ValidationError(path + ":" + std::to_string(line_no) + ": bad token '" + word + "'");
      }
      seq.push_back(static_cast<Token>(v));
    }
    if (!seq.empty()) out.push_back(std::move(seq));
  }
  return out;
}

void write_token_file(const std::vector<std::vector<Token>>& sequences, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& seq : sequences) {
    for (std::size_t i = 0; i < seq.size(); ++i) out << (i ? " " : "") << seq[i];
    out << '\n';
  }
}

}  // namespace ffwd
