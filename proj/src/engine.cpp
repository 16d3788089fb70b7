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

#include "ffwd/engine.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "ffwd/errors.hpp"

namespace ffwd {
namespace {

IndexSet column_range(std::size_t begin, std::size_t count, std::size_t bound) {
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), begin);
  return IndexSet(std::move(idx), bound);
}

// Rotates consecutive pairs (2i, 2i+1) inside every head by pos * base^(-2i/d_head).
void apply_rotary(Matrix& m, std::size_t start, std::size_t n_heads, std::size_t d_head,
                  float base) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double pos = static_cast<double>(start + r);
    auto row = m.row(r);
    for (std::size_t h = 0; h < n_heads; ++h) {
      float* head = row.data() + h * d_head;
      for (std::size_t i = 0; i < d_head / 2; ++i) {
        const double inv_freq =
            std::pow(static_cast<double>(base), -2.0 * static_cast<double>(i) / d_head);
        const double angle = pos * inv_freq;
        const double c = std::cos(angle), s = std::sin(angle);
        const double x0 = head[2 * i], x1 = head[2 * i + 1];
        head[2 * i] = static_cast<float>(x0 * c - x1 * s);
        head[2 * i + 1] = static_cast<float>(x0 * s + x1 * c);
      }
    }
  }
}

// Adds the FLOPs seen by a scoped counter into a report cell on destruction.
class Charge {
 public:
  Charge(FlopsReport* report, std::size_t layer, FlopComponent c)
      : report_(report), layer_(layer), component_(c) {}
  ~Charge() {
    if (report_) report_->add(layer_, component_, counter_.count());
  }
  Charge(const Charge&) = delete;
  Charge& operator=(const Charge&) = delete;

 private:
  FlopsReport* report_;
  std::size_t layer_;
  FlopComponent component_;
  FlopCounter counter_;
};

}  // namespace

KVCache::KVCache(const ModelConfig& cfg)
    : capacity_(cfg.max_context),
      layer_lengths_(cfg.n_layers, 0),
      keys_(cfg.n_layers, std::vector<Matrix>(cfg.n_heads, Matrix(0, cfg.d_head()))),
      values_(cfg.n_layers, std::vector<Matrix>(cfg.n_heads, Matrix(0, cfg.d_head()))) {}

void KVCache::append(std::size_t layer, std::span<const Matrix> keys,
                     std::span<const Matrix> values) {
  if (layer >= keys_.size()) throw ValidationError("KVCache: layer out of range");
  if (keys.size() != keys_[layer].size() || values.size() != values_[layer].size()) {
    throw ValidationError("KVCache: head count mismatch");
  }
  const std::size_t n = keys.front().rows();
  if (layer_lengths_[layer] + n > capacity_) {
    throw ValidationError("KVCache: overflow, " + std::to_string(layer_lengths_[layer] + n) +
                          " tokens exceed max_context " + std::to_string(capacity_));
  }
  for (std::size_t h = 0; h < keys.size(); ++h) {
    keys_[layer][h].append_rows(keys[h]);
    values_[layer][h].append_rows(values[h]);
  }
  layer_lengths_[layer] += n;
  const std::size_t first = layer_lengths_.front();
  for (std::size_t len : layer_lengths_)
    if (len != first) return;
  length_ = first;
}

std::vector<double> attention_mass_from_trace(const AttentionTrace& trace, std::size_t block_size,
                                              std::size_t sink_block) {
  std::vector<double> mass(trace.n_layers(), 0.0);
  const std::size_t sink_begin = sink_block * block_size;
  const std::size_t sink_end = sink_begin + block_size;
  for (std::size_t l = 0; l < trace.n_layers(); ++l) {
    const auto& heads = trace.heads[l];
    double sum = 0.0;
    for (const auto& a : heads) {
      for (std::size_t t = 0; t < a.rows(); ++t) {
        auto row = a.row(t);
        for (std::size_t k = 0; k < a.cols(); ++k)
          if (k < sink_begin || k >= sink_end) sum += row[k];
      }
    }
    mass[l] = heads.empty() ? 0.0 : sum / static_cast<double>(heads.size());
  }
  return mass;
}

std::vector<double> PrefillResult::layer_recall(std::size_t n_layers) const {
  std::vector<double> sum(n_layers, 0.0);
  std::vector<std::size_t> count(n_layers, 0);
  for (const auto& rec : masks) {
    if (!rec.oracle_recall || rec.layer >= n_layers) continue;
    sum[rec.layer] += *rec.oracle_recall;
    ++count[rec.layer];
  }
  std::vector<double> out(n_layers, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t l = 0; l < n_layers; ++l)
    if (count[l] > 0) out[l] = sum[l] / static_cast<double>(count[l]);
  return out;
}

struct Engine::BlockContext {
  std::size_t block = 0;
  std::size_t n_blocks = 1;
  PrefillMode mode = PrefillMode::Dense;
  bool dense_first_last = true;
  bool compensate = false;
  std::vector<std::size_t> topk;
  const AuxNetworks* aux = nullptr;
  const PrefillOptions* options = nullptr;
  std::vector<FirstBlockStaticExperts> statics;
  FlopsReport* report = nullptr;
  std::vector<MaskRecord>* masks = nullptr;
  AttentionTrace* trace = nullptr;
};

Engine::Engine(std::shared_ptr<const ModelWeights> weights) : weights_(std::move(weights)) {
  if (!weights_) throw ValidationError("Engine: null weights");
  weights_->validate();
}

Engine::Engine(ModelWeights weights)
    : Engine(std::make_shared<const ModelWeights>(std::move(weights))) {}

void Engine::validate_tokens(std::span<const Token> tokens, std::size_t cached) const {
  const auto& cfg = config();
  if (cached + tokens.size() > cfg.max_context) {
    throw ValidationError("sequence of " + std::to_string(cached + tokens.size()) +
                          " tokens exceeds max_context " + std::to_string(cfg.max_context));
  }
  for (Token t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size) {
      throw ValidationError("token id " + std::to_string(t) + " outside vocabulary of " +
                            std::to_string(cfg.vocab_size));
    }
  }
}

Matrix Engine::embed(std::span<const Token> tokens) const {
  const auto& emb = weights_->embedding;
  Matrix x(tokens.size(), emb.cols());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto src = emb.row(static_cast<std::size_t>(tokens[i]));
    std::copy(src.begin(), src.end(), x.row(i).begin());
  }
  return x;
}

Matrix Engine::attention_impl(const Matrix& x, KVCache& cache, std::size_t layer,
                              AttentionTrace* trace, FlopsReport* report) const {
  const auto& cfg = config();
  const auto& w = weights_->layers.at(layer);
  const std::size_t n = x.rows(), dh = cfg.d_head(), heads = cfg.n_heads;
  const std::size_t start = cache.length();

  Matrix q, k, v;
  {
    Charge charge(report, layer, FlopComponent::AttentionProjections);
    q = matmul(x, w.wq);
    k = matmul(x, w.wk);
    v = matmul(x, w.wv);
  }
  apply_rotary(q, start, heads, dh, cfg.rope_base);
  apply_rotary(k, start, heads, dh, cfg.rope_base);

  std::vector<Matrix> q_heads, k_heads, v_heads;
  for (std::size_t h = 0; h < heads; ++h) {
    const auto cols = column_range(h * dh, dh, cfg.d_model);
    q_heads.push_back(gather_cols(q, cols));
    k_heads.push_back(gather_cols(k, cols));
    v_heads.push_back(gather_cols(v, cols));
  }
  cache.append(layer, k_heads, v_heads);

  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
  Matrix mixed(n, cfg.d_model);
  for (std::size_t h = 0; h < heads; ++h) {
    Matrix out_h;
    {
      Charge charge(report, layer, FlopComponent::AttentionScores);
      const Matrix scores = scale(matmul_transposed(q_heads[h], cache.keys(layer, h)), inv_sqrt);
      const Matrix probs = softmax_rows(scores, start);
      out_h = matmul(probs, cache.values(layer, h));
      if (trace) {
        Matrix& dst = trace->heads.at(layer).at(h);
        for (std::size_t r = 0; r < n; ++r) {
          auto src = probs.row(r);
          std::copy(src.begin(), src.end(), dst.row(start + r).begin());
        }
      }
    }
    for (std::size_t r = 0; r < n; ++r) {
      auto src = out_h.row(r);
      std::copy(src.begin(), src.end(), mixed.row(r).begin() + h * dh);
    }
  }
  Charge charge(report, layer, FlopComponent::AttentionProjections);
  return matmul(mixed, w.wo);
}

Matrix Engine::attention_layer(const Matrix& x, KVCache& cache, std::size_t layer,
                               AttentionTrace* trace) const {
  if (x.cols() != config().d_model) {
    throw ValidationError("attention_layer: input " + x.shape_string() + " for d_model " +
                          std::to_string(config().d_model));
  }
  return attention_impl(x, cache, layer, trace, nullptr);
}

Matrix Engine::dense_ffn(const Matrix& x, std::size_t layer) const {
  if (x.cols() != config().d_model) {
    throw ValidationError("dense_ffn: input " + x.shape_string() + " for d_model " +
                          std::to_string(config().d_model));
  }
  return ffwd::dense_ffn(x, weights_->layers.at(layer));
}

Matrix Engine::ffn_cell(const Matrix& x, std::size_t layer, BlockContext& ctx) const {
  const auto& cfg = config();
  const auto& w = weights_->layers[layer];
  const std::size_t k = ctx.topk[layer];

  if (ffn_cell_dense(ctx.block, ctx.n_blocks, ctx.dense_first_last, ctx.mode, k, cfg.d_ffn)) {
    Charge charge(ctx.report, layer, FlopComponent::Ffn);
    if (ctx.mode == PrefillMode::FirstBlockStatic && ctx.block == 0 && k < cfg.d_ffn) {
      auto out = dense_ffn_with_activations(x, w);
      ctx.statics[layer] =
          FirstBlockStaticExperts(oracle_mask_from_activations(out.activations, k, layer, 0));
      return std::move(out.output);
    }
    return ffwd::dense_ffn(x, w);
  }

  ExpertMask mask;
  switch (ctx.mode) {
    case PrefillMode::Oracle: {
      Charge charge(ctx.report, layer, FlopComponent::OracleSelection);
      mask = oracle_experts(x, *weights_, layer, k, ctx.block);
      break;
    }
    case PrefillMode::Predicted: {
      Charge charge(ctx.report, layer, FlopComponent::Predictor);
      mask = build_mask(predictor_forward(ctx.aux->predictors[layer], x), k, layer, ctx.block);
      break;
    }
    case PrefillMode::FirstBlockStatic:
      mask = ctx.statics[layer].mask_for_block(ctx.block);
      break;
    case PrefillMode::Dense:
      break;
  }

  Matrix y;
  {
    Charge charge(ctx.report, layer, FlopComponent::Ffn);
    y = sparse_ffn_forward(x, select_subweights(w, mask));
  }
  if (ctx.compensate) {
    Charge charge(ctx.report, layer, FlopComponent::Compensator);
    y = apply_compensation(y, compensator_forward(ctx.aux->compensators[layer], x));
  }
  if (ctx.masks) {
    MaskRecord rec{layer, ctx.block, mask, std::nullopt};
    if (ctx.options && ctx.options->record_oracle_recall) {
      rec.oracle_recall = mask_recall(mask, oracle_experts(x, *weights_, layer, k, ctx.block));
    }
    ctx.masks->push_back(std::move(rec));
  }
  return y;
}

Matrix Engine::run_block(std::span<const Token> tokens, KVCache& cache, BlockContext& ctx) const {
  const auto& cfg = config();
  Matrix x = embed(tokens);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& w = weights_->layers[l];
    add_inplace(x, attention_impl(rmsnorm(x, w.attn_norm, cfg.norm_eps), cache, l, ctx.trace,
                                  ctx.report));
    const Matrix ffn_in = rmsnorm(x, w.ffn_norm, cfg.norm_eps);
    if (ctx.options && ctx.options->ffn_inputs) (*ctx.options->ffn_inputs)[l].push_back(ffn_in);
    add_inplace(x, ffn_cell(ffn_in, l, ctx));
  }
  if (!all_finite(x)) throw NumericError("non-finite hidden state in block " + std::to_string(ctx.block));
  return x;
}

std::vector<float> Engine::logits_for(std::span<const float> hidden_row, FlopsReport* report) const {
  const auto& cfg = config();
  const Matrix h = rmsnorm(Matrix::row_vector(hidden_row), weights_->final_norm, cfg.norm_eps);
  FlopCounter counter;
  Matrix logits = weights_->lm_head ? matmul(h, *weights_->lm_head)
                                    : matmul_transposed(h, weights_->embedding);
  if (report) report->lm_head += counter.count();
  return logits.storage();
}

PrefillResult Engine::prefill_dense(std::span<const Token> tokens) const {
  if (tokens.empty()) throw ValidationError("prefill_dense: empty prompt");
  validate_tokens(tokens, 0);
  const auto& cfg = config();
  PrefillResult result;
  result.cache = KVCache(cfg);
  result.flops = FlopsReport(cfg.n_layers);
  result.flops.context_length = tokens.size();
  result.flops.plan_label = "dense-full-sequence";

  const AuxNetworks none;
  BlockContext ctx;
  ctx.topk.assign(cfg.n_layers, cfg.d_ffn);
  ctx.aux = &none;
  ctx.report = &result.flops;
  result.hidden = run_block(tokens, result.cache, ctx);
  result.last_logits = logits_for(result.hidden.row(tokens.size() - 1), &result.flops);
  return result;
}

PrefillResult Engine::prefill_blockwise(std::span<const Token> tokens, const SparsityPlan& plan,
                                        const AuxNetworks& aux,
                                        const PrefillOptions& options) const {
  const auto& cfg = config();
  if (tokens.empty()) throw ValidationError("prefill_blockwise: empty prompt");
  validate_tokens(tokens, 0);
  plan.validate(cfg.n_layers);
  if (options.mode == PrefillMode::Predicted) {
    if (aux.predictors.size() != cfg.n_layers) {
      throw ValidationError("predicted mode needs " + std::to_string(cfg.n_layers) +
                            " expert predictors, got " + std::to_string(aux.predictors.size()));
    }
    for (const auto& p : aux.predictors) validate_predictor(p, cfg);
  }
  const bool compensate = options.compensate && !aux.compensators.empty() &&
                          options.mode != PrefillMode::Dense;
  if (compensate) {
    if (aux.compensators.size() != cfg.n_layers) {
      throw ValidationError("expected " + std::to_string(cfg.n_layers) + " compensators, got " +
                            std::to_string(aux.compensators.size()));
    }
    for (const auto& c : aux.compensators) validate_compensator(c, cfg);
  }
  if (options.ffn_inputs) options.ffn_inputs->resize(cfg.n_layers);

  const std::size_t T = tokens.size();
  PrefillResult result;
  result.cache = KVCache(cfg);
  result.flops = FlopsReport(cfg.n_layers);
  result.flops.context_length = T;
  result.flops.plan_label = to_string(options.mode);
  if (options.trace) {
    options.trace->heads.assign(cfg.n_layers, std::vector<Matrix>(cfg.n_heads, Matrix(T, T)));
  }

  BlockContext ctx;
  ctx.n_blocks = cfg.blocks_for(T);
  ctx.mode = options.mode;
  ctx.dense_first_last = plan.dense_first_last;
  ctx.compensate = compensate;
  ctx.topk = budgets_to_topk(plan.keep, cfg.d_ffn);
  ctx.aux = &aux;
  ctx.options = &options;
  ctx.statics.resize(cfg.n_layers);
  ctx.report = &result.flops;
  ctx.masks = (options.record_masks || options.record_oracle_recall) ? &result.masks : nullptr;
  ctx.trace = options.trace;

  result.hidden = Matrix(0, cfg.d_model);
  for (std::size_t b = 0; b < ctx.n_blocks; ++b) {
    ctx.block = b;
    const std::size_t begin = b * cfg.block_size;
    const std::size_t count = std::min(cfg.block_size, T - begin);
    result.hidden.append_rows(run_block(tokens.subspan(begin, count), result.cache, ctx));
  }
  result.last_logits = logits_for(result.hidden.row(T - 1), &result.flops);
  return result;
}

std::vector<double> Engine::capture_attention_mass(std::span<const Token> tokens,
                                                   std::size_t sink_block) const {
  AttentionTrace trace;
  PrefillOptions opts;
  opts.trace = &trace;
  const auto& cfg = config();
  // One block spanning the whole prompt; attention is identical to block-wise.
  if (tokens.empty()) throw ValidationError("capture_attention_mass: empty sequence");
  validate_tokens(tokens, 0);
  const std::size_t T = tokens.size();
  trace.heads.assign(cfg.n_layers, std::vector<Matrix>(cfg.n_heads, Matrix(T, T)));
  KVCache cache(cfg);
  const AuxNetworks none;
  BlockContext ctx;
  ctx.topk.assign(cfg.n_layers, cfg.d_ffn);
  ctx.aux = &none;
  ctx.options = &opts;
  ctx.trace = &trace;
  run_block(tokens, cache, ctx);
  return attention_mass_from_trace(trace, cfg.block_size, sink_block);
}

std::vector<float> Engine::decode_step(Token token, KVCache& cache, const SparsityPlan& plan,
                                       const AuxNetworks& aux, PrefillMode mode) const {
  const auto& cfg = config();
  const Token one[] = {token};
  validate_tokens(one, cache.length());
  plan.validate(cfg.n_layers);
  if (mode == PrefillMode::FirstBlockStatic) {
    throw ValidationError("decode_step: static expert reuse is a prefill-only baseline");
  }
  if (mode == PrefillMode::Predicted && aux.predictors.size() != cfg.n_layers) {
    throw ValidationError("decode_step: predicted mode needs expert predictors");
  }
  PrefillOptions opts;
  opts.mode = mode;
  BlockContext ctx;
  // Generation tokens are neither the sink block nor the prompt's last block.
  ctx.block = 1;
  ctx.n_blocks = std::numeric_limits<std::size_t>::max();
  ctx.mode = mode;
  ctx.dense_first_last = plan.dense_first_last;
  ctx.compensate = mode != PrefillMode::Dense && aux.compensators.size() == cfg.n_layers;
  ctx.topk = budgets_to_topk(plan.keep, cfg.d_ffn);
  ctx.aux = &aux;
  ctx.options = &opts;
  ctx.statics.resize(cfg.n_layers);
  const Matrix h = run_block(one, cache, ctx);
  return logits_for(h.row(0), nullptr);
}

}  // namespace ffwd
