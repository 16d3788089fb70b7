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

// ffwd: calibrate, train, prefill and benchmark from the command line.
//
// Exit codes: 0 success, 2 invalid input, 3 numeric abort during training,
// 1 for anything else (for example an output path that cannot be written).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ffwd/checkpoint.hpp"
#include "ffwd/compensator.hpp"
#include "ffwd/cost_model.hpp"
#include "ffwd/engine.hpp"
#include "ffwd/errors.hpp"
#include "ffwd/predictor.hpp"
#include "ffwd/random.hpp"
#include "ffwd/scheduler.hpp"
#include "ffwd/synthetic.hpp"
#include "ffwd/version.hpp"

using namespace ffwd;
using nlohmann::json;

namespace {

struct Manifest {
  json inputs = json::object();
  json outputs = json::object();
  json seeds = json::object();
  json extra = json::object();
};

void write_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path);
}

void write_manifest(const CLI::App& sub, const Manifest& m, const std::string& primary_output,
                    std::chrono::steady_clock::time_point start) {
  json flags = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_name(false, false);
    if (name.empty() || name == "--help") continue;
    if (opt->get_items_expected_max() == 0) {
      flags[name] = opt->count() > 0;
    } else if (opt->count() > 0) {
      flags[name] = opt->results().size() == 1 ? json(opt->results()[0]) : json(opt->results());
    } else if (!opt->get_default_str().empty()) {
      flags[name] = opt->get_default_str();
    } else {
      flags[name] = nullptr;
    }
  }
  json j = {{"subcommand", sub.get_name()},
            {"flags", flags},
            {"seeds", m.seeds},
            {"inputs", m.inputs},
            {"outputs", m.outputs},
            {"engine_version", kVersion},
            {"wall_time_s",
             std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()}};
  if (!m.extra.empty()) j["details"] = m.extra;
  write_json(j, primary_output + ".manifest.json");
}

std::vector<bool> parse_layer_flags(const std::string& text) {
  std::vector<bool> flags;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "1" || item == "s") flags.push_back(true);
    else if (item == "0" || item == "m") flags.push_back(false);
    else throw ValidationError("--sink-layers: expected comma-separated 0/1, got '" + item + "'");
  }
  return flags;
}

// Held-out split for training: the last ceil(n/5) sequences when there are at
// least two, otherwise the training set itself.
void split_corpus(const std::vector<std::vector<Token>>& all, std::vector<std::vector<Token>>& train,
                  std::vector<std::vector<Token>>& held) {
  if (all.size() < 2) {
    train = held = all;
    return;
  }
  const std::size_t n_held = (all.size() + 4) / 5;
  train.assign(all.begin(), all.end() - static_cast<std::ptrdiff_t>(n_held));
  held.assign(all.end() - static_cast<std::ptrdiff_t>(n_held), all.end());
}

void write_loss_csv(const TrainingLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "phase,epoch,layer,train_loss,heldout_loss\n";
  out.precision(9);
  for (const auto& p : log)
    out << p.phase << ',' << p.epoch << ',' << p.layer << ',' << p.train_loss << ','
        << p.heldout_loss << '\n';
}

SparsityPlan plan_from_sweep_entry(const json& e, std::size_t n_layers) {
  SparsityPlan plan;
  if (e.contains("plan_file")) {
    plan = load_plan(e.at("plan_file").get<std::string>()).plan;
  } else if (e.contains("keep")) {
    plan.keep = e.at("keep").get<std::vector<double>>();
    plan.dense_first_last = e.value("dense_first_last", true);
  } else if (e.contains("uniform")) {
    plan = SparsityPlan::uniform(n_layers, e.at("uniform").get<double>(),
                                 e.value("dense_first_last", true));
  } else {
    throw ValidationError("sweep plan entry needs one of plan_file, keep, uniform");
  }
  plan.validate(n_layers);
  return plan;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block-wise prefill engine with predictive FFN sparsity"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  // generate-model
  auto* gen_model = app.add_subcommand("generate-model", "Write a synthetic model checkpoint");
  std::string gm_config, gm_out, gm_kind = "random", gm_sinks;
  std::uint64_t gm_seed = 0;
  std::size_t gm_clusters = 2;
  float gm_std = 0.02f;
  gen_model->add_option("--config", gm_config, "Model config JSON")->required()->check(CLI::ExistingFile);
  gen_model->add_option("--out", gm_out, "Output checkpoint")->required();
  gen_model->add_option("--kind", gm_kind, "random | clustered | heterogeneous")
      ->check(CLI::IsMember({"random", "clustered", "heterogeneous"}))
      ->capture_default_str();
  gen_model->add_option("--seed", gm_seed)->capture_default_str();
  gen_model->add_option("--stddev", gm_std, "Weight stddev for --kind random")->capture_default_str();
  gen_model->add_option("--clusters", gm_clusters, "Cluster count for --kind clustered")
      ->capture_default_str();
  gen_model->add_option("--sink-layers", gm_sinks,
                        "Comma-separated 0/1 per layer for --kind heterogeneous");

  // generate-corpus
  auto* gen_corpus = app.add_subcommand("generate-corpus", "Write a synthetic token file");
  std::string gc_out, gc_kind = "clustered", gc_pattern = "random";
  SyntheticCorpusSpec gc_spec;
  gen_corpus->add_option("--out", gc_out)->required();
  gen_corpus->add_option("--kind", gc_kind, "clustered | sink")
      ->check(CLI::IsMember({"clustered", "sink"}))
      ->capture_default_str();
  gen_corpus->add_option("--vocab", gc_spec.vocab_size)->capture_default_str();
  gen_corpus->add_option("--sequences", gc_spec.n_sequences)->capture_default_str();
  gen_corpus->add_option("--length", gc_spec.sequence_length)->capture_default_str();
  gen_corpus->add_option("--clusters", gc_spec.n_clusters)->capture_default_str();
  gen_corpus->add_option("--block-size", gc_spec.block_size)->capture_default_str();
  gen_corpus->add_option("--pattern", gc_pattern, "random | halves")
      ->check(CLI::IsMember({"random", "halves"}))
      ->capture_default_str();
  gen_corpus->add_option("--seed", gc_spec.seed)->capture_default_str();

  // calibrate
  auto* calibrate = app.add_subcommand("calibrate", "Score layers and allocate FFN budgets");
  std::string cal_model, cal_config, cal_seqs, cal_out;
  double cal_budget = 0.5;
  bool cal_dfl = false, cal_per_token = false;
  calibrate->add_option("--model", cal_model, "Model checkpoint")->required()->check(CLI::ExistingFile);
  calibrate->add_option("--config", cal_config, "Standalone config JSON (checkpoint copy wins)")
      ->check(CLI::ExistingFile);
  calibrate->add_option("--sequences", cal_seqs, "Calibration token file")->required()->check(CLI::ExistingFile);
  calibrate->add_option("--out", cal_out, "Output plan JSON")->required();
  calibrate->add_option("--budget", cal_budget, "Global keep fraction B")->capture_default_str();
  calibrate->add_flag("--dense-first-last", cal_dfl, "Run the first and last blocks densely");
  calibrate->add_flag("--per-token", cal_per_token, "Normalize scores by non-sink token count");

  // train
  auto* train = app.add_subcommand("train", "Train expert predictors or error compensators");
  std::string tr_model, tr_config, tr_corpus, tr_heldout, tr_aux, tr_out, tr_plan, tr_loss_csv;
  bool tr_predictor = false, tr_compensator = false;
  TrainOptions tr_opts;
  double tr_split = 0.5, tr_budget = 0.5;
  train->add_option("--model", tr_model)->required()->check(CLI::ExistingFile);
  train->add_option("--config", tr_config)->check(CLI::ExistingFile);
  train->add_option("--corpus", tr_corpus, "Training token file")->required()->check(CLI::ExistingFile);
  train->add_option("--heldout", tr_heldout, "Held-out token file (default: last fifth of --corpus)")
      ->check(CLI::ExistingFile);
  auto* f_pred = train->add_flag("--predictor", tr_predictor, "Train expert predictors");
  auto* f_comp = train->add_flag("--compensator", tr_compensator, "Train error compensators");
  f_pred->excludes(f_comp);
  train->add_option("--aux", tr_aux, "Checkpoint with trained predictors (compensator training)")
      ->check(CLI::ExistingFile);
  train->add_option("--plan", tr_plan, "Plan JSON giving per-layer K for compensator training")
      ->check(CLI::ExistingFile);
  train->add_option("--budget", tr_budget, "Uniform keep fraction when --plan is absent")
      ->capture_default_str();
  train->add_option("--phase-split", tr_split, "Fraction of steps on oracle masks")->capture_default_str();
  train->add_option("--epochs", tr_opts.epochs)->capture_default_str();
  train->add_option("--lr", tr_opts.lr)->capture_default_str();
  train->add_option("--batch-size", tr_opts.batch_size)->capture_default_str();
  train->add_option("--clip-norm", tr_opts.clip_norm)->capture_default_str();
  train->add_option("--seed", tr_opts.seed)->capture_default_str();
  train->add_option("--out", tr_out, "Output auxiliary checkpoint")->required();
  train->add_option("--loss-csv", tr_loss_csv, "Loss curve CSV (default: <out>.loss.csv)");

  // prefill
  auto* prefill = app.add_subcommand("prefill", "Run block-wise prefill and report FLOPs and masks");
  std::string pf_model, pf_config, pf_ckpt, pf_plan, pf_mode = "dense", pf_tokens, pf_report;
  double pf_budget = 1.0;
  bool pf_dfl = false, pf_no_comp = false;
  prefill->add_option("--model", pf_model)->required()->check(CLI::ExistingFile);
  prefill->add_option("--config", pf_config)->check(CLI::ExistingFile);
  prefill->add_option("--ckpt", pf_ckpt, "Auxiliary checkpoint (predictors, compensators)")
      ->check(CLI::ExistingFile);
  prefill->add_option("--plan", pf_plan, "Plan JSON")->check(CLI::ExistingFile);
  prefill->add_option("--budget", pf_budget, "Uniform keep fraction when --plan is absent")
      ->capture_default_str();
  prefill->add_flag("--dense-first-last", pf_dfl, "With --budget: dense first and last blocks");
  prefill->add_option("--mode", pf_mode, "dense | oracle | predicted | static")
      ->check(CLI::IsMember({"dense", "oracle", "predicted", "static"}))
      ->capture_default_str();
  prefill->add_flag("--no-compensate", pf_no_comp, "Skip the error compensator on sparse cells");
  prefill->add_option("--tokens", pf_tokens, "Token file, one prompt per line")->required()->check(CLI::ExistingFile);
  prefill->add_option("--report", pf_report, "Output report JSON")->required();

  // benchmark
  auto* bench = app.add_subcommand("benchmark", "Sweep context lengths and plans through the cost model");
  std::string bm_config, bm_out, bm_json;
  bench->add_option("--config", bm_config, "Sweep JSON")->required()->check(CLI::ExistingFile);
  bench->add_option("--out", bm_out, "Output curves CSV")->required();
  bench->add_option("--json", bm_json, "Also write the curves as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const auto start = std::chrono::steady_clock::now();
  Manifest m;
  try {
    if (*gen_model) {
      const ModelConfig cfg = load_config(gm_config);
      EngineCheckpoint ckpt;
      ckpt.config = cfg;
      if (gm_kind == "random") {
        ckpt.model = generate_synthetic_model(cfg, gm_seed, gm_std);
      } else if (gm_kind == "clustered") {
        ckpt.model = generate_clustered_model(cfg, gm_clusters, gm_seed).model;
      } else {
        if (gm_sinks.empty()) throw ValidationError("--kind heterogeneous needs --sink-layers");
        ckpt.model = generate_heterogeneous_model(cfg, parse_layer_flags(gm_sinks), gm_seed);
      }
      write_checkpoint(ckpt, gm_out);
      m.inputs["config"] = gm_config;
      m.outputs["checkpoint"] = gm_out;
      m.seeds["model"] = gm_seed;
      write_manifest(*gen_model, m, gm_out, start);
    } else if (*gen_corpus) {
      gc_spec.pattern = gc_pattern == "halves" ? BlockPattern::Halves : BlockPattern::Random;
      std::vector<std::vector<Token>> seqs;
      if (gc_kind == "clustered") {
        const auto corpus = generate_clustered_corpus(gc_spec);
        seqs = corpus.sequences;
        m.extra["block_clusters"] = corpus.block_clusters;
      } else {
        seqs = generate_sink_corpus(gc_spec.vocab_size, gc_spec.n_sequences,
                                    gc_spec.sequence_length, gc_spec.seed);
      }
      write_token_file(seqs, gc_out);
      m.outputs["tokens"] = gc_out;
      m.seeds["corpus"] = gc_spec.seed;
      write_manifest(*gen_corpus, m, gc_out, start);
    } else if (*calibrate) {
      const Engine engine(load_model(cal_model, cal_config.empty() ? std::nullopt
                                                                   : std::optional(cal_config)));
      const auto seqs = read_token_file(cal_seqs);
      const auto profile = importance_scores(engine, seqs, cal_per_token);
      PlanFile file;
      file.plan = plan_from_scores(profile.s, cal_budget, cal_dfl);
      file.s = profile.s;
      file.calibration = cal_seqs;
      save_plan(file, cal_out);
      m.inputs = {{"model", cal_model}, {"sequences", cal_seqs}};
      if (!cal_config.empty()) m.inputs["config"] = cal_config;
      m.outputs["plan"] = cal_out;
      m.extra = {{"n_samples", profile.n_samples}, {"scores", profile.s}, {"budgets", file.plan.keep}};
      write_manifest(*calibrate, m, cal_out, start);
    } else if (*train) {
      if (!tr_predictor && !tr_compensator)
        throw ValidationError("train: pass --predictor or --compensator");
      const ModelWeights teacher =
          load_model(tr_model, tr_config.empty() ? std::nullopt : std::optional(tr_config));
      const Engine engine(teacher);
      const auto& cfg = teacher.config;
      std::vector<std::vector<Token>> train_seqs, held_seqs;
      if (tr_heldout.empty()) {
        split_corpus(read_token_file(tr_corpus), train_seqs, held_seqs);
      } else {
        train_seqs = read_token_file(tr_corpus);
        held_seqs = read_token_file(tr_heldout);
      }
      const auto train_in = collect_ffn_inputs(engine, train_seqs);
      const auto held_in = collect_ffn_inputs(engine, held_seqs);
      const std::string loss_csv = tr_loss_csv.empty() ? tr_out + ".loss.csv" : tr_loss_csv;

      EngineCheckpoint out;
      out.config = cfg;
      if (!tr_aux.empty()) {
        auto aux = read_checkpoint(tr_aux);
        if (!(aux.config == cfg)) throw ValidationError("--aux was trained for a different model config");
        out.predictors = std::move(aux.predictors);
        out.compensators = std::move(aux.compensators);
      }
      TrainingLog log;
      int status = 0;
      try {
        if (tr_predictor) {
          out.predictors = train_predictor(teacher, train_in, held_in, tr_opts, &log);
        } else {
          std::vector<std::size_t> topk;
          if (!tr_plan.empty()) {
            const auto plan = load_plan(tr_plan).plan;
            plan.validate(cfg.n_layers);
            topk = budgets_to_topk(plan.keep, cfg.d_ffn);
          } else {
            topk = budgets_to_topk(std::vector<double>(cfg.n_layers, tr_budget), cfg.d_ffn);
          }
          CompensatorTrainOptions copts{tr_opts, tr_split};
          out.compensators = train_compensator(teacher, train_in, held_in, out.predictors, topk, copts, &log);
        }
      } catch (const TrainingAborted<PredictorParams>& e) {
        std::cerr << "error: " << e.what() << "; writing last good predictors to " << tr_out << '\n';
        out.predictors = e.last_good();
        m.extra["aborted"] = e.what();
        status = 3;
      } catch (const TrainingAborted<CompensatorParams>& e) {
        std::cerr << "error: " << e.what() << "; writing last good compensators to " << tr_out << '\n';
        out.compensators = e.last_good();
        m.extra["aborted"] = e.what();
        status = 3;
      }
      write_checkpoint(out, tr_out);
      write_loss_csv(log, loss_csv);
      m.inputs = {{"model", tr_model}, {"corpus", tr_corpus}};
      if (!tr_heldout.empty()) m.inputs["heldout"] = tr_heldout;
      if (!tr_aux.empty()) m.inputs["aux"] = tr_aux;
      if (!tr_plan.empty()) m.inputs["plan"] = tr_plan;
      m.outputs = {{"checkpoint", tr_out}, {"loss_csv", loss_csv}};
      m.seeds["train"] = tr_opts.seed;
      m.extra["train_sequences"] = train_seqs.size();
      m.extra["heldout_sequences"] = held_seqs.size();
      write_manifest(*train, m, tr_out, start);
      return status;
    } else if (*prefill) {
      const Engine engine(load_model(pf_model, pf_config.empty() ? std::nullopt
                                                                 : std::optional(pf_config)));
      const auto& cfg = engine.config();
      EngineCheckpoint aux;
      if (!pf_ckpt.empty()) {
        aux = read_checkpoint(pf_ckpt);
        if (!(aux.config == cfg)) throw ValidationError("--ckpt was trained for a different model config");
      }
      SparsityPlan plan = pf_plan.empty() ? SparsityPlan::uniform(cfg.n_layers, pf_budget, pf_dfl)
                                          : load_plan(pf_plan).plan;
      plan.validate(cfg.n_layers);
      PrefillOptions opts;
      opts.mode = parse_prefill_mode(pf_mode);
      opts.compensate = !pf_no_comp && opts.mode != PrefillMode::Dense;
      opts.record_masks = opts.mode == PrefillMode::FirstBlockStatic;
      opts.record_oracle_recall =
          opts.mode == PrefillMode::Predicted || opts.mode == PrefillMode::FirstBlockStatic;
      if (opts.compensate && aux.compensators.empty())
        throw ValidationError("mode " + pf_mode + " applies the compensator; pass --ckpt with "
                              "compensators or --no-compensate");
      if (opts.mode == PrefillMode::Predicted && aux.predictors.empty())
        throw ValidationError("mode predicted needs --ckpt with trained predictors");

      json runs = json::array();
      bool all_match = true;
      for (const auto& tokens : read_token_file(pf_tokens)) {
        // Counted on a run without diagnostics; the oracle-recall matmuls are
        // outside the executed plan.
        PrefillOptions counted = opts;
        counted.record_oracle_recall = false;
        std::uint64_t measured_total = 0;
        auto res = [&] {
          FlopCounter counter;
          auto r = engine.prefill_blockwise(tokens, plan, {aux.predictors, aux.compensators}, counted);
          measured_total = counter.count();
          return r;
        }();
        const FlopsReport measured = res.flops;
        if (opts.record_oracle_recall)
          res = engine.prefill_blockwise(tokens, plan, {aux.predictors, aux.compensators}, opts);
        const auto analytical = analytical_report(tokens.size(), cfg, plan, opts.mode, opts.compensate);
        const bool match = measured == analytical && measured_total == analytical.total();
        all_match = all_match && match;
        json run = {{"n_tokens", tokens.size()},
                    {"last_logits", res.last_logits},
                    {"flops_measured", measured.to_json()},
                    {"flops_measured_total", measured_total},
                    {"flops_analytical", analytical.to_json()},
                    {"flops_match", match}};
        if (opts.record_oracle_recall) {
          json recall = json::array();
          for (double r : res.layer_recall(cfg.n_layers))
            recall.push_back(std::isnan(r) ? json(nullptr) : json(r));
          run["layer_recall"] = recall;
        }
        if (opts.mode == PrefillMode::FirstBlockStatic) {
          bool reused = true;
          for (std::size_t l = 0; l < cfg.n_layers; ++l) {
            const ExpertMask* first = nullptr;
            for (const auto& rec : res.masks) {
              if (rec.layer != l) continue;
              if (!first) first = &rec.mask;
              else reused = reused && rec.mask.same_selection(*first);
            }
          }
          run["static_mask_reused"] = reused;
        }
        if (opts.mode == PrefillMode::Dense) {
          const auto full = engine.prefill_dense(tokens);
          run["max_abs_vs_full_sequence"] = max_abs_diff(Matrix::row_vector(full.last_logits),
                                                         Matrix::row_vector(res.last_logits));
        }
        runs.push_back(std::move(run));
      }
      json report = {{"mode", pf_mode},
                     {"compensate", opts.compensate},
                     {"plan", {{"keep", plan.keep}, {"dense_first_last", plan.dense_first_last}}},
                     {"flops_match_all", all_match},
                     {"runs", runs}};
      write_json(report, pf_report);
      m.inputs = {{"model", pf_model}, {"tokens", pf_tokens}};
      if (!pf_ckpt.empty()) m.inputs["ckpt"] = pf_ckpt;
      if (!pf_plan.empty()) m.inputs["plan"] = pf_plan;
      m.outputs["report"] = pf_report;
      write_manifest(*prefill, m, pf_report, start);
    } else if (*bench) {
      std::ifstream in(bm_config);
      if (!in) throw ValidationError("cannot open sweep " + bm_config);
      json sweep;
      try {
        sweep = json::parse(in);
      } catch (const json::exception& e) {
        throw ValidationError("sweep " + bm_config + ": " + e.what());
      }
      const ModelConfig cfg = config_from_json(sweep.at("model"));
      const auto contexts = sweep.at("contexts").get<std::vector<std::size_t>>();
      const bool aux_costs = sweep.value("aux_costs", true);
      std::vector<NamedPlan> plans;
      for (const auto& e : sweep.at("plans"))
        plans.push_back({e.at("label").get<std::string>(), plan_from_sweep_entry(e, cfg.n_layers)});
      auto rows = emit_curves(cfg, plans, contexts, aux_costs);

      // Optional measured rows: execute predicted-mode prefill on a synthetic
      // model with freshly initialized auxiliaries and count FLOPs.
      if (sweep.value("measure", false)) {
        const std::uint64_t seed = sweep.value("seed", std::uint64_t{0});
        m.seeds["measure"] = seed;
        const Engine engine(generate_synthetic_model(cfg, seed));
        std::vector<PredictorParams> preds;
        std::vector<CompensatorParams> comps;
        for (std::size_t l = 0; l < cfg.n_layers; ++l) {
          preds.push_back(init_predictor(cfg, derive_seed(seed, l)));
          comps.push_back(init_compensator(cfg, derive_seed(seed, 2000 + l)));
        }
        std::mt19937_64 rng(seed);
        for (std::size_t T : contexts) {
          std::vector<Token> tokens(T);
          for (auto& t : tokens) t = static_cast<Token>(rng() % cfg.vocab_size);
          const auto dense = engine.prefill_blockwise(tokens, SparsityPlan::dense(cfg.n_layers), {}, {});
          for (const auto& np : plans) {
            PrefillOptions opts;
            opts.mode = PrefillMode::Predicted;
            opts.compensate = aux_costs;
            FlopCounter counter;
            engine.prefill_blockwise(tokens, np.plan, {preds, comps}, opts);
            CurveRow row;
            row.tokens = T;
            row.component = "measured_total";
            row.flops = counter.count();
            row.plan = np.label;
            row.speedup = static_cast<double>(dense.flops.total()) / static_cast<double>(row.flops);
            rows.push_back(row);
          }
        }
      }
      std::ofstream out(bm_out);
      if (!out) throw std::runtime_error("cannot open " + bm_out + " for writing");
      write_curves_csv(out, rows);
      out.close();
      if (!out) throw std::runtime_error("failed writing " + bm_out);
      if (!bm_json.empty()) {
        write_json(curves_to_json(rows), bm_json);
        m.outputs["json"] = bm_json;
      }
      m.inputs["sweep"] = bm_config;
      m.outputs["csv"] = bm_out;
      write_manifest(*bench, m, bm_out, start);
    }
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "error: malformed JSON input: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
