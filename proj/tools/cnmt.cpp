// Copyright 2026 The cnmt authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cnmt/generation.hpp"
#include "cnmt/metrics.hpp"
#include "cnmt/reading.hpp"
#include "cnmt/training.hpp"
#include "json.hpp"

namespace {

using json = nlohmann::ordered_json;
using namespace cnmt;

constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitData = 4;

SceneReadOptions read_options_for(const ModelConfig& m, double c_default) {
  SceneReadOptions opts;
  opts.max_ocr = m.n_ocr;
  opts.f_obj = m.f_obj;
  opts.f_ocr = m.f_ocr;
  opts.f_ft = m.f_ft;
  opts.c_default = c_default;
  return opts;
}

int cmd_gen_data(const std::string& task, int num_scenes, uint64_t seed,
                 const std::string& out_path, const SceneGenSpec& base_spec) {
  SceneGenSpec spec = base_spec;
  spec.task = scene_task_from_name(task);
  std::vector<Scene> scenes;
  for (int i = 0; i < num_scenes; ++i) {
    scenes.push_back(generate_scene(seed + static_cast<uint64_t>(i), spec));
  }
  save_scenes(scenes, out_path);

  std::map<std::string, int64_t> word_counts;
  for (const auto& s : scenes) {
    for (const auto& c : s.captions) {
      for (const auto& w : c) word_counts[w] += 1;
    }
  }
  std::printf("wrote %d scenes to %s (task=%s seed=%llu)\n", num_scenes, out_path.c_str(),
              task.c_str(), static_cast<unsigned long long>(seed));
  std::printf("caption vocabulary preview (%zu distinct):", word_counts.size());
  int shown = 0;
  for (const auto& [w, c] : word_counts) {
    if (shown++ >= 12) break;
    std::printf(" %s:%lld", w.c_str(), static_cast<long long>(c));
  }
  std::printf("\n");
  return 0;
}

void write_log(const std::vector<TrainLogEntry>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write log: " + path);
  char line[160];
  for (const auto& e : log) {
    std::snprintf(line, sizeof(line), "iter=%d lr=%.10g loss=%.9f val_bleu4=%.9f",
                  e.iteration, e.lr, e.train_loss, e.val_bleu4);
    out << line << '\n';
  }
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_path) {
  AppConfig cfg = parse_app_config(config_path);
  std::printf("resolved config:\n%s\n", app_config_echo(cfg).c_str());

  auto scenes = load_scenes(data_path, read_options_for(cfg.model, cfg.data.c_default));
  if (scenes.empty()) throw DataError("no scenes in " + data_path);

  // deterministic seeded split
  std::vector<size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.train.seed * 0xabcdef1234567ull + 99);
  for (size_t i = order.size() - 1; i > 0; --i) {
    std::swap(order[i], order[rng.uniform_int(i + 1)]);
  }
  const size_t n_val = std::max<size_t>(
      1, static_cast<size_t>(cfg.data.val_fraction * static_cast<double>(scenes.size())));
  std::vector<Scene> train_scenes, val_scenes;
  for (size_t i = 0; i < order.size(); ++i) {
    (i < order.size() - n_val ? train_scenes : val_scenes).push_back(scenes[order[i]]);
  }

  TrainResult result = train(train_scenes, val_scenes, cfg.model, cfg.train);
  save_checkpoint(result.best, out_path);
  write_log(result.log, out_path + ".log");
  if (result.aborted) {
    std::fprintf(stderr, "training aborted: non-finite loss at iteration %d\n",
                 result.abort_iteration);
    std::fprintf(stderr, "last-good checkpoint: %s\n", out_path.c_str());
    return kExitNumeric;
  }
  std::printf("best checkpoint: %s (iteration %lld, val BLEU-4 %.6f)\n", out_path.c_str(),
              static_cast<long long>(result.best.iteration), result.best.best_bleu4);
  return 0;
}

int cmd_decode(const std::string& ckpt_path, const std::string& data_path,
               const std::string& out_path, bool no_mask, int common_threshold,
               int top_k) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  Model model = model_from_checkpoint(ckpt);
  std::printf("checkpoint config: d=%d layers=%d heads=%d n_ocr=%d max_steps=%d mode=%s V=%d\n",
              model.cfg.d, model.cfg.layers, model.cfg.heads, model.cfg.n_ocr,
              model.cfg.max_steps, confidence_mode_name(model.cfg.confidence_mode).c_str(),
              model.vocab.size());

  auto scenes = load_scenes(data_path, read_options_for(model.cfg, 0.90));
  DecodeOptions opts;
  opts.use_repetition_mask = !no_mask;
  const int c = common_threshold >= 0 ? common_threshold : ckpt.train_cfg.common_c;
  opts.common_words = common_word_set(model.vocab.counts, c);
  opts.trace_top_k = top_k;

  std::ofstream out(out_path);
  if (!out) throw DataError("cannot write decode output: " + out_path);
  for (const auto& scene : scenes) {
    DecodeResult result = decode_caption(scene, model, opts);
    json j;
    j["scene_id"] = scene.scene_id;
    json cap = json::array();
    for (const auto& tok : result.tokens) cap.push_back(tok.surface);
    j["caption"] = std::move(cap);
    if (top_k > 0) {
      json steps = json::array();
      for (const auto& st : result.trace) {
        json rows = json::array();
        for (const auto& e : st.top) {
          rows.push_back(json::array({e.surface, e.score, e.masked}));
        }
        json stj;
        stj["chosen"] = st.chosen.surface;
        stj["top"] = std::move(rows);
        steps.push_back(std::move(stj));
      }
      j["steps"] = std::move(steps);
    }
    out << j.dump() << '\n';
  }
  std::printf("decoded %zu scenes (mask=%s C=%d) -> %s\n", scenes.size(),
              no_mask ? "off" : "on", c, out_path.c_str());
  return 0;
}

EvalCorpus load_eval_corpus(const std::string& hyp_path, const std::string& ref_path) {
  auto parse_lines = [](const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::vector<json> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        records.push_back(json::parse(line));
      } catch (const std::exception& e) {
        throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
    return records;
  };
  auto refs_of = [](const json& j) {
    std::vector<std::vector<std::string>> refs;
    if (j.contains("captions")) {
      for (const auto& c : j["captions"]) refs.push_back(c.get<std::vector<std::string>>());
    } else if (j.contains("caption")) {
      refs.push_back(j["caption"].get<std::vector<std::string>>());
    }
    return refs;
  };

  std::map<std::string, std::vector<std::vector<std::string>>> ref_map;
  for (const auto& j : parse_lines(ref_path)) {
    ref_map[j.at("scene_id").get<std::string>()] = refs_of(j);
  }
  EvalCorpus corpus;
  for (const auto& j : parse_lines(hyp_path)) {
    EvalEntry entry;
    entry.scene_id = j.at("scene_id").get<std::string>();
    entry.hyp = j.at("caption").get<std::vector<std::string>>();
    auto it = ref_map.find(entry.scene_id);
    if (it == ref_map.end() || it->second.empty()) {
      throw DataError("no references for scene_id " + entry.scene_id);
    }
    entry.refs = it->second;
    corpus.push_back(std::move(entry));
  }
  if (corpus.empty()) throw DataError("empty hypothesis file: " + hyp_path);
  return corpus;
}

int cmd_eval(const std::string& hyp_path, const std::string& ref_path,
             const std::string& metric_list, const std::string& out_path) {
  EvalCorpus corpus = load_eval_corpus(hyp_path, ref_path);
  std::set<std::string> metrics;
  std::stringstream ss(metric_list);
  std::string name;
  while (std::getline(ss, name, ',')) {
    if (name != "bleu4" && name != "cider") throw ConfigError("unknown metric: " + name);
    metrics.insert(name);
  }
  std::vector<double> cider_scores;
  if (metrics.count("bleu4")) std::printf("bleu4   %.9f\n", bleu4(corpus));
  if (metrics.count("cider")) {
    cider_scores = cider_d_per_scene(corpus);
    double mean = 0.0;
    for (double s : cider_scores) mean += s;
    std::printf("cider-d %.9f\n", mean / static_cast<double>(cider_scores.size()));
  }
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw DataError("cannot write breakdown: " + out_path);
    for (size_t i = 0; i < corpus.size(); ++i) {
      json j;
      j["scene_id"] = corpus[i].scene_id;
      if (metrics.count("bleu4")) j["sentence_bleu4"] = sentence_bleu4(corpus[i].hyp, corpus[i].refs);
      if (metrics.count("cider")) j["cider_d"] = cider_scores[i];
      out << j.dump() << '\n';
    }
  }
  return 0;
}

int cmd_inspect(const std::string& ckpt_path, const std::string& data_path,
                const std::string& scene_id, int top_k) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  Model model = model_from_checkpoint(ckpt);
  auto scenes = load_scenes(data_path, read_options_for(model.cfg, 0.90));
  const Scene* scene = nullptr;
  for (const auto& s : scenes) {
    if (s.scene_id == scene_id) {
      scene = &s;
      break;
    }
  }
  if (!scene) throw DataError("unknown scene-id: " + scene_id);

  DecodeOptions opts;
  opts.use_repetition_mask = true;
  opts.common_words = common_word_set(model.vocab.counts, ckpt.train_cfg.common_c);
  opts.trace_top_k = top_k;
  DecodeResult result = decode_caption(*scene, model, opts);

  for (size_t t = 0; t < result.trace.size(); ++t) {
    const auto& st = result.trace[t];
    std::printf("step %zu -> %s\n", t, st.chosen.surface.c_str());
    for (const auto& e : st.top) {
      std::printf("  %-16s %12.6f %s\n", e.surface.c_str(), e.score,
                  e.masked ? "masked" : "");
    }
  }
  std::printf("caption:");
  for (const auto& tok : result.tokens) std::printf(" %s", tok.surface.c_str());
  std::printf("\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"confidence-aware non-repetitive caption pipeline"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic scene file");
  std::string gen_task = "copy-max-conf", gen_out;
  int gen_num = 100;
  uint64_t gen_seed = 1;
  SceneGenSpec gen_spec;
  gen->add_option("--task", gen_task, "copy-max-conf | describe-object | no-repeat-pairs");
  gen->add_option("--num-scenes", gen_num)->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", gen_seed);
  gen->add_option("--out", gen_out)->required();
  gen->add_option("--tokens-per-scene", gen_spec.tokens_per_scene);
  gen->add_option("--f-obj", gen_spec.f_obj);
  gen->add_option("--f-ocr", gen_spec.f_ocr);
  gen->add_option("--f-ft", gen_spec.f_ft);

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  std::string tr_config, tr_data, tr_out;
  tr->add_option("--config", tr_config)->required();
  tr->add_option("--data", tr_data)->required();
  tr->add_option("--out", tr_out)->required();

  // decode
  auto* de = app.add_subcommand("decode", "greedy-decode captions");
  std::string de_ckpt, de_data, de_out;
  bool de_no_mask = false;
  int de_common = -1, de_top_k = 0;
  de->add_option("--ckpt", de_ckpt)->required();
  de->add_option("--data", de_data)->required();
  de->add_option("--out", de_out)->required();
  de->add_flag("--no-mask", de_no_mask, "disable the repetition mask");
  de->add_option("--common-threshold", de_common, "override the common-word C");
  de->add_option("--top-k", de_top_k, "record per-step score tables");

  // eval
  auto* ev = app.add_subcommand("eval", "score hypotheses against references");
  std::string ev_hyp, ev_ref, ev_metrics = "bleu4,cider", ev_out;
  ev->add_option("--hyp", ev_hyp)->required();
  ev->add_option("--ref", ev_ref)->required();
  ev->add_option("--metrics", ev_metrics);
  ev->add_option("--out", ev_out, "per-scene breakdown file");

  // inspect
  auto* in = app.add_subcommand("inspect", "per-step score/mask table for one scene");
  std::string in_ckpt, in_data, in_scene;
  int in_top_k = 5;
  in->add_option("--ckpt", in_ckpt)->required();
  in->add_option("--data", in_data)->required();
  in->add_option("--scene-id", in_scene)->required();
  in->add_option("--top-k", in_top_k);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_task, gen_num, gen_seed, gen_out, gen_spec);
    if (tr->parsed()) return cmd_train(tr_config, tr_data, tr_out);
    if (de->parsed()) return cmd_decode(de_ckpt, de_data, de_out, de_no_mask, de_common, de_top_k);
    if (ev->parsed()) return cmd_eval(ev_hyp, ev_ref, ev_metrics, ev_out);
    if (in->parsed()) return cmd_inspect(in_ckpt, in_data, in_scene, in_top_k);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return 0;
}
