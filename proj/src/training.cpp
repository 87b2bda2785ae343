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

#include "cnmt/training.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>

#include "cnmt/metrics.hpp"
#include "cnmt/rng.hpp"
#include "json.hpp"

namespace cnmt {

void TrainConfig::validate() const {
  if (lr <= 0 || decay_factor <= 0 || total_iters <= 0 || batch_size <= 0 ||
      eval_every <= 0 || min_count < 0 || common_c < 0) {
    throw ConfigError("train config: values must be positive");
  }
  for (size_t i = 1; i < decay_steps.size(); ++i) {
    if (decay_steps[i] <= decay_steps[i - 1]) {
      throw ConfigError("train config: decay_steps must be strictly increasing");
    }
  }
}

int target_slot(const std::string& gold_word, const Vocabulary& vocab,
                const std::vector<std::string>& ocr_texts) {
  const int slot = vocab.find(gold_word);
  if (slot >= 0) return slot;
  for (int i = 0; i < static_cast<int>(ocr_texts.size()); ++i) {
    if (ocr_texts[static_cast<size_t>(i)] == gold_word) return vocab.size() + i;
  }
  return -1;
}

namespace {

TokenRef input_ref_for(const std::string& word, const Vocabulary& vocab,
                       const std::vector<std::string>& ocr_texts) {
  const int slot = vocab.find(word);
  if (slot >= 0) return {TokenRef::Source::kVocab, slot, word};
  for (int i = 0; i < static_cast<int>(ocr_texts.size()); ++i) {
    if (ocr_texts[static_cast<size_t>(i)] == word) return {TokenRef::Source::kOcr, i, word};
  }
  // word absent everywhere: feed the <pad> row as the previous-output base
  return {TokenRef::Source::kVocab, Vocabulary::kPad, word};
}

}  // namespace

Tensor step_loss(const Scene& scene, const std::vector<std::string>& gold,
                 const Model& model, bool construct_mask_probe) {
  if (gold.empty()) throw ContractError("step_loss: empty gold caption");
  EmbeddedScene emb = embed_scene(scene, model);
  const int len = std::min(static_cast<int>(gold.size()), model.cfg.max_steps - 1);
  const int t_rows = len + 1;  // inputs <s>, w_0..w_{len-1}; last target is </s>

  std::vector<Tensor> dec_rows;
  std::vector<int> targets;
  std::vector<double> weights;
  TokenRef prev{TokenRef::Source::kVocab, Vocabulary::kBos, kBosToken};
  for (int t = 0; t < t_rows; ++t) {
    dec_rows.push_back(embed_prev_output(prev, emb.x_ocr, t, model));
    const std::string target_word =
        t < len ? gold[static_cast<size_t>(t)] : std::string(kEosToken);
    const int slot = target_slot(target_word, model.vocab, emb.ocr_texts);
    targets.push_back(slot < 0 ? 0 : slot);
    weights.push_back(slot < 0 ? 0.0 : 1.0);
    if (t < len) prev = input_ref_for(gold[static_cast<size_t>(t)], model.vocab, emb.ocr_texts);
  }

  Tensor x_dec = concat_rows(dec_rows);
  MmtOutput z = mmt_forward(emb.x_obj, emb.x_ocr, x_dec, emb.ocr_pad, model);

  DecodeState probe_state;
  std::vector<Tensor> score_rows;
  for (int t = 0; t < t_rows; ++t) {
    Tensor z_row = row(z.z_dec, t);
    Tensor y_ocr = pointer_scores(z_row, z.z_ocr, model);
    Tensor y_voc = vocab_scores(z_row, model);
    Tensor y_add = add_duplicate_scores(y_voc, y_ocr, emb.ocr_texts, model.vocab);
    score_rows.push_back(concat_scores(y_add, y_ocr));
    if (construct_mask_probe) {
      // built and immediately discarded; the training path never applies it
      probe_state.step = t;
      (void)build_repetition_mask(probe_state, model.vocab, {}, emb.ocr_texts, emb.ocr_pad);
    }
  }
  Tensor logits = concat_rows(score_rows);
  return cross_entropy_rows(logits, targets, weights);
}

double lr_at(int iteration, const TrainConfig& cfg) {
  int decays = 0;
  for (int step : cfg.decay_steps) {
    if (step <= iteration) ++decays;
  }
  double lr = cfg.lr;
  for (int i = 0; i < decays; ++i) lr *= cfg.decay_factor;
  return lr;
}

namespace {

double validation_bleu4(const std::vector<Scene>& val_scenes, const Model& model,
                        int common_c) {
  if (val_scenes.empty()) return 0.0;
  DecodeOptions opts;
  opts.use_repetition_mask = true;
  opts.common_words = common_word_set(model.vocab.counts, common_c);
  EvalCorpus corpus;
  for (const auto& scene : val_scenes) {
    EvalEntry entry;
    entry.scene_id = scene.scene_id;
    for (const auto& tok : decode_caption(scene, model, opts).tokens) {
      entry.hyp.push_back(tok.surface);
    }
    entry.refs = scene.captions;
    corpus.push_back(std::move(entry));
  }
  return bleu4(corpus);
}

}  // namespace

TrainResult train(const std::vector<Scene>& train_scenes,
                  const std::vector<Scene>& val_scenes, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg) {
  model_cfg.validate();
  train_cfg.validate();
  if (train_scenes.empty()) throw DataError("train: empty training set");
  for (const auto& s : train_scenes) {
    if (s.captions.empty()) throw DataError("train: scene " + s.scene_id + " has no captions");
  }

  std::vector<std::vector<std::string>> all_captions;
  for (const auto& s : train_scenes) {
    for (const auto& c : s.captions) all_captions.push_back(c);
  }
  Vocabulary vocab = build_vocabulary(all_captions, train_cfg.min_count);
  Model model = Model::init(model_cfg, vocab, train_cfg.seed);

  AdamConfig adam_cfg;
  AdamState adam_state;
  Rng shuffle_rng(train_cfg.seed * 0x9e3779b97f4a7c15ull + 7);

  TrainResult result;
  result.best.model_cfg = model_cfg;
  result.best.train_cfg = train_cfg;
  result.best.vocab = vocab;

  std::vector<size_t> order(train_scenes.size());
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();  // force reshuffle on first use

  bool have_best = false;
  double last_loss = 0.0;

  auto run_eval = [&](int iter) {
    const double bleu = validation_bleu4(val_scenes, model, train_cfg.common_c);
    result.log.push_back({iter, lr_at(iter, train_cfg), last_loss, bleu});
    if (!have_best || bleu > result.best.best_bleu4) {
      have_best = true;
      result.best.best_bleu4 = bleu;
      result.best.iteration = iter;
      result.best.params = model.store.values();
    }
  };

  for (int iter = 0; iter < train_cfg.total_iters; ++iter) {
    std::vector<const Scene*> batch;
    for (int b = 0; b < train_cfg.batch_size; ++b) {
      if (cursor >= order.size()) {
        for (size_t i = order.size() - 1; i > 0; --i) {
          std::swap(order[i], order[shuffle_rng.uniform_int(i + 1)]);
        }
        cursor = 0;
      }
      batch.push_back(&train_scenes[order[cursor++]]);
    }
    try {
      Tensor loss;
      for (const Scene* scene : batch) {
        Tensor l = step_loss(*scene, scene->captions.front(), model);
        loss = loss.defined() ? add(loss, l) : l;
      }
      loss = scale(loss, 1.0 / train_cfg.batch_size);
      last_loss = loss.scalar_value();
      model.store.zero_grad();
      backward(loss);
      adam_step(model.store, model.store.collect_grads(), lr_at(iter, train_cfg),
                adam_cfg, adam_state);
    } catch (const NumericError&) {
      // params still hold the last completed update
      result.aborted = true;
      result.abort_iteration = iter;
      if (!have_best) {
        result.best.iteration = iter;
        result.best.params = model.store.values();
      }
      return result;
    }
    if ((iter + 1) % train_cfg.eval_every == 0) run_eval(iter + 1);
  }
  if (result.log.empty() || result.log.back().iteration != train_cfg.total_iters) {
    run_eval(train_cfg.total_iters);
  }
  return result;
}

// ---- checkpoint container --------------------------------------------------

namespace {

using json = nlohmann::ordered_json;

constexpr char kMagic[8] = {'C', 'N', 'M', 'T', 'C', 'K', 'P', '1'};

uint32_t crc32_update(uint32_t crc, const unsigned char* data, size_t len) {
  static uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    init = true;
  }
  crc ^= 0xffffffffu;
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
  return crc ^ 0xffffffffu;
}

json model_cfg_to_json(const ModelConfig& m) {
  json j;
  j["d"] = m.d;
  j["layers"] = m.layers;
  j["heads"] = m.heads;
  j["ffn_dim"] = m.ffn_dim;
  j["n_ocr"] = m.n_ocr;
  j["max_steps"] = m.max_steps;
  j["f_obj"] = m.f_obj;
  j["f_ocr"] = m.f_ocr;
  j["f_ft"] = m.f_ft;
  j["confidence_mode"] = confidence_mode_name(m.confidence_mode);
  return j;
}

json train_cfg_to_json(const TrainConfig& t) {
  json j;
  j["lr"] = t.lr;
  j["decay_steps"] = t.decay_steps;
  j["decay_factor"] = t.decay_factor;
  j["total_iters"] = t.total_iters;
  j["batch_size"] = t.batch_size;
  j["eval_every"] = t.eval_every;
  j["seed"] = t.seed;
  j["min_count"] = t.min_count;
  j["common_c"] = t.common_c;
  return j;
}

template <typename J>
void check_keys(const J& j, const std::vector<std::string>& known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw ConfigError("unknown config key: " + where + "." + it.key());
    }
  }
}

template <typename J>
ModelConfig model_cfg_from_json(const J& j, bool require_d) {
  check_keys(j, {"d", "layers", "heads", "ffn_dim", "n_ocr", "max_steps", "f_obj",
                 "f_ocr", "f_ft", "confidence_mode"},
             "model");
  ModelConfig m;
  if (require_d && !j.contains("d")) throw ConfigError("missing config key: model.d");
  if (j.contains("d")) m.d = j["d"].template get<int>();
  if (j.contains("layers")) m.layers = j["layers"].template get<int>();
  if (j.contains("heads")) m.heads = j["heads"].template get<int>();
  if (j.contains("ffn_dim")) m.ffn_dim = j["ffn_dim"].template get<int>();
  if (j.contains("n_ocr")) m.n_ocr = j["n_ocr"].template get<int>();
  if (j.contains("max_steps")) m.max_steps = j["max_steps"].template get<int>();
  if (j.contains("f_obj")) m.f_obj = j["f_obj"].template get<int>();
  if (j.contains("f_ocr")) m.f_ocr = j["f_ocr"].template get<int>();
  if (j.contains("f_ft")) m.f_ft = j["f_ft"].template get<int>();
  if (j.contains("confidence_mode")) {
    m.confidence_mode = confidence_mode_from_name(j["confidence_mode"].template get<std::string>());
  }
  return m;
}

template <typename J>
TrainConfig train_cfg_from_json(const J& j, bool require_core) {
  check_keys(j, {"lr", "decay_steps", "decay_factor", "total_iters", "batch_size",
                 "eval_every", "seed", "min_count", "common_c"},
             "train");
  TrainConfig t;
  if (require_core) {
    if (!j.contains("total_iters")) throw ConfigError("missing config key: train.total_iters");
    if (!j.contains("seed")) throw ConfigError("missing config key: train.seed");
  }
  if (j.contains("lr")) t.lr = j["lr"].template get<double>();
  if (j.contains("decay_steps")) t.decay_steps = j["decay_steps"].template get<std::vector<int>>();
  if (j.contains("decay_factor")) t.decay_factor = j["decay_factor"].template get<double>();
  if (j.contains("total_iters")) t.total_iters = j["total_iters"].template get<int>();
  if (j.contains("batch_size")) t.batch_size = j["batch_size"].template get<int>();
  if (j.contains("eval_every")) t.eval_every = j["eval_every"].template get<int>();
  if (j.contains("seed")) t.seed = j["seed"].template get<uint64_t>();
  if (j.contains("min_count")) t.min_count = j["min_count"].template get<int>();
  if (j.contains("common_c")) t.common_c = j["common_c"].template get<int>();
  return t;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  json header;
  header["version"] = ckpt.version;
  header["model"] = model_cfg_to_json(ckpt.model_cfg);
  header["train"] = train_cfg_to_json(ckpt.train_cfg);
  header["vocab"]["words"] = ckpt.vocab.words;
  header["vocab"]["counts"] = ckpt.vocab.counts;
  header["iteration"] = ckpt.iteration;
  header["best_bleu4"] = ckpt.best_bleu4;
  json plist = json::array();
  for (const auto& [name, values] : ckpt.params) {
    json p;
    p["name"] = name;
    p["size"] = values.size();
    plist.push_back(std::move(p));
  }
  header["params"] = std::move(plist);
  const std::string hs = header.dump();

  std::string payload;
  uint64_t hlen = hs.size();
  payload.append(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  payload.append(hs);
  for (const auto& [name, values] : ckpt.params) {
    payload.append(reinterpret_cast<const char*>(values.data()),
                   values.size() * sizeof(double));
  }
  const uint32_t crc = crc32_update(
      0, reinterpret_cast<const unsigned char*>(payload.data()), payload.size());

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  out.write(reinterpret_cast<const char*>(&crc), sizeof(crc));
  if (!out) throw DataError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) + sizeof(uint64_t) + sizeof(uint32_t) ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a checkpoint file: " + path);
  }
  const size_t body_len = bytes.size() - sizeof(kMagic) - sizeof(uint32_t);
  uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + sizeof(kMagic) + body_len, sizeof(stored_crc));
  const uint32_t crc = crc32_update(
      0, reinterpret_cast<const unsigned char*>(bytes.data() + sizeof(kMagic)), body_len);
  if (crc != stored_crc) throw DataError("checkpoint integrity check failed: " + path);

  size_t off = sizeof(kMagic);
  uint64_t hlen;
  std::memcpy(&hlen, bytes.data() + off, sizeof(hlen));
  off += sizeof(hlen);
  if (off + hlen > bytes.size()) throw DataError("checkpoint truncated: " + path);
  json header = json::parse(bytes.substr(off, hlen));
  off += hlen;

  Checkpoint ckpt;
  ckpt.version = header.at("version").get<uint32_t>();
  if (ckpt.version != 1) {
    throw DataError("unsupported checkpoint version " + std::to_string(ckpt.version) +
                    " (expected 1)");
  }
  ckpt.model_cfg = model_cfg_from_json(header.at("model"), false);
  ckpt.train_cfg = train_cfg_from_json(header.at("train"), false);
  ckpt.vocab.words = header.at("vocab").at("words").get<std::vector<std::string>>();
  for (auto it = header.at("vocab").at("counts").begin();
       it != header.at("vocab").at("counts").end(); ++it) {
    ckpt.vocab.counts[it.key()] = it.value().get<int64_t>();
  }
  for (int i = 0; i < ckpt.vocab.size(); ++i) {
    ckpt.vocab.slot_of[ckpt.vocab.words[static_cast<size_t>(i)]] = i;
  }
  ckpt.iteration = header.at("iteration").get<int64_t>();
  ckpt.best_bleu4 = header.at("best_bleu4").get<double>();
  for (const auto& p : header.at("params")) {
    const std::string name = p.at("name").get<std::string>();
    const size_t count = p.at("size").get<size_t>();
    if (off + count * sizeof(double) > bytes.size()) {
      throw DataError("checkpoint truncated in parameter " + name);
    }
    std::vector<double> values(count);
    std::memcpy(values.data(), bytes.data() + off, count * sizeof(double));
    off += count * sizeof(double);
    ckpt.params.emplace(name, std::move(values));
  }
  return ckpt;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model model = Model::init(ckpt.model_cfg, ckpt.vocab, /*seed=*/0);
  model.store.load_values(ckpt.params);
  return model;
}

// ---- config files ----------------------------------------------------------

AppConfig parse_app_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  check_keys(j, {"model", "train", "data", "decode"}, "<root>");
  if (!j.contains("model")) throw ConfigError("missing config key: model.d");
  if (!j.contains("train")) throw ConfigError("missing config key: train.total_iters");
  AppConfig cfg;
  cfg.model = model_cfg_from_json(j["model"], true);
  cfg.train = train_cfg_from_json(j["train"], true);
  if (j.contains("data")) {
    check_keys(j["data"], {"c_default", "val_fraction"}, "data");
    if (j["data"].contains("c_default")) cfg.data.c_default = j["data"]["c_default"].get<double>();
    if (j["data"].contains("val_fraction")) {
      cfg.data.val_fraction = j["data"]["val_fraction"].get<double>();
    }
  }
  if (j.contains("decode")) {
    check_keys(j["decode"], {"use_mask", "common_c", "trace_top_k"}, "decode");
    if (j["decode"].contains("use_mask")) cfg.decode.use_mask = j["decode"]["use_mask"].get<bool>();
    if (j["decode"].contains("common_c")) cfg.decode.common_c = j["decode"]["common_c"].get<int>();
    if (j["decode"].contains("trace_top_k")) {
      cfg.decode.trace_top_k = j["decode"]["trace_top_k"].get<int>();
    }
  }
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

std::string app_config_echo(const AppConfig& cfg) {
  json j;
  j["model"] = model_cfg_to_json(cfg.model);
  j["train"] = train_cfg_to_json(cfg.train);
  j["data"]["c_default"] = cfg.data.c_default;
  j["data"]["val_fraction"] = cfg.data.val_fraction;
  j["decode"]["use_mask"] = cfg.decode.use_mask;
  j["decode"]["common_c"] = cfg.decode.common_c;
  j["decode"]["trace_top_k"] = cfg.decode.trace_top_k;
  return j.dump(2);
}

}  // namespace cnmt
