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

#include "cnmt/model.hpp"

#include "cnmt/reading.hpp"

namespace cnmt {

ConfidenceMode confidence_mode_from_name(const std::string& name) {
  if (name == "embed") return ConfidenceMode::kEmbed;
  if (name == "multiply") return ConfidenceMode::kMultiply;
  if (name == "none") return ConfidenceMode::kNone;
  throw ConfigError("unknown confidence_mode: " + name);
}

std::string confidence_mode_name(ConfidenceMode m) {
  switch (m) {
    case ConfidenceMode::kEmbed: return "embed";
    case ConfidenceMode::kMultiply: return "multiply";
    case ConfidenceMode::kNone: return "none";
  }
  return "embed";
}

void ModelConfig::validate() const {
  if (d <= 0 || layers <= 0 || heads <= 0 || n_ocr <= 0 || max_steps < 1 ||
      f_obj <= 0 || f_ocr <= 0 || f_ft <= 0) {
    throw ConfigError("model config: all dimensions must be positive");
  }
  if (d % heads != 0) {
    throw ConfigError("model config: d=" + std::to_string(d) +
                      " not divisible by heads=" + std::to_string(heads));
  }
}

Model Model::init(const ModelConfig& cfg, const Vocabulary& vocab, uint64_t seed) {
  cfg.validate();
  Model model;
  model.cfg = cfg;
  model.vocab = vocab;
  Rng rng(seed ^ 0x1234abcd5678ef01ull);
  auto& s = model.store;
  const int d = cfg.d;

  // object embedding (projection + per-term layer norm)
  s.create("emb.obj.w1", {d, cfg.f_obj}, Init::kNormal, rng);
  s.create("emb.obj.ln1.g", {d}, Init::kOnes, rng);
  s.create("emb.obj.ln1.b", {d}, Init::kZeros, rng);
  s.create("emb.obj.w2", {d, 4}, Init::kNormal, rng);
  s.create("emb.obj.ln2.g", {d}, Init::kOnes, rng);
  s.create("emb.obj.ln2.b", {d}, Init::kZeros, rng);

  // OCR token embedding
  s.create("emb.ocr.w3", {d, cfg.f_ft}, Init::kNormal, rng);
  s.create("emb.ocr.w4", {d, cfg.f_ocr}, Init::kNormal, rng);
  s.create("emb.ocr.w5", {d, kPhocDim}, Init::kNormal, rng);
  s.create("emb.ocr.ln_feat.g", {d}, Init::kOnes, rng);
  s.create("emb.ocr.ln_feat.b", {d}, Init::kZeros, rng);
  s.create("emb.ocr.w6", {d, 4}, Init::kNormal, rng);
  s.create("emb.ocr.ln_box.g", {d}, Init::kOnes, rng);
  s.create("emb.ocr.ln_box.b", {d}, Init::kZeros, rng);
  s.create("emb.ocr.w7", {d, 1}, Init::kNormal, rng);
  s.create("emb.ocr.ln_conf.g", {d}, Init::kOnes, rng);
  s.create("emb.ocr.ln_conf.b", {d}, Init::kZeros, rng);

  // previous-output embedding extras
  s.create("emb.prev.pos", {cfg.max_steps, d}, Init::kNormal, rng);
  s.create("emb.prev.type", {2, d}, Init::kNormal, rng);
  s.create("emb.prev.ln.g", {d}, Init::kOnes, rng);
  s.create("emb.prev.ln.b", {d}, Init::kZeros, rng);

  // transformer stack
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "mmt.l" + std::to_string(l) + ".";
    s.create(p + "attn.wq", {d, d}, Init::kNormal, rng);
    s.create(p + "attn.bq", {d}, Init::kZeros, rng);
    s.create(p + "attn.wk", {d, d}, Init::kNormal, rng);
    s.create(p + "attn.bk", {d}, Init::kZeros, rng);
    s.create(p + "attn.wv", {d, d}, Init::kNormal, rng);
    s.create(p + "attn.bv", {d}, Init::kZeros, rng);
    s.create(p + "attn.wo", {d, d}, Init::kNormal, rng);
    s.create(p + "attn.bo", {d}, Init::kZeros, rng);
    s.create(p + "ln1.g", {d}, Init::kOnes, rng);
    s.create(p + "ln1.b", {d}, Init::kZeros, rng);
    s.create(p + "ffn.w1", {cfg.ffn(), d}, Init::kNormal, rng);
    s.create(p + "ffn.b1", {cfg.ffn()}, Init::kZeros, rng);
    s.create(p + "ffn.w2", {d, cfg.ffn()}, Init::kNormal, rng);
    s.create(p + "ffn.b2", {d}, Init::kZeros, rng);
    s.create(p + "ln2.g", {d}, Init::kOnes, rng);
    s.create(p + "ln2.b", {d}, Init::kZeros, rng);
  }

  // generation heads; gen.voc.w rows double as vocab-token embeddings
  s.create("gen.ptr.wo", {d, d}, Init::kNormal, rng);
  s.create("gen.ptr.bo", {d}, Init::kZeros, rng);
  s.create("gen.ptr.wd", {d, d}, Init::kNormal, rng);
  s.create("gen.ptr.bd", {d}, Init::kZeros, rng);
  s.create("gen.voc.w", {vocab.size(), d}, Init::kNormal, rng);
  s.create("gen.voc.b", {vocab.size()}, Init::kZeros, rng);
  return model;
}

AttentionParams Model::attention_params(int layer) const {
  const std::string p = "mmt.l" + std::to_string(layer) + ".attn.";
  return AttentionParams{store.at(p + "wq"), store.at(p + "bq"), store.at(p + "wk"),
                         store.at(p + "bk"), store.at(p + "wv"), store.at(p + "bv"),
                         store.at(p + "wo"), store.at(p + "bo")};
}

}  // namespace cnmt
