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

#include "cnmt/embedding.hpp"

namespace cnmt {

namespace {

Tensor feature_matrix(const std::vector<std::vector<double>>& rows, int dim,
                      const char* what) {
  std::vector<double> flat;
  flat.reserve(rows.size() * static_cast<size_t>(dim));
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != dim) {
      throw ConfigError(std::string(what) + ": feature dim " + std::to_string(r.size()) +
                        " != configured " + std::to_string(dim));
    }
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor::from({static_cast<int>(rows.size()), dim}, std::move(flat));
}

}  // namespace

Tensor embed_objects(const std::vector<ObjectRegion>& objects, const Scene& scene,
                     const Model& model) {
  const int m = static_cast<int>(objects.size());
  std::vector<std::vector<double>> fr, boxes;
  for (const auto& obj : objects) {
    fr.push_back(obj.feat_appearance);
    auto nb = normalize_box(obj.box, scene.width, scene.height, scene.scene_id);
    boxes.push_back({nb[0], nb[1], nb[2], nb[3]});
  }
  if (m == 0) return Tensor();
  Tensor x_fr = feature_matrix(fr, model.cfg.f_obj, "embed_objects");
  Tensor x_b = feature_matrix(boxes, 4, "embed_objects");
  Tensor appearance = layer_norm(linear(x_fr, model.p("emb.obj.w1"), Tensor()),
                                 model.p("emb.obj.ln1.g"), model.p("emb.obj.ln1.b"));
  Tensor location = layer_norm(linear(x_b, model.p("emb.obj.w2"), Tensor()),
                               model.p("emb.obj.ln2.g"), model.p("emb.obj.ln2.b"));
  return add(appearance, location);
}

Tensor embed_ocr_tokens(const std::vector<OcrToken>& tokens, const Scene& scene,
                        const Model& model, ConfidenceMode mode) {
  const int n = model.cfg.n_ocr;
  const int real = static_cast<int>(tokens.size());
  if (real > n) throw ContractError("embed_ocr_tokens: more tokens than N slots");
  std::vector<std::vector<double>> ft, fr, phoc, boxes, conf;
  for (const auto& tok : tokens) {
    if (tok.conf < 0.0 || tok.conf > 1.0) {
      throw DataError("scene " + scene.scene_id + ": conf " + std::to_string(tok.conf) +
                      " outside [0,1]");
    }
    ft.push_back(tok.feat_subword);
    fr.push_back(tok.feat_appearance);
    phoc.push_back(tok.feat_phoc);
    auto nb = normalize_box(tok.box, scene.width, scene.height, scene.scene_id);
    boxes.push_back({nb[0], nb[1], nb[2], nb[3]});
    conf.push_back({tok.conf});
  }
  for (int i = real; i < n; ++i) {  // zero padding
    ft.emplace_back(static_cast<size_t>(model.cfg.f_ft), 0.0);
    fr.emplace_back(static_cast<size_t>(model.cfg.f_ocr), 0.0);
    phoc.emplace_back(static_cast<size_t>(kPhocDim), 0.0);
    boxes.emplace_back(4, 0.0);
    conf.emplace_back(1, 0.0);
  }
  Tensor x_ft = feature_matrix(ft, model.cfg.f_ft, "embed_ocr_tokens");
  Tensor x_fr = feature_matrix(fr, model.cfg.f_ocr, "embed_ocr_tokens");
  Tensor x_p = feature_matrix(phoc, kPhocDim, "embed_ocr_tokens");
  Tensor x_b = feature_matrix(boxes, 4, "embed_ocr_tokens");
  Tensor x_conf = feature_matrix(conf, 1, "embed_ocr_tokens");

  Tensor feat = add(add(linear(x_ft, model.p("emb.ocr.w3"), Tensor()),
                        linear(x_fr, model.p("emb.ocr.w4"), Tensor())),
                    linear(x_p, model.p("emb.ocr.w5"), Tensor()));
  Tensor out = add(layer_norm(feat, model.p("emb.ocr.ln_feat.g"), model.p("emb.ocr.ln_feat.b")),
                   layer_norm(linear(x_b, model.p("emb.ocr.w6"), Tensor()),
                              model.p("emb.ocr.ln_box.g"), model.p("emb.ocr.ln_box.b")));
  switch (mode) {
    case ConfidenceMode::kEmbed:
      out = add(out, layer_norm(linear(x_conf, model.p("emb.ocr.w7"), Tensor()),
                                model.p("emb.ocr.ln_conf.g"), model.p("emb.ocr.ln_conf.b")));
      break;
    case ConfidenceMode::kMultiply: {
      std::vector<double> scales;
      for (const auto& c : conf) scales.push_back(c[0]);
      out = mul_rows_const(out, scales);
      break;
    }
    case ConfidenceMode::kNone:
      break;
  }
  // padded slots stay all-zero regardless of layer-norm biases
  std::vector<double> keep(static_cast<size_t>(n), 1.0);
  for (int i = real; i < n; ++i) keep[static_cast<size_t>(i)] = 0.0;
  return mul_rows_const(out, keep);
}

EmbeddedScene embed_scene(const Scene& scene, const Model& model) {
  EmbeddedScene out;
  out.x_obj = embed_objects(scene.objects, scene, model);
  out.x_ocr = embed_ocr_tokens(scene.ocr, scene, model, model.cfg.confidence_mode);
  out.ocr_pad.assign(static_cast<size_t>(model.cfg.n_ocr), false);
  for (int i = static_cast<int>(scene.ocr.size()); i < model.cfg.n_ocr; ++i) {
    out.ocr_pad[static_cast<size_t>(i)] = true;
  }
  for (const auto& tok : scene.ocr) out.ocr_texts.push_back(tok.text);
  return out;
}

Tensor embed_prev_output(const TokenRef& prev, const Tensor& x_ocr, int step,
                         const Model& model) {
  if (step < 0 || step >= model.cfg.max_steps) {
    throw ContractError("embed_prev_output: step " + std::to_string(step) +
                        " outside [0," + std::to_string(model.cfg.max_steps) + ")");
  }
  Tensor base;
  int type_row;
  if (prev.source == TokenRef::Source::kVocab) {
    const Tensor& w = model.p("gen.voc.w");
    if (prev.index < 0 || prev.index >= w.dim(0)) {
      throw ContractError("embed_prev_output: vocab slot out of range");
    }
    base = row(w, prev.index);
    type_row = 0;
  } else {
    if (prev.index < 0 || prev.index >= x_ocr.dim(0)) {
      throw ContractError("embed_prev_output: ocr slot out of range");
    }
    base = row(x_ocr, prev.index);
    type_row = 1;
  }
  Tensor v = add(add(base, row(model.p("emb.prev.pos"), step)),
                 row(model.p("emb.prev.type"), type_row));
  return layer_norm(v, model.p("emb.prev.ln.g"), model.p("emb.prev.ln.b"));
}

}  // namespace cnmt
