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

#include "cnmt/generation.hpp"

#include <algorithm>

namespace cnmt {

Tensor pointer_scores(const Tensor& z_dec_row, const Tensor& z_ocr, const Model& model) {
  Tensor keys = linear(z_ocr, model.p("gen.ptr.wo"), model.p("gen.ptr.bo"));     // [N,d]
  Tensor query = linear(z_dec_row, model.p("gen.ptr.wd"), model.p("gen.ptr.bd"));  // [d]
  Tensor scores = matmul(keys, reshape(query, {model.cfg.d, 1}));                // [N,1]
  return reshape(scores, {z_ocr.dim(0)});
}

Tensor vocab_scores(const Tensor& z_dec_row, const Model& model) {
  return linear(z_dec_row, model.p("gen.voc.w"), model.p("gen.voc.b"));
}

Tensor add_duplicate_scores(const Tensor& y_voc, const Tensor& y_ocr,
                            const std::vector<std::string>& ocr_texts,
                            const Vocabulary& vocab) {
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < static_cast<int>(ocr_texts.size()); ++i) {
    const int slot = vocab.find(ocr_texts[static_cast<size_t>(i)]);
    if (slot >= 0) pairs.emplace_back(i, slot);
  }
  return scatter_add_slots(y_voc, y_ocr, pairs);
}

Tensor concat_scores(const Tensor& y_add, const Tensor& y_ocr) {
  return concat_vec(y_add, y_ocr);
}

std::vector<double> build_structural_mask(const Vocabulary& vocab,
                                          const std::vector<std::string>& ocr_texts,
                                          const std::vector<bool>& pad_flags) {
  const int v = vocab.size();
  const int n = static_cast<int>(pad_flags.size());
  const double neg = neg_sentinel();
  std::vector<double> mask(static_cast<size_t>(v + n), 0.0);
  mask[Vocabulary::kPad] = neg;
  mask[Vocabulary::kBos] = neg;
  for (int i = 0; i < n; ++i) {
    if (pad_flags[static_cast<size_t>(i)] || i >= static_cast<int>(ocr_texts.size())) {
      mask[static_cast<size_t>(v + i)] = neg;
    }
  }
  return mask;
}

std::vector<double> build_repetition_mask(const DecodeState& state, const Vocabulary& vocab,
                                          const std::set<std::string>& common_words,
                                          const std::vector<std::string>& ocr_texts,
                                          const std::vector<bool>& pad_flags) {
  auto mask = build_structural_mask(vocab, ocr_texts, pad_flags);
  const int v = vocab.size();
  const double neg = neg_sentinel();
  for (const auto& tok : state.emitted) {
    const std::string& s = tok.surface;
    if (s == kEosToken || common_words.count(s)) continue;
    const int slot = vocab.find(s);
    if (slot >= 0) mask[static_cast<size_t>(slot)] = neg;
    // every source of the same surface string is masked together
    for (int i = 0; i < static_cast<int>(ocr_texts.size()); ++i) {
      if (ocr_texts[static_cast<size_t>(i)] == s) mask[static_cast<size_t>(v + i)] = neg;
    }
  }
  return mask;
}

TokenRef greedy_step(const std::vector<double>& y, const std::vector<double>& mask,
                     const Vocabulary& vocab, const std::vector<std::string>& ocr_texts) {
  if (y.size() != mask.size()) throw ContractError("greedy_step: score/mask size mismatch");
  int best = -1;
  double best_score = 0.0;
  for (size_t i = 0; i < y.size(); ++i) {
    const double s = y[i] + mask[i];
    if (best < 0 || s > best_score) {
      best = static_cast<int>(i);
      best_score = s;
    }
  }
  if (best < 0 || best_score <= neg_sentinel() / 2) {
    throw ContractError("greedy_step: every position is masked");
  }
  TokenRef ref;
  const int v = vocab.size();
  if (best < v) {
    ref.source = TokenRef::Source::kVocab;
    ref.index = best;
    ref.surface = vocab.words[static_cast<size_t>(best)];
  } else {
    ref.source = TokenRef::Source::kOcr;
    ref.index = best - v;
    ref.surface = ocr_texts[static_cast<size_t>(best - v)];
  }
  return ref;
}

DecodeResult decode_caption(const Scene& scene, const Model& model,
                            const DecodeOptions& opts) {
  EmbeddedScene emb = embed_scene(scene, model);
  DecodeResult result;
  DecodeState state;
  TokenRef prev{TokenRef::Source::kVocab, Vocabulary::kBos, kBosToken};
  std::vector<Tensor> dec_rows;

  for (int t = 0; t < model.cfg.max_steps; ++t) {
    dec_rows.push_back(embed_prev_output(prev, emb.x_ocr, t, model));
    Tensor x_dec = concat_rows(dec_rows);
    MmtOutput z = mmt_forward(emb.x_obj, emb.x_ocr, x_dec, emb.ocr_pad, model);
    Tensor z_row = row(z.z_dec, t);
    Tensor y_ocr = pointer_scores(z_row, z.z_ocr, model);
    Tensor y_voc = vocab_scores(z_row, model);
    Tensor y_add = add_duplicate_scores(y_voc, y_ocr, emb.ocr_texts, model.vocab);
    Tensor y = concat_scores(y_add, y_ocr);

    state.step = t;
    const auto mask = opts.use_repetition_mask
                          ? build_repetition_mask(state, model.vocab, opts.common_words,
                                                  emb.ocr_texts, emb.ocr_pad)
                          : build_structural_mask(model.vocab, emb.ocr_texts, emb.ocr_pad);
    TokenRef chosen = greedy_step(y.values(), mask, model.vocab, emb.ocr_texts);

    if (opts.trace_top_k > 0) {
      StepTrace trace;
      std::vector<int> order(y.values().size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
      std::sort(order.begin(), order.end(), [&y](int a, int b) {
        return y.values()[static_cast<size_t>(a)] > y.values()[static_cast<size_t>(b)];
      });
      const int v = model.vocab.size();
      for (int i = 0; i < opts.trace_top_k && i < static_cast<int>(order.size()); ++i) {
        const int slot = order[static_cast<size_t>(i)];
        StepTrace::Entry e;
        e.surface = slot < v ? model.vocab.words[static_cast<size_t>(slot)]
                             : (slot - v < static_cast<int>(emb.ocr_texts.size())
                                    ? emb.ocr_texts[static_cast<size_t>(slot - v)]
                                    : std::string("<pad-slot>"));
        e.score = y.values()[static_cast<size_t>(slot)];
        e.masked = mask[static_cast<size_t>(slot)] != 0.0;
        trace.top.push_back(std::move(e));
      }
      trace.chosen = chosen;
      result.trace.push_back(std::move(trace));
    }

    if (chosen.source == TokenRef::Source::kVocab && chosen.index == Vocabulary::kEos) break;
    state.emitted.push_back(chosen);
    result.tokens.push_back(chosen);
    prev = chosen;
  }
  return result;
}

}  // namespace cnmt
