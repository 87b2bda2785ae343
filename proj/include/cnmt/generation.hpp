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

#pragma once

#include <set>
#include <string>
#include <vector>

#include "cnmt/embedding.hpp"
#include "cnmt/mmt.hpp"
#include "cnmt/model.hpp"

namespace cnmt {

// Bilinear copy scores: (W_o z_ocr[i] + b_o) . (W_d z_dec + b_d) per slot.
Tensor pointer_scores(const Tensor& z_dec_row, const Tensor& z_ocr, const Model& model);

// y^voc = W z_dec + b; rows of W double as vocab-token embeddings.
Tensor vocab_scores(const Tensor& z_dec_row, const Model& model);

// y_add[n] = y_voc[n] + sum of y_ocr[i] over OCR slots whose text equals
// vocab word n. The OCR block itself is left untouched.
Tensor add_duplicate_scores(const Tensor& y_voc, const Tensor& y_ocr,
                            const std::vector<std::string>& ocr_texts,
                            const Vocabulary& vocab);

// y = [y_add, y_ocr]
Tensor concat_scores(const Tensor& y_add, const Tensor& y_ocr);

struct DecodeState {
  int step = 0;
  std::vector<TokenRef> emitted;  // excludes <s>
};

// Additive mask over V+N slots: <pad>/<s> and padded OCR slots always get
// the sentinel; previously emitted non-common surfaces mask their vocab slot
// and every OCR slot with the same text. </s> is never masked.
std::vector<double> build_repetition_mask(const DecodeState& state, const Vocabulary& vocab,
                                          const std::set<std::string>& common_words,
                                          const std::vector<std::string>& ocr_texts,
                                          const std::vector<bool>& pad_flags);

// Structural part only (specials + padded slots); used when the repetition
// mask is disabled.
std::vector<double> build_structural_mask(const Vocabulary& vocab,
                                          const std::vector<std::string>& ocr_texts,
                                          const std::vector<bool>& pad_flags);

// argmax over y + mask; ties break to the lowest index.
TokenRef greedy_step(const std::vector<double>& y, const std::vector<double>& mask,
                     const Vocabulary& vocab, const std::vector<std::string>& ocr_texts);

struct StepTrace {
  struct Entry {
    std::string surface;
    double score = 0.0;
    bool masked = false;
  };
  std::vector<Entry> top;
  TokenRef chosen;
};

struct DecodeOptions {
  bool use_repetition_mask = true;
  std::set<std::string> common_words;
  int trace_top_k = 0;  // >0 records a per-step score/mask table
};

struct DecodeResult {
  std::vector<TokenRef> tokens;  // excludes <s> and </s>
  std::vector<StepTrace> trace;
};

DecodeResult decode_caption(const Scene& scene, const Model& model,
                            const DecodeOptions& opts);

}  // namespace cnmt
