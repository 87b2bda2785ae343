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

#include <string>
#include <vector>

#include "cnmt/model.hpp"
#include "cnmt/reading.hpp"
#include "cnmt/tensor.hpp"

namespace cnmt {

// A decoded (or teacher-forced) token: either a vocabulary slot or an OCR
// slot of the current scene, plus its surface string.
struct TokenRef {
  enum class Source { kVocab, kOcr };
  Source source = Source::kVocab;
  int index = 0;
  std::string surface;
};

struct EmbeddedScene {
  Tensor x_obj;                // [M, d]
  Tensor x_ocr;                // [N, d]; padded rows are all-zero
  std::vector<bool> ocr_pad;   // size N, true for padding slots
  std::vector<std::string> ocr_texts;  // size = real token count
};

// x^obj_m = LN(W1 x^fr) + LN(W2 x^b)
Tensor embed_objects(const std::vector<ObjectRegion>& objects, const Scene& scene,
                     const Model& model);

// x^ocr_i = LN(W3 x^ft + W4 x^fr + W5 x^p) + LN(W6 x^b) + LN(W7 x^conf),
// with the confidence term controlled by the configured mode.
Tensor embed_ocr_tokens(const std::vector<OcrToken>& tokens, const Scene& scene,
                        const Model& model, ConfidenceMode mode);

EmbeddedScene embed_scene(const Scene& scene, const Model& model);

// Previous decoding output: the vocab head's weight row (vocab source) or
// x^ocr row (OCR source), plus step/type embeddings, layer-normalized.
Tensor embed_prev_output(const TokenRef& prev, const Tensor& x_ocr, int step,
                         const Model& model);

}  // namespace cnmt
