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

#include <cstdint>
#include <string>

#include "cnmt/optim.hpp"
#include "cnmt/vocab.hpp"

namespace cnmt {

enum class ConfidenceMode { kEmbed, kMultiply, kNone };

ConfidenceMode confidence_mode_from_name(const std::string& name);
std::string confidence_mode_name(ConfidenceMode m);

struct ModelConfig {
  int d = 64;           // common semantic space
  int layers = 2;
  int heads = 4;
  int ffn_dim = 0;      // 0 -> 4*d
  int n_ocr = 8;        // max OCR tokens N
  int max_steps = 12;   // decode step limit
  int f_obj = 32;
  int f_ocr = 32;
  int f_ft = 32;
  ConfidenceMode confidence_mode = ConfidenceMode::kEmbed;

  int ffn() const { return ffn_dim > 0 ? ffn_dim : 4 * d; }
  void validate() const;
};

// Configuration + vocabulary + all trainable tensors.
struct Model {
  ModelConfig cfg;
  Vocabulary vocab;
  ParameterStore store;

  static Model init(const ModelConfig& cfg, const Vocabulary& vocab, uint64_t seed);

  const Tensor& p(const std::string& name) const { return store.at(name); }
  AttentionParams attention_params(int layer) const;
};

}  // namespace cnmt
