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

#include <vector>

#include "cnmt/model.hpp"
#include "cnmt/tensor.hpp"

namespace cnmt {

// Additive attention mask over the [objects | ocr slots | decode steps]
// sequence. Object and OCR positions see all non-padded object/OCR positions
// but no decode positions; decode step t sees object/OCR plus decode steps
// <= t; padded OCR slots are masked as keys everywhere.
std::vector<double> build_attention_mask(int num_obj, int num_ocr, int num_dec,
                                         const std::vector<bool>& ocr_pad);

struct MmtOutput {
  Tensor z_obj;  // [M, d] (undefined when M == 0)
  Tensor z_ocr;  // [N, d]
  Tensor z_dec;  // [T, d] (undefined when T == 0)
};

// Post-norm transformer encoder stack over the concatenated sequence.
// x_obj/x_dec may be undefined tensors (empty blocks).
MmtOutput mmt_forward(const Tensor& x_obj, const Tensor& x_ocr, const Tensor& x_dec,
                      const std::vector<bool>& ocr_pad, const Model& model);

}  // namespace cnmt
