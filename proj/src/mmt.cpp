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

#include "cnmt/mmt.hpp"

namespace cnmt {

std::vector<double> build_attention_mask(int num_obj, int num_ocr, int num_dec,
                                         const std::vector<bool>& ocr_pad) {
  const int s = num_obj + num_ocr + num_dec;
  const double neg = neg_sentinel();
  std::vector<double> mask(static_cast<size_t>(s) * s, 0.0);
  auto at = [&mask, s](int q, int k) -> double& { return mask[static_cast<size_t>(q) * s + k]; };
  auto key_padded = [&](int k) {
    return k >= num_obj && k < num_obj + num_ocr &&
           ocr_pad[static_cast<size_t>(k - num_obj)];
  };
  for (int q = 0; q < s; ++q) {
    const bool q_dec = q >= num_obj + num_ocr;
    const int q_step = q - (num_obj + num_ocr);
    for (int k = 0; k < s; ++k) {
      const bool k_dec = k >= num_obj + num_ocr;
      const int k_step = k - (num_obj + num_ocr);
      if (key_padded(k)) {
        at(q, k) = neg;
      } else if (!q_dec && k_dec) {
        at(q, k) = neg;  // obj/ocr never see decode rows
      } else if (q_dec && k_dec && k_step > q_step) {
        at(q, k) = neg;  // causal within decode rows
      }
    }
  }
  return mask;
}

MmtOutput mmt_forward(const Tensor& x_obj, const Tensor& x_ocr, const Tensor& x_dec,
                      const std::vector<bool>& ocr_pad, const Model& model) {
  const int m = x_obj.defined() ? x_obj.dim(0) : 0;
  const int n = x_ocr.dim(0);
  const int t = x_dec.defined() ? x_dec.dim(0) : 0;
  if (t > model.cfg.max_steps) {
    throw ContractError("mmt_forward: " + std::to_string(t) + " decode rows exceed max_steps=" +
                        std::to_string(model.cfg.max_steps));
  }
  if (static_cast<int>(ocr_pad.size()) != n) {
    throw ContractError("mmt_forward: pad flags must cover every OCR slot");
  }
  std::vector<Tensor> parts;
  if (m > 0) parts.push_back(x_obj);
  parts.push_back(x_ocr);
  if (t > 0) parts.push_back(x_dec);
  Tensor h = parts.size() == 1 ? parts[0] : concat_rows(parts);

  const auto mask = build_attention_mask(m, n, t, ocr_pad);
  for (int l = 0; l < model.cfg.layers; ++l) {
    const std::string p = "mmt.l" + std::to_string(l) + ".";
    Tensor attn = multi_head_attention(h, h, h, mask, model.cfg.heads,
                                       model.attention_params(l));
    h = layer_norm(add(h, attn), model.p(p + "ln1.g"), model.p(p + "ln1.b"));
    Tensor ffn = linear(gelu(linear(h, model.p(p + "ffn.w1"), model.p(p + "ffn.b1"))),
                        model.p(p + "ffn.w2"), model.p(p + "ffn.b2"));
    h = layer_norm(add(h, ffn), model.p(p + "ln2.g"), model.p(p + "ln2.b"));
  }
  MmtOutput out;
  if (m > 0) out.z_obj = slice_rows(h, 0, m);
  out.z_ocr = slice_rows(h, m, n);
  if (t > 0) out.z_dec = slice_rows(h, m + n, t);
  return out;
}

}  // namespace cnmt
