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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "cnmt/embedding.hpp"
#include "cnmt/mmt.hpp"
#include "cnmt/rng.hpp"
#include "doctest.h"

using namespace cnmt;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d = 16;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.n_ocr = 4;
  cfg.max_steps = 6;
  cfg.f_obj = cfg.f_ocr = cfg.f_ft = 8;
  return cfg;
}

Vocabulary tiny_vocab() {
  return build_vocabulary({{"a", "stop", "sign"}, {"a", "cafe"}}, 1);
}

Tensor random_matrix(Rng& rng, int rows, int cols) {
  std::vector<double> v(static_cast<size_t>(rows) * cols);
  for (auto& x : v) x = rng.normal() * 0.5;
  return Tensor::from({rows, cols}, std::move(v));
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("attention mask shape and per-row visibility counts") {
  // M=2 objects, N=4 ocr slots (last padded), T=3 decode rows
  std::vector<bool> pad{false, false, false, true};
  auto mask = build_attention_mask(2, 4, 3, pad);
  const int s = 9;
  REQUIRE(mask.size() == static_cast<size_t>(s) * s);
  auto visible = [&](int q) {
    int n = 0;
    for (int k = 0; k < s; ++k)
      if (mask[q * s + k] == 0.0) ++n;
    return n;
  };
  for (int q = 0; q < 6; ++q) CHECK(visible(q) == 5);      // M + real OCR only
  for (int t = 0; t < 3; ++t) CHECK(visible(6 + t) == 6 + t);  // + decode <= t

  // spot checks of individual edges
  CHECK(mask[0 * s + 6] == neg_sentinel());  // obj -> decode blocked
  CHECK(mask[6 * s + 0] == 0.0);             // decode -> obj open
  CHECK(mask[6 * s + 7] == neg_sentinel());  // decode 0 -> decode 1 blocked
  CHECK(mask[8 * s + 6] == 0.0);             // decode 2 -> decode 0 open
  for (int q = 0; q < s; ++q) CHECK(mask[q * s + 5] == neg_sentinel());  // padded key
}

TEST_CASE("forward contracts: decode length and pad flags") {
  Model model = Model::init(tiny_config(), tiny_vocab(), 9);
  Rng rng(4);
  Tensor x_ocr = random_matrix(rng, 4, 16);
  std::vector<bool> pad{false, false, false, false};

  MmtOutput no_dec = mmt_forward(Tensor(), x_ocr, Tensor(), pad, model);
  CHECK(no_dec.z_ocr.shape() == Shape{4, 16});
  CHECK_FALSE(no_dec.z_obj.defined());
  CHECK_FALSE(no_dec.z_dec.defined());

  Tensor too_long = random_matrix(rng, 7, 16);
  CHECK_THROWS_AS(mmt_forward(Tensor(), x_ocr, too_long, pad, model), ContractError);
  CHECK_THROWS_AS(mmt_forward(Tensor(), x_ocr, Tensor(), {false, false}, model), ContractError);
}

TEST_CASE("ocr block is permutation-equivariant") {
  Model model = Model::init(tiny_config(), tiny_vocab(), 10);
  Rng rng(8);
  Tensor x_ocr = random_matrix(rng, 4, 16);
  std::vector<bool> pad(4, false);
  MmtOutput a = mmt_forward(Tensor(), x_ocr, Tensor(), pad, model);

  // swap rows 0 and 2 of the input
  std::vector<double> swapped = x_ocr.values();
  for (int c = 0; c < 16; ++c) std::swap(swapped[0 * 16 + c], swapped[2 * 16 + c]);
  MmtOutput b = mmt_forward(Tensor(), Tensor::from({4, 16}, swapped), Tensor(), pad, model);

  for (int c = 0; c < 16; ++c) {
    CHECK(a.z_ocr.values()[0 * 16 + c] == doctest::Approx(b.z_ocr.values()[2 * 16 + c]).epsilon(1e-12));
    CHECK(a.z_ocr.values()[2 * 16 + c] == doctest::Approx(b.z_ocr.values()[0 * 16 + c]).epsilon(1e-12));
    CHECK(a.z_ocr.values()[1 * 16 + c] == doctest::Approx(b.z_ocr.values()[1 * 16 + c]).epsilon(1e-12));
  }
}

TEST_CASE("decode rows are causal") {
  Model model = Model::init(tiny_config(), tiny_vocab(), 11);
  Rng rng(12);
  Tensor x_ocr = random_matrix(rng, 4, 16);
  Tensor x_dec = random_matrix(rng, 3, 16);
  std::vector<bool> pad(4, false);
  MmtOutput a = mmt_forward(Tensor(), x_ocr, x_dec, pad, model);

  // perturb the last decode row: earlier rows and the OCR block must not move
  std::vector<double> bumped = x_dec.values();
  for (int c = 0; c < 16; ++c) bumped[2 * 16 + c] += 1.0;
  MmtOutput b = mmt_forward(Tensor(), x_ocr, Tensor::from({3, 16}, bumped), pad, model);

  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 16; ++c)
      CHECK(a.z_dec.values()[r * 16 + c] == b.z_dec.values()[r * 16 + c]);
  CHECK(max_abs_diff(a.z_ocr.values(), b.z_ocr.values()) == 0.0);
  // ...while the perturbed row itself does move
  double moved = 0.0;
  for (int c = 0; c < 16; ++c)
    moved += std::abs(a.z_dec.values()[2 * 16 + c] - b.z_dec.values()[2 * 16 + c]);
  CHECK(moved > 1e-6);

  // and perturbing the first decode row reaches the later ones
  std::vector<double> front = x_dec.values();
  for (int c = 0; c < 16; ++c) front[c] += 1.0;
  MmtOutput f = mmt_forward(Tensor(), x_ocr, Tensor::from({3, 16}, front), pad, model);
  CHECK(max_abs_diff(a.z_dec.values(), f.z_dec.values()) > 1e-6);
}

TEST_CASE("padded ocr slots leak nothing") {
  Model model = Model::init(tiny_config(), tiny_vocab(), 13);
  Rng rng(21);
  Tensor x_ocr = random_matrix(rng, 4, 16);
  Tensor x_dec = random_matrix(rng, 2, 16);
  std::vector<bool> pad{false, false, true, true};
  MmtOutput a = mmt_forward(Tensor(), x_ocr, x_dec, pad, model);

  // write junk into the padded slots: every non-padded output must be bit-identical
  std::vector<double> junk = x_ocr.values();
  for (int r = 2; r < 4; ++r)
    for (int c = 0; c < 16; ++c) junk[r * 16 + c] = 1000.0 + r + c;
  MmtOutput b = mmt_forward(Tensor(), Tensor::from({4, 16}, junk), x_dec, pad, model);

  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 16; ++c) {
      CHECK(a.z_ocr.values()[r * 16 + c] == b.z_ocr.values()[r * 16 + c]);
      CHECK(a.z_dec.values()[r * 16 + c] == b.z_dec.values()[r * 16 + c]);
    }
}

TEST_CASE("frozen-seed forward reproduces pinned values") {
  ModelConfig cfg = tiny_config();
  Model model = Model::init(cfg, tiny_vocab(), 42);
  SceneGenSpec spec;
  spec.tokens_per_scene = 3;
  spec.num_objects = 1;
  spec.f_obj = spec.f_ocr = spec.f_ft = 8;
  Scene scene = generate_scene(1, spec);
  EmbeddedScene es = embed_scene(scene, model);
  TokenRef bos{TokenRef::Source::kVocab, Vocabulary::kBos, "<s>"};
  Tensor x_dec = reshape(embed_prev_output(bos, es.x_ocr, 0, model), {1, 16});
  MmtOutput out = mmt_forward(es.x_obj, es.x_ocr, x_dec, es.ocr_pad, model);

  const double want_dec[4] = {0.16881088996041307, 0.001620157151807314,
                              1.3783054037848534, 0.40099673465730762};
  const double want_ocr[4] = {-0.57254022279582883, -1.1037415063116225,
                              -0.5073316027673539, 0.39897078162564503};
  const double want_obj[4] = {-0.11097563905289907, 0.36528332058346025,
                              0.30721507105886636, -0.53600531108869753};
  for (int i = 0; i < 4; ++i) {
    CHECK(out.z_dec.values()[i] == doctest::Approx(want_dec[i]).epsilon(1e-12));
    CHECK(out.z_ocr.values()[i] == doctest::Approx(want_ocr[i]).epsilon(1e-12));
    CHECK(out.z_obj.values()[i] == doctest::Approx(want_obj[i]).epsilon(1e-12));
  }
}
