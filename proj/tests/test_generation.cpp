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
#include <map>

#include "cnmt/generation.hpp"
#include "cnmt/metrics.hpp"
#include "cnmt/rng.hpp"
#include "doctest.h"

using namespace cnmt;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d = 16;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.n_ocr = 4;
  cfg.max_steps = 6;
  cfg.f_obj = cfg.f_ocr = cfg.f_ft = 8;
  return cfg;
}

Vocabulary tiny_vocab() {
  // words: specials + {a, says, sign, stop, that}
  return build_vocabulary({{"a", "sign", "that", "says", "stop"}}, 1);
}

Scene tiny_scene() {
  SceneGenSpec spec;
  spec.tokens_per_scene = 3;
  spec.num_objects = 1;
  spec.f_obj = spec.f_ocr = spec.f_ft = 8;
  return generate_scene(5, spec);
}

}  // namespace

TEST_CASE("pointer scores are the bilinear key/query products") {
  Model model = Model::init(tiny_config(), tiny_vocab(), 1);
  Rng rng(3);
  std::vector<double> zo(4 * 16), zd(16);
  for (auto& v : zo) v = rng.normal();
  for (auto& v : zd) v = rng.normal();
  Tensor z_ocr = Tensor::from({4, 16}, zo);
  Tensor z_dec = Tensor::from({16}, zd);
  Tensor y = pointer_scores(z_dec, z_ocr, model);
  REQUIRE(y.shape() == Shape{4});

  const auto& wo = model.p("gen.ptr.wo").values();
  const auto& bo = model.p("gen.ptr.bo").values();
  const auto& wd = model.p("gen.ptr.wd").values();
  const auto& bd = model.p("gen.ptr.bd").values();
  std::vector<double> query(16);
  for (int o = 0; o < 16; ++o) {
    query[o] = bd[o];
    for (int i = 0; i < 16; ++i) query[o] += wd[o * 16 + i] * zd[i];
  }
  for (int n = 0; n < 4; ++n) {
    double want = 0.0;
    for (int o = 0; o < 16; ++o) {
      double key = bo[o];
      for (int i = 0; i < 16; ++i) key += wo[o * 16 + i] * zo[n * 16 + i];
      want += key * query[o];
    }
    CHECK(y.values()[n] == doctest::Approx(want).epsilon(1e-10));
  }
}

TEST_CASE("vocab scores are a linear head over the decode state") {
  Model model = Model::init(tiny_config(), tiny_vocab(), 2);
  Rng rng(6);
  std::vector<double> zd(16);
  for (auto& v : zd) v = rng.normal();
  Tensor y = vocab_scores(Tensor::from({16}, zd), model);
  const int v = model.vocab.size();
  REQUIRE(y.shape() == Shape{v});
  const auto& w = model.p("gen.voc.w").values();
  const auto& b = model.p("gen.voc.b").values();
  for (int n = 0; n < v; ++n) {
    double want = b[n];
    for (int i = 0; i < 16; ++i) want += w[n * 16 + i] * zd[i];
    CHECK(y.values()[n] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("duplicate ocr scores fold into their vocab slot") {
  Vocabulary vocab = tiny_vocab();
  const int v = vocab.size();
  const int stop = vocab.find("stop");
  REQUIRE(stop >= 0);
  Tensor y_voc = Tensor::zeros({v});
  Tensor y_ocr = Tensor::from({3}, {1.5, 7.0, 2.5});
  // two ocr slots read "stop", one reads an out-of-vocab word
  Tensor y_add = add_duplicate_scores(y_voc, y_ocr, {"stop", "xyz", "stop"}, vocab);
  Tensor y = concat_scores(y_add, y_ocr);
  REQUIRE(y.shape() == Shape{v + 3});
  CHECK(y.values()[stop] == doctest::Approx(4.0));
  for (int i = 0; i < v; ++i) {
    if (i != stop) CHECK(y.values()[i] == 0.0);
  }
  // the ocr block itself is untouched
  CHECK(y.values()[v] == 1.5);
  CHECK(y.values()[v + 1] == 7.0);
  CHECK(y.values()[v + 2] == 2.5);
}

TEST_CASE("structural mask blocks specials and padded slots only") {
  Vocabulary vocab = tiny_vocab();
  const int v = vocab.size();
  auto mask = build_structural_mask(vocab, {"stop", "cafe"}, {false, false, true, true});
  REQUIRE(mask.size() == static_cast<size_t>(v + 4));
  CHECK(mask[Vocabulary::kPad] == neg_sentinel());
  CHECK(mask[Vocabulary::kBos] == neg_sentinel());
  CHECK(mask[Vocabulary::kEos] == 0.0);
  for (int i = 3; i < v; ++i) CHECK(mask[i] == 0.0);
  CHECK(mask[v + 0] == 0.0);
  CHECK(mask[v + 1] == 0.0);
  CHECK(mask[v + 2] == neg_sentinel());
  CHECK(mask[v + 3] == neg_sentinel());
}

TEST_CASE("repetition mask tracks emitted surfaces across sources") {
  Vocabulary vocab = tiny_vocab();
  const int v = vocab.size();
  std::set<std::string> common{"a", kEosToken};
  std::vector<std::string> texts{"stop", "cafe", "stop"};
  std::vector<bool> pad{false, false, false, true};

  DecodeState state;
  state.emitted.push_back({TokenRef::Source::kVocab, vocab.find("a"), "a"});
  state.emitted.push_back({TokenRef::Source::kOcr, 0, "stop"});
  auto mask = build_repetition_mask(state, vocab, common, texts, pad);

  CHECK(mask[vocab.find("a")] == 0.0);               // common word stays open
  CHECK(mask[vocab.find("stop")] == neg_sentinel()); // same surface, vocab slot
  CHECK(mask[v + 0] == neg_sentinel());              // the emitted slot
  CHECK(mask[v + 2] == neg_sentinel());              // duplicate surface elsewhere
  CHECK(mask[v + 1] == 0.0);                         // different text untouched
  CHECK(mask[Vocabulary::kEos] == 0.0);              // </s> is never masked

  // even an explicitly emitted </s> never masks the stop slot
  state.emitted.push_back({TokenRef::Source::kVocab, Vocabulary::kEos, kEosToken});
  auto mask2 = build_repetition_mask(state, vocab, common, texts, pad);
  CHECK(mask2[Vocabulary::kEos] == 0.0);
}

TEST_CASE("greedy argmax breaks ties toward the lowest index") {
  Vocabulary vocab = tiny_vocab();
  const int v = vocab.size();  // 8
  std::vector<double> y(static_cast<size_t>(v + 3), 0.0);
  std::vector<double> mask(y.size(), 0.0);
  y[4] = 5.0;
  y[v + 1] = 5.0;  // exact tie at a later index
  TokenRef pick = greedy_step(y, mask, vocab, {"stop", "cafe", "exit"});
  CHECK(pick.source == TokenRef::Source::kVocab);
  CHECK(pick.index == 4);

  // masked winner falls through to the runner-up
  mask[4] = neg_sentinel();
  TokenRef second = greedy_step(y, mask, vocab, {"stop", "cafe", "exit"});
  CHECK(second.source == TokenRef::Source::kOcr);
  CHECK(second.index == 1);
  CHECK(second.surface == "cafe");

  std::vector<double> all_masked(y.size(), neg_sentinel());
  CHECK_THROWS_AS(greedy_step(y, all_masked, vocab, {"stop", "cafe", "exit"}), ContractError);
}

TEST_CASE("masked decoding never repeats a non-common token") {
  // random models frequently loop; the mask must prevent every repeat
  std::set<std::string> common{"a", kEosToken};
  bool saw_unmasked_repeat = false;
  std::vector<std::vector<std::string>> masked_caps;
  for (uint64_t seed = 1; seed <= 40; ++seed) {
    Model model = Model::init(tiny_config(), tiny_vocab(), seed);
    Scene scene = tiny_scene();

    DecodeOptions with_mask;
    with_mask.use_repetition_mask = true;
    with_mask.common_words = common;
    auto masked = decode_caption(scene, model, with_mask);
    std::vector<std::string> cap;
    for (const auto& t : masked.tokens) cap.push_back(t.surface);
    CHECK(cap.size() <= 6);
    masked_caps.push_back(cap);

    DecodeOptions no_mask;
    no_mask.use_repetition_mask = false;
    auto open = decode_caption(scene, model, no_mask);
    std::map<std::string, int> counts;
    for (const auto& t : open.tokens) counts[t.surface] += 1;
    for (const auto& [w, c] : counts) {
      if (c > 1 && !common.count(w)) saw_unmasked_repeat = true;
    }
  }
  CHECK(repetition_rate(masked_caps, common) == 0.0);
  CHECK(saw_unmasked_repeat);  // untrained models do loop without the mask
}

TEST_CASE("common word budget C bounds what may repeat") {
  std::map<std::string, int64_t> counts{{"a", 100}, {"of", 60}, {"stop", 5}, {"photo", 40}};
  auto none = common_word_set(counts, 0);
  CHECK(none == std::set<std::string>{kEosToken});
  auto top2 = common_word_set(counts, 2);
  CHECK(top2 == std::set<std::string>{"a", "of", kEosToken});
  auto all = common_word_set(counts, 100);
  CHECK(all.size() == 5);

  // frequency ties resolve lexicographically
  std::map<std::string, int64_t> tied{{"b", 10}, {"a", 10}, {"c", 10}};
  CHECK(common_word_set(tied, 2) == std::set<std::string>{"a", "b", kEosToken});
}

TEST_CASE("decoding stops cleanly at the sequence end") {
  Model model = Model::init(tiny_config(), tiny_vocab(), 17);
  Scene scene = tiny_scene();
  DecodeOptions opts;
  opts.use_repetition_mask = true;
  opts.common_words = {"a", kEosToken};
  opts.trace_top_k = 3;
  auto result = decode_caption(scene, model, opts);
  for (const auto& t : result.tokens) CHECK(t.surface != kEosToken);
  CHECK(result.trace.size() >= result.tokens.size());
  for (const auto& st : result.trace) {
    CHECK(st.top.size() == 3);
    // trace is sorted by raw score
    CHECK(st.top[0].score >= st.top[1].score);
    CHECK(st.top[1].score >= st.top[2].score);
  }
}
