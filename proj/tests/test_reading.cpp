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
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cnmt/reading.hpp"
#include "cnmt/rng.hpp"
#include "doctest.h"

using namespace cnmt;

namespace {

OcrToken make_token(const std::string& text, double conf, Box box) {
  OcrToken t;
  t.text = text;
  t.conf = conf;
  t.box = box;
  t.source = OcrSource::kPrimary;
  return t;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST_CASE("normalize_text lowercases and strips surrounding punctuation") {
  CHECK(normalize_text("Hello!!") == "hello");
  CHECK(normalize_text("  \"STOP.\" ") == "stop");
  CHECK(normalize_text("can't") == "can't");  // interior punctuation kept
  CHECK(normalize_text("?!.") == "");
}

TEST_CASE("box_iou basics") {
  Box a{0, 0, 10, 10};
  CHECK(box_iou(a, a) == doctest::Approx(1.0));
  CHECK(box_iou(a, Box{20, 20, 30, 30}) == 0.0);
  // half-width overlap: inter 50, union 150
  CHECK(box_iou(a, Box{5, 0, 15, 10}) == doctest::Approx(50.0 / 150.0));
}

TEST_CASE("merge keeps non-duplicate fallback tokens with the default confidence") {
  auto primary = {make_token("stop", 0.8, {0, 0, 10, 10}),
                  make_token("cafe", 0.6, {20, 0, 30, 10})};
  std::vector<OcrToken> fallback;
  fallback.push_back(make_token("stop", 0.0, {1, 0, 11, 10}));   // duplicate (same text, high IoU)
  fallback.push_back(make_token("stop", 0.0, {60, 60, 70, 70})); // same text, elsewhere: kept
  fallback.push_back(make_token("menu", 0.0, {0, 20, 10, 30}));  // new text: kept
  auto merged = merge_ocr_results(std::vector<OcrToken>(primary), fallback, 0.5, 0.90, 50);
  REQUIRE(merged.size() == 4);
  // sorted by confidence desc: menu/stop-fallback at 0.90 (stable order), stop 0.8, cafe 0.6
  CHECK(merged[0].text == "stop");
  CHECK(merged[0].conf == doctest::Approx(0.90));
  CHECK(merged[0].source == OcrSource::kFallback);
  CHECK(merged[1].text == "menu");
  CHECK(merged[1].conf == doctest::Approx(0.90));
  CHECK(merged[2].text == "stop");
  CHECK(merged[2].conf == doctest::Approx(0.8));
  CHECK(merged[2].source == OcrSource::kPrimary);
  CHECK(merged[3].text == "cafe");

  CHECK_THROWS_AS(merge_ocr_results({}, {}, 0.0, 0.9, 50), ConfigError);
  CHECK_THROWS_AS(merge_ocr_results({}, {}, 1.5, 0.9, 50), ConfigError);
}

TEST_CASE("merge truncates to the top-N by confidence") {
  std::vector<OcrToken> primary;
  for (int i = 0; i < 60; ++i) {
    primary.push_back(make_token("w" + std::to_string(i), 0.01 * i,
                                 {0, 0, 5.0 + i, 5.0}));
  }
  auto merged = merge_ocr_results(primary, {}, 0.5, 0.9, 50);
  REQUIRE(merged.size() == 50);
  CHECK(merged.front().text == "w59");
  CHECK(merged.back().text == "w10");  // the 10 lowest-confidence tokens dropped
}

TEST_CASE("phoc encoding of single characters and bigrams") {
  auto a = phoc_encode("a");
  REQUIRE(a.size() == static_cast<size_t>(kPhocDim));
  // 'a' spans the whole word: only the two level-2 regions reach 50% overlap
  CHECK(std::accumulate(a.begin(), a.end(), 0.0) == 2.0);
  CHECK(a[0] == 1.0);       // level 2, region 0, 'a'
  CHECK(a[36] == 1.0);      // level 2, region 1, 'a'

  auto th = phoc_encode("th");
  // "th" is bigram index 0; it spans the word so both level-2 bigram bits fire
  CHECK(th[504] == 1.0);
  CHECK(th[504 + 50] == 1.0);

  auto empty = phoc_encode("");
  auto punct = phoc_encode("?!");
  CHECK(std::accumulate(empty.begin(), empty.end(), 0.0) == 0.0);
  CHECK(std::accumulate(punct.begin(), punct.end(), 0.0) == 0.0);
  CHECK(phoc_encode("Stop!") == phoc_encode("stop"));  // normalization applied
}

TEST_CASE("subword embeddings are deterministic and word-sensitive") {
  auto a1 = subword_embed("coffee", 32, kSubwordSeed);
  auto a2 = subword_embed("coffee", 32, kSubwordSeed);
  CHECK(a1 == a2);
  REQUIRE(a1.size() == 32);

  Rng rng(9);
  const char* words[] = {"coffee", "tea", "station", "exit", "pizza", "market",
                         "hotel", "stop", "river", "seven"};
  for (int i = 0; i < 10; ++i)
    for (int j = i + 1; j < 10; ++j) {
      CHECK(cosine(subword_embed(words[i], 32, kSubwordSeed),
                   subword_embed(words[j], 32, kSubwordSeed)) < 0.9);
    }
  // different hash seeds give different vectors
  CHECK(subword_embed("coffee", 32, 1) != subword_embed("coffee", 32, 2));
}

TEST_CASE("normalize_box scales to [0,1] and rejects degenerate boxes") {
  auto n = normalize_box({64, 48, 320, 240}, 640, 480, "s1");
  CHECK(n[0] == doctest::Approx(0.1));
  CHECK(n[1] == doctest::Approx(0.1));
  CHECK(n[2] == doctest::Approx(0.5));
  CHECK(n[3] == doctest::Approx(0.5));
  try {
    normalize_box({10, 10, 10, 20}, 640, 480, "bad-scene");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("bad-scene") != std::string::npos);
  }
  CHECK_THROWS_AS(normalize_box({0, 0, 700, 10}, 640, 480, "s"), DataError);
}

TEST_CASE("hashed features are deterministic in the key") {
  CHECK(hashed_feature(42, 16) == hashed_feature(42, 16));
  CHECK(hashed_feature(42, 16) != hashed_feature(43, 16));
}

TEST_CASE("scene generation is deterministic and honours the caption rule") {
  SceneGenSpec spec;
  for (uint64_t seed = 1; seed <= 30; ++seed) {
    Scene s1 = generate_scene(seed, spec);
    Scene s2 = generate_scene(seed, spec);
    REQUIRE(s1.ocr.size() == s2.ocr.size());
    for (size_t i = 0; i < s1.ocr.size(); ++i) {
      CHECK(s1.ocr[i].text == s2.ocr[i].text);
      CHECK(s1.ocr[i].conf == s2.ocr[i].conf);
    }
    REQUIRE(s1.captions.size() == 1);
    // caption names the highest-confidence token, lowest index on ties
    size_t best = 0;
    for (size_t i = 1; i < s1.ocr.size(); ++i) {
      if (s1.ocr[i].conf > s1.ocr[best].conf) best = i;
    }
    CHECK(s1.captions[0].back() == s1.ocr[best].text);
    CHECK(s1.captions[0].front() == "a");
  }

  spec.task = SceneTask::kNoRepeatPairs;
  Scene pair = generate_scene(3, spec);
  REQUIRE(pair.captions[0].size() == 7);
  CHECK(pair.captions[0][4] != pair.captions[0][6]);  // the two named tokens differ

  spec.task = SceneTask::kDescribeObject;
  Scene obj = generate_scene(3, spec);
  CHECK(obj.captions[0].size() == 5);
  CHECK(obj.objects.size() == 2);
}

TEST_CASE("scene files round trip losslessly") {
  SceneGenSpec spec;
  std::vector<Scene> scenes;
  for (uint64_t seed = 1; seed <= 5; ++seed) scenes.push_back(generate_scene(seed, spec));
  const std::string p1 = "roundtrip1.jsonl", p2 = "roundtrip2.jsonl";
  save_scenes(scenes, p1);
  SceneReadOptions opts;
  opts.max_ocr = 8;
  auto loaded = load_scenes(p1, opts);
  REQUIRE(loaded.size() == scenes.size());
  for (size_t s = 0; s < scenes.size(); ++s) {
    CHECK(loaded[s].scene_id == scenes[s].scene_id);
    REQUIRE(loaded[s].ocr.size() == scenes[s].ocr.size());
    for (size_t i = 0; i < scenes[s].ocr.size(); ++i) {
      CHECK(loaded[s].ocr[i].text == scenes[s].ocr[i].text);
      CHECK(loaded[s].ocr[i].conf == scenes[s].ocr[i].conf);
      CHECK(loaded[s].ocr[i].feat_appearance == scenes[s].ocr[i].feat_appearance);
      CHECK(loaded[s].ocr[i].feat_subword == scenes[s].ocr[i].feat_subword);
      CHECK(loaded[s].ocr[i].feat_phoc == scenes[s].ocr[i].feat_phoc);
    }
    CHECK(loaded[s].captions == scenes[s].captions);
  }
  save_scenes(loaded, p2);
  CHECK(slurp(p1) == slurp(p2));  // byte-identical re-serialization
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("loader diagnostics and defaults") {
  SceneReadOptions opts;
  const std::string path = "loader_cases.jsonl";

  {  // fallback token without conf gets c_default; primary without conf is an error
    std::ofstream out(path);
    out << R"({"scene_id":"s1","width":100,"height":100,"ocr":[{"text":"Exit!","box":[0,0,10,10],"source":"fallback_ocr"}]})"
        << "\n";
  }
  auto scenes = load_scenes(path, opts);
  REQUIRE(scenes.size() == 1);
  CHECK(scenes[0].ocr[0].text == "exit");
  CHECK(scenes[0].ocr[0].conf == doctest::Approx(0.90));

  {
    std::ofstream out(path);
    out << R"({"scene_id":"s1","width":100,"height":100,"ocr":[{"text":"a","box":[0,0,10,10]}]})"
        << "\n";
  }
  CHECK_THROWS_AS(load_scenes(path, opts), DataError);

  {  // out-of-range confidence
    std::ofstream out(path);
    out << R"({"scene_id":"s1","width":100,"height":100,"ocr":[{"text":"a","conf":1.7,"box":[0,0,10,10]}]})"
        << "\n";
  }
  CHECK_THROWS_AS(load_scenes(path, opts), DataError);

  {  // malformed JSON names the line
    std::ofstream out(path);
    out << R"({"scene_id":"ok","width":10,"height":10})" << "\n";
    out << "{not json\n";
  }
  try {
    load_scenes(path, opts);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }

  {  // top-N truncation keeps highest-confidence tokens in original order
    std::ofstream out(path);
    out << R"({"scene_id":"s1","width":100,"height":100,"ocr":[)"
        << R"({"text":"low","conf":0.1,"box":[0,0,10,10]},)"
        << R"({"text":"hi","conf":0.9,"box":[0,0,10,10]},)"
        << R"({"text":"mid","conf":0.5,"box":[0,0,10,10]}]})"
        << "\n";
  }
  SceneReadOptions small = opts;
  small.max_ocr = 2;
  auto truncated = load_scenes(path, small);
  REQUIRE(truncated[0].ocr.size() == 2);
  CHECK(truncated[0].ocr[0].text == "hi");
  CHECK(truncated[0].ocr[1].text == "mid");
  std::remove(path.c_str());
}
