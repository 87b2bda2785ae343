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

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cnmt/errors.hpp"

namespace cnmt {

constexpr int kPhocDim = 604;
// Seed for the deterministic hashed sub-word embedder.
constexpr uint64_t kSubwordSeed = 0x5eedULL;

enum class OcrSource { kPrimary, kFallback, kSynthetic };

std::string ocr_source_name(OcrSource s);
OcrSource ocr_source_from_name(const std::string& name);

struct Box {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
};

struct OcrToken {
  std::string text;  // normalized (lowercased, punctuation-stripped)
  double conf = 0.0;
  Box box;
  OcrSource source = OcrSource::kSynthetic;
  std::vector<double> feat_appearance;  // x^fr
  std::vector<double> feat_subword;     // x^ft
  std::vector<double> feat_phoc;        // x^p, 604 binary
};

struct ObjectRegion {
  std::vector<double> feat_appearance;  // x^fr
  Box box;
};

struct Scene {
  std::string scene_id;
  int width = 0, height = 0;
  std::vector<ObjectRegion> objects;
  std::vector<OcrToken> ocr;
  std::vector<std::vector<std::string>> captions;
};

// Lowercase and strip surrounding punctuation.
std::string normalize_text(const std::string& s);

double box_iou(const Box& a, const Box& b);

// Union of the two OCR result lists. A fallback token is a duplicate iff a
// primary token has identical normalized text and IoU >= iou_threshold.
// Surviving fallback tokens get conf = c_default. Output is sorted by
// confidence (descending, stable) and truncated to max_tokens.
std::vector<OcrToken> merge_ocr_results(const std::vector<OcrToken>& primary,
                                        const std::vector<OcrToken>& fallback,
                                        double iou_threshold, double c_default,
                                        int max_tokens);

// Pyramidal histogram of characters: levels {2,3,4,5} over [a-z0-9] plus a
// level-2 histogram over a fixed 50-bigram list. 604 dims.
std::vector<double> phoc_encode(const std::string& word);

// Deterministic FastText stand-in: average of hash-seeded pseudo-random unit
// vectors over the character 3..6-grams of "<word>".
std::vector<double> subword_embed(const std::string& word, int dim, uint64_t seed);

// [x_min/W, y_min/H, x_max/W, y_max/H]; throws DataError naming scene_id on
// degenerate or out-of-image boxes.
std::array<double, 4> normalize_box(const Box& box, int width, int height,
                                    const std::string& scene_id);

// Deterministic unit gaussian vector keyed by a hash; used to synthesize
// missing appearance features.
std::vector<double> hashed_feature(uint64_t key, int dim);

enum class SceneTask { kCopyMaxConf, kDescribeObject, kNoRepeatPairs };

SceneTask scene_task_from_name(const std::string& name);
std::string scene_task_name(SceneTask t);

struct SceneGenSpec {
  SceneTask task = SceneTask::kCopyMaxConf;
  int tokens_per_scene = 8;
  int num_objects = 2;
  int f_obj = 32;
  int f_ocr = 32;
  int f_ft = 32;
  int width = 640;
  int height = 480;
};

Scene generate_scene(uint64_t seed, const SceneGenSpec& spec);

struct SceneReadOptions {
  int max_ocr = 50;   // N
  int f_obj = 32;
  int f_ocr = 32;
  int f_ft = 32;
  double c_default = 0.90;
};

// JSON-lines scene files; missing numeric features are synthesized
// deterministically from (text, box, scene_id) hashes.
std::vector<Scene> load_scenes(const std::string& path, const SceneReadOptions& opts);
void save_scenes(const std::vector<Scene>& scenes, const std::string& path);

}  // namespace cnmt
