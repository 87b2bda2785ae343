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

namespace cnmt {

struct EvalEntry {
  std::string scene_id;
  std::vector<std::string> hyp;
  std::vector<std::vector<std::string>> refs;
};

using EvalCorpus = std::vector<EvalEntry>;

// Corpus-level BLEU-4: uniform 1..4-gram modified precisions,
// closest-reference-length brevity penalty, no smoothing by default
// (smooth=true applies +1 smoothing to n>=2 precisions).
double bleu4(const EvalCorpus& corpus, bool smooth = false);

// Single-sentence BLEU-4 (smoothed), for per-scene breakdowns.
double sentence_bleu4(const std::vector<std::string>& hyp,
                      const std::vector<std::vector<std::string>>& refs);

// CIDEr-D: TF-IDF weighted 1..4-gram similarity with hypothesis-count
// clipping and gaussian length penalty (sigma=6), averaged over n and
// references, scaled by 10. Needs >= 2 corpus entries for the IDF.
double cider_d(const EvalCorpus& corpus);
std::vector<double> cider_d_per_scene(const EvalCorpus& corpus);

// Fraction of captions containing any non-common token at least twice.
double repetition_rate(const std::vector<std::vector<std::string>>& captions,
                       const std::set<std::string>& common_words);

}  // namespace cnmt
