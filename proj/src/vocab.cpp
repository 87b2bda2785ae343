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

#include "cnmt/vocab.hpp"

#include <algorithm>

namespace cnmt {

Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& captions,
                            int min_count) {
  Vocabulary vocab;
  for (const auto& cap : captions) {
    for (const auto& w : cap) vocab.counts[w] += 1;
  }
  vocab.words = {kPadToken, kBosToken, kEosToken};
  std::vector<std::pair<std::string, int64_t>> eligible;
  for (const auto& [word, count] : vocab.counts) {
    if (count >= min_count) eligible.emplace_back(word, count);
  }
  std::sort(eligible.begin(), eligible.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (auto& [word, count] : eligible) vocab.words.push_back(word);
  for (int i = 0; i < vocab.size(); ++i) vocab.slot_of[vocab.words[static_cast<size_t>(i)]] = i;
  return vocab;
}

std::set<std::string> common_word_set(const std::map<std::string, int64_t>& counts, int c) {
  std::vector<std::pair<std::string, int64_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::set<std::string> common;
  for (int i = 0; i < c && i < static_cast<int>(ranked.size()); ++i) {
    common.insert(ranked[static_cast<size_t>(i)].first);
  }
  common.insert(kEosToken);  // end token is never maskable
  return common;
}

std::set<std::string> common_word_set(const std::vector<std::vector<std::string>>& captions,
                                      int c) {
  std::map<std::string, int64_t> counts;
  for (const auto& cap : captions) {
    for (const auto& w : cap) counts[w] += 1;
  }
  return common_word_set(counts, c);
}

}  // namespace cnmt
