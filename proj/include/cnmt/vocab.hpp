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
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace cnmt {

constexpr const char* kPadToken = "<pad>";
constexpr const char* kBosToken = "<s>";
constexpr const char* kEosToken = "</s>";

// Fixed word list: specials first, then corpus words with count >= min_count
// by descending count (ties lexicographic).
struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;

  std::vector<std::string> words;
  std::unordered_map<std::string, int> slot_of;
  std::map<std::string, int64_t> counts;  // raw corpus counts, unfiltered

  int size() const { return static_cast<int>(words.size()); }
  // Slot index or -1.
  int find(const std::string& w) const {
    auto it = slot_of.find(w);
    return it == slot_of.end() ? -1 : it->second;
  }
};

Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& captions,
                            int min_count = 10);

// Top-C most frequent caption tokens (ties lexicographic), plus </s> always.
std::set<std::string> common_word_set(const std::map<std::string, int64_t>& counts, int c);
std::set<std::string> common_word_set(const std::vector<std::vector<std::string>>& captions,
                                      int c);

}  // namespace cnmt
