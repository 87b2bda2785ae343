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

// Naive reference implementations of the caption metrics, written
// independently of src/metrics.cpp (string-keyed n-grams, no shared code).
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cnmt/metrics.hpp"
#include "cnmt/rng.hpp"

namespace oracle {

inline std::unordered_map<std::string, int> grams(const std::vector<std::string>& toks, int n) {
  std::unordered_map<std::string, int> out;
  for (int i = 0; i + n <= static_cast<int>(toks.size()); ++i) {
    std::string key;
    for (int j = 0; j < n; ++j) key += toks[i + j] + "\x1f";
    out[key] += 1;
  }
  return out;
}

inline double bleu4(const cnmt::EvalCorpus& corpus, bool smooth) {
  double match[4] = {0, 0, 0, 0}, total[4] = {0, 0, 0, 0};
  double hyp_len = 0, ref_len = 0;
  for (const auto& e : corpus) {
    hyp_len += static_cast<double>(e.hyp.size());
    int best = static_cast<int>(e.refs[0].size());
    for (const auto& r : e.refs) {
      int rl = static_cast<int>(r.size()), hl = static_cast<int>(e.hyp.size());
      int d_new = std::abs(rl - hl), d_old = std::abs(best - hl);
      if (d_new < d_old || (d_new == d_old && rl < best)) best = rl;
    }
    ref_len += best;
    for (int n = 1; n <= 4; ++n) {
      auto h = grams(e.hyp, n);
      std::unordered_map<std::string, int> rmax;
      for (const auto& r : e.refs) {
        for (const auto& [k, c] : grams(r, n)) {
          if (c > rmax[k]) rmax[k] = c;
        }
      }
      for (const auto& [k, c] : h) {
        total[n - 1] += c;
        auto it = rmax.find(k);
        if (it != rmax.end()) match[n - 1] += std::min(c, it->second);
      }
    }
  }
  double logp = 0;
  for (int n = 0; n < 4; ++n) {
    double m = match[n] + (smooth && n > 0 ? 1 : 0);
    double t = total[n] + (smooth && n > 0 ? 1 : 0);
    if (m <= 0 || t <= 0) return 0.0;
    logp += 0.25 * std::log(m / t);
  }
  if (hyp_len == 0) return 0.0;
  double bp = hyp_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return bp * std::exp(logp);
}

inline std::vector<double> cider_d(const cnmt::EvalCorpus& corpus) {
  std::unordered_map<std::string, double> df;
  for (const auto& e : corpus) {
    std::unordered_map<std::string, bool> seen;
    for (const auto& r : e.refs)
      for (int n = 1; n <= 4; ++n)
        for (const auto& [k, c] : grams(r, n)) seen[k] = true;
    for (const auto& [k, b] : seen) df[k] += 1.0;
  }
  const double logm = std::log(static_cast<double>(corpus.size()));
  auto tfidf = [&](const std::vector<std::string>& toks, int n) {
    std::unordered_map<std::string, double> v;
    for (const auto& [k, c] : grams(toks, n)) {
      double d = df.count(k) ? df.at(k) : 0.0;
      v[k] = c * (logm - std::log(std::max(1.0, d)));
    }
    return v;
  };
  auto norm_of = [](const std::unordered_map<std::string, double>& v) {
    double s = 0;
    for (const auto& [k, w] : v) s += w * w;
    return std::sqrt(s);
  };
  std::vector<double> out;
  for (const auto& e : corpus) {
    double score = 0;
    for (int n = 1; n <= 4; ++n) {
      auto hv = tfidf(e.hyp, n);
      double hn = norm_of(hv);
      double acc = 0;
      for (const auto& r : e.refs) {
        auto rv = tfidf(r, n);
        double rn = norm_of(rv);
        double sim = 0;
        for (const auto& [k, hw] : hv) {
          if (rv.count(k)) sim += std::min(hw, rv.at(k)) * rv.at(k);
        }
        if (hn > 0 && rn > 0) sim /= hn * rn;
        double delta = static_cast<double>(e.hyp.size()) - static_cast<double>(r.size());
        acc += sim * std::exp(-delta * delta / 72.0);  // 2 * 6^2
      }
      score += acc / (4.0 * static_cast<double>(e.refs.size()));
    }
    out.push_back(10.0 * score);
  }
  return out;
}

// Random caption corpora over a small shared vocabulary.
inline cnmt::EvalCorpus random_corpus(cnmt::Rng& rng, int entries) {
  static const char* kWords[] = {"red", "bus", "stop", "sign", "a", "the",
                                 "cafe", "street", "night", "exit"};
  auto sentence = [&rng]() {
    std::vector<std::string> s;
    const int len = 1 + static_cast<int>(rng.uniform_int(9));
    for (int i = 0; i < len; ++i) s.push_back(kWords[rng.uniform_int(10)]);
    return s;
  };
  cnmt::EvalCorpus corpus;
  for (int i = 0; i < entries; ++i) {
    cnmt::EvalEntry e;
    e.scene_id = "r" + std::to_string(i);
    e.hyp = sentence();
    const int nrefs = 1 + static_cast<int>(rng.uniform_int(3));
    for (int r = 0; r < nrefs; ++r) e.refs.push_back(sentence());
    corpus.push_back(std::move(e));
  }
  return corpus;
}

}  // namespace oracle
