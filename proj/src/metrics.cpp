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

#include "cnmt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>

#include "cnmt/errors.hpp"

namespace cnmt {

namespace {

constexpr int kMaxN = 4;

using NgramCounts = std::map<std::vector<std::string>, int64_t>;

NgramCounts count_ngrams(const std::vector<std::string>& tokens, int n) {
  NgramCounts counts;
  for (int i = 0; i + n <= static_cast<int>(tokens.size()); ++i) {
    counts[std::vector<std::string>(tokens.begin() + i, tokens.begin() + i + n)] += 1;
  }
  return counts;
}

}  // namespace

double bleu4(const EvalCorpus& corpus, bool smooth) {
  if (corpus.empty()) throw ContractError("bleu4: empty corpus");
  int64_t matches[kMaxN] = {0, 0, 0, 0};
  int64_t totals[kMaxN] = {0, 0, 0, 0};
  int64_t hyp_len = 0, ref_len = 0;
  for (const auto& entry : corpus) {
    if (entry.refs.empty()) throw ContractError("bleu4: entry without references");
    hyp_len += static_cast<int64_t>(entry.hyp.size());
    // closest reference length; ties go to the shorter reference
    int64_t closest = static_cast<int64_t>(entry.refs[0].size());
    for (const auto& ref : entry.refs) {
      const auto rl = static_cast<int64_t>(ref.size());
      const auto hl = static_cast<int64_t>(entry.hyp.size());
      if (std::llabs(rl - hl) < std::llabs(closest - hl) ||
          (std::llabs(rl - hl) == std::llabs(closest - hl) && rl < closest)) {
        closest = rl;
      }
    }
    ref_len += closest;
    for (int n = 1; n <= kMaxN; ++n) {
      NgramCounts hyp_counts = count_ngrams(entry.hyp, n);
      NgramCounts max_ref;
      for (const auto& ref : entry.refs) {
        for (const auto& [ng, c] : count_ngrams(ref, n)) {
          max_ref[ng] = std::max(max_ref[ng], c);
        }
      }
      for (const auto& [ng, c] : hyp_counts) {
        totals[n - 1] += c;
        auto it = max_ref.find(ng);
        if (it != max_ref.end()) matches[n - 1] += std::min(c, it->second);
      }
    }
  }
  double log_prec = 0.0;
  for (int n = 1; n <= kMaxN; ++n) {
    double m = static_cast<double>(matches[n - 1]);
    double t = static_cast<double>(totals[n - 1]);
    if (smooth && n >= 2) {
      m += 1.0;
      t += 1.0;
    }
    if (t == 0.0 || m == 0.0) return 0.0;
    log_prec += std::log(m / t) / kMaxN;
  }
  if (hyp_len == 0) return 0.0;
  const double bp =
      hyp_len > ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / hyp_len);
  return bp * std::exp(log_prec);
}

double sentence_bleu4(const std::vector<std::string>& hyp,
                      const std::vector<std::vector<std::string>>& refs) {
  EvalCorpus corpus{{"", hyp, refs}};
  return bleu4(corpus, /*smooth=*/true);
}

namespace {

struct CiderVec {
  // tf-idf weights per n, plus L2 norms and token length
  std::map<std::vector<std::string>, double> vec[kMaxN];
  double norm[kMaxN] = {0, 0, 0, 0};
  int64_t length = 0;
};

CiderVec cider_vec(const std::vector<std::string>& tokens,
                   const std::map<std::vector<std::string>, int64_t>& doc_freq,
                   double log_corpus_size) {
  CiderVec out;
  out.length = static_cast<int64_t>(tokens.size());
  for (int n = 1; n <= kMaxN; ++n) {
    for (const auto& [ng, count] : count_ngrams(tokens, n)) {
      auto dit = doc_freq.find(ng);
      const double df = std::log(std::max<double>(1.0, dit == doc_freq.end() ? 0 : static_cast<double>(dit->second)));
      const double w = static_cast<double>(count) * (log_corpus_size - df);
      out.vec[n - 1][ng] = w;
      out.norm[n - 1] += w * w;
    }
    out.norm[n - 1] = std::sqrt(out.norm[n - 1]);
  }
  return out;
}

}  // namespace

std::vector<double> cider_d_per_scene(const EvalCorpus& corpus) {
  if (corpus.size() < 2) {
    throw ConfigError("cider_d: needs a corpus of >= 2 entries for document frequencies");
  }
  constexpr double kSigma = 6.0;
  // document frequency over reference sets
  std::map<std::vector<std::string>, int64_t> doc_freq;
  for (const auto& entry : corpus) {
    if (entry.refs.empty()) throw ContractError("cider_d: entry without references");
    std::map<std::vector<std::string>, int64_t> seen;
    for (const auto& ref : entry.refs) {
      for (int n = 1; n <= kMaxN; ++n) {
        for (const auto& [ng, c] : count_ngrams(ref, n)) seen[ng] = 1;
      }
    }
    for (const auto& [ng, one] : seen) doc_freq[ng] += 1;
  }
  const double log_corpus_size = std::log(static_cast<double>(corpus.size()));

  std::vector<double> scores;
  for (const auto& entry : corpus) {
    CiderVec hv = cider_vec(entry.hyp, doc_freq, log_corpus_size);
    double acc[kMaxN] = {0, 0, 0, 0};
    for (const auto& ref : entry.refs) {
      CiderVec rv = cider_vec(ref, doc_freq, log_corpus_size);
      const double delta = static_cast<double>(hv.length - rv.length);
      const double len_penalty = std::exp(-(delta * delta) / (2.0 * kSigma * kSigma));
      for (int n = 0; n < kMaxN; ++n) {
        double val = 0.0;
        for (const auto& [ng, hw] : hv.vec[n]) {
          auto rit = rv.vec[n].find(ng);
          if (rit != rv.vec[n].end()) val += std::min(hw, rit->second) * rit->second;
        }
        if (hv.norm[n] != 0.0 && rv.norm[n] != 0.0) val /= hv.norm[n] * rv.norm[n];
        acc[n] += val * len_penalty;
      }
    }
    double score = 0.0;
    for (int n = 0; n < kMaxN; ++n) score += acc[n];
    score /= kMaxN;
    score /= static_cast<double>(entry.refs.size());
    scores.push_back(score * 10.0);
  }
  return scores;
}

double cider_d(const EvalCorpus& corpus) {
  const auto scores = cider_d_per_scene(corpus);
  double total = 0.0;
  for (double s : scores) total += s;
  return total / static_cast<double>(scores.size());
}

double repetition_rate(const std::vector<std::vector<std::string>>& captions,
                       const std::set<std::string>& common_words) {
  if (captions.empty()) return 0.0;
  int repetitive = 0;
  for (const auto& cap : captions) {
    std::map<std::string, int> counts;
    bool has_repeat = false;
    for (const auto& tok : cap) {
      if (common_words.count(tok)) continue;
      if (++counts[tok] >= 2) {
        has_repeat = true;
        break;
      }
    }
    if (has_repeat) ++repetitive;
  }
  return static_cast<double>(repetitive) / static_cast<double>(captions.size());
}

}  // namespace cnmt
