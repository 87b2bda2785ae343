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

#include "cnmt/reading.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cnmt/rng.hpp"
#include "json.hpp"

namespace cnmt {

namespace {

// 50 most frequent English bigrams, used by the level-2 bigram section of
// the PHOC layout.
const char* const kBigrams[50] = {
    "th", "he", "in", "er", "an", "re", "on", "at", "en", "nd",
    "ti", "es", "or", "te", "of", "ed", "is", "it", "al", "ar",
    "st", "to", "nt", "ng", "se", "ha", "as", "ou", "io", "le",
    "ve", "co", "me", "de", "hi", "ri", "ro", "ic", "ne", "ea",
    "ra", "ce", "li", "ch", "ll", "be", "ma", "si", "om", "ur"};

// Lexicon for synthetic scenes; plays the role usually filled by real
// scene text.
const char* const kLexicon[] = {
    "nokia",  "ushahidi", "menu",   "stop",  "cola",   "pixel",
    "canon",  "delta",    "metro",  "vivo",  "casio",  "epson",
    "fanta",  "lemon",    "mango",  "omega", "prime",  "quartz",
    "rover",  "sigma",    "tango",  "urban", "velvet", "zenith"};
constexpr int kLexiconSize = 24;

int phoc_char_index(char c) {
  if (c >= 'a' && c <= 'z') return c - 'a';
  if (c >= '0' && c <= '9') return 26 + (c - '0');
  return -1;
}

int bigram_index(const std::string& bg) {
  for (int i = 0; i < 50; ++i)
    if (bg == kBigrams[i]) return i;
  return -1;
}

// |occupancy ∩ region| / |occupancy| >= 0.5
bool occupies(double occ_lo, double occ_hi, double reg_lo, double reg_hi) {
  const double inter = std::max(0.0, std::min(occ_hi, reg_hi) - std::max(occ_lo, reg_lo));
  return inter / (occ_hi - occ_lo) >= 0.5;
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

Box random_box(Rng& rng, int width, int height) {
  const double x0 = rng.uniform(0.0, width * 0.7);
  const double y0 = rng.uniform(0.0, height * 0.7);
  Box b;
  b.x_min = std::floor(x0);
  b.y_min = std::floor(y0);
  b.x_max = std::floor(b.x_min + rng.uniform(8.0, width - b.x_min - 1.0));
  b.y_max = std::floor(b.y_min + rng.uniform(8.0, height - b.y_min - 1.0));
  return b;
}

void validate_box(const Box& b, int width, int height, const std::string& scene_id) {
  if (!(b.x_min >= 0 && b.x_min < b.x_max && b.x_max <= width && b.y_min >= 0 &&
        b.y_min < b.y_max && b.y_max <= height)) {
    std::ostringstream os;
    os << "scene " << scene_id << ": invalid box [" << b.x_min << "," << b.y_min
       << "," << b.x_max << "," << b.y_max << "] in " << width << "x" << height;
    throw DataError(os.str());
  }
}

void fill_token_features(OcrToken& tok, const std::string& scene_id, int f_ocr, int f_ft) {
  if (tok.feat_appearance.empty()) {
    std::ostringstream key;
    key << tok.text << '|' << tok.box.x_min << ',' << tok.box.y_min << ','
        << tok.box.x_max << ',' << tok.box.y_max << '|' << scene_id;
    tok.feat_appearance = hashed_feature(fnv1a64(key.str(), 3), f_ocr);
  }
  if (tok.feat_subword.empty()) tok.feat_subword = subword_embed(tok.text, f_ft, kSubwordSeed);
  if (tok.feat_phoc.empty()) tok.feat_phoc = phoc_encode(tok.text);
}

}  // namespace

std::string ocr_source_name(OcrSource s) {
  switch (s) {
    case OcrSource::kPrimary: return "primary_ocr";
    case OcrSource::kFallback: return "fallback_ocr";
    case OcrSource::kSynthetic: return "synthetic";
  }
  return "synthetic";
}

OcrSource ocr_source_from_name(const std::string& name) {
  if (name == "primary_ocr") return OcrSource::kPrimary;
  if (name == "fallback_ocr") return OcrSource::kFallback;
  if (name == "synthetic") return OcrSource::kSynthetic;
  throw DataError("unknown ocr source: " + name);
}

std::string normalize_text(const std::string& s) {
  std::string t;
  t.reserve(s.size());
  for (char c : s) t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  size_t b = 0, e = t.size();
  auto is_punct = [](char c) {
    return std::ispunct(static_cast<unsigned char>(c)) || std::isspace(static_cast<unsigned char>(c));
  };
  while (b < e && is_punct(t[b])) ++b;
  while (e > b && is_punct(t[e - 1])) --e;
  return t.substr(b, e - b);
}

double box_iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double area_a = (a.x_max - a.x_min) * (a.y_max - a.y_min);
  const double area_b = (b.x_max - b.x_min) * (b.y_max - b.y_min);
  return inter / (area_a + area_b - inter);
}

std::vector<OcrToken> merge_ocr_results(const std::vector<OcrToken>& primary,
                                        const std::vector<OcrToken>& fallback,
                                        double iou_threshold, double c_default,
                                        int max_tokens) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw ConfigError("merge_ocr_results: iou_threshold must be in (0,1]");
  }
  std::vector<OcrToken> merged = primary;
  for (const auto& fb : fallback) {
    bool duplicate = false;
    for (const auto& pr : primary) {
      if (pr.text == fb.text && box_iou(pr.box, fb.box) >= iou_threshold) {
        duplicate = true;
        break;
      }
    }
    if (duplicate) continue;
    OcrToken tok = fb;
    tok.conf = c_default;
    tok.source = OcrSource::kFallback;
    merged.push_back(std::move(tok));
  }
  std::stable_sort(merged.begin(), merged.end(),
                   [](const OcrToken& a, const OcrToken& b) { return a.conf > b.conf; });
  if (static_cast<int>(merged.size()) > max_tokens) merged.resize(static_cast<size_t>(max_tokens));
  return merged;
}

std::vector<double> phoc_encode(const std::string& word) {
  std::vector<double> out(kPhocDim, 0.0);
  std::string w;
  for (char c : normalize_text(word)) {
    if (phoc_char_index(c) >= 0) w.push_back(c);
  }
  const int n = static_cast<int>(w.size());
  if (n == 0) return out;

  static const int kLevels[] = {2, 3, 4, 5};
  int level_off = 0;
  for (int l : kLevels) {
    for (int k = 0; k < n; ++k) {
      const double lo = static_cast<double>(k) / n;
      const double hi = static_cast<double>(k + 1) / n;
      const int ci = phoc_char_index(w[static_cast<size_t>(k)]);
      for (int r = 0; r < l; ++r) {
        if (occupies(lo, hi, static_cast<double>(r) / l, static_cast<double>(r + 1) / l)) {
          out[static_cast<size_t>(level_off + r * 36 + ci)] = 1.0;
        }
      }
    }
    level_off += l * 36;
  }
  // level-2 bigram section
  for (int k = 0; k + 1 < n; ++k) {
    const int bi = bigram_index(w.substr(static_cast<size_t>(k), 2));
    if (bi < 0) continue;
    const double lo = static_cast<double>(k) / n;
    const double hi = static_cast<double>(k + 2) / n;
    for (int r = 0; r < 2; ++r) {
      if (occupies(lo, hi, r * 0.5, (r + 1) * 0.5)) {
        out[static_cast<size_t>(504 + r * 50 + bi)] = 1.0;
      }
    }
  }
  return out;
}

std::vector<double> subword_embed(const std::string& word, int dim, uint64_t seed) {
  if (dim < 1) throw ConfigError("subword_embed: dim must be >= 1");
  std::vector<double> acc(static_cast<size_t>(dim), 0.0);
  const std::string s = "<" + word + ">";
  int count = 0;
  for (int len = 3; len <= 6; ++len) {
    for (int start = 0; start + len <= static_cast<int>(s.size()); ++start) {
      const std::string ngram = s.substr(static_cast<size_t>(start), static_cast<size_t>(len));
      Rng rng(fnv1a64(ngram, seed));
      std::vector<double> v(static_cast<size_t>(dim));
      double norm = 0.0;
      for (double& x : v) {
        x = rng.normal();
        norm += x * x;
      }
      norm = std::sqrt(norm);
      if (norm == 0.0) continue;
      for (int i = 0; i < dim; ++i) acc[static_cast<size_t>(i)] += v[static_cast<size_t>(i)] / norm;
      ++count;
    }
  }
  if (count > 0) {
    for (double& x : acc) x /= count;
  }
  return acc;
}

std::array<double, 4> normalize_box(const Box& box, int width, int height,
                                    const std::string& scene_id) {
  validate_box(box, width, height, scene_id);
  return {box.x_min / width, box.y_min / height, box.x_max / width, box.y_max / height};
}

std::vector<double> hashed_feature(uint64_t key, int dim) {
  Rng rng(key);
  std::vector<double> v(static_cast<size_t>(dim));
  double norm = 0.0;
  for (double& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  if (norm > 0) {
    for (double& x : v) x /= norm;
  }
  return v;
}

SceneTask scene_task_from_name(const std::string& name) {
  if (name == "copy-max-conf") return SceneTask::kCopyMaxConf;
  if (name == "describe-object") return SceneTask::kDescribeObject;
  if (name == "no-repeat-pairs") return SceneTask::kNoRepeatPairs;
  throw ConfigError("unknown task: " + name);
}

std::string scene_task_name(SceneTask t) {
  switch (t) {
    case SceneTask::kCopyMaxConf: return "copy-max-conf";
    case SceneTask::kDescribeObject: return "describe-object";
    case SceneTask::kNoRepeatPairs: return "no-repeat-pairs";
  }
  return "copy-max-conf";
}

Scene generate_scene(uint64_t seed, const SceneGenSpec& spec) {
  Rng rng(seed ^ 0xc0ffee123456789ull);
  Scene scene;
  {
    std::ostringstream id;
    id << scene_task_name(spec.task) << "-" << seed;
    scene.scene_id = id.str();
  }
  scene.width = spec.width;
  scene.height = spec.height;

  // sample distinct lexicon words
  std::vector<int> order(kLexiconSize);
  std::iota(order.begin(), order.end(), 0);
  for (int i = kLexiconSize - 1; i > 0; --i) {
    std::swap(order[static_cast<size_t>(i)], order[rng.uniform_int(static_cast<uint64_t>(i + 1))]);
  }

  const int n_tok = std::max(2, spec.tokens_per_scene);
  for (int i = 0; i < n_tok; ++i) {
    OcrToken tok;
    tok.text = kLexicon[order[static_cast<size_t>(i % kLexiconSize)]];
    tok.conf = round2(rng.uniform(0.05, 0.99));
    tok.box = random_box(rng, spec.width, spec.height);
    tok.source = OcrSource::kSynthetic;
    tok.feat_appearance = hashed_feature(fnv1a64(tok.text, 11), spec.f_ocr);
    tok.feat_subword = subword_embed(tok.text, spec.f_ft, kSubwordSeed);
    tok.feat_phoc = phoc_encode(tok.text);
    scene.ocr.push_back(std::move(tok));
  }

  std::vector<std::string> obj_words;
  for (int i = 0; i < spec.num_objects; ++i) {
    ObjectRegion obj;
    obj.box = random_box(rng, spec.width, spec.height);
    const std::string word =
        kLexicon[order[static_cast<size_t>((n_tok + i) % kLexiconSize)]];
    obj_words.push_back(word);
    // identity-carrying appearance so the caption rule is learnable
    obj.feat_appearance = hashed_feature(fnv1a64(word, 17), spec.f_obj);
    scene.objects.push_back(std::move(obj));
  }

  auto argmax_conf = [&scene](int skip_slot) {
    int best = -1;
    for (int i = 0; i < static_cast<int>(scene.ocr.size()); ++i) {
      if (i == skip_slot) continue;
      if (skip_slot >= 0 &&
          scene.ocr[static_cast<size_t>(i)].text == scene.ocr[static_cast<size_t>(skip_slot)].text)
        continue;
      if (best < 0 || scene.ocr[static_cast<size_t>(i)].conf > scene.ocr[static_cast<size_t>(best)].conf)
        best = i;  // strict > keeps the lowest index on ties
    }
    return best;
  };

  switch (spec.task) {
    case SceneTask::kCopyMaxConf: {
      const int x = argmax_conf(-1);
      scene.captions.push_back({"a", "sign", "that", "says", scene.ocr[static_cast<size_t>(x)].text});
      break;
    }
    case SceneTask::kDescribeObject: {
      scene.captions.push_back({"a", "photo", "of", "a", obj_words.front()});
      break;
    }
    case SceneTask::kNoRepeatPairs: {
      const int x = argmax_conf(-1);
      const int y = argmax_conf(x);
      scene.captions.push_back({"a", "sign", "that", "says",
                                scene.ocr[static_cast<size_t>(x)].text, "and",
                                scene.ocr[static_cast<size_t>(y)].text});
      break;
    }
  }
  return scene;
}

namespace {

using json = nlohmann::ordered_json;

json box_to_json(const Box& b) { return json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

Box box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw DataError("box must be a 4-element array");
  Box b;
  b.x_min = j[0].get<double>();
  b.y_min = j[1].get<double>();
  b.x_max = j[2].get<double>();
  b.y_max = j[3].get<double>();
  return b;
}

}  // namespace

std::vector<Scene> load_scenes(const std::string& path, const SceneReadOptions& opts) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scene file: " + path);
  std::vector<Scene> scenes;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
    }
    try {
      Scene scene;
      scene.scene_id = j.at("scene_id").get<std::string>();
      scene.width = j.at("width").get<int>();
      scene.height = j.at("height").get<int>();
      if (scene.width <= 0 || scene.height <= 0) throw DataError("non-positive image size");
      if (j.contains("objects")) {
        for (const auto& jo : j["objects"]) {
          ObjectRegion obj;
          obj.box = box_from_json(jo.at("box"));
          validate_box(obj.box, scene.width, scene.height, scene.scene_id);
          if (jo.contains("feat")) obj.feat_appearance = jo["feat"].get<std::vector<double>>();
          if (obj.feat_appearance.empty()) {
            std::ostringstream key;
            key << obj.box.x_min << ',' << obj.box.y_min << ',' << obj.box.x_max << ','
                << obj.box.y_max << '|' << scene.scene_id;
            obj.feat_appearance = hashed_feature(fnv1a64(key.str(), 5), opts.f_obj);
          }
          scene.objects.push_back(std::move(obj));
        }
      }
      if (j.contains("ocr")) {
        for (const auto& jt : j["ocr"]) {
          OcrToken tok;
          tok.text = normalize_text(jt.at("text").get<std::string>());
          if (tok.text.empty()) throw DataError("ocr token empty after normalization");
          tok.box = box_from_json(jt.at("box"));
          validate_box(tok.box, scene.width, scene.height, scene.scene_id);
          tok.source = jt.contains("source")
                           ? ocr_source_from_name(jt["source"].get<std::string>())
                           : OcrSource::kPrimary;
          if (jt.contains("conf")) {
            tok.conf = jt["conf"].get<double>();
          } else if (tok.source == OcrSource::kFallback) {
            tok.conf = opts.c_default;
          } else {
            throw DataError("missing conf on non-fallback token '" + tok.text + "'");
          }
          if (tok.conf < 0.0 || tok.conf > 1.0) {
            throw DataError("conf " + std::to_string(tok.conf) + " outside [0,1] for '" +
                            tok.text + "'");
          }
          if (jt.contains("feat")) tok.feat_appearance = jt["feat"].get<std::vector<double>>();
          fill_token_features(tok, scene.scene_id, opts.f_ocr, opts.f_ft);
          scene.ocr.push_back(std::move(tok));
        }
      }
      if (static_cast<int>(scene.ocr.size()) > opts.max_ocr) {
        // keep the highest-confidence tokens, preserving original order
        std::vector<int> idx(scene.ocr.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&scene](int a, int b) {
          return scene.ocr[static_cast<size_t>(a)].conf > scene.ocr[static_cast<size_t>(b)].conf;
        });
        idx.resize(static_cast<size_t>(opts.max_ocr));
        std::sort(idx.begin(), idx.end());
        std::vector<OcrToken> kept;
        for (int i : idx) kept.push_back(std::move(scene.ocr[static_cast<size_t>(i)]));
        scene.ocr = std::move(kept);
      }
      if (j.contains("captions")) {
        for (const auto& jc : j["captions"]) {
          std::vector<std::string> cap;
          for (const auto& tokj : jc) cap.push_back(normalize_text(tokj.get<std::string>()));
          scene.captions.push_back(std::move(cap));
        }
      }
      scenes.push_back(std::move(scene));
    } catch (const DataError&) {
      throw;
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return scenes;
}

void save_scenes(const std::vector<Scene>& scenes, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write scene file: " + path);
  for (const auto& scene : scenes) {
    json j;
    j["scene_id"] = scene.scene_id;
    j["width"] = scene.width;
    j["height"] = scene.height;
    j["objects"] = json::array();
    for (const auto& obj : scene.objects) {
      json jo;
      jo["box"] = box_to_json(obj.box);
      jo["feat"] = obj.feat_appearance;
      j["objects"].push_back(std::move(jo));
    }
    j["ocr"] = json::array();
    for (const auto& tok : scene.ocr) {
      json jt;
      jt["text"] = tok.text;
      jt["conf"] = tok.conf;
      jt["box"] = box_to_json(tok.box);
      jt["source"] = ocr_source_name(tok.source);
      jt["feat"] = tok.feat_appearance;
      j["ocr"].push_back(std::move(jt));
    }
    j["captions"] = scene.captions;
    out << j.dump() << '\n';
  }
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace cnmt
