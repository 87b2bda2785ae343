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
#include <string>
#include <vector>

#include "cnmt/generation.hpp"
#include "cnmt/model.hpp"

namespace cnmt {

struct TrainConfig {
  double lr = 1e-4;
  std::vector<int> decay_steps{5000, 7000};
  double decay_factor = 0.1;
  int total_iters = 1000;
  int batch_size = 32;
  int eval_every = 500;
  uint64_t seed = 1;
  int min_count = 10;
  int common_c = 20;

  void validate() const;
};

struct Checkpoint {
  uint32_t version = 1;
  ModelConfig model_cfg;
  TrainConfig train_cfg;
  Vocabulary vocab;
  int64_t iteration = 0;
  double best_bleu4 = -1.0;
  std::map<std::string, std::vector<double>> params;
};

// Slot the loss targets for a gold word: vocab slot if present (matching the
// score-fusion routing), else V + lowest matching OCR slot, else -1 (skipped).
int target_slot(const std::string& gold_word, const Vocabulary& vocab,
                const std::vector<std::string>& ocr_texts);

// Teacher-forced cross-entropy over the concatenated V+N scores, mean over
// unskipped positions. The repetition mask is never applied here;
// construct_mask_probe additionally builds (and discards) the mask each step
// to exercise the inertness contract.
Tensor step_loss(const Scene& scene, const std::vector<std::string>& gold,
                 const Model& model, bool construct_mask_probe = false);

// Piecewise-constant schedule: lr * factor^(#decay steps <= iteration).
double lr_at(int iteration, const TrainConfig& cfg);

struct TrainLogEntry {
  int iteration = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_bleu4 = 0.0;
};

struct TrainResult {
  Checkpoint best;
  std::vector<TrainLogEntry> log;
  bool aborted = false;        // NaN loss
  int abort_iteration = -1;
};

TrainResult train(const std::vector<Scene>& train_scenes,
                  const std::vector<Scene>& val_scenes, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg);

// Versioned binary container with CRC32 integrity check; byte-exact
// round trip.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

Model model_from_checkpoint(const Checkpoint& ckpt);

// ---- config files ---------------------------------------------------------

struct DataConfig {
  double c_default = 0.90;
  double val_fraction = 0.1;
};

struct DecodeRunConfig {
  bool use_mask = true;
  int common_c = -1;  // -1: use the training-time C
  int trace_top_k = 5;
};

struct AppConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  DecodeRunConfig decode;
};

// JSON config with sections {model, train, data, decode}; unknown keys are
// errors, model.d / train.total_iters / train.seed are required.
AppConfig parse_app_config(const std::string& path);
std::string app_config_echo(const AppConfig& cfg);

}  // namespace cnmt
