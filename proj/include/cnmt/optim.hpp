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
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cnmt/rng.hpp"
#include "cnmt/tensor.hpp"

namespace cnmt {

enum class Init { kZeros, kOnes, kNormal };  // kNormal: N(0, 0.02)

// Named trainable tensors; std::map keeps iteration order deterministic.
class ParameterStore {
 public:
  Tensor create(const std::string& name, const Shape& shape, Init init, Rng& rng);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  const std::map<std::string, Tensor>& all() const { return params_; }

  void zero_grad();
  // Snapshot of current gradient buffers, keyed by name.
  std::map<std::string, std::vector<double>> collect_grads() const;
  // Parameter values only (for snapshots / checkpoints).
  std::map<std::string, std::vector<double>> values() const;
  void load_values(const std::map<std::string, std::vector<double>>& values);

 private:
  std::map<std::string, Tensor> params_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  int64_t step = 0;
  std::map<std::string, std::vector<double>> m, v;
};

// In-place Adam update. Every registered parameter must have an entry in
// `grads` (ContractError otherwise).
void adam_step(ParameterStore& store,
               const std::map<std::string, std::vector<double>>& grads,
               double lr, const AdamConfig& cfg, AdamState& state);

// Central finite differences against the analytic gradients of `build_loss`.
// Subsamples at most max_coords coordinates per tensor (fixed seed). Returns
// the worst relative error over all checked coordinates.
double grad_check(const std::function<Tensor()>& build_loss,
                  ParameterStore& store, double eps = 1e-5,
                  int max_coords = 64, uint64_t seed = 0);

}  // namespace cnmt
