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

#include "cnmt/optim.hpp"

#include <algorithm>
#include <cmath>

namespace cnmt {

Tensor ParameterStore::create(const std::string& name, const Shape& shape,
                              Init init, Rng& rng) {
  if (params_.count(name)) {
    throw ContractError("parameter registered twice: " + name);
  }
  std::vector<double> data(static_cast<size_t>(shape_size(shape)), 0.0);
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kOnes:
      std::fill(data.begin(), data.end(), 1.0);
      break;
    case Init::kNormal:
      for (double& v : data) v = 0.02 * rng.normal();
      break;
  }
  Tensor t = Tensor::from(shape, std::move(data), /*requires_grad=*/true);
  params_.emplace(name, t);
  return t;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

void ParameterStore::zero_grad() {
  for (auto& [name, t] : params_) {
    Tensor copy = t;
    copy.zero_grad();
  }
}

std::map<std::string, std::vector<double>> ParameterStore::collect_grads() const {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [name, t] : params_) out.emplace(name, t.grad());
  return out;
}

std::map<std::string, std::vector<double>> ParameterStore::values() const {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [name, t] : params_) out.emplace(name, t.values());
  return out;
}

void ParameterStore::load_values(
    const std::map<std::string, std::vector<double>>& values) {
  for (auto& [name, t] : params_) {
    auto it = values.find(name);
    if (it == values.end()) throw ContractError("missing parameter in snapshot: " + name);
    if (it->second.size() != t.values().size()) {
      throw DimensionError("snapshot size mismatch for " + name);
    }
    Tensor copy = t;
    copy.mutable_values() = it->second;
  }
}

void adam_step(ParameterStore& store,
               const std::map<std::string, std::vector<double>>& grads,
               double lr, const AdamConfig& cfg, AdamState& state) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& [name, param] : store.all()) {
    auto git = grads.find(name);
    if (git == grads.end()) throw ContractError("adam_step: no gradient for " + name);
    const auto& g = git->second;
    Tensor t = param;
    auto& p = t.mutable_values();
    if (g.size() != p.size()) throw DimensionError("adam_step: gradient size mismatch for " + name);
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != p.size()) m.assign(p.size(), 0.0);
    if (v.size() != p.size()) v.assign(p.size(), 0.0);
    for (size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

double grad_check(const std::function<Tensor()>& build_loss,
                  ParameterStore& store, double eps, int max_coords,
                  uint64_t seed) {
  store.zero_grad();
  Tensor loss = build_loss();
  backward(loss);
  auto analytic = store.collect_grads();

  double worst = 0.0;
  Rng rng(seed * 0x9e3779b9ull + 1);
  for (const auto& [name, param] : store.all()) {
    Tensor t = param;
    auto& vals = t.mutable_values();
    const size_t n = vals.size();
    std::vector<size_t> coords;
    if (static_cast<int>(n) <= max_coords) {
      for (size_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (int i = 0; i < max_coords; ++i) coords.push_back(rng.uniform_int(n));
    }
    for (size_t c : coords) {
      const double orig = vals[c];
      vals[c] = orig + eps;
      const double f_plus = build_loss().scalar_value();
      vals[c] = orig - eps;
      const double f_minus = build_loss().scalar_value();
      vals[c] = orig;
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double a = analytic.at(name)[c];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace cnmt
