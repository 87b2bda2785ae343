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
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cnmt/errors.hpp"

namespace cnmt {

using Shape = std::vector<int>;

// Sentinel for additive masks: most negative finite double. Behaves like
// -inf under argmax and softmax (exp underflows to exactly 0) without
// producing NaN when finite scores are added to it.
double neg_sentinel();

int64_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  // Reads this->grad, accumulates into parents' grad.
  std::function<void(TensorImpl&)> backprop;

  std::vector<double>& grad_buf() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

// Value-semantic handle to a node in the autodiff graph. Copies share the
// underlying node; forward ops are pure and build new nodes.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double v, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(impl_->value.size()); }
  bool requires_grad() const { return impl_->requires_grad; }

  const std::vector<double>& values() const { return impl_->value; }
  // In-place edits are for leaf tensors only (optimizer, checkpoint load).
  std::vector<double>& mutable_values() { return impl_->value; }
  double scalar_value() const;

  const std::vector<double>& grad() const { return impl_->grad_buf(); }
  void zero_grad() { impl_->grad.assign(impl_->value.size(), 0.0); }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// ---- forward ops (all pure; gradients defined where inputs require them) --

Tensor add(const Tensor& a, const Tensor& b);          // same shape
Tensor mul(const Tensor& a, const Tensor& b);          // elementwise
Tensor scale(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);       // [m,k] x [k,n]
// y = x W^T + b, x is [in] or [rows, in], W is [out, in], b is [out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
Tensor softmax_rows(const Tensor& x);                  // along last dim
Tensor gelu(const Tensor& x);
Tensor sum(const Tensor& x);                           // -> scalar
Tensor dot(const Tensor& a, const Tensor& b);          // 1-D, -> scalar
Tensor concat_rows(const std::vector<Tensor>& parts);  // along dim 0
Tensor concat_vec(const Tensor& a, const Tensor& b);   // 1-D concat
Tensor slice_rows(const Tensor& x, int start, int count);
Tensor reshape(const Tensor& x, const Shape& shape);  // same element count
Tensor row(const Tensor& x, int i);                    // [rows,d] -> [d]
// Per-row constant scale (no gradient w.r.t. the scales).
Tensor mul_rows_const(const Tensor& x, const std::vector<double>& scales);
// Constant additive offset, e.g. attention masks (no gradient to `c`).
Tensor add_const(const Tensor& x, const std::vector<double>& c);
// y_add[v] = y_voc[v] + sum of y_ocr[i] over (i, v) pairs.
Tensor scatter_add_slots(const Tensor& y_voc, const Tensor& y_ocr,
                         const std::vector<std::pair<int, int>>& ocr_to_vocab);
// Mean over rows of (logsumexp(row) - row[target]), weighted; weight 0 skips
// a row. targets.size() == weights.size() == logits rows.
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets,
                          const std::vector<double>& weights);

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // all [d,d] / [d]
};

// Scaled dot-product attention over a single sequence, additive mask of
// size T*T applied to the logits before softmax. q,k,v are [T,d].
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const std::vector<double>& mask, int heads,
                            const AttentionParams& params);

// Reverse-mode sweep from a scalar loss. Gradients accumulate into the
// grad buffers of every requires_grad tensor reachable from `loss`.
void backward(const Tensor& loss);

}  // namespace cnmt
