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

#include "cnmt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace cnmt {

double neg_sentinel() { return std::numeric_limits<double>::lowest(); }

int64_t shape_size(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
}

std::shared_ptr<TensorImpl> make_node(
    Shape shape, std::vector<double> value,
    std::vector<std::shared_ptr<TensorImpl>> parents,
    std::function<void(TensorImpl&)> backprop, const char* op) {
  check_finite(value, op);
  auto node = std::make_shared<TensorImpl>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  node->requires_grad = rg;
  if (rg) {
    node->parents = std::move(parents);
    node->backprop = std::move(backprop);
  }
  return node;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return from(shape, std::vector<double>(shape_size(shape), 0.0), requires_grad);
}

Tensor Tensor::full(const Shape& shape, double v, bool requires_grad) {
  return from(shape, std::vector<double>(shape_size(shape), v), requires_grad);
}

Tensor Tensor::from(const Shape& shape, std::vector<double> data,
                    bool requires_grad) {
  if (shape_size(shape) != static_cast<int64_t>(data.size())) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_size(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  for (int d : shape) {
    if (d <= 0) throw DimensionError("tensor: non-positive dim in " + shape_str(shape));
  }
  auto node = std::make_shared<TensorImpl>();
  node->shape = shape;
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(node);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

double Tensor::scalar_value() const {
  if (size() != 1) throw ContractError("scalar_value on tensor of size " + std::to_string(size()));
  return impl_->value[0];
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.values());
  for (size_t i = 0; i < out.size(); ++i) out[i] += b.values()[i];
  auto pa = a.impl(), pb = b.impl();
  return Tensor(make_node(
      a.shape(), std::move(out), {pa, pb},
      [pa, pb](TensorImpl& self) {
        if (pa->requires_grad) {
          auto& g = pa->grad_buf();
          for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pb->requires_grad) {
          auto& g = pb->grad_buf();
          for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
      },
      "add"));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.values());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= b.values()[i];
  auto pa = a.impl(), pb = b.impl();
  return Tensor(make_node(
      a.shape(), std::move(out), {pa, pb},
      [pa, pb](TensorImpl& self) {
        if (pa->requires_grad) {
          auto& g = pa->grad_buf();
          for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
          auto& g = pb->grad_buf();
          for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
        }
      },
      "mul"));
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.values());
  for (double& x : out) x *= c;
  auto pa = a.impl();
  return Tensor(make_node(
      a.shape(), std::move(out), {pa},
      [pa, c](TensorImpl& self) {
        auto& g = pa->grad_buf();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
      },
      "scale"));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double aip = av[static_cast<size_t>(i) * k + p];
      for (int j = 0; j < n; ++j) {
        out[static_cast<size_t>(i) * n + j] += aip * bv[static_cast<size_t>(p) * n + j];
      }
    }
  }
  auto pa = a.impl(), pb = b.impl();
  return Tensor(make_node(
      {m, n}, std::move(out), {pa, pb},
      [pa, pb, m, k, n](TensorImpl& self) {
        if (pa->requires_grad) {
          auto& g = pa->grad_buf();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
              const double go = self.grad[static_cast<size_t>(i) * n + j];
              for (int p = 0; p < k; ++p)
                g[static_cast<size_t>(i) * k + p] += go * pb->value[static_cast<size_t>(p) * n + j];
            }
        }
        if (pb->requires_grad) {
          auto& g = pb->grad_buf();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
              const double go = self.grad[static_cast<size_t>(i) * n + j];
              for (int p = 0; p < k; ++p)
                g[static_cast<size_t>(p) * n + j] += go * pa->value[static_cast<size_t>(i) * k + p];
            }
        }
      },
      "matmul"));
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const bool vec = x.ndim() == 1;
  if (w.ndim() != 2) throw DimensionError("linear: W must be 2-D, got " + shape_str(w.shape()));
  const int in = w.dim(1), out_dim = w.dim(0);
  const int x_in = vec ? x.dim(0) : x.dim(1);
  if (x_in != in || (x.ndim() > 2)) {
    throw DimensionError("linear: x " + shape_str(x.shape()) + " incompatible with W " +
                         shape_str(w.shape()));
  }
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != out_dim)) {
    throw DimensionError("linear: b " + shape_str(b.shape()) + " incompatible with W " +
                         shape_str(w.shape()));
  }
  const int rows = vec ? 1 : x.dim(0);
  std::vector<double> out(static_cast<size_t>(rows) * out_dim, 0.0);
  const auto& xv = x.values();
  const auto& wv = w.values();
  for (int r = 0; r < rows; ++r) {
    for (int o = 0; o < out_dim; ++o) {
      double acc = b.defined() ? b.values()[static_cast<size_t>(o)] : 0.0;
      const size_t xo = static_cast<size_t>(r) * in;
      const size_t wo = static_cast<size_t>(o) * in;
      for (int i = 0; i < in; ++i) acc += xv[xo + i] * wv[wo + i];
      out[static_cast<size_t>(r) * out_dim + o] = acc;
    }
  }
  Shape out_shape = vec ? Shape{out_dim} : Shape{rows, out_dim};
  auto px = x.impl(), pw = w.impl();
  auto pb = b.defined() ? b.impl() : nullptr;
  std::vector<std::shared_ptr<TensorImpl>> parents{px, pw};
  if (pb) parents.push_back(pb);
  return Tensor(make_node(
      std::move(out_shape), std::move(out), std::move(parents),
      [px, pw, pb, rows, in, out_dim](TensorImpl& self) {
        if (px->requires_grad) {
          auto& g = px->grad_buf();
          for (int r = 0; r < rows; ++r)
            for (int o = 0; o < out_dim; ++o) {
              const double go = self.grad[static_cast<size_t>(r) * out_dim + o];
              for (int i = 0; i < in; ++i)
                g[static_cast<size_t>(r) * in + i] += go * pw->value[static_cast<size_t>(o) * in + i];
            }
        }
        if (pw->requires_grad) {
          auto& g = pw->grad_buf();
          for (int r = 0; r < rows; ++r)
            for (int o = 0; o < out_dim; ++o) {
              const double go = self.grad[static_cast<size_t>(r) * out_dim + o];
              for (int i = 0; i < in; ++i)
                g[static_cast<size_t>(o) * in + i] += go * px->value[static_cast<size_t>(r) * in + i];
            }
        }
        if (pb && pb->requires_grad) {
          auto& g = pb->grad_buf();
          for (int r = 0; r < rows; ++r)
            for (int o = 0; o < out_dim; ++o)
              g[static_cast<size_t>(o)] += self.grad[static_cast<size_t>(r) * out_dim + o];
        }
      },
      "linear"));
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  const int d = x.dim(x.ndim() - 1);
  if (d == 0) throw DimensionError("layer_norm: zero feature dim");
  if (gamma.size() != d || beta.size() != d) {
    throw DimensionError("layer_norm: affine params must have dim " + std::to_string(d));
  }
  const int rows = static_cast<int>(x.size() / d);
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  for (int r = 0; r < rows; ++r) {
    const size_t off = static_cast<size_t>(r) * d;
    double mean = 0.0;
    for (int i = 0; i < d; ++i) mean += xv[off + i];
    mean /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) {
      const double c = xv[off + i] - mean;
      var += c * c;
    }
    var /= d;
    const double inv_std = 1.0 / std::sqrt(var + eps);
    for (int i = 0; i < d; ++i) {
      out[off + i] = (xv[off + i] - mean) * inv_std * gv[i] + bv[i];
    }
  }
  auto px = x.impl(), pg = gamma.impl(), pb = beta.impl();
  return Tensor(make_node(
      x.shape(), std::move(out), {px, pg, pb},
      [px, pg, pb, rows, d, eps](TensorImpl& self) {
        for (int r = 0; r < rows; ++r) {
          const size_t off = static_cast<size_t>(r) * d;
          double mean = 0.0;
          for (int i = 0; i < d; ++i) mean += px->value[off + i];
          mean /= d;
          double var = 0.0;
          for (int i = 0; i < d; ++i) {
            const double c = px->value[off + i] - mean;
            var += c * c;
          }
          var /= d;
          const double inv_std = 1.0 / std::sqrt(var + eps);
          // xhat and dxhat for this row
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          std::vector<double> xhat(d), dxhat(d);
          for (int i = 0; i < d; ++i) {
            xhat[i] = (px->value[off + i] - mean) * inv_std;
            dxhat[i] = self.grad[off + i] * pg->value[static_cast<size_t>(i)];
            mean_dxhat += dxhat[i];
            mean_dxhat_xhat += dxhat[i] * xhat[i];
          }
          mean_dxhat /= d;
          mean_dxhat_xhat /= d;
          if (px->requires_grad) {
            auto& g = px->grad_buf();
            for (int i = 0; i < d; ++i)
              g[off + i] += inv_std * (dxhat[i] - mean_dxhat - xhat[i] * mean_dxhat_xhat);
          }
          if (pg->requires_grad) {
            auto& g = pg->grad_buf();
            for (int i = 0; i < d; ++i) g[static_cast<size_t>(i)] += self.grad[off + i] * xhat[i];
          }
          if (pb->requires_grad) {
            auto& g = pb->grad_buf();
            for (int i = 0; i < d; ++i) g[static_cast<size_t>(i)] += self.grad[off + i];
          }
        }
      },
      "layer_norm"));
}

Tensor softmax_rows(const Tensor& x) {
  const int d = x.dim(x.ndim() - 1);
  const int rows = static_cast<int>(x.size() / d);
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  for (int r = 0; r < rows; ++r) {
    const size_t off = static_cast<size_t>(r) * d;
    double mx = xv[off];
    for (int i = 1; i < d; ++i) mx = std::max(mx, xv[off + i]);
    double z = 0.0;
    for (int i = 0; i < d; ++i) {
      out[off + i] = std::exp(xv[off + i] - mx);
      z += out[off + i];
    }
    for (int i = 0; i < d; ++i) out[off + i] /= z;
  }
  auto px = x.impl();
  return Tensor(make_node(
      x.shape(), std::move(out), {px},
      [px, rows, d](TensorImpl& self) {
        auto& g = px->grad_buf();
        for (int r = 0; r < rows; ++r) {
          const size_t off = static_cast<size_t>(r) * d;
          double dotp = 0.0;
          for (int i = 0; i < d; ++i) dotp += self.grad[off + i] * self.value[off + i];
          for (int i = 0; i < d; ++i)
            g[off + i] += self.value[off + i] * (self.grad[off + i] - dotp);
        }
      },
      "softmax"));
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * M_SQRT1_2));
  }
  auto px = x.impl();
  return Tensor(make_node(
      x.shape(), std::move(out), {px},
      [px](TensorImpl& self) {
        auto& g = px->grad_buf();
        constexpr double kInvSqrt2Pi = 0.3989422804014327;
        for (size_t i = 0; i < g.size(); ++i) {
          const double v = px->value[i];
          const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
          const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
          g[i] += self.grad[i] * (cdf + v * pdf);
        }
      },
      "gelu"));
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  auto px = x.impl();
  return Tensor(make_node(
      {1}, {acc}, {px},
      [px](TensorImpl& self) {
        auto& g = px->grad_buf();
        for (double& v : g) v += self.grad[0];
      },
      "sum"));
}

Tensor dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double acc = 0.0;
  for (size_t i = 0; i < a.values().size(); ++i) acc += a.values()[i] * b.values()[i];
  auto pa = a.impl(), pb = b.impl();
  return Tensor(make_node(
      {1}, {acc}, {pa, pb},
      [pa, pb](TensorImpl& self) {
        if (pa->requires_grad) {
          auto& g = pa->grad_buf();
          for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * pb->value[i];
        }
        if (pb->requires_grad) {
          auto& g = pb->grad_buf();
          for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * pa->value[i];
        }
      },
      "dot"));
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: empty list");
  Shape trailing(parts[0].shape().begin() + (parts[0].ndim() > 1 ? 1 : 0),
                 parts[0].shape().end());
  int rows = 0;
  std::vector<double> out;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  for (const auto& p : parts) {
    const int pr = p.ndim() > 1 ? p.dim(0) : 1;
    Shape tr(p.shape().begin() + (p.ndim() > 1 ? 1 : 0), p.shape().end());
    if (p.ndim() == 1) tr = {p.dim(0)};
    Shape want = parts[0].ndim() == 1 ? Shape{parts[0].dim(0)} : trailing;
    if (tr != want) throw DimensionError("concat_rows: trailing shape mismatch");
    rows += pr;
    out.insert(out.end(), p.values().begin(), p.values().end());
    parents.push_back(p.impl());
  }
  const int stride = static_cast<int>(parts[0].ndim() == 1
                                          ? parts[0].size()
                                          : parts[0].size() / parts[0].dim(0));
  Shape out_shape{rows, stride};
  auto parents_copy = parents;
  return Tensor(make_node(
      std::move(out_shape), std::move(out), std::move(parents),
      [parents_copy](TensorImpl& self) {
        size_t off = 0;
        for (const auto& p : parents_copy) {
          if (p->requires_grad) {
            auto& g = p->grad_buf();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[off + i];
          }
          off += p->value.size();
        }
      },
      "concat_rows"));
}

Tensor concat_vec(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 1 || b.ndim() != 1) throw DimensionError("concat_vec: 1-D only");
  std::vector<double> out(a.values());
  out.insert(out.end(), b.values().begin(), b.values().end());
  auto pa = a.impl(), pb = b.impl();
  const size_t na = a.values().size();
  return Tensor(make_node(
      {a.dim(0) + b.dim(0)}, std::move(out), {pa, pb},
      [pa, pb, na](TensorImpl& self) {
        if (pa->requires_grad) {
          auto& g = pa->grad_buf();
          for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pb->requires_grad) {
          auto& g = pb->grad_buf();
          for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[na + i];
        }
      },
      "concat_vec"));
}

Tensor slice_rows(const Tensor& x, int start, int count) {
  if (x.ndim() != 2 || start < 0 || count < 1 || start + count > x.dim(0)) {
    throw ContractError("slice_rows: range [" + std::to_string(start) + "," +
                        std::to_string(start + count) + ") out of " +
                        shape_str(x.shape()));
  }
  const int d = x.dim(1);
  std::vector<double> out(x.values().begin() + static_cast<size_t>(start) * d,
                          x.values().begin() + static_cast<size_t>(start + count) * d);
  auto px = x.impl();
  return Tensor(make_node(
      {count, d}, std::move(out), {px},
      [px, start, d](TensorImpl& self) {
        auto& g = px->grad_buf();
        for (size_t i = 0; i < self.grad.size(); ++i)
          g[static_cast<size_t>(start) * d + i] += self.grad[i];
      },
      "slice_rows"));
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_size(shape) != x.size()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                         " changes element count");
  }
  auto px = x.impl();
  return Tensor(make_node(
      shape, x.values(), {px},
      [px](TensorImpl& self) {
        auto& g = px->grad_buf();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      },
      "reshape"));
}

Tensor row(const Tensor& x, int i) {
  if (x.ndim() != 2 || i < 0 || i >= x.dim(0)) {
    throw ContractError("row: index " + std::to_string(i) + " out of " + shape_str(x.shape()));
  }
  const int d = x.dim(1);
  std::vector<double> out(x.values().begin() + static_cast<size_t>(i) * d,
                          x.values().begin() + static_cast<size_t>(i + 1) * d);
  auto px = x.impl();
  return Tensor(make_node(
      {d}, std::move(out), {px},
      [px, i, d](TensorImpl& self) {
        auto& g = px->grad_buf();
        for (int j = 0; j < d; ++j) g[static_cast<size_t>(i) * d + j] += self.grad[static_cast<size_t>(j)];
      },
      "row"));
}

Tensor mul_rows_const(const Tensor& x, const std::vector<double>& scales) {
  if (x.ndim() != 2 || static_cast<int>(scales.size()) != x.dim(0)) {
    throw DimensionError("mul_rows_const: need one scale per row");
  }
  const int d = x.dim(1);
  std::vector<double> out(x.values());
  for (int r = 0; r < x.dim(0); ++r)
    for (int j = 0; j < d; ++j) out[static_cast<size_t>(r) * d + j] *= scales[static_cast<size_t>(r)];
  auto px = x.impl();
  auto sc = scales;
  return Tensor(make_node(
      x.shape(), std::move(out), {px},
      [px, sc, d](TensorImpl& self) {
        auto& g = px->grad_buf();
        const int rows = static_cast<int>(sc.size());
        for (int r = 0; r < rows; ++r)
          for (int j = 0; j < d; ++j)
            g[static_cast<size_t>(r) * d + j] += self.grad[static_cast<size_t>(r) * d + j] * sc[static_cast<size_t>(r)];
      },
      "mul_rows_const"));
}

Tensor add_const(const Tensor& x, const std::vector<double>& c) {
  if (c.size() != x.values().size()) throw DimensionError("add_const: size mismatch");
  std::vector<double> out(x.values());
  for (size_t i = 0; i < out.size(); ++i) out[i] += c[i];
  auto px = x.impl();
  return Tensor(make_node(
      x.shape(), std::move(out), {px},
      [px](TensorImpl& self) {
        auto& g = px->grad_buf();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      },
      "add_const"));
}

Tensor scatter_add_slots(const Tensor& y_voc, const Tensor& y_ocr,
                         const std::vector<std::pair<int, int>>& ocr_to_vocab) {
  if (y_voc.ndim() != 1 || y_ocr.ndim() != 1) {
    throw DimensionError("scatter_add_slots: 1-D scores expected");
  }
  std::vector<double> out(y_voc.values());
  for (const auto& [ocr_slot, voc_slot] : ocr_to_vocab) {
    if (ocr_slot < 0 || ocr_slot >= y_ocr.dim(0) || voc_slot < 0 || voc_slot >= y_voc.dim(0)) {
      throw ContractError("scatter_add_slots: slot pair out of range");
    }
    out[static_cast<size_t>(voc_slot)] += y_ocr.values()[static_cast<size_t>(ocr_slot)];
  }
  auto pv = y_voc.impl(), po = y_ocr.impl();
  auto pairs = ocr_to_vocab;
  return Tensor(make_node(
      y_voc.shape(), std::move(out), {pv, po},
      [pv, po, pairs](TensorImpl& self) {
        if (pv->requires_grad) {
          auto& g = pv->grad_buf();
          for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (po->requires_grad) {
          auto& g = po->grad_buf();
          for (const auto& [ocr_slot, voc_slot] : pairs)
            g[static_cast<size_t>(ocr_slot)] += self.grad[static_cast<size_t>(voc_slot)];
        }
      },
      "scatter_add_slots"));
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets,
                          const std::vector<double>& weights) {
  if (logits.ndim() != 2) throw DimensionError("cross_entropy_rows: logits must be 2-D");
  const int rows = logits.dim(0), k = logits.dim(1);
  if (static_cast<int>(targets.size()) != rows || static_cast<int>(weights.size()) != rows) {
    throw DimensionError("cross_entropy_rows: one target and weight per row");
  }
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  if (wsum <= 0.0) return Tensor::scalar(0.0);

  const auto& lv = logits.values();
  double loss = 0.0;
  for (int r = 0; r < rows; ++r) {
    if (weights[static_cast<size_t>(r)] == 0.0) continue;
    const int t = targets[static_cast<size_t>(r)];
    if (t < 0 || t >= k) throw ContractError("cross_entropy_rows: target out of range");
    const size_t off = static_cast<size_t>(r) * k;
    double mx = lv[off];
    for (int i = 1; i < k; ++i) mx = std::max(mx, lv[off + i]);
    double z = 0.0;
    for (int i = 0; i < k; ++i) z += std::exp(lv[off + i] - mx);
    loss += weights[static_cast<size_t>(r)] * (std::log(z) + mx - lv[off + t]);
  }
  loss /= wsum;
  auto pl = logits.impl();
  auto tg = targets;
  auto wt = weights;
  return Tensor(make_node(
      {1}, {loss}, {pl},
      [pl, tg, wt, rows, k, wsum](TensorImpl& self) {
        auto& g = pl->grad_buf();
        for (int r = 0; r < rows; ++r) {
          const double w = wt[static_cast<size_t>(r)];
          if (w == 0.0) continue;
          const size_t off = static_cast<size_t>(r) * k;
          double mx = pl->value[off];
          for (int i = 1; i < k; ++i) mx = std::max(mx, pl->value[off + i]);
          double z = 0.0;
          for (int i = 0; i < k; ++i) z += std::exp(pl->value[off + i] - mx);
          const double coef = self.grad[0] * w / wsum;
          for (int i = 0; i < k; ++i) {
            double p = std::exp(pl->value[off + i] - mx) / z;
            g[off + i] += coef * (p - (i == tg[static_cast<size_t>(r)] ? 1.0 : 0.0));
          }
        }
      },
      "cross_entropy_rows"));
}

namespace {

// Fused scaled-dot-product core; projections live in multi_head_attention.
Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v,
                      const std::vector<double>& mask, int heads) {
  const int t_len = q.dim(0), d = q.dim(1);
  const int dh = d / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (mask.size() != static_cast<size_t>(t_len) * t_len) {
    throw DimensionError("attention: mask must be T*T");
  }
  // attn[h][t*T+s], saved for backward
  auto attn = std::make_shared<std::vector<std::vector<double>>>(
      static_cast<size_t>(heads), std::vector<double>(static_cast<size_t>(t_len) * t_len));
  std::vector<double> out(static_cast<size_t>(t_len) * d, 0.0);
  const auto& qv = q.values();
  const auto& kv = k.values();
  const auto& vv = v.values();
  for (int h = 0; h < heads; ++h) {
    auto& a = (*attn)[static_cast<size_t>(h)];
    const int hoff = h * dh;
    for (int ti = 0; ti < t_len; ++ti) {
      // logits row
      double mx = -std::numeric_limits<double>::infinity();
      for (int s = 0; s < t_len; ++s) {
        double acc = 0.0;
        for (int j = 0; j < dh; ++j)
          acc += qv[static_cast<size_t>(ti) * d + hoff + j] * kv[static_cast<size_t>(s) * d + hoff + j];
        acc = acc * inv_scale + mask[static_cast<size_t>(ti) * t_len + s];
        a[static_cast<size_t>(ti) * t_len + s] = acc;
        mx = std::max(mx, acc);
      }
      double z = 0.0;
      for (int s = 0; s < t_len; ++s) {
        double e = std::exp(a[static_cast<size_t>(ti) * t_len + s] - mx);
        a[static_cast<size_t>(ti) * t_len + s] = e;
        z += e;
      }
      for (int s = 0; s < t_len; ++s) {
        a[static_cast<size_t>(ti) * t_len + s] /= z;
        const double w = a[static_cast<size_t>(ti) * t_len + s];
        if (w == 0.0) continue;
        for (int j = 0; j < dh; ++j)
          out[static_cast<size_t>(ti) * d + hoff + j] += w * vv[static_cast<size_t>(s) * d + hoff + j];
      }
    }
  }
  auto pq = q.impl(), pk = k.impl(), pv2 = v.impl();
  return Tensor(make_node(
      q.shape(), std::move(out), {pq, pk, pv2},
      [pq, pk, pv2, attn, heads, t_len, d, dh, inv_scale](TensorImpl& self) {
        for (int h = 0; h < heads; ++h) {
          const auto& a = (*attn)[static_cast<size_t>(h)];
          const int hoff = h * dh;
          for (int ti = 0; ti < t_len; ++ti) {
            // dA, then dS = A .* (dA - sum(dA .* A))
            std::vector<double> da(static_cast<size_t>(t_len), 0.0);
            for (int s = 0; s < t_len; ++s) {
              double acc = 0.0;
              for (int j = 0; j < dh; ++j)
                acc += self.grad[static_cast<size_t>(ti) * d + hoff + j] *
                       pv2->value[static_cast<size_t>(s) * d + hoff + j];
              da[static_cast<size_t>(s)] = acc;
            }
            double dot_da_a = 0.0;
            for (int s = 0; s < t_len; ++s)
              dot_da_a += da[static_cast<size_t>(s)] * a[static_cast<size_t>(ti) * t_len + s];
            for (int s = 0; s < t_len; ++s) {
              const double aw = a[static_cast<size_t>(ti) * t_len + s];
              const double ds = aw * (da[static_cast<size_t>(s)] - dot_da_a);
              if (pq->requires_grad) {
                auto& g = pq->grad_buf();
                for (int j = 0; j < dh; ++j)
                  g[static_cast<size_t>(ti) * d + hoff + j] +=
                      ds * inv_scale * pk->value[static_cast<size_t>(s) * d + hoff + j];
              }
              if (pk->requires_grad) {
                auto& g = pk->grad_buf();
                for (int j = 0; j < dh; ++j)
                  g[static_cast<size_t>(s) * d + hoff + j] +=
                      ds * inv_scale * pq->value[static_cast<size_t>(ti) * d + hoff + j];
              }
              if (pv2->requires_grad && aw != 0.0) {
                auto& g = pv2->grad_buf();
                for (int j = 0; j < dh; ++j)
                  g[static_cast<size_t>(s) * d + hoff + j] +=
                      aw * self.grad[static_cast<size_t>(ti) * d + hoff + j];
              }
            }
          }
        }
      },
      "attention"));
}

}  // namespace

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const std::vector<double>& mask, int heads,
                            const AttentionParams& params) {
  if (q.ndim() != 2 || k.shape() != q.shape() || v.shape() != q.shape()) {
    throw DimensionError("multi_head_attention: q/k/v must share shape [T,d]");
  }
  const int d = q.dim(1);
  if (heads < 1 || d % heads != 0) {
    throw ConfigError("multi_head_attention: d=" + std::to_string(d) +
                      " not divisible by heads=" + std::to_string(heads));
  }
  Tensor qp = linear(q, params.wq, params.bq);
  Tensor kp = linear(k, params.wk, params.bk);
  Tensor vp = linear(v, params.wv, params.bv);
  Tensor core = attention_core(qp, kp, vp, mask, heads);
  return linear(core, params.wo, params.bo);
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward: loss must be a defined scalar tensor");
  }
  if (!loss.requires_grad()) return;  // constant graph, nothing to do

  // Iterative post-order topological sort.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  visited.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorImpl* p = node->parents[idx].get();
      ++idx;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.impl()->grad_buf()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backprop) {
      node->grad_buf();  // make sure grad exists even if never accumulated
      node->backprop(*node);
    }
  }
}

}  // namespace cnmt
