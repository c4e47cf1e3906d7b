#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "rsvp/common.hpp"
#include "rsvp/matrix_file.hpp"

namespace rsvp::ad {

namespace fs = std::filesystem;

// Dense fp64 tensor node in a dynamically built reverse-mode graph. Rank is 1
// or 2; scalars are shape {1}.
struct Node {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily when backward first touches it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;
  std::string name;  // set for parameters

  size_t numel() const {
    size_t n = 1;
    for (int d : shape) n *= size_t(d);
    return n;
  }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

using NodePtr = std::shared_ptr<Node>;

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr n) : n_(std::move(n)) {}

  static Tensor leaf(std::vector<int> shape, std::vector<double> data, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    size_t numel = 1;
    for (int d : shape) numel *= size_t(d);
    if (data.size() != numel) throw InternalError("tensor data does not match shape");
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    size_t numel = 1;
    for (int d : shape) numel *= size_t(d);
    return leaf(std::move(shape), std::vector<double>(numel, 0.0), requires_grad);
  }

  static Tensor scalar(double v) { return leaf({1}, {v}); }

  bool defined() const { return n_ != nullptr; }
  const std::vector<int>& shape() const { return n_->shape; }
  int rank() const { return int(n_->shape.size()); }
  int dim(int i) const { return n_->shape.at(size_t(i)); }
  size_t numel() const { return n_->numel(); }
  bool requires_grad() const { return n_->requires_grad; }

  const std::vector<double>& value() const { return n_->value; }
  std::vector<double>& mutable_value() { return n_->value; }
  const std::vector<double>& grad() const {
    n_->ensure_grad();
    return n_->grad;
  }
  std::vector<double>& mutable_grad() {
    n_->ensure_grad();
    return n_->grad;
  }

  double item() const {
    if (numel() != 1) throw InternalError("item() on tensor with " + std::to_string(numel()) + " elements");
    return n_->value[0];
  }

  const NodePtr& node() const { return n_; }

 private:
  NodePtr n_;
};

using ParamMap = std::map<std::string, Tensor>;

namespace detail {

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw InternalError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
}

inline NodePtr fresh(std::vector<int> shape, const std::vector<Tensor>& inputs) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value.assign(n->numel(), 0.0);
  for (const auto& t : inputs) {
    n->inputs.push_back(t.node());
    if (t.requires_grad()) n->requires_grad = true;
  }
  return n;
}

inline void debug_check_finite(const Node& n, const char* op) {
#ifndef NDEBUG
  for (double v : n.value)
    if (!std::isfinite(v)) throw InternalError(std::string("non-finite value out of op ") + op);
#else
  (void)n;
  (void)op;
#endif
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and shape ops

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  auto n = detail::fresh(a.shape(), {a, b});
  for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.value()[i] + b.value()[i];
  auto an = a.node(), bn = b.node();
  n->backward_fn = [an, bn](Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
    }
  };
  detail::debug_check_finite(*n, "add");
  return Tensor(n);
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  auto n = detail::fresh(a.shape(), {a, b});
  for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.value()[i] - b.value()[i];
  auto an = a.node(), bn = b.node();
  n->backward_fn = [an, bn](Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
    }
  };
  return Tensor(n);
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  auto n = detail::fresh(a.shape(), {a, b});
  for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.value()[i] * b.value()[i];
  auto an = a.node(), bn = b.node();
  n->backward_fn = [an, bn](Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->value[i];
    }
  };
  detail::debug_check_finite(*n, "mul");
  return Tensor(n);
}

inline Tensor scale(const Tensor& a, double c) {
  auto n = detail::fresh(a.shape(), {a});
  for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.value()[i] * c;
  auto an = a.node();
  n->backward_fn = [an, c](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * c;
  };
  return Tensor(n);
}

inline Tensor reshape(const Tensor& a, std::vector<int> shape) {
  size_t numel = 1;
  for (int d : shape) numel *= size_t(d);
  if (numel != a.numel())
    throw InternalError("reshape: element count mismatch " + detail::shape_str(a.shape()) + " -> " +
                        detail::shape_str(shape));
  auto n = detail::fresh(std::move(shape), {a});
  n->value = a.value();
  auto an = a.node();
  n->backward_fn = [an](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
  };
  return Tensor(n);
}

// Broadcast a row vector over every row of a matrix.
inline Tensor add_rowvec(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 1 || a.dim(1) != b.dim(0))
    throw InternalError("add_rowvec: shapes " + detail::shape_str(a.shape()) + " and " +
                        detail::shape_str(b.shape()));
  int rows = a.dim(0), cols = a.dim(1);
  auto n = detail::fresh(a.shape(), {a, b});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      n->value[size_t(r * cols + c)] = a.value()[size_t(r * cols + c)] + b.value()[size_t(c)];
  auto an = a.node(), bn = b.node();
  n->backward_fn = [an, bn, rows, cols](Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) bn->grad[size_t(c)] += self.grad[size_t(r * cols + c)];
    }
  };
  return Tensor(n);
}

// ---------------------------------------------------------------------------
// Matrix products

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw InternalError("matmul: shapes " + detail::shape_str(a.shape()) + " and " +
                        detail::shape_str(b.shape()));
  int n_ = a.dim(0), k_ = a.dim(1), m_ = b.dim(1);
  auto out = detail::fresh({n_, m_}, {a, b});
  const auto& av = a.value();
  const auto& bv = b.value();
  for (int i = 0; i < n_; ++i)
    for (int k = 0; k < k_; ++k) {
      double aik = av[size_t(i * k_ + k)];
      if (aik == 0.0) continue;
      for (int j = 0; j < m_; ++j) out->value[size_t(i * m_ + j)] += aik * bv[size_t(k * m_ + j)];
    }
  auto an = a.node(), bn = b.node();
  out->backward_fn = [an, bn, n_, k_, m_](Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (int i = 0; i < n_; ++i)
        for (int j = 0; j < m_; ++j) {
          double g = self.grad[size_t(i * m_ + j)];
          if (g == 0.0) continue;
          for (int k = 0; k < k_; ++k) an->grad[size_t(i * k_ + k)] += g * bn->value[size_t(k * m_ + j)];
        }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int i = 0; i < n_; ++i)
        for (int k = 0; k < k_; ++k) {
          double a_ik = an->value[size_t(i * k_ + k)];
          if (a_ik == 0.0) continue;
          for (int j = 0; j < m_; ++j) bn->grad[size_t(k * m_ + j)] += a_ik * self.grad[size_t(i * m_ + j)];
        }
    }
  };
  detail::debug_check_finite(*out, "matmul");
  return Tensor(out);
}

// a [n,k] times b-transposed where b is [m,k]; result [n,m].
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw InternalError("matmul_nt: shapes " + detail::shape_str(a.shape()) + " and " +
                        detail::shape_str(b.shape()));
  int n_ = a.dim(0), k_ = a.dim(1), m_ = b.dim(0);
  auto out = detail::fresh({n_, m_}, {a, b});
  for (int i = 0; i < n_; ++i)
    for (int j = 0; j < m_; ++j) {
      double acc = 0;
      for (int k = 0; k < k_; ++k) acc += a.value()[size_t(i * k_ + k)] * b.value()[size_t(j * k_ + k)];
      out->value[size_t(i * m_ + j)] = acc;
    }
  auto an = a.node(), bn = b.node();
  out->backward_fn = [an, bn, n_, k_, m_](Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (int i = 0; i < n_; ++i)
        for (int j = 0; j < m_; ++j) {
          double g = self.grad[size_t(i * m_ + j)];
          if (g == 0.0) continue;
          for (int k = 0; k < k_; ++k) an->grad[size_t(i * k_ + k)] += g * bn->value[size_t(j * k_ + k)];
        }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int i = 0; i < n_; ++i)
        for (int j = 0; j < m_; ++j) {
          double g = self.grad[size_t(i * m_ + j)];
          if (g == 0.0) continue;
          for (int k = 0; k < k_; ++k) bn->grad[size_t(j * k_ + k)] += g * an->value[size_t(i * k_ + k)];
        }
    }
  };
  return Tensor(out);
}

// y = x W^T + b with W stored [out, in], the usual linear-layer convention.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowvec(matmul_nt(x, w), b);
}

// ---------------------------------------------------------------------------
// Slicing, gathering, concatenation

inline Tensor slice_cols(const Tensor& a, int c0, int c1) {
  if (a.rank() != 2 || c0 < 0 || c1 > a.dim(1) || c0 >= c1)
    throw InternalError("slice_cols: bad range on " + detail::shape_str(a.shape()));
  int rows = a.dim(0), cols = a.dim(1), width = c1 - c0;
  auto n = detail::fresh({rows, width}, {a});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < width; ++c)
      n->value[size_t(r * width + c)] = a.value()[size_t(r * cols + c0 + c)];
  auto an = a.node();
  n->backward_fn = [an, rows, cols, width, c0](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < width; ++c) an->grad[size_t(r * cols + c0 + c)] += self.grad[size_t(r * width + c)];
  };
  return Tensor(n);
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw InternalError("concat_cols: no inputs");
  int rows = parts.front().dim(0), cols = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows) throw InternalError("concat_cols: row mismatch");
    cols += p.dim(1);
  }
  auto n = detail::fresh({rows, cols}, parts);
  int off = 0;
  for (const auto& p : parts) {
    int w = p.dim(1);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < w; ++c) n->value[size_t(r * cols + off + c)] = p.value()[size_t(r * w + c)];
    off += w;
  }
  std::vector<NodePtr> ins;
  for (const auto& p : parts) ins.push_back(p.node());
  n->backward_fn = [ins, rows, cols](Node& self) {
    int off2 = 0;
    for (const auto& in : ins) {
      int w = in->shape[1];
      if (in->requires_grad) {
        in->ensure_grad();
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < w; ++c) in->grad[size_t(r * w + c)] += self.grad[size_t(r * cols + off2 + c)];
      }
      off2 += w;
    }
  };
  return Tensor(n);
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw InternalError("concat_rows: no inputs");
  int cols = parts.front().dim(1), rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(1) != cols) throw InternalError("concat_rows: column mismatch");
    rows += p.dim(0);
  }
  auto n = detail::fresh({rows, cols}, parts);
  int off = 0;
  for (const auto& p : parts) {
    for (size_t i = 0; i < p.numel(); ++i) n->value[size_t(off) * size_t(cols) + i] = p.value()[i];
    off += p.dim(0);
  }
  std::vector<NodePtr> ins;
  for (const auto& p : parts) ins.push_back(p.node());
  n->backward_fn = [ins, cols](Node& self) {
    int off2 = 0;
    for (const auto& in : ins) {
      if (in->requires_grad) {
        in->ensure_grad();
        for (size_t i = 0; i < in->grad.size(); ++i) in->grad[i] += self.grad[size_t(off2) * size_t(cols) + i];
      }
      off2 += in->shape[0];
    }
  };
  return Tensor(n);
}

inline Tensor gather_rows(const Tensor& a, const std::vector<int>& indices) {
  if (a.rank() != 2) throw InternalError("gather_rows: rank-2 input required");
  int cols = a.dim(1);
  auto n = detail::fresh({int(indices.size()), cols}, {a});
  for (size_t r = 0; r < indices.size(); ++r) {
    int src = indices[r];
    if (src < 0 || src >= a.dim(0)) throw InternalError("gather_rows: index out of range");
    for (int c = 0; c < cols; ++c) n->value[r * size_t(cols) + size_t(c)] = a.value()[size_t(src * cols + c)];
  }
  auto an = a.node();
  auto idx = indices;
  n->backward_fn = [an, idx, cols](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t r = 0; r < idx.size(); ++r)
      for (int c = 0; c < cols; ++c)
        an->grad[size_t(idx[r] * cols + c)] += self.grad[r * size_t(cols) + size_t(c)];
  };
  return Tensor(n);
}

inline Tensor row(const Tensor& a, int r) { return gather_rows(a, {r}); }

// ---------------------------------------------------------------------------
// Reductions

inline Tensor mean_rows(const Tensor& a) {
  if (a.rank() != 2) throw InternalError("mean_rows: rank-2 input required");
  int rows = a.dim(0), cols = a.dim(1);
  auto n = detail::fresh({cols}, {a});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) n->value[size_t(c)] += a.value()[size_t(r * cols + c)];
  for (int c = 0; c < cols; ++c) n->value[size_t(c)] /= double(rows);
  auto an = a.node();
  n->backward_fn = [an, rows, cols](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) an->grad[size_t(r * cols + c)] += self.grad[size_t(c)] / double(rows);
  };
  return Tensor(n);
}

inline Tensor sum_all(const Tensor& a) {
  auto n = detail::fresh({1}, {a});
  for (double v : a.value()) n->value[0] += v;
  auto an = a.node();
  n->backward_fn = [an](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += self.grad[0];
  };
  return Tensor(n);
}

// ---------------------------------------------------------------------------
// Nonlinearities

namespace detail {

template <class Fwd, class Bwd>
inline Tensor pointwise(const Tensor& a, Fwd fwd, Bwd bwd_from_xy, const char* opname) {
  auto n = fresh(a.shape(), {a});
  for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = fwd(a.value()[i]);
  auto an = a.node();
  n->backward_fn = [an, bwd_from_xy](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      an->grad[i] += self.grad[i] * bwd_from_xy(an->value[i], self.value[i]);
  };
  debug_check_finite(*n, opname);
  return Tensor(n);
}

}  // namespace detail

inline Tensor tanh_t(const Tensor& a) {
  return detail::pointwise(a, [](double x) { return std::tanh(x); },
                           [](double, double y) { return 1.0 - y * y; }, "tanh");
}

inline Tensor sigmoid_t(const Tensor& a) {
  return detail::pointwise(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                           [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

inline Tensor relu_t(const Tensor& a) {
  return detail::pointwise(a, [](double x) { return x > 0 ? x : 0.0; },
                           [](double x, double) { return x > 0 ? 1.0 : 0.0; }, "relu");
}

inline Tensor gelu_t(const Tensor& a) {
  return detail::pointwise(a, [](double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); },
                           [](double x, double) {
                             double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
                             double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
                             return cdf + x * pdf;
                           },
                           "gelu");
}

// ---------------------------------------------------------------------------
// Softmax and friends

inline Tensor softmax_rows(const Tensor& a) {
  if (a.rank() != 2) throw InternalError("softmax_rows: rank-2 input required");
  int rows = a.dim(0), cols = a.dim(1);
  auto n = detail::fresh(a.shape(), {a});
  for (int r = 0; r < rows; ++r) {
    double mx = a.value()[size_t(r * cols)];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, a.value()[size_t(r * cols + c)]);
    double sum = 0;
    for (int c = 0; c < cols; ++c) {
      double e = std::exp(a.value()[size_t(r * cols + c)] - mx);
      n->value[size_t(r * cols + c)] = e;
      sum += e;
    }
    for (int c = 0; c < cols; ++c) n->value[size_t(r * cols + c)] /= sum;
  }
  auto an = a.node();
  n->backward_fn = [an, rows, cols](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (int r = 0; r < rows; ++r) {
      double dot = 0;
      for (int c = 0; c < cols; ++c)
        dot += self.grad[size_t(r * cols + c)] * self.value[size_t(r * cols + c)];
      for (int c = 0; c < cols; ++c) {
        size_t i = size_t(r * cols + c);
        an->grad[i] += self.value[i] * (self.grad[i] - dot);
      }
    }
  };
  return Tensor(n);
}

using BoolMask = std::vector<std::vector<char>>;

// Softmax over the in-mask entries of each row; out-of-mask outputs are
// exactly 0 and receive exactly zero gradient.
inline Tensor masked_softmax_rows(const Tensor& a, const BoolMask& mask) {
  if (a.rank() != 2) throw InternalError("masked_softmax_rows: rank-2 input required");
  int rows = a.dim(0), cols = a.dim(1);
  if (int(mask.size()) != rows || int(mask.front().size()) != cols)
    throw InternalError("masked_softmax_rows: mask shape mismatch");
  auto n = detail::fresh(a.shape(), {a});
  for (int r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < cols; ++c)
      if (mask[size_t(r)][size_t(c)]) mx = std::max(mx, a.value()[size_t(r * cols + c)]);
    if (mx == -std::numeric_limits<double>::infinity())
      throw InternalError("masked_softmax_rows: row " + std::to_string(r) + " has no unmasked entry");
    double sum = 0;
    for (int c = 0; c < cols; ++c) {
      if (!mask[size_t(r)][size_t(c)]) continue;
      double e = std::exp(a.value()[size_t(r * cols + c)] - mx);
      n->value[size_t(r * cols + c)] = e;
      sum += e;
    }
    for (int c = 0; c < cols; ++c)
      if (mask[size_t(r)][size_t(c)]) n->value[size_t(r * cols + c)] /= sum;
  }
  auto an = a.node();
  auto m = mask;
  n->backward_fn = [an, m, rows, cols](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (int r = 0; r < rows; ++r) {
      double dot = 0;
      for (int c = 0; c < cols; ++c)
        if (m[size_t(r)][size_t(c)])
          dot += self.grad[size_t(r * cols + c)] * self.value[size_t(r * cols + c)];
      for (int c = 0; c < cols; ++c) {
        if (!m[size_t(r)][size_t(c)]) continue;
        size_t i = size_t(r * cols + c);
        an->grad[i] += self.value[i] * (self.grad[i] - dot);
      }
    }
  };
  return Tensor(n);
}

// ---------------------------------------------------------------------------
// Layer normalization over the last axis, with gain and bias.

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  if (x.rank() != 2) throw InternalError("layer_norm: rank-2 input required");
  int rows = x.dim(0), cols = x.dim(1);
  if (gain.rank() != 1 || gain.dim(0) != cols || bias.rank() != 1 || bias.dim(0) != cols)
    throw InternalError("layer_norm: gain/bias must be [" + std::to_string(cols) + "]");
  auto n = detail::fresh(x.shape(), {x, gain, bias});
  std::vector<double> inv_std(static_cast<size_t>(rows));
  std::vector<double> xhat(size_t(rows) * size_t(cols));
  for (int r = 0; r < rows; ++r) {
    double mean = 0;
    for (int c = 0; c < cols; ++c) mean += x.value()[size_t(r * cols + c)];
    mean /= double(cols);
    double var = 0;
    for (int c = 0; c < cols; ++c) {
      double d = x.value()[size_t(r * cols + c)] - mean;
      var += d * d;
    }
    var /= double(cols);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[size_t(r)] = is;
    for (int c = 0; c < cols; ++c) {
      double xh = (x.value()[size_t(r * cols + c)] - mean) * is;
      xhat[size_t(r * cols + c)] = xh;
      n->value[size_t(r * cols + c)] = gain.value()[size_t(c)] * xh + bias.value()[size_t(c)];
    }
  }
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  n->backward_fn = [xn, gn, bn, rows, cols, inv_std, xhat](Node& self) {
    for (int r = 0; r < rows; ++r) {
      double sum_g = 0, sum_gx = 0;
      for (int c = 0; c < cols; ++c) {
        size_t i = size_t(r * cols + c);
        double gg = self.grad[i] * gn->value[size_t(c)];
        sum_g += gg;
        sum_gx += gg * xhat[i];
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        for (int c = 0; c < cols; ++c) {
          size_t i = size_t(r * cols + c);
          double gg = self.grad[i] * gn->value[size_t(c)];
          xn->grad[i] += inv_std[size_t(r)] *
                         (gg - sum_g / double(cols) - xhat[i] * sum_gx / double(cols));
        }
      }
      if (gn->requires_grad) {
        gn->ensure_grad();
        for (int c = 0; c < cols; ++c)
          gn->grad[size_t(c)] += self.grad[size_t(r * cols + c)] * xhat[size_t(r * cols + c)];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int c = 0; c < cols; ++c) bn->grad[size_t(c)] += self.grad[size_t(r * cols + c)];
      }
    }
  };
  return Tensor(n);
}

// ---------------------------------------------------------------------------
// Embedding lookup and dropout

inline Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  return gather_rows(table, ids);
}

inline Tensor dropout(const Tensor& a, double p, bool train, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must be in [0, 1)");
  if (!train || p == 0.0) return a;
  auto n = detail::fresh(a.shape(), {a});
  std::vector<double> keep(a.numel());
  double inv = 1.0 / (1.0 - p);
  for (size_t i = 0; i < keep.size(); ++i) keep[i] = rng.next_double() >= p ? inv : 0.0;
  for (size_t i = 0; i < keep.size(); ++i) n->value[i] = a.value()[i] * keep[i];
  auto an = a.node();
  n->backward_fn = [an, keep](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * keep[i];
  };
  return Tensor(n);
}

// ---------------------------------------------------------------------------
// Cross entropy: mean over rows whose gold index is >= 0. Fused with softmax
// for a numerically stable (p - onehot) gradient.

inline Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& gold) {
  if (logits.rank() != 2) throw InternalError("cross_entropy_rows: rank-2 logits required");
  int rows = logits.dim(0), cols = logits.dim(1);
  if (int(gold.size()) != rows) throw InternalError("cross_entropy_rows: gold length mismatch");
  int active = 0;
  for (int g : gold) {
    if (g >= cols) throw InternalError("cross_entropy_rows: gold index out of range");
    if (g >= 0) ++active;
  }
  auto n = detail::fresh({1}, {logits});
  if (active == 0) return Tensor(n);  // constant zero, nothing to differentiate

  std::vector<double> probs(size_t(rows) * size_t(cols), 0.0);
  double loss = 0;
  for (int r = 0; r < rows; ++r) {
    if (gold[size_t(r)] < 0) continue;
    double mx = logits.value()[size_t(r * cols)];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, logits.value()[size_t(r * cols + c)]);
    double sum = 0;
    for (int c = 0; c < cols; ++c) {
      double e = std::exp(logits.value()[size_t(r * cols + c)] - mx);
      probs[size_t(r * cols + c)] = e;
      sum += e;
    }
    for (int c = 0; c < cols; ++c) probs[size_t(r * cols + c)] /= sum;
    loss -= std::log(std::max(probs[size_t(r * cols + gold[size_t(r)])], 1e-300));
  }
  n->value[0] = loss / double(active);
  auto ln = logits.node();
  auto g = gold;
  n->backward_fn = [ln, g, probs, rows, cols, active](Node& self) {
    if (!ln->requires_grad) return;
    ln->ensure_grad();
    double s = self.grad[0] / double(active);
    for (int r = 0; r < rows; ++r) {
      if (g[size_t(r)] < 0) continue;
      for (int c = 0; c < cols; ++c) {
        double p = probs[size_t(r * cols + c)];
        double onehot = (c == g[size_t(r)]) ? 1.0 : 0.0;
        ln->grad[size_t(r * cols + c)] += s * (p - onehot);
      }
    }
  };
  return Tensor(n);
}

// ---------------------------------------------------------------------------
// Backward pass

inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw InternalError("backward: loss must be scalar");
  // Iterative post-order topological sort.
  std::vector<Node*> order;
  std::vector<std::pair<Node*, size_t>> stack{{loss.node().get(), 0}};
  std::map<Node*, int> state;  // 0 unseen, 1 in progress, 2 done
  while (!stack.empty()) {
    auto& [node, child] = stack.back();
    if (state[node] == 2) {
      stack.pop_back();
      continue;
    }
    state[node] = 1;
    if (child < node->inputs.size()) {
      Node* next = node->inputs[child].get();
      ++child;
      if (state[next] == 0) stack.push_back({next, 0});
    } else {
      state[node] = 2;
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->requires_grad) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

inline void zero_grad(ParamMap& params) {
  for (auto& [name, t] : params) {
    t.node()->grad.assign(t.numel(), 0.0);
  }
}

// ---------------------------------------------------------------------------
// Sliding-window multi-head attention

struct MhaParams {
  Tensor wq, wk, wv, wo;  // [d, d]
  Tensor bq, bk, bv, bo;  // [d]
};

// Band mask: position i may attend to j iff |i - j| <= window / 2. Positions
// listed in `global_positions` attend to and are attended by every token
// (extension point, off by default).
inline BoolMask band_mask(int seq, int window, const std::vector<int>& global_positions = {}) {
  if (window < 2 || window % 2 != 0) throw ConfigError("attention window must be an even integer >= 2");
  int half = window / 2;
  BoolMask mask(size_t(seq), std::vector<char>(size_t(seq), 0));
  for (int i = 0; i < seq; ++i)
    for (int j = std::max(0, i - half); j <= std::min(seq - 1, i + half); ++j) mask[size_t(i)][size_t(j)] = 1;
  for (int g : global_positions) {
    if (g < 0 || g >= seq) throw InternalError("global attention position out of range");
    for (int j = 0; j < seq; ++j) {
      mask[size_t(g)][size_t(j)] = 1;
      mask[size_t(j)][size_t(g)] = 1;
    }
  }
  return mask;
}

inline Tensor sliding_window_mha(const Tensor& x, int window, int heads, const MhaParams& p,
                                 const std::vector<int>& global_positions = {}) {
  if (x.rank() != 2) throw InternalError("sliding_window_mha: rank-2 input required");
  int seq = x.dim(0), d = x.dim(1);
  if (heads < 1 || d % heads != 0)
    throw ConfigError("sliding_window_mha: hidden size " + std::to_string(d) +
                      " not divisible by heads " + std::to_string(heads));
  int dh = d / heads;
  BoolMask mask = band_mask(seq, window, global_positions);

  Tensor q = linear(x, p.wq, p.bq);
  Tensor k = linear(x, p.wk, p.bk);
  Tensor v = linear(x, p.wv, p.bv);

  std::vector<Tensor> head_outputs;
  double inv_sqrt = 1.0 / std::sqrt(double(dh));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt);
    Tensor attn = masked_softmax_rows(scores, mask);
    head_outputs.push_back(matmul(attn, vh));
  }
  Tensor merged = heads == 1 ? head_outputs.front() : concat_cols(head_outputs);
  return linear(merged, p.wo, p.bo);
}

// ---------------------------------------------------------------------------
// Adam with bias correction

struct AdamState {
  std::map<std::string, std::vector<double>> m, v;
  long step = 0;
};

inline void adam_step(ParamMap& params, AdamState& state, double lr, double beta1 = 0.9,
                      double beta2 = 0.999, double eps = 1e-8) {
  ++state.step;
  double bc1 = 1.0 - std::pow(beta1, double(state.step));
  double bc2 = 1.0 - std::pow(beta2, double(state.step));
  for (auto& [name, t] : params) {
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != t.numel()) m.assign(t.numel(), 0.0);
    if (v.size() != t.numel()) v.assign(t.numel(), 0.0);
    const auto& g = t.grad();
    auto& w = t.mutable_value();
    for (size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

// Global-norm gradient clipping across every parameter.
inline double clip_grad_norm(ParamMap& params, double max_norm) {
  double total = 0;
  for (auto& [name, t] : params)
    for (double g : t.grad()) total += g * g;
  total = std::sqrt(total);
  if (total > max_norm && total > 0) {
    double s = max_norm / total;
    for (auto& [name, t] : params)
      for (double& g : t.mutable_grad()) g *= s;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Initialization

inline Tensor xavier_uniform(std::vector<int> shape, Rng& rng, const std::string& name = "") {
  size_t numel = 1;
  for (int d : shape) numel *= size_t(d);
  int fan_in = shape.size() == 2 ? shape[1] : shape[0];
  int fan_out = shape[0];
  double a = std::sqrt(6.0 / double(fan_in + fan_out));
  std::vector<double> data(numel);
  for (double& v : data) v = rng.uniform(-a, a);
  Tensor t = Tensor::leaf(std::move(shape), std::move(data), true);
  t.node()->name = name;
  return t;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "TAD1", name-indexed tensors, little-endian fp64.

inline constexpr const char* kCheckpointMagic = "TAD1";

inline void save_checkpoint(const fs::path& path, const ParamMap& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint: " + path.string());
  out.write(kCheckpointMagic, 4);
  io::detail::put_u32(out, uint32_t(params.size()));
  for (const auto& [name, t] : params) {
    io::detail::put_u32(out, uint32_t(name.size()));
    out.write(name.data(), std::streamsize(name.size()));
    io::detail::put_u32(out, uint32_t(t.shape().size()));
    for (int d : t.shape()) io::detail::put_u64(out, uint64_t(d));
    for (double v : t.value()) io::detail::put_f64(out, v);
  }
}

inline ParamMap load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != kCheckpointMagic)
    throw IngestError("checkpoint " + path.string() + " lacks TAD1 magic");
  uint32_t count = io::detail::get_u32(in);
  ParamMap params;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = io::detail::get_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    uint32_t rank = io::detail::get_u32(in);
    std::vector<int> shape(rank);
    size_t numel = 1;
    for (auto& d : shape) {
      d = int(io::detail::get_u64(in));
      numel *= size_t(d);
    }
    std::vector<double> data(numel);
    for (auto& v : data) v = io::detail::get_f64(in);
    Tensor t = Tensor::leaf(std::move(shape), std::move(data), true);
    t.node()->name = name;
    params[name] = t;
  }
  if (!in) throw IngestError("checkpoint " + path.string() + " truncated");
  return params;
}

}  // namespace rsvp::ad
