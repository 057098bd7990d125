#include "mcgaze/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace mcgaze::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

MapMat as_mat(Tensor& t, int rows, int cols) { return MapMat(t.data(), rows, cols); }
CMapMat as_mat(const Tensor& t, int rows, int cols) { return CMapMat(t.data(), rows, cols); }
MapMat as_mat(double* p, int rows, int cols) { return MapMat(p, rows, cols); }
CMapMat as_mat(const double* p, int rows, int cols) { return CMapMat(p, rows, cols); }

void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

// Builds the output node. `fn` is only attached when some parent needs grads.
Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.ptr());
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

template <typename F, typename D>
Var unary(const Var& a, F f, D dfdx) {
  Tensor out(a.shape());
  const auto& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  Node* pa = a.node();
  return make(std::move(out), {a}, [pa, dfdx](Node& self) {
    if (!pa->requires_grad) return;
    auto& g = pa->ensure_grad();
    const auto& x = pa->value;
    for (std::size_t i = 0; i < x.size(); ++i) g[i] += self.grad[i] * dfdx(x[i], self.value[i]);
  });
}

}  // namespace

Var custom(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  return make(std::move(value), std::move(parents), std::move(backward_fn));
}

Tensor& Node::ensure_grad() {
  if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor(value.shape());
  return grad;
}

double Var::item() const {
  if (size() != 1) throw std::logic_error("item() on non-scalar of shape " + shape_str(shape()));
  return value()[0];
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

void backward(const Var& root) {
  if (root.size() != 1) throw std::logic_error("backward() requires a scalar root");
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// elementwise binary

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  Node* pa = a.node();
  Node* pb = b.node();
  return make(std::move(out), {a, b}, [pa, pb](Node& self) {
    for (Node* p : {pa, pb}) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  Node* pa = a.node();
  Node* pb = b.node();
  return make(std::move(out), {a, b}, [pa, pb](Node& self) {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  Node* pa = a.node();
  Node* pb = b.node();
  return make(std::move(out), {a, b}, [pa, pb](Node& self) {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  require_same_shape(a, b, "div");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] / b.value()[i];
  Node* pa = a.node();
  Node* pb = b.node();
  return make(std::move(out), {a, b}, [pa, pb](Node& self) {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / pb->value[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.value[i] / pb->value[i];
    }
  });
}

namespace {
Var select_binary(const Var& a, const Var& b, bool take_min) {
  require_same_shape(a, b, take_min ? "minimum" : "maximum");
  Tensor out(a.shape());
  std::vector<char> from_a(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.value()[i];
    const double y = b.value()[i];
    from_a[i] = take_min ? (x <= y) : (x >= y);
    out[i] = from_a[i] ? x : y;
  }
  Node* pa = a.node();
  Node* pb = b.node();
  return make(std::move(out), {a, b}, [pa, pb, from_a = std::move(from_a)](Node& self) {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (from_a[i]) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!from_a[i]) g[i] += self.grad[i];
    }
  });
}
}  // namespace

Var minimum(const Var& a, const Var& b) { return select_binary(a, b, true); }
Var maximum(const Var& a, const Var& b) { return select_binary(a, b, false); }

// ---------------------------------------------------------------------------
// elementwise unary

Var neg(const Var& a) {
  return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sqrt(const Var& a) {
  return unary(a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

Var abs(const Var& a) {
  return unary(a, [](double x) { return std::fabs(x); },
               [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var acos(const Var& a) {
  return unary(a, [](double x) { return std::acos(x); },
               [](double x, double) { return -1.0 / std::sqrt(1.0 - x * x); });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var pow_scalar(const Var& a, double p) {
  return unary(a, [p](double x) { return std::pow(x, p); },
               [p](double x, double) { return p == 0.0 ? 0.0 : p * std::pow(x, p - 1.0); });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var mul_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
               [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var mul_const(const Var& a, const Tensor& c) {
  require(a.size() == c.size(), "mul_const: size mismatch");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * c[i];
  Node* pa = a.node();
  return make(std::move(out), {a}, [pa, c](Node& self) {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c[i];
  });
}

// ---------------------------------------------------------------------------
// reductions

Var sum(const Var& a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  Node* pa = a.node();
  return make(Tensor::scalar(s), {a}, [pa](Node& self) {
    auto& g = pa->ensure_grad();
    const double d = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += d;
  });
}

Var row_sum(const Var& a) {
  require(a.value().rank() == 2, "row_sum: expects rank 2");
  const int m = a.dim(0);
  const int n = a.dim(1);
  Tensor out({m});
  for (int r = 0; r < m; ++r) {
    double s = 0.0;
    for (int c = 0; c < n; ++c) s += a.value().at(r, c);
    out[r] = s;
  }
  Node* pa = a.node();
  return make(std::move(out), {a}, [pa, m, n](Node& self) {
    auto& g = pa->ensure_grad();
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < n; ++c) g.at(r, c) += self.grad[r];
  });
}

Var mul_rows(const Var& x, const Var& v) {
  require(x.value().rank() == 2 && v.size() == static_cast<std::size_t>(x.dim(0)),
          "mul_rows: expects [m,n] and [m]");
  const int m = x.dim(0);
  const int n = x.dim(1);
  Tensor out({m, n});
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) out.at(r, c) = x.value().at(r, c) * v.value()[r];
  Node* px = x.node();
  Node* pv = v.node();
  return make(std::move(out), {x, v}, [px, pv, m, n](Node& self) {
    if (px->requires_grad) {
      auto& g = px->ensure_grad();
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c) g.at(r, c) += self.grad.at(r, c) * pv->value[r];
    }
    if (pv->requires_grad) {
      auto& g = pv->ensure_grad();
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c) g[r] += self.grad.at(r, c) * px->value.at(r, c);
    }
  });
}

// ---------------------------------------------------------------------------
// shape

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  Node* pa = a.node();
  return make(std::move(out), {a}, [pa](Node& self) {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var slice_rows(const Var& a, int begin, int end) {
  require(a.value().rank() >= 1 && begin >= 0 && begin <= end && end <= a.dim(0),
          "slice_rows: bad range");
  const std::size_t row = a.size() / static_cast<std::size_t>(std::max(1, a.dim(0)));
  Shape shape = a.shape();
  shape[0] = end - begin;
  Tensor out(shape);
  std::copy_n(a.value().data() + begin * row, (end - begin) * row, out.data());
  Node* pa = a.node();
  return make(std::move(out), {a}, [pa, begin, row](Node& self) {
    auto& g = pa->ensure_grad();
    double* dst = g.data() + begin * row;
    for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += self.grad[i];
  });
}

Var gather_rows(const Var& a, const std::vector<int>& rows) {
  require(a.value().rank() >= 1, "gather_rows: rank 0");
  const int m = a.dim(0);
  const std::size_t row = m ? a.size() / m : 0;
  Shape shape = a.shape();
  shape[0] = static_cast<int>(rows.size());
  Tensor out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < m, "gather_rows: index out of range");
    std::copy_n(a.value().data() + rows[i] * row, row, out.data() + i * row);
  }
  Node* pa = a.node();
  return make(std::move(out), {a}, [pa, rows, row](Node& self) {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double* dst = g.data() + rows[i] * row;
      const double* src = self.grad.data() + i * row;
      for (std::size_t j = 0; j < row; ++j) dst[j] += src[j];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  Shape shape = parts[0].shape();
  int rows = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    require(s.size() == shape.size(), "concat_rows: rank mismatch");
    for (std::size_t d = 1; d < s.size(); ++d) require(s[d] == shape[d], "concat_rows: shape mismatch");
    rows += s[0];
  }
  shape[0] = rows;
  Tensor out(shape);
  std::vector<Node*> nodes;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().data(), p.size(), out.data() + off);
    nodes.push_back(p.node());
    offsets.push_back(off);
    off += p.size();
  }
  return make(std::move(out), parts, [nodes, offsets](Node& self) {
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (!nodes[k]->requires_grad) continue;
      auto& g = nodes[k]->ensure_grad();
      const double* src = self.grad.data() + offsets[k];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
    }
  });
}

Var slice_cols(const Var& a, int begin, int end) {
  require(a.value().rank() == 2 && begin >= 0 && begin <= end && end <= a.dim(1),
          "slice_cols: bad range");
  const int m = a.dim(0);
  const int n = a.dim(1);
  const int w = end - begin;
  Tensor out({m, w});
  for (int r = 0; r < m; ++r) std::copy_n(a.value().data() + r * n + begin, w, out.data() + r * w);
  Node* pa = a.node();
  return make(std::move(out), {a}, [pa, m, n, w, begin](Node& self) {
    auto& g = pa->ensure_grad();
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < w; ++c) g[r * n + begin + c] += self.grad[r * w + c];
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const int m = parts[0].dim(0);
  int n = 0;
  std::vector<int> widths;
  std::vector<Node*> nodes;
  for (const auto& p : parts) {
    require(p.value().rank() == 2 && p.dim(0) == m, "concat_cols: expects [m,ni]");
    widths.push_back(p.dim(1));
    nodes.push_back(p.node());
    n += p.dim(1);
  }
  Tensor out({m, n});
  int off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (int r = 0; r < m; ++r)
      std::copy_n(parts[k].value().data() + r * widths[k], widths[k], out.data() + r * n + off);
    off += widths[k];
  }
  return make(std::move(out), parts, [nodes, widths, m, n](Node& self) {
    int off = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (nodes[k]->requires_grad) {
        auto& g = nodes[k]->ensure_grad();
        for (int r = 0; r < m; ++r)
          for (int c = 0; c < widths[k]; ++c) g[r * widths[k] + c] += self.grad[r * n + off + c];
      }
      off += widths[k];
    }
  });
}

Var column(const Var& a, int j) {
  require(a.value().rank() == 2 && j >= 0 && j < a.dim(1), "column: bad index");
  const int m = a.dim(0);
  const int n = a.dim(1);
  Tensor out({m});
  for (int r = 0; r < m; ++r) out[r] = a.value().at(r, j);
  Node* pa = a.node();
  return make(std::move(out), {a}, [pa, m, n, j](Node& self) {
    auto& g = pa->ensure_grad();
    for (int r = 0; r < m; ++r) g[r * n + j] += self.grad[r];
  });
}

Var stack_cols(const std::vector<Var>& cols) {
  require(!cols.empty(), "stack_cols: no inputs");
  const int m = static_cast<int>(cols[0].size());
  const int k = static_cast<int>(cols.size());
  Tensor out({m, k});
  std::vector<Node*> nodes;
  for (int c = 0; c < k; ++c) {
    require(cols[c].size() == static_cast<std::size_t>(m), "stack_cols: length mismatch");
    for (int r = 0; r < m; ++r) out.at(r, c) = cols[c].value()[r];
    nodes.push_back(cols[c].node());
  }
  return make(std::move(out), cols, [nodes, m, k](Node& self) {
    for (int c = 0; c < k; ++c) {
      if (!nodes[c]->requires_grad) continue;
      auto& g = nodes[c]->ensure_grad();
      for (int r = 0; r < m; ++r) g[r] += self.grad[r * k + c];
    }
  });
}

// ---------------------------------------------------------------------------
// linear algebra

Var matmul(const Var& a, const Var& b) {
  require(a.value().rank() == 2 && b.value().rank() == 2 && a.dim(1) == b.dim(0),
          "matmul: expects [m,k]x[k,n]");
  const int m = a.dim(0);
  const int k = a.dim(1);
  const int n = b.dim(1);
  Tensor out({m, n});
  as_mat(out, m, n).noalias() = as_mat(a.value(), m, k) * as_mat(b.value(), k, n);
  Node* pa = a.node();
  Node* pb = b.node();
  return make(std::move(out), {a, b}, [pa, pb, m, k, n](Node& self) {
    auto dy = as_mat(self.grad, m, n);
    if (pa->requires_grad)
      as_mat(pa->ensure_grad(), m, k).noalias() += dy * as_mat(pb->value, k, n).transpose();
    if (pb->requires_grad)
      as_mat(pb->ensure_grad(), k, n).noalias() += as_mat(pa->value, m, k).transpose() * dy;
  });
}

Var linear(const Var& x, const Var& w, const Var& bias) {
  require(w.value().rank() == 2, "linear: weight must be [in,out]");
  const int in = w.dim(0);
  const int out_dim = w.dim(1);
  require(x.value().rank() >= 1 && x.shape().back() == in, "linear: input width mismatch");
  require(!bias.defined() || bias.size() == static_cast<std::size_t>(out_dim), "linear: bias size");
  const int m = static_cast<int>(x.size() / in);
  Shape shape = x.shape();
  shape.back() = out_dim;
  Tensor out(shape);
  auto y = as_mat(out, m, out_dim);
  y.noalias() = as_mat(x.value(), m, in) * as_mat(w.value(), in, out_dim);
  if (bias.defined()) {
    Eigen::Map<const Eigen::RowVectorXd> bv(bias.value().data(), out_dim);
    y.rowwise() += bv;
  }
  Node* px = x.node();
  Node* pw = w.node();
  Node* pb = bias.defined() ? bias.node() : nullptr;
  std::vector<Var> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  return make(std::move(out), parents, [px, pw, pb, m, in, out_dim](Node& self) {
    auto dy = as_mat(self.grad, m, out_dim);
    if (px->requires_grad)
      as_mat(px->ensure_grad(), m, in).noalias() += dy * as_mat(pw->value, in, out_dim).transpose();
    if (pw->requires_grad)
      as_mat(pw->ensure_grad(), in, out_dim).noalias() += as_mat(px->value, m, in).transpose() * dy;
    if (pb && pb->requires_grad) {
      Eigen::Map<Eigen::RowVectorXd> gb(pb->ensure_grad().data(), out_dim);
      gb += dy.colwise().sum();
    }
  });
}

Var bmm(const Var& a, const Var& b) {
  require(a.value().rank() == 3 && b.value().rank() == 3 && a.dim(0) == b.dim(0) &&
              a.dim(2) == b.dim(1),
          "bmm: expects [r,m,k]x[r,k,n]");
  const int r = a.dim(0);
  const int m = a.dim(1);
  const int k = a.dim(2);
  const int n = b.dim(2);
  Tensor out({r, m, n});
  for (int i = 0; i < r; ++i) {
    as_mat(out.data() + i * m * n, m, n).noalias() =
        as_mat(a.value().data() + i * m * k, m, k) * as_mat(b.value().data() + i * k * n, k, n);
  }
  Node* pa = a.node();
  Node* pb = b.node();
  return make(std::move(out), {a, b}, [pa, pb, r, m, k, n](Node& self) {
    for (int i = 0; i < r; ++i) {
      auto dy = as_mat(self.grad.data() + i * m * n, m, n);
      if (pa->requires_grad)
        as_mat(pa->ensure_grad().data() + i * m * k, m, k).noalias() +=
            dy * as_mat(pb->value.data() + i * k * n, k, n).transpose();
      if (pb->requires_grad)
        as_mat(pb->ensure_grad().data() + i * k * n, k, n).noalias() +=
            as_mat(pa->value.data() + i * m * k, m, k).transpose() * dy;
    }
  });
}

// ---------------------------------------------------------------------------
// layers

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const int n = x.shape().back();
  require(gamma.size() == static_cast<std::size_t>(n) && beta.size() == static_cast<std::size_t>(n),
          "layer_norm: affine size mismatch");
  const int m = static_cast<int>(x.size() / n);
  Tensor out(x.shape());
  Tensor xhat(x.shape());
  std::vector<double> inv_std(m);
  for (int r = 0; r < m; ++r) {
    const double* row = x.value().data() + r * n;
    double mean = 0.0;
    for (int c = 0; c < n; ++c) mean += row[c];
    mean /= n;
    double var = 0.0;
    for (int c = 0; c < n; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= n;
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (int c = 0; c < n; ++c) {
      const double h = (row[c] - mean) * inv_std[r];
      xhat[r * n + c] = h;
      out[r * n + c] = h * gamma.value()[c] + beta.value()[c];
    }
  }
  Node* px = x.node();
  Node* pg = gamma.node();
  Node* pb = beta.node();
  return make(std::move(out), {x, gamma, beta},
              [px, pg, pb, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                if (pg->requires_grad) {
                  auto& g = pg->ensure_grad();
                  for (int r = 0; r < m; ++r)
                    for (int c = 0; c < n; ++c) g[c] += self.grad[r * n + c] * xhat[r * n + c];
                }
                if (pb->requires_grad) {
                  auto& g = pb->ensure_grad();
                  for (int r = 0; r < m; ++r)
                    for (int c = 0; c < n; ++c) g[c] += self.grad[r * n + c];
                }
                if (px->requires_grad) {
                  auto& g = px->ensure_grad();
                  for (int r = 0; r < m; ++r) {
                    double mean_d = 0.0;
                    double mean_dx = 0.0;
                    for (int c = 0; c < n; ++c) {
                      const double d = self.grad[r * n + c] * pg->value[c];
                      mean_d += d;
                      mean_dx += d * xhat[r * n + c];
                    }
                    mean_d /= n;
                    mean_dx /= n;
                    for (int c = 0; c < n; ++c) {
                      const double d = self.grad[r * n + c] * pg->value[c];
                      g[r * n + c] += inv_std[r] * (d - mean_d - xhat[r * n + c] * mean_dx);
                    }
                  }
                }
              });
}

Var attention(const Var& q, const Var& k, const Var& v, int groups, int len, int heads) {
  require(q.value().rank() == 2 && q.shape() == k.shape() && q.shape() == v.shape(),
          "attention: q,k,v must share shape [groups*len, C]");
  require(q.dim(0) == groups * len, "attention: row count must be groups*len");
  const int c = q.dim(1);
  require(heads >= 1 && c % heads == 0, "attention: heads must divide C");
  const int d = c / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  // probs[g][h] is len x len.
  std::vector<double> probs(static_cast<std::size_t>(groups) * heads * len * len);
  Tensor out({groups * len, c});
  const auto& Q = q.value();
  const auto& K = k.value();
  const auto& V = v.value();
  for (int g = 0; g < groups; ++g) {
    for (int h = 0; h < heads; ++h) {
      double* P = probs.data() + (static_cast<std::size_t>(g) * heads + h) * len * len;
      for (int i = 0; i < len; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < len; ++j) {
          double s = 0.0;
          for (int e = 0; e < d; ++e) s += Q.at(g * len + i, h * d + e) * K.at(g * len + j, h * d + e);
          s *= scale;
          P[i * len + j] = s;
          mx = std::max(mx, s);
        }
        double z = 0.0;
        for (int j = 0; j < len; ++j) {
          P[i * len + j] = std::exp(P[i * len + j] - mx);
          z += P[i * len + j];
        }
        for (int j = 0; j < len; ++j) P[i * len + j] /= z;
        for (int e = 0; e < d; ++e) {
          double acc = 0.0;
          for (int j = 0; j < len; ++j) acc += P[i * len + j] * V.at(g * len + j, h * d + e);
          out.at(g * len + i, h * d + e) = acc;
        }
      }
    }
  }
  Node* pq = q.node();
  Node* pk = k.node();
  Node* pv = v.node();
  return make(std::move(out), {q, k, v},
              [pq, pk, pv, groups, len, heads, d, scale, probs = std::move(probs)](Node& self) {
                const auto& dO = self.grad;
                Tensor* gq = pq->requires_grad ? &pq->ensure_grad() : nullptr;
                Tensor* gk = pk->requires_grad ? &pk->ensure_grad() : nullptr;
                Tensor* gv = pv->requires_grad ? &pv->ensure_grad() : nullptr;
                std::vector<double> dS(static_cast<std::size_t>(len) * len);
                for (int g = 0; g < groups; ++g) {
                  for (int h = 0; h < heads; ++h) {
                    const double* P = probs.data() + (static_cast<std::size_t>(g) * heads + h) * len * len;
                    for (int i = 0; i < len; ++i) {
                      double dot = 0.0;
                      for (int j = 0; j < len; ++j) {
                        double dp = 0.0;
                        for (int e = 0; e < d; ++e)
                          dp += dO.at(g * len + i, h * d + e) * pv->value.at(g * len + j, h * d + e);
                        dS[i * len + j] = dp;
                        dot += dp * P[i * len + j];
                      }
                      for (int j = 0; j < len; ++j)
                        dS[i * len + j] = P[i * len + j] * (dS[i * len + j] - dot) * scale;
                    }
                    for (int i = 0; i < len; ++i) {
                      for (int j = 0; j < len; ++j) {
                        const double s = dS[i * len + j];
                        for (int e = 0; e < d; ++e) {
                          if (gq) gq->at(g * len + i, h * d + e) += s * pk->value.at(g * len + j, h * d + e);
                          if (gk) gk->at(g * len + j, h * d + e) += s * pq->value.at(g * len + i, h * d + e);
                          if (gv)
                            gv->at(g * len + j, h * d + e) +=
                                P[i * len + j] * dO.at(g * len + i, h * d + e);
                        }
                      }
                    }
                  }
                }
              });
}

Var conv2d(const Var& x, const Var& w, const Var& bias, Conv2dOptions opt) {
  require(x.value().rank() == 4 && w.value().rank() == 4, "conv2d: expects 4-D input and weight");
  const int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  require(w.dim(1) == Ci, "conv2d: channel mismatch");
  require(!bias.defined() || bias.size() == static_cast<std::size_t>(Co), "conv2d: bias size");
  const int Ho = (H + 2 * opt.padding - kh) / opt.stride + 1;
  const int Wo = (W + 2 * opt.padding - kw) / opt.stride + 1;
  require(Ho > 0 && Wo > 0, "conv2d: output would be empty");
  const int K = Ci * kh * kw;
  const int P = Ho * Wo;
  const bool pointwise = kh == 1 && kw == 1 && opt.stride == 1 && opt.padding == 0;

  // im2col for every image, kept for the backward pass.
  std::vector<double> cols;
  if (!pointwise) {
    cols.assign(static_cast<std::size_t>(N) * K * P, 0.0);
    for (int n = 0; n < N; ++n) {
      const double* src = x.value().data() + static_cast<std::size_t>(n) * Ci * H * W;
      double* dst = cols.data() + static_cast<std::size_t>(n) * K * P;
      for (int ci = 0; ci < Ci; ++ci)
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx) {
            double* row = dst + ((ci * kh + ky) * kw + kx) * P;
            for (int oy = 0; oy < Ho; ++oy) {
              const int iy = oy * opt.stride - opt.padding + ky;
              if (iy < 0 || iy >= H) continue;
              for (int ox = 0; ox < Wo; ++ox) {
                const int ix = ox * opt.stride - opt.padding + kx;
                if (ix < 0 || ix >= W) continue;
                row[oy * Wo + ox] = src[(ci * H + iy) * W + ix];
              }
            }
          }
    }
  }
  auto col_ptr = [&](int n) -> const double* {
    return pointwise ? x.value().data() + static_cast<std::size_t>(n) * K * P
                     : cols.data() + static_cast<std::size_t>(n) * K * P;
  };

  Tensor out({N, Co, Ho, Wo});
  const auto wm = as_mat(w.value(), Co, K);
  for (int n = 0; n < N; ++n) {
    auto y = as_mat(out.data() + static_cast<std::size_t>(n) * Co * P, Co, P);
    y.noalias() = wm * as_mat(col_ptr(n), K, P);
    if (bias.defined()) {
      Eigen::Map<const Eigen::VectorXd> bv(bias.value().data(), Co);
      y.colwise() += bv;
    }
  }

  Node* px = x.node();
  Node* pw = w.node();
  Node* pb = bias.defined() ? bias.node() : nullptr;
  std::vector<Var> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  return make(std::move(out), parents,
              [px, pw, pb, N, Ci, H, W, Co, kh, kw, Ho, Wo, K, P, opt, pointwise,
               cols = std::move(cols)](Node& self) {
                const auto wm = as_mat(pw->value, Co, K);
                std::vector<double> dcol(pointwise ? 0 : static_cast<std::size_t>(K) * P);
                for (int n = 0; n < N; ++n) {
                  const auto dy = as_mat(self.grad.data() + static_cast<std::size_t>(n) * Co * P, Co, P);
                  const double* col = pointwise ? px->value.data() + static_cast<std::size_t>(n) * K * P
                                                : cols.data() + static_cast<std::size_t>(n) * K * P;
                  if (pw->requires_grad)
                    as_mat(pw->ensure_grad(), Co, K).noalias() += dy * as_mat(col, K, P).transpose();
                  if (pb && pb->requires_grad) {
                    Eigen::Map<Eigen::VectorXd> gb(pb->ensure_grad().data(), Co);
                    gb += dy.rowwise().sum();
                  }
                  if (!px->requires_grad) continue;
                  double* gx = px->ensure_grad().data() + static_cast<std::size_t>(n) * Ci * H * W;
                  if (pointwise) {
                    as_mat(gx, K, P).noalias() += wm.transpose() * dy;
                    continue;
                  }
                  as_mat(dcol.data(), K, P).noalias() = wm.transpose() * dy;
                  for (int ci = 0; ci < Ci; ++ci)
                    for (int ky = 0; ky < kh; ++ky)
                      for (int kx = 0; kx < kw; ++kx) {
                        const double* row = dcol.data() + ((ci * kh + ky) * kw + kx) * P;
                        for (int oy = 0; oy < Ho; ++oy) {
                          const int iy = oy * opt.stride - opt.padding + ky;
                          if (iy < 0 || iy >= H) continue;
                          for (int ox = 0; ox < Wo; ++ox) {
                            const int ix = ox * opt.stride - opt.padding + kx;
                            if (ix < 0 || ix >= W) continue;
                            gx[(ci * H + iy) * W + ix] += row[oy * Wo + ox];
                          }
                        }
                      }
                }
              });
}

Var max_pool2d(const Var& x, int kernel, int stride, int padding) {
  require(x.value().rank() == 4, "max_pool2d: expects [N,C,H,W]");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = (H + 2 * padding - kernel) / stride + 1;
  const int Wo = (W + 2 * padding - kernel) / stride + 1;
  Tensor out({N, C, Ho, Wo});
  std::vector<int> argmax(out.size());
  for (int nc = 0; nc < N * C; ++nc) {
    const double* src = x.value().data() + static_cast<std::size_t>(nc) * H * W;
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        int best_i = -1;
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= W) continue;
            if (src[iy * W + ix] > best) {
              best = src[iy * W + ix];
              best_i = iy * W + ix;
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(nc) * Ho + oy) * Wo + ox;
        out[o] = best;
        argmax[o] = best_i;
      }
  }
  Node* px = x.node();
  return make(std::move(out), {x}, [px, H, W, Ho, Wo, argmax = std::move(argmax)](Node& self) {
    auto& g = px->ensure_grad();
    const std::size_t plane_out = static_cast<std::size_t>(Ho) * Wo;
    for (std::size_t o = 0; o < argmax.size(); ++o) {
      const std::size_t nc = o / plane_out;
      g[nc * H * W + argmax[o]] += self.grad[o];
    }
  });
}

Var upsample_nearest(const Var& x, int out_h, int out_w) {
  require(x.value().rank() == 4, "upsample_nearest: expects [N,C,H,W]");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out({N, C, out_h, out_w});
  std::vector<int> src_y(out_h), src_x(out_w);
  for (int y = 0; y < out_h; ++y) src_y[y] = std::min(H - 1, static_cast<int>(std::floor(y * double(H) / out_h)));
  for (int xx = 0; xx < out_w; ++xx) src_x[xx] = std::min(W - 1, static_cast<int>(std::floor(xx * double(W) / out_w)));
  for (int nc = 0; nc < N * C; ++nc)
    for (int y = 0; y < out_h; ++y)
      for (int xx = 0; xx < out_w; ++xx)
        out[(static_cast<std::size_t>(nc) * out_h + y) * out_w + xx] =
            x.value()[(static_cast<std::size_t>(nc) * H + src_y[y]) * W + src_x[xx]];
  Node* px = x.node();
  return make(std::move(out), {x}, [px, N, C, H, W, out_h, out_w, src_y, src_x](Node& self) {
    auto& g = px->ensure_grad();
    for (int nc = 0; nc < N * C; ++nc)
      for (int y = 0; y < out_h; ++y)
        for (int xx = 0; xx < out_w; ++xx)
          g[(static_cast<std::size_t>(nc) * H + src_y[y]) * W + src_x[xx]] +=
              self.grad[(static_cast<std::size_t>(nc) * out_h + y) * out_w + xx];
  });
}

Var channel_affine(const Var& x, const Var& scale, const Var& shift) {
  require(x.value().rank() == 4, "channel_affine: expects [N,C,H,W]");
  const int N = x.dim(0), C = x.dim(1);
  const int P = x.dim(2) * x.dim(3);
  require(scale.size() == static_cast<std::size_t>(C) && shift.size() == static_cast<std::size_t>(C),
          "channel_affine: parameter size");
  Tensor out(x.shape());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * P;
      for (int p = 0; p < P; ++p) out[base + p] = x.value()[base + p] * scale.value()[c] + shift.value()[c];
    }
  Node* px = x.node();
  Node* ps = scale.node();
  Node* pt = shift.node();
  return make(std::move(out), {x, scale, shift}, [px, ps, pt, N, C, P](Node& self) {
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const std::size_t base = (static_cast<std::size_t>(n) * C + c) * P;
        double gs = 0.0, gt = 0.0;
        for (int p = 0; p < P; ++p) {
          gs += self.grad[base + p] * px->value[base + p];
          gt += self.grad[base + p];
        }
        if (ps->requires_grad) ps->ensure_grad()[c] += gs;
        if (pt->requires_grad) pt->ensure_grad()[c] += gt;
        if (px->requires_grad) {
          auto& g = px->ensure_grad();
          for (int p = 0; p < P; ++p) g[base + p] += self.grad[base + p] * ps->value[c];
        }
      }
  });
}

// ---------------------------------------------------------------------------
// RoI align

namespace {

struct BilinearTap {
  int y0, x0, y1, x1;
  double ly, lx;
  bool y_clamped, x_clamped;
};

BilinearTap make_tap(double y, double x, int H, int W) {
  BilinearTap t{};
  t.y_clamped = false;
  t.x_clamped = false;
  if (y <= 0.0) {
    y = 0.0;
    t.y_clamped = true;
  } else if (y >= H - 1) {
    y = H - 1;
    t.y_clamped = true;
  }
  if (x <= 0.0) {
    x = 0.0;
    t.x_clamped = true;
  } else if (x >= W - 1) {
    x = W - 1;
    t.x_clamped = true;
  }
  t.y0 = static_cast<int>(std::floor(y));
  t.x0 = static_cast<int>(std::floor(x));
  t.y1 = std::min(t.y0 + 1, H - 1);
  t.x1 = std::min(t.x0 + 1, W - 1);
  t.ly = y - t.y0;
  t.lx = x - t.x0;
  return t;
}

}  // namespace

Var roi_align(const Var& features, const Var& boxes, const std::vector<int>& frame_of_box,
              int out_size, int sampling_ratio) {
  require(features.value().rank() == 4, "roi_align: features must be [T,C,H,W]");
  require(boxes.value().rank() == 2 && boxes.dim(1) == 4, "roi_align: boxes must be [R,4]");
  require(out_size >= 1 && sampling_ratio >= 1, "roi_align: bad sizes");
  const int T = features.dim(0), C = features.dim(1), H = features.dim(2), W = features.dim(3);
  const int R = boxes.dim(0);
  require(frame_of_box.size() == static_cast<std::size_t>(R), "roi_align: frame index count");
  const int S = out_size;
  const int sr = sampling_ratio;
  const double inv_count = 1.0 / (sr * sr);
  const std::size_t plane = static_cast<std::size_t>(H) * W;

  for (int r = 0; r < R; ++r) {
    require(frame_of_box[r] >= 0 && frame_of_box[r] < T, "roi_align: frame index out of range");
    const double bw = boxes.value().at(r, 2);
    const double bh = boxes.value().at(r, 3);
    if (!(bw > 0.0) || !(bh > 0.0)) throw std::invalid_argument("roi_align: invalid box (w or h <= 0)");
  }

  Tensor out({R, S * S, C});
  const auto& F = features.value();
  for (int r = 0; r < R; ++r) {
    const double cx = boxes.value().at(r, 0), cy = boxes.value().at(r, 1);
    const double bw = boxes.value().at(r, 2), bh = boxes.value().at(r, 3);
    const double x1 = (cx - 0.5 * bw) * W - 0.5;
    const double y1 = (cy - 0.5 * bh) * H - 0.5;
    const double cell_w = bw * W / S;
    const double cell_h = bh * H / S;
    const double* fr = F.data() + static_cast<std::size_t>(frame_of_box[r]) * C * plane;
    for (int iy = 0; iy < S; ++iy)
      for (int ix = 0; ix < S; ++ix) {
        double* o = out.data() + (static_cast<std::size_t>(r) * S * S + iy * S + ix) * C;
        for (int sy = 0; sy < sr; ++sy)
          for (int sx = 0; sx < sr; ++sx) {
            const double y = y1 + (iy + (sy + 0.5) / sr) * cell_h;
            const double x = x1 + (ix + (sx + 0.5) / sr) * cell_w;
            const auto t = make_tap(y, x, H, W);
            const double w00 = (1 - t.ly) * (1 - t.lx) * inv_count, w01 = (1 - t.ly) * t.lx * inv_count;
            const double w10 = t.ly * (1 - t.lx) * inv_count, w11 = t.ly * t.lx * inv_count;
            const int i00 = t.y0 * W + t.x0, i01 = t.y0 * W + t.x1;
            const int i10 = t.y1 * W + t.x0, i11 = t.y1 * W + t.x1;
            for (int c = 0; c < C; ++c) {
              const double* f = fr + c * plane;
              o[c] += w00 * f[i00] + w01 * f[i01] + w10 * f[i10] + w11 * f[i11];
            }
          }
      }
  }

  Node* pf = features.node();
  Node* pb = boxes.node();
  return make(std::move(out), {features, boxes},
              [pf, pb, frame_of_box, T, C, H, W, R, S, sr, inv_count, plane](Node& self) {
                const auto& F = pf->value;
                Tensor* gf = pf->requires_grad ? &pf->ensure_grad() : nullptr;
                Tensor* gb = pb->requires_grad ? &pb->ensure_grad() : nullptr;
                (void)T;
                for (int r = 0; r < R; ++r) {
                  const double cx = pb->value.at(r, 0), cy = pb->value.at(r, 1);
                  const double bw = pb->value.at(r, 2), bh = pb->value.at(r, 3);
                  const double x1 = (cx - 0.5 * bw) * W - 0.5;
                  const double y1 = (cy - 0.5 * bh) * H - 0.5;
                  const double cell_w = bw * W / S;
                  const double cell_h = bh * H / S;
                  const std::size_t fbase = static_cast<std::size_t>(frame_of_box[r]) * C * plane;
                  double g_cx = 0, g_cy = 0, g_w = 0, g_h = 0;
                  for (int iy = 0; iy < S; ++iy)
                    for (int ix = 0; ix < S; ++ix) {
                      const double* dO = self.grad.data() + (static_cast<std::size_t>(r) * S * S + iy * S + ix) * C;
                      for (int sy = 0; sy < sr; ++sy)
                        for (int sx = 0; sx < sr; ++sx) {
                          const double fy = (iy + (sy + 0.5) / sr) / S;
                          const double fx = (ix + (sx + 0.5) / sr) / S;
                          const double y = y1 + fy * S * cell_h;
                          const double x = x1 + fx * S * cell_w;
                          const auto t = make_tap(y, x, H, W);
                          const int i00 = t.y0 * W + t.x0, i01 = t.y0 * W + t.x1;
                          const int i10 = t.y1 * W + t.x0, i11 = t.y1 * W + t.x1;
                          if (gf) {
                            const double w00 = (1 - t.ly) * (1 - t.lx) * inv_count;
                            const double w01 = (1 - t.ly) * t.lx * inv_count;
                            const double w10 = t.ly * (1 - t.lx) * inv_count;
                            const double w11 = t.ly * t.lx * inv_count;
                            double* g = gf->data() + fbase;
                            for (int c = 0; c < C; ++c) {
                              double* gc = g + c * plane;
                              gc[i00] += w00 * dO[c];
                              gc[i01] += w01 * dO[c];
                              gc[i10] += w10 * dO[c];
                              gc[i11] += w11 * dO[c];
                            }
                          }
                          if (gb && !(t.y_clamped && t.x_clamped)) {
                            double dvdy = 0.0, dvdx = 0.0;
                            const double* f = F.data() + fbase;
                            for (int c = 0; c < C; ++c) {
                              const double* fc = f + c * plane;
                              if (!t.y_clamped)
                                dvdy += dO[c] * ((1 - t.lx) * (fc[i10] - fc[i00]) + t.lx * (fc[i11] - fc[i01]));
                              if (!t.x_clamped)
                                dvdx += dO[c] * ((1 - t.ly) * (fc[i01] - fc[i00]) + t.ly * (fc[i11] - fc[i10]));
                            }
                            dvdy *= inv_count;
                            dvdx *= inv_count;
                            // y = (cy - h/2) H - 0.5 + fy h H
                            g_cy += dvdy * H;
                            g_h += dvdy * H * (fy - 0.5);
                            g_cx += dvdx * W;
                            g_w += dvdx * W * (fx - 0.5);
                          }
                        }
                    }
                  if (gb) {
                    gb->at(r, 0) += g_cx;
                    gb->at(r, 1) += g_cy;
                    gb->at(r, 2) += g_w;
                    gb->at(r, 3) += g_h;
                  }
                }
              });
}

}  // namespace mcgaze::ad
