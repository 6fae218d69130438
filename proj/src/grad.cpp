#include "soke/grad.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "soke/error.hpp"

namespace soke::grad {

namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;

std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

ConstMatMap cmap(const Node& n, std::size_t rows, std::size_t cols) { return {n.value.data(), long(rows), long(cols)}; }

MatMap gmap(Node& n, std::size_t rows, std::size_t cols) { return {n.grad_buffer().data(), long(rows), long(cols)}; }

ConstMatMap self_grad(Node& n, std::size_t rows, std::size_t cols) { return {n.grad.data(), long(rows), long(cols)}; }

bool wants(const NodePtr& n) { return n->requires_grad; }

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
}

void require_2d(const Tensor& a, const char* op) {
  if (a.dim() != 2) throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(a.shape()));
}

template <typename F>
Tensor unary(const char* op, const Tensor& a, F f, std::function<Real(Real x, Real y)> df) {
  std::vector<Real> out(a.size());
  const auto& x = a.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return make_result(op, a.shape(), std::move(out), {a}, [df](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(in.value[i], self.value[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return from(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<Real> data, bool requires_grad) {
  if (shape_size(shape) != data.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
                     " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(Real value, bool requires_grad) { return from({}, {value}, requires_grad); }

std::size_t Tensor::rows() const {
  const Shape& s = shape();
  if (s.size() <= 1) return 1;
  return size() / s.back();
}

std::size_t Tensor::cols() const {
  const Shape& s = shape();
  return s.empty() ? 1 : s.back();
}

Real Tensor::item() const {
  if (size() != 1) throw GradError("item() on a tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor make_result(const char* op, Shape shape, std::vector<Real> value, std::vector<Tensor> inputs,
                   BackwardFn backward) {
  if (shape_size(shape) != value.size()) {
    throw ShapeError(std::string(op) + ": result shape " + shape_str(shape) + " vs " + std::to_string(value.size()) +
                     " values");
  }
  for (Real v : value) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string(op) + " produced a non-finite value");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (g_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& t : inputs) node->inputs.push_back(t.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw GradError("backward on an undefined tensor");
  if (loss.size() != 1) throw GradError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  Node* root = loss.node().get();
  if (root->consumed) throw GradError("backward already ran on this graph; rebuild it before calling again");
  if (!root->requires_grad) throw GradError("loss does not depend on any tensor that requires grad");

  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      if (!node->inputs.empty() && !node->backward) {
        throw GradError(std::string("no gradient rule for op '") + node->op + "'");
      }
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->inputs.empty() || n->grad.empty()) continue;
    n->backward(*n);
  }
  for (Node* n : order) {
    if (n->inputs.empty()) continue;
    n->backward = nullptr;
    n->inputs.clear();
    if (n != root) n->grad.clear();
  }
  root->consumed = true;
}

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (!wants(in)) continue;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& in = self.inputs[k];
      if (!wants(in)) continue;
      const Real sign = k == 0 ? 1.0 : -1.0;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& in = self.inputs[k];
      if (!wants(in)) continue;
      const auto& other = self.inputs[1 - k]->value;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * other[i];
    }
  });
}

Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw ShapeError("mul_scalar: the factor must have exactly one element");
  const Real k = s.value()[0];
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = k * a.value()[i];
  return make_result("mul_scalar", a.shape(), std::move(out), {a, s}, [k](Node& self) {
    if (wants(self.inputs[0])) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * self.grad[i];
    }
    if (wants(self.inputs[1])) {
      Real acc = 0.0;
      const auto& x = self.inputs[0]->value;
      for (std::size_t i = 0; i < x.size(); ++i) acc += self.grad[i] * x[i];
      self.inputs[1]->grad_buffer()[0] += acc;
    }
  });
}

Tensor scale(const Tensor& a, Real s) {
  return unary("scale", a, [s](Real x) { return s * x; }, [s](Real, Real) { return s; });
}

Tensor relu(const Tensor& a) {
  return unary("relu", a, [](Real x) { return x > 0 ? x : 0.0; }, [](Real x, Real) { return x > 0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  constexpr Real c = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr Real k = 0.044715;
  return unary(
      "gelu", a, [](Real x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); },
      [](Real x, Real) {
        const Real t = std::tanh(c * (x + k * x * x * x));
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * k * x * x);
      });
}

Tensor tanh(const Tensor& a) {
  return unary("tanh", a, [](Real x) { return std::tanh(x); }, [](Real, Real y) { return 1.0 - y * y; });
}

// ---- shape / indexing --------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  return make_result("reshape", std::move(shape), a.node()->value, {a}, [](Node& self) {
    auto& in = self.inputs[0];
    auto& g = in->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<Real> out(a.size());
  MatMap(out.data(), long(c), long(r)) = cmap(*a.node(), r, c).transpose();
  return make_result("transpose", {c, r}, std::move(out), {a}, [r, c](Node& self) {
    gmap(*self.inputs[0], r, c) += self_grad(self, c, r).transpose();
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_2d(a, "slice_rows");
  if (begin > end || end > a.rows()) throw ShapeError("slice_rows: range out of bounds");
  const std::size_t c = a.cols();
  std::vector<Real> out(a.value().begin() + begin * c, a.value().begin() + end * c);
  return make_result("slice_rows", {end - begin, c}, std::move(out), {a}, [begin, c](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * c + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_2d(a, "slice_cols");
  if (begin > end || end > a.cols()) throw ShapeError("slice_cols: range out of bounds");
  const std::size_t r = a.rows(), c = a.cols(), w = end - begin;
  std::vector<Real> out(r * w);
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(a.value().begin() + i * c + begin, w, out.begin() + i * w);
  }
  return make_result("slice_cols", {r, w}, std::move(out), {a}, [r, c, w, begin](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < w; ++j) g[i * c + begin + j] += self.grad[i * w + j];
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
  const std::size_t c = parts[0].cols();
  std::size_t rows = 0;
  std::vector<Real> out;
  for (const auto& p : parts) {
    require_2d(p, "concat_rows");
    if (p.cols() != c) throw ShapeError("concat_rows: column mismatch");
    rows += p.rows();
    out.insert(out.end(), p.value().begin(), p.value().end());
  }
  return make_result("concat_rows", {rows, c}, std::move(out), parts, [](Node& self) {
    std::size_t offset = 0;
    for (auto& in : self.inputs) {
      const std::size_t n = in->value.size();
      if (wants(in)) {
        auto& g = in->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
      }
      offset += n;
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p.rows() != r) throw ShapeError("concat_cols: row mismatch");
    c += p.cols();
  }
  std::vector<Real> out(r * c);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(p.value().begin() + i * w, w, out.begin() + i * c + offset);
    offset += w;
  }
  return make_result("concat_cols", {r, c}, std::move(out), parts, [r, c](Node& self) {
    std::size_t off = 0;
    for (auto& in : self.inputs) {
      const std::size_t w = in->shape.back();
      if (wants(in)) {
        auto& g = in->grad_buffer();
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * c + off + j];
        }
      }
      off += w;
    }
  });
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  require_2d(table, "gather_rows");
  const std::size_t v = table.rows(), d = table.cols();
  std::vector<Real> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw RangeError("gather_rows: index " + std::to_string(ids[i]) + " outside [0, " + std::to_string(v) + ")");
    }
    std::copy_n(table.value().begin() + ids[i] * d, d, out.begin() + i * d);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return make_result("gather_rows", {ids.size(), d}, std::move(out), {table}, [idx = std::move(idx), d](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) g[idx[i] * d + j] += self.grad[i * d + j];
    }
  });
}

Tensor pad_rows_replicate(const Tensor& a, std::size_t rows) {
  require_2d(a, "pad_rows_replicate");
  const std::size_t r = a.rows(), c = a.cols();
  if (rows < r || r == 0) throw ShapeError("pad_rows_replicate: cannot shrink or pad an empty tensor");
  std::vector<Real> out(rows * c);
  std::copy(a.value().begin(), a.value().end(), out.begin());
  for (std::size_t i = r; i < rows; ++i) std::copy_n(a.value().begin() + (r - 1) * c, c, out.begin() + i * c);
  return make_result("pad_rows_replicate", {rows, c}, std::move(out), {a}, [r, c, rows](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < rows; ++i) {
      const std::size_t src = std::min(i, r - 1);
      for (std::size_t j = 0; j < c; ++j) g[src * c + j] += self.grad[i * c + j];
    }
  });
}

Tensor upsample_rows(const Tensor& a, std::size_t factor) {
  require_2d(a, "upsample_rows");
  if (factor == 0) throw ShapeError("upsample_rows: factor must be positive");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<Real> out(r * factor * c);
  for (std::size_t i = 0; i < r * factor; ++i) std::copy_n(a.value().begin() + (i / factor) * c, c, out.begin() + i * c);
  return make_result("upsample_rows", {r * factor, c}, std::move(out), {a}, [r, c, factor](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < r * factor; ++i) {
      for (std::size_t j = 0; j < c; ++j) g[(i / factor) * c + j] += self.grad[i * c + j];
    }
  });
}

// ---- linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<Real> out(n * m);
  MatMap(out.data(), long(n), long(m)).noalias() = cmap(*a.node(), n, k) * cmap(*b.node(), k, m);
  return make_result("matmul", {n, m}, std::move(out), {a, b}, [n, k, m](Node& self) {
    const auto g = self_grad(self, n, m);
    Node& an = *self.inputs[0];
    Node& bn = *self.inputs[1];
    if (an.requires_grad) gmap(an, n, k).noalias() += g * cmap(bn, k, m).transpose();
    if (bn.requires_grad) gmap(bn, k, m).noalias() += cmap(an, n, k).transpose() * g;
  });
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  require_2d(a, "add_row");
  const std::size_t r = a.rows(), c = a.cols();
  if (bias.size() != c) throw ShapeError("add_row: bias length does not match columns");
  std::vector<Real> out(a.value().begin(), a.value().end());
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bias.value()[j];
  }
  return make_result("add_row", a.shape(), std::move(out), {a, bias}, [r, c](Node& self) {
    if (wants(self.inputs[0])) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self.inputs[1])) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
  require_2d(x, "layer_norm");
  const std::size_t r = x.rows(), c = x.cols();
  if (gamma.size() != c || beta.size() != c) throw ShapeError("layer_norm: gamma/beta length mismatch");
  std::vector<Real> out(r * c), xhat(r * c), inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    const Real* row = x.value().data() + i * c;
    Real mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= Real(c);
    Real var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= Real(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mu) * inv_std[i];
      out[i * c + j] = gamma.value()[j] * xhat[i * c + j] + beta.value()[j];
    }
  }
  return make_result("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                     [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       Node& xn = *self.inputs[0];
                       Node& gn = *self.inputs[1];
                       Node& bn = *self.inputs[2];
                       const auto& g = self.grad;
                       if (gn.requires_grad) {
                         auto& dg = gn.grad_buffer();
                         for (std::size_t i = 0; i < r * c; ++i) dg[i % c] += g[i] * xhat[i];
                       }
                       if (bn.requires_grad) {
                         auto& db = bn.grad_buffer();
                         for (std::size_t i = 0; i < r * c; ++i) db[i % c] += g[i];
                       }
                       if (!xn.requires_grad) return;
                       auto& dx = xn.grad_buffer();
                       std::vector<Real> dxhat(c);
                       for (std::size_t i = 0; i < r; ++i) {
                         Real m1 = 0.0, m2 = 0.0;
                         for (std::size_t j = 0; j < c; ++j) {
                           dxhat[j] = g[i * c + j] * gn.value[j];
                           m1 += dxhat[j];
                           m2 += dxhat[j] * xhat[i * c + j];
                         }
                         m1 /= Real(c);
                         m2 /= Real(c);
                         for (std::size_t j = 0; j < c; ++j) {
                           dx[i * c + j] += inv_std[i] * (dxhat[j] - m1 - xhat[i * c + j] * m2);
                         }
                       }
                     });
}

Tensor softmax_rows(const Tensor& x, bool causal) {
  require_2d(x, "softmax_rows");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<Real> out(r * c, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t limit = causal ? std::min(c, i + 1) : c;
    const Real* row = x.value().data() + i * c;
    Real mx = row[0];
    for (std::size_t j = 1; j < limit; ++j) mx = std::max(mx, row[j]);
    Real z = 0.0;
    for (std::size_t j = 0; j < limit; ++j) {
      out[i * c + j] = std::exp(row[j] - mx);
      z += out[i * c + j];
    }
    for (std::size_t j = 0; j < limit; ++j) out[i * c + j] /= z;
  }
  return make_result("softmax_rows", x.shape(), std::move(out), {x}, [r, c](Node& self) {
    auto& dx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      Real dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * self.value[i * c + j];
      for (std::size_t j = 0; j < c; ++j) {
        dx[i * c + j] += self.value[i * c + j] * (self.grad[i * c + j] - dot);
      }
    }
  });
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t kernel, std::size_t stride,
              std::size_t pad) {
  require_2d(x, "conv1d");
  require_2d(w, "conv1d");
  const std::size_t t_in = x.rows(), cin = x.cols(), cout = w.cols();
  if (kernel == 0 || stride == 0) throw ShapeError("conv1d: kernel and stride must be positive");
  if (w.rows() != kernel * cin) throw ShapeError("conv1d: weight rows must equal kernel * in_channels");
  if (b.size() != cout) throw ShapeError("conv1d: bias length must equal out_channels");
  if (t_in + 2 * pad < kernel) throw ShapeError("conv1d: input shorter than the kernel");
  const std::size_t t_out = (t_in + 2 * pad - kernel) / stride + 1;
  const std::size_t width = kernel * cin;
  std::vector<Real> col(t_out * width, 0.0);
  for (std::size_t t = 0; t < t_out; ++t) {
    for (std::size_t k = 0; k < kernel; ++k) {
      const long src = long(t * stride + k) - long(pad);
      if (src < 0 || src >= long(t_in)) continue;
      std::copy_n(x.value().begin() + src * cin, cin, col.begin() + t * width + k * cin);
    }
  }
  std::vector<Real> out(t_out * cout);
  MatMap y(out.data(), long(t_out), long(cout));
  y.noalias() = ConstMatMap(col.data(), long(t_out), long(width)) * cmap(*w.node(), width, cout);
  for (std::size_t t = 0; t < t_out; ++t) {
    for (std::size_t j = 0; j < cout; ++j) out[t * cout + j] += b.value()[j];
  }
  return make_result(
      "conv1d", {t_out, cout}, std::move(out), {x, w, b},
      [col = std::move(col), t_in, cin, cout, t_out, width, kernel, stride, pad](Node& self) {
        const auto g = self_grad(self, t_out, cout);
        const ConstMatMap colm(col.data(), long(t_out), long(width));
        Node& xn = *self.inputs[0];
        Node& wn = *self.inputs[1];
        Node& bn = *self.inputs[2];
        if (wn.requires_grad) gmap(wn, width, cout).noalias() += colm.transpose() * g;
        if (bn.requires_grad) {
          auto& db = bn.grad_buffer();
          for (std::size_t t = 0; t < t_out; ++t) {
            for (std::size_t j = 0; j < cout; ++j) db[j] += self.grad[t * cout + j];
          }
        }
        if (!xn.requires_grad) return;
        RowMat dcol = g * cmap(wn, width, cout).transpose();
        auto& dx = xn.grad_buffer();
        for (std::size_t t = 0; t < t_out; ++t) {
          for (std::size_t k = 0; k < kernel; ++k) {
            const long src = long(t * stride + k) - long(pad);
            if (src < 0 || src >= long(t_in)) continue;
            for (std::size_t ci = 0; ci < cin; ++ci) dx[src * cin + ci] += dcol(long(t), long(k * cin + ci));
          }
        }
      });
}

// ---- reductions / losses -----------------------------------------------------

Tensor sum(const Tensor& a) {
  Real s = 0.0;
  for (Real v : a.value()) s += v;
  return make_result("sum", {}, {s}, {a}, [](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / Real(a.size()));
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mse");
  if (a.size() == 0) throw ShapeError("mse of empty tensors");
  Real s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Real d = a.value()[i] - b.value()[i];
    s += d * d;
  }
  const Real n = Real(a.size());
  return make_result("mse", {}, {s / n}, {a, b}, [n](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    const Real k = 2.0 * self.grad[0] / n;
    if (wants(self.inputs[0])) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * (av[i] - bv[i]);
    }
    if (wants(self.inputs[1])) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= k * (av[i] - bv[i]);
    }
  });
}

Tensor l2_norm(const Tensor& a) {
  Real s = 0.0;
  for (Real v : a.value()) s += v * v;
  const Real norm = std::sqrt(s);
  return make_result("l2_norm", {}, {norm}, {a}, [norm](Node& self) {
    if (norm == 0.0) return;
    auto& g = self.inputs[0]->grad_buffer();
    const auto& x = self.inputs[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * x[i] / norm;
  });
}

Tensor weighted_l1(const Tensor& a, std::span<const Real> weights, Real delta) {
  if (weights.size() != a.size()) throw ShapeError("weighted_l1: weight count mismatch");
  if (delta < 0) throw ShapeError("weighted_l1: negative smoothing");
  auto rho = [delta](Real x) { return delta > 0 ? std::sqrt(x * x + delta * delta) - delta : std::abs(x); };
  Real s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += weights[i] * rho(a.value()[i]);
  std::vector<Real> w(weights.begin(), weights.end());
  return make_result("weighted_l1", {}, {s}, {a}, [w = std::move(w), delta](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    const auto& x = self.inputs[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real d = delta > 0 ? x[i] / std::sqrt(x[i] * x[i] + delta * delta)
                               : (x[i] > 0 ? 1.0 : (x[i] < 0 ? -1.0 : 0.0));
      g[i] += self.grad[0] * w[i] * d;
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, std::span<const std::uint8_t> allowed) {
  require_2d(logits, "cross_entropy");
  const std::size_t r = logits.rows(), c = logits.cols();
  if (targets.size() != r) throw ShapeError("cross_entropy: one target per row required");
  if (!allowed.empty() && allowed.size() != r * c) throw ShapeError("cross_entropy: mask shape mismatch");
  std::vector<Real> probs(r * c, 0.0);
  Real total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (targets[i] < 0) continue;
    const std::size_t t = static_cast<std::size_t>(targets[i]);
    if (t >= c) throw RangeError("cross_entropy: target class out of range");
    auto ok = [&](std::size_t j) { return allowed.empty() || allowed[i * c + j] != 0; };
    if (!ok(t)) throw RangeError("cross_entropy: target class is masked out");
    const Real* row = logits.value().data() + i * c;
    Real mx = row[t];
    for (std::size_t j = 0; j < c; ++j) {
      if (ok(j)) mx = std::max(mx, row[j]);
    }
    Real z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (ok(j)) z += std::exp(row[j] - mx);
    }
    const Real log_z = std::log(z) + mx;
    total += log_z - row[t];
    for (std::size_t j = 0; j < c; ++j) {
      if (ok(j)) probs[i * c + j] = std::exp(row[j] - log_z);
    }
  }
  std::vector<int> tg(targets.begin(), targets.end());
  return make_result("cross_entropy", {}, {total}, {logits},
                     [probs = std::move(probs), tg = std::move(tg), c](Node& self) {
                       auto& g = self.inputs[0]->grad_buffer();
                       const Real k = self.grad[0];
                       for (std::size_t i = 0; i < tg.size(); ++i) {
                         if (tg[i] < 0) continue;
                         for (std::size_t j = 0; j < c; ++j) g[i * c + j] += k * probs[i * c + j];
                         g[i * c + tg[i]] -= k;
                       }
                     });
}

// ---- gradient routing --------------------------------------------------------

Tensor detach(const Tensor& a) { return Tensor::from(a.shape(), a.node()->value, false); }

Tensor straight_through(const Tensor& encoder_out, const Tensor& quantized) {
  require_same(encoder_out, quantized, "straight_through");
  return make_result("straight_through", quantized.shape(), quantized.node()->value, {encoder_out}, [](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// ---- rotations ----------------------------------------------------------------

namespace {

struct RodriguesCoeffs {
  Real f1, f2, g1, g2;  // sin t / t, (1 - cos t) / t^2 and their derivatives divided by t
};

RodriguesCoeffs rodrigues_coeffs(Real t2) {
  const Real t = std::sqrt(t2);
  if (t < 1e-2) {
    const Real t4 = t2 * t2;
    return {1.0 - t2 / 6.0 + t4 / 120.0, 0.5 - t2 / 24.0 + t4 / 720.0, -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0,
            -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0};
  }
  const Real s = std::sin(t), co = std::cos(t);
  return {s / t, (1.0 - co) / t2, (t * co - s) / (t2 * t), (t * s - 2.0 * (1.0 - co)) / (t2 * t2)};
}

}  // namespace

Tensor rodrigues(const Tensor& axis_angle) {
  if (axis_angle.cols() != 3 || axis_angle.dim() != 2) throw ShapeError("rodrigues: expected [n, 3]");
  const std::size_t n = axis_angle.rows();
  std::vector<Real> out(n * 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Real* v = axis_angle.value().data() + 3 * i;
    const Real t2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    const auto k = rodrigues_coeffs(t2);
    const Real kmat[9] = {0, -v[2], v[1], v[2], 0, -v[0], -v[1], v[0], 0};
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        const Real delta = a == b ? 1.0 : 0.0;
        out[9 * i + 3 * a + b] = delta + k.f1 * kmat[3 * a + b] + k.f2 * (v[a] * v[b] - t2 * delta);
      }
    }
  }
  return make_result("rodrigues", {n, 9}, std::move(out), {axis_angle}, [n](Node& self) {
    Node& in = *self.inputs[0];
    auto& dv = in.grad_buffer();
    // dK/dv_c as 3x3 matrices.
    static const Real dk[3][9] = {{0, 0, 0, 0, 0, -1, 0, 1, 0}, {0, 0, 1, 0, 0, 0, -1, 0, 0}, {0, -1, 0, 1, 0, 0, 0, 0, 0}};
    for (std::size_t i = 0; i < n; ++i) {
      const Real* v = in.value.data() + 3 * i;
      const Real* g = self.grad.data() + 9 * i;
      const Real t2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
      const auto k = rodrigues_coeffs(t2);
      const Real kmat[9] = {0, -v[2], v[1], v[2], 0, -v[0], -v[1], v[0], 0};
      for (int c = 0; c < 3; ++c) {
        Real acc = 0.0;
        for (int a = 0; a < 3; ++a) {
          for (int b = 0; b < 3; ++b) {
            const Real delta = a == b ? 1.0 : 0.0;
            const Real ec_a = a == c ? 1.0 : 0.0;
            const Real ec_b = b == c ? 1.0 : 0.0;
            const Real d = k.g1 * v[c] * kmat[3 * a + b] + k.f1 * dk[c][3 * a + b] +
                           k.g2 * v[c] * (v[a] * v[b] - t2 * delta) +
                           k.f2 * (ec_a * v[b] + v[a] * ec_b - 2.0 * v[c] * delta);
            acc += g[3 * a + b] * d;
          }
        }
        dv[3 * i + c] += acc;
      }
    }
  });
}

Tensor mat3_mul(const Tensor& a, const Tensor& b) {
  if (a.cols() != 9 || b.cols() != 9 || a.rows() != b.rows()) throw ShapeError("mat3_mul: expected [n, 9] operands");
  const std::size_t n = a.rows();
  std::vector<Real> out(n * 9, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const Real* x = a.value().data() + 9 * i;
    const Real* y = b.value().data() + 9 * i;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        Real s = 0.0;
        for (int k = 0; k < 3; ++k) s += x[3 * r + k] * y[3 * k + c];
        out[9 * i + 3 * r + c] = s;
      }
    }
  }
  return make_result("mat3_mul", {n, 9}, std::move(out), {a, b}, [n](Node& self) {
    Node& an = *self.inputs[0];
    Node& bn = *self.inputs[1];
    for (std::size_t i = 0; i < n; ++i) {
      const Real* g = self.grad.data() + 9 * i;
      const Real* x = an.value.data() + 9 * i;
      const Real* y = bn.value.data() + 9 * i;
      if (an.requires_grad) {
        Real* dx = an.grad_buffer().data() + 9 * i;
        for (int r = 0; r < 3; ++r) {
          for (int k = 0; k < 3; ++k) {
            Real s = 0.0;
            for (int c = 0; c < 3; ++c) s += g[3 * r + c] * y[3 * k + c];
            dx[3 * r + k] += s;
          }
        }
      }
      if (bn.requires_grad) {
        Real* dy = bn.grad_buffer().data() + 9 * i;
        for (int k = 0; k < 3; ++k) {
          for (int c = 0; c < 3; ++c) {
            Real s = 0.0;
            for (int r = 0; r < 3; ++r) s += x[3 * r + k] * g[3 * r + c];
            dy[3 * k + c] += s;
          }
        }
      }
    }
  });
}

Tensor mat3_vec(const Tensor& a, const Tensor& v) {
  if (a.cols() != 9 || v.cols() != 3 || a.rows() != v.rows()) throw ShapeError("mat3_vec: expected [n, 9] and [n, 3]");
  const std::size_t n = a.rows();
  std::vector<Real> out(n * 3, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (int r = 0; r < 3; ++r) {
      Real s = 0.0;
      for (int k = 0; k < 3; ++k) s += a.value()[9 * i + 3 * r + k] * v.value()[3 * i + k];
      out[3 * i + r] = s;
    }
  }
  return make_result("mat3_vec", {n, 3}, std::move(out), {a, v}, [n](Node& self) {
    Node& an = *self.inputs[0];
    Node& vn = *self.inputs[1];
    for (std::size_t i = 0; i < n; ++i) {
      const Real* g = self.grad.data() + 3 * i;
      if (an.requires_grad) {
        Real* da = an.grad_buffer().data() + 9 * i;
        for (int r = 0; r < 3; ++r) {
          for (int k = 0; k < 3; ++k) da[3 * r + k] += g[r] * vn.value[3 * i + k];
        }
      }
      if (vn.requires_grad) {
        Real* dv = vn.grad_buffer().data() + 3 * i;
        for (int k = 0; k < 3; ++k) {
          Real s = 0.0;
          for (int r = 0; r < 3; ++r) s += an.value[9 * i + 3 * r + k] * g[r];
          dv[k] += s;
        }
      }
    }
  });
}

}  // namespace soke::grad
