#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace soke::grad {

using Real = double;
using Shape = std::vector<std::size_t>;

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// Backward rule: reads `self.grad` and accumulates into the inputs' grads.
using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool consumed = false;  // set on the loss node once backward has run
  const char* op = "leaf";
  std::vector<NodePtr> inputs;
  BackwardFn backward;

  std::vector<Real>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

/// Handle to a node of the computation graph. Copies share the node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Real> data, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim() const { return node_->shape.size(); }
  /// 2-D helpers; a 1-D tensor of length n is treated as 1 x n.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const Real> value() const { return node_->value; }
  std::span<Real> mutable_value() { return node_->value; }
  std::span<const Real> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  Real item() const;
  Real at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad.clear(); }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Disables graph construction on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Builds a node from already-computed values. Shape/size consistency and
/// finiteness are checked here for every op. `backward` may be empty for an
/// op with no gradient rule; reaching such a node in backward() is an error.
Tensor make_result(const char* op, Shape shape, std::vector<Real> value, std::vector<Tensor> inputs,
                   BackwardFn backward);

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// reachable tensor that requires grad. Calling twice on the same loss throws.
void backward(const Tensor& loss);

// ---- elementwise -----------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real s);
/// a times the single element of `s` (a learnable scalar).
Tensor mul_scalar(const Tensor& a, const Tensor& s);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);  // tanh approximation
Tensor tanh(const Tensor& a);

// ---- shape / indexing --------------------------------------------------------
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Rows of `table` selected by `ids` (embedding lookup / gather).
Tensor gather_rows(const Tensor& table, std::span<const int> ids);
/// Pads to `rows` by repeating the last row.
Tensor pad_rows_replicate(const Tensor& a, std::size_t rows);
/// Nearest-neighbour upsampling along rows.
Tensor upsample_rows(const Tensor& a, std::size_t factor);

// ---- linear algebra ----------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);
/// a [n, m] + bias [m] broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& bias);
/// x [n, m] normalized per row, then scaled by gamma [m] and shifted by beta [m].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps = 1e-5);
/// Row-wise softmax. With `causal`, entry (i, j) with j > i is excluded.
Tensor softmax_rows(const Tensor& x, bool causal = false);
/// 1-D convolution over time. x [T, Cin], w [K*Cin, Cout] (row k*Cin + ci),
/// b [Cout]. Output length floor((T + 2*pad - K) / stride) + 1, zero padding.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t kernel, std::size_t stride,
              std::size_t pad);

// ---- reductions / losses -----------------------------------------------------
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor mse(const Tensor& a, const Tensor& b);
Tensor l2_norm(const Tensor& a);  // sqrt(sum a^2); gradient 0 at the origin
/// sum_i w_i |a_i|; subgradient 0 at 0. With delta > 0 each |x| is replaced
/// by the pseudo-Huber sqrt(x^2 + delta^2) - delta.
Tensor weighted_l1(const Tensor& a, std::span<const Real> weights, Real delta = 0.0);
/// Summed cross-entropy of rows of `logits` against `targets`. If `allowed`
/// is non-empty it is a rows x classes 0/1 mask; excluded classes get zero
/// probability. Rows with target < 0 are skipped.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, std::span<const std::uint8_t> allowed = {});

// ---- gradient routing --------------------------------------------------------
/// Value copy that stops gradients.
Tensor detach(const Tensor& a);
/// Forward value is `quantized`; the gradient is passed unchanged to `encoder_out`.
Tensor straight_through(const Tensor& encoder_out, const Tensor& quantized);

// ---- rotations (batched, one row per rotation) -------------------------------
/// Axis-angle rows [n, 3] -> row-major 3x3 matrices [n, 9].
Tensor rodrigues(const Tensor& axis_angle);
/// Row-wise 3x3 product: [n, 9] x [n, 9] -> [n, 9].
Tensor mat3_mul(const Tensor& a, const Tensor& b);
/// Row-wise matrix-vector product: [n, 9] x [n, 3] -> [n, 3].
Tensor mat3_vec(const Tensor& a, const Tensor& v);

}  // namespace soke::grad
