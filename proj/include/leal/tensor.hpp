#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace leal {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised when operand shapes are incompatible; the message names every shape involved.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  bool leaf = true;
};

/**
 * Dense row-major tensor of doubles.
 *
 * A Tensor is a cheap handle; copies share storage. Operations never mutate their
 * inputs, so a tensor can be read from several threads. Only parameters are written
 * in place, and only between optimizer steps.
 */
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  /// In-place access. Reserved for parameter updates and test fixtures.
  std::span<double> mutable_data() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const { return impl_->leaf; }

  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient values; all zeros when nothing has been accumulated yet.
  std::vector<double> grad() const;
  void zero_grad();

  /// Same values, cut from any recorded history.
  Tensor detach() const;
  /// Deep copy of the values (and requires_grad flag), no history.
  Tensor clone() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;

  friend Tensor make_tensor(std::shared_ptr<TensorImpl>);
};

Tensor make_tensor(std::shared_ptr<TensorImpl> impl);

/**
 * Records differentiable operations in creation order.
 *
 * Operations are recorded onto the tape that is active on the calling thread
 * (see Tape::Scope); without an active tape nothing is recorded, which is how
 * inference runs. backward() replays the nodes in reverse creation order, visiting
 * each exactly once, and accumulates into every leaf that requires a gradient.
 */
class Tape {
 public:
  /// Receives the recorded output; its `grad` holds d(result)/d(output), `data` the forward values.
  using BackwardFn = std::function<void(const TensorImpl& out)>;

  struct Node {
    std::shared_ptr<TensorImpl> output;
    BackwardFn backward;
  };

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Makes this tape the active one on the current thread until the scope ends.
  [[nodiscard]] Scope record() { return Scope(*this); }

  void backward(const Tensor& output);
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  static Tape* active();

  void push(Node node) { nodes_.push_back(std::move(node)); }

 private:
  std::vector<Node> nodes_;
};

namespace autograd {

/// Builds an operation result. When a tape is active and any input requires a
/// gradient the result is recorded with `backward`; otherwise `backward` is dropped.
Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   Tape::BackwardFn backward);
Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   Tape::BackwardFn backward);

/// Gradient accumulator of `t`, allocated (zeroed) on first use.
std::span<double> grad_sink(const Tensor& t);

}  // namespace autograd

// ---------------------------------------------------------------------------
// Operations. All support broadcasting where noted and record onto the active tape.
// ---------------------------------------------------------------------------

/// a[..., k] x b[k, n] -> [..., n]. Leading dimensions of `a` are treated as rows.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched product over identical leading dims: a[..., m, k] x b[..., k, n] (or b^T when transpose_b).
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

// Elementwise with NumPy broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);
Tensor neg(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);
/// x^c for x > 0 (or any x when c is a non-negative integer).
Tensor pow_scalar(const Tensor& x, double c);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim = false);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor transpose(const Tensor& x);  // 2-D only

/// Rows of `x` along axis 0: result[i, ...] = x[rows[i], ...].
Tensor index_rows(const Tensor& x, std::span<const std::size_t> rows);
/// Elements by flat (row-major) offset, reshaped to `shape`.
Tensor take(const Tensor& x, std::span<const std::size_t> offsets, Shape shape);

/// ||a_i - b_j||^2 for a[n, d], b[c, d] -> [n, c].
Tensor pairwise_sq_dist(const Tensor& a, const Tensor& b);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);

bool all_finite(const Tensor& x);

}  // namespace leal
