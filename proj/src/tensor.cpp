#include "leal/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace leal {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor make_tensor(std::shared_ptr<TensorImpl> impl) { return Tensor(std::move(impl)); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(shape_numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("Tensor::from: shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= ndim()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
  }
  return impl_->shape[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != ndim()) throw DimensionError("at(): rank mismatch for shape " + shape_str(shape()));
  std::size_t offset = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= impl_->shape[axis]) throw DimensionError("at(): index out of range for shape " + shape_str(shape()));
    offset = offset * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->data[offset];
}

Tensor& Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  Tensor out = detach();
  out.impl_->requires_grad = impl_->requires_grad;
  return out;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
Tape::Scope::~Scope() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::backward(const Tensor& output) {
  if (output.numel() != 1 || output.ndim() > 1) {
    throw DimensionError("backward() needs a scalar output, got shape " + shape_str(output.shape()));
  }
  for (auto& node : nodes_) node.output->grad.clear();
  if (!output.requires_grad()) return;
  autograd::grad_sink(output)[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward(*it->output);
    it->output->grad.clear();
    it->output->grad.shrink_to_fit();
  }
}

namespace autograd {

template <class Inputs>
Tensor make_result_impl(Shape shape, std::vector<double> values, const Inputs& inputs,
                        Tape::BackwardFn backward) {
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  Tape* tape = Tape::active();
  if (tape == nullptr) return out;
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (!needs) return out;
  out.impl()->requires_grad = true;
  out.impl()->leaf = false;
  tape->push({out.impl_ptr(), std::move(backward)});
  return out;
}

Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   Tape::BackwardFn backward) {
  return make_result_impl(std::move(shape), std::move(values), inputs, std::move(backward));
}

Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   Tape::BackwardFn backward) {
  return make_result_impl(std::move(shape), std::move(values), inputs, std::move(backward));
}

std::span<double> grad_sink(const Tensor& t) {
  auto* impl = t.impl();
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
  return impl->grad;
}

}  // namespace autograd


using autograd::grad_sink;
using autograd::make_result;

namespace {

// Broadcast layout for a binary op: output shape plus per-operand strides (0 where broadcast).
struct Broadcast {
  enum class Kind { same, scalar_b, scalar_a, general };
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;
  Kind kind = Kind::general;
};

Broadcast broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.kind = Broadcast::Kind::same;
    return bc;
  }
  if (shape_numel(b) == 1 && b.size() <= a.size()) {
    bc.out = a;
    bc.kind = Broadcast::Kind::scalar_b;
    return bc;
  }
  if (shape_numel(a) == 1 && a.size() <= b.size()) {
    bc.out = b;
    bc.kind = Broadcast::Kind::scalar_a;
    return bc;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  std::vector<std::size_t> da(rank, 1), db(rank, 1);
  std::copy(a.begin(), a.end(), da.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
  std::copy(b.begin(), b.end(), db.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
  bc.out.assign(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    if (da[i] != db[i] && da[i] != 1 && db[i] != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    bc.out[i] = std::max(da[i], db[i]);
  }
  bc.stride_a.assign(rank, 0);
  bc.stride_b.assign(rank, 0);
  std::size_t sa = 1, sb = 1;
  for (std::size_t i = rank; i-- > 0;) {
    bc.stride_a[i] = da[i] == 1 ? 0 : sa;
    bc.stride_b[i] = db[i] == 1 ? 0 : sb;
    sa *= da[i];
    sb *= db[i];
  }
  return bc;
}

// Calls fn(out_offset, a_offset, b_offset) for every output element, in row-major order.
template <class Fn>
void for_each_broadcast(const Broadcast& bc, Fn&& fn) {
  const std::size_t n = shape_numel(bc.out);
  switch (bc.kind) {
    case Broadcast::Kind::same:
      for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
      return;
    case Broadcast::Kind::scalar_b:
      for (std::size_t i = 0; i < n; ++i) fn(i, i, std::size_t{0});
      return;
    case Broadcast::Kind::scalar_a:
      for (std::size_t i = 0; i < n; ++i) fn(i, std::size_t{0}, i);
      return;
    case Broadcast::Kind::general:
      break;
  }
  const std::size_t rank = bc.out.size();
  const std::size_t inner = bc.out[rank - 1];
  const std::size_t ia_step = bc.stride_a[rank - 1];
  const std::size_t ib_step = bc.stride_b[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t base = 0; base < n; base += inner) {
    for (std::size_t j = 0; j < inner; ++j) fn(base + j, oa + j * ia_step, ob + j * ib_step);
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++idx[ax];
      oa += bc.stride_a[ax];
      ob += bc.stride_b[ax];
      if (idx[ax] < bc.out[ax]) break;
      oa -= bc.stride_a[ax] * idx[ax];
      ob -= bc.stride_b[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

// Elementwise binary op with broadcasting. Partial-derivative functors take (a, b).
template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F f, DA da, DB db) {
  Broadcast bc = broadcast(a.shape(), b.shape(), name);
  std::vector<double> out(shape_numel(bc.out));
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for_each_broadcast(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = f(pa[ia], pb[ib]); });
  Shape shape = bc.out;
  return make_result(std::move(shape), std::move(out), {a, b}, [a, b, bc, da, db](const TensorImpl& o) {
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    const double* g = o.grad.data();
    if (a.requires_grad()) {
      double* ga = grad_sink(a).data();
      for_each_broadcast(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        ga[ia] += g[i] * da(pa[ia], pb[ib]);
      });
    }
    if (b.requires_grad()) {
      double* gb = grad_sink(b).data();
      for_each_broadcast(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        gb[ib] += g[i] * db(pa[ia], pb[ib]);
      });
    }
  });
}

// Elementwise unary op. The derivative functor takes (x, y) where y = f(x).
template <class F, class D>
Tensor unary(const Tensor& x, F f, D d) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  Shape shape = x.shape();
  return make_result(std::move(shape), std::move(out), {x}, [x, d](const TensorImpl& o) {
    const auto in = x.data();
    auto gx = grad_sink(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i] * d(in[i], o.data[i]);
  });
}

// [outer, len, inner] view of a tensor around `axis`.
struct AxisView {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 1 || b.ndim() != 2 || a.shape().back() != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t k = b.dim(0);
  const std::size_t n = b.dim(1);
  const std::size_t m = k == 0 ? 0 : a.numel() / k;
  std::vector<double> out(m * n);
  MapMat(out.data(), m, n).noalias() = ConstMapMat(a.data().data(), m, k) * ConstMapMat(b.data().data(), k, n);
  Shape shape = a.shape();
  shape.back() = n;
  return make_result(std::move(shape), std::move(out), {a, b}, [a, b, m, k, n](const TensorImpl& o) {
    ConstMapMat g(o.grad.data(), m, n);
    if (a.requires_grad()) {
      MapMat(grad_sink(a).data(), m, k).noalias() += g * ConstMapMat(b.data().data(), k, n).transpose();
    }
    if (b.requires_grad()) {
      MapMat(grad_sink(b).data(), k, n).noalias() += ConstMapMat(a.data().data(), m, k).transpose() * g;
    }
  });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  const auto fail = [&] {
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         (transpose_b ? " (b transposed)" : ""));
  };
  if (a.ndim() < 2 || a.ndim() != b.ndim()) fail();
  const std::size_t rank = a.ndim();
  for (std::size_t i = 0; i + 2 < rank; ++i) {
    if (a.dim(i) != b.dim(i)) fail();
  }
  const std::size_t m = a.dim(rank - 2);
  const std::size_t k = a.dim(rank - 1);
  const std::size_t bk = transpose_b ? b.dim(rank - 1) : b.dim(rank - 2);
  const std::size_t n = transpose_b ? b.dim(rank - 2) : b.dim(rank - 1);
  if (bk != k) fail();
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < rank; ++i) batch *= a.dim(i);

  std::vector<double> out(batch * m * n);
  for (std::size_t t = 0; t < batch; ++t) {
    ConstMapMat am(a.data().data() + t * m * k, m, k);
    MapMat om(out.data() + t * m * n, m, n);
    if (transpose_b) {
      om.noalias() = am * ConstMapMat(b.data().data() + t * n * k, n, k).transpose();
    } else {
      om.noalias() = am * ConstMapMat(b.data().data() + t * k * n, k, n);
    }
  }
  Shape shape = a.shape();
  shape[rank - 1] = n;
  return make_result(std::move(shape), std::move(out), {a, b}, [a, b, batch, m, k, n, transpose_b](const TensorImpl& o) {
    for (std::size_t t = 0; t < batch; ++t) {
      ConstMapMat g(o.grad.data() + t * m * n, m, n);
      ConstMapMat am(a.data().data() + t * m * k, m, k);
      if (transpose_b) {
        ConstMapMat bm(b.data().data() + t * n * k, n, k);
        if (a.requires_grad()) MapMat(grad_sink(a).data() + t * m * k, m, k).noalias() += g * bm;
        if (b.requires_grad()) MapMat(grad_sink(b).data() + t * n * k, n, k).noalias() += g.transpose() * am;
      } else {
        ConstMapMat bm(b.data().data() + t * k * n, k, n);
        if (a.requires_grad()) MapMat(grad_sink(a).data() + t * m * k, m, k).noalias() += g * bm.transpose();
        if (b.requires_grad()) MapMat(grad_sink(b).data() + t * k * n, k, n).noalias() += am.transpose() * g;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

Tensor add_scalar(const Tensor& x, double c) {
  return unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double c) {
  return unary(x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0); }

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor pow_scalar(const Tensor& x, double c) {
  return unary(
      x, [c](double v) { return std::pow(v, c); },
      [c](double v, double) { return c == 0.0 ? 0.0 : c * std::pow(v, c - 1.0); });
}

// ---------------------------------------------------------------------------
// Reductions and normalization
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result({}, {total}, {x}, [x](const TensorImpl& o) {
    const double g = o.grad[0];
    for (double& v : grad_sink(x)) v += g;
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim) {
  const AxisView v = axis_view(x.shape(), axis, "sum_axis");
  std::vector<double> out(v.outer * v.inner, 0.0);
  const auto in = x.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t l = 0; l < v.len; ++l) {
      const double* row = in.data() + (o * v.len + l) * v.inner;
      double* dst = out.data() + o * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) dst[i] += row[i];
    }
  }
  Shape shape = x.shape();
  if (keepdim) {
    shape[axis] = 1;
  } else {
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return make_result(std::move(shape), std::move(out), {x}, [x, v](const TensorImpl& o) {
    auto gx = grad_sink(x);
    for (std::size_t b = 0; b < v.outer; ++b) {
      for (std::size_t l = 0; l < v.len; ++l) {
        double* dst = gx.data() + (b * v.len + l) * v.inner;
        const double* g = o.grad.data() + b * v.inner;
        for (std::size_t i = 0; i < v.inner; ++i) dst[i] += g[i];
      }
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisView v = axis_view(x.shape(), axis, "softmax");
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.len * v.inner + i;
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < v.len; ++l) top = std::max(top, in[base + l * v.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < v.len; ++l) {
        const double e = std::exp(in[base + l * v.inner] - top);
        out[base + l * v.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < v.len; ++l) out[base + l * v.inner] /= z;
    }
  }
  Shape shape = x.shape();
  return make_result(std::move(shape), std::move(out), {x}, [x, v](const TensorImpl& o) {
    auto gx = grad_sink(x);
    const auto& y = o.data;
    const auto& g = o.grad;
    for (std::size_t b = 0; b < v.outer; ++b) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t base = b * v.len * v.inner + i;
        double dot = 0.0;
        for (std::size_t l = 0; l < v.len; ++l) dot += g[base + l * v.inner] * y[base + l * v.inner];
        for (std::size_t l = 0; l < v.len; ++l) {
          const std::size_t at = base + l * v.inner;
          gx[at] += y[at] * (g[at] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const AxisView v = axis_view(x.shape(), axis, "log_softmax");
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.len * v.inner + i;
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < v.len; ++l) top = std::max(top, in[base + l * v.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < v.len; ++l) z += std::exp(in[base + l * v.inner] - top);
      const double lse = top + std::log(z);
      for (std::size_t l = 0; l < v.len; ++l) out[base + l * v.inner] = in[base + l * v.inner] - lse;
    }
  }
  Shape shape = x.shape();
  return make_result(std::move(shape), std::move(out), {x}, [x, v](const TensorImpl& o) {
    auto gx = grad_sink(x);
    const auto& y = o.data;
    const auto& g = o.grad;
    for (std::size_t b = 0; b < v.outer; ++b) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t base = b * v.len * v.inner + i;
        double gsum = 0.0;
        for (std::size_t l = 0; l < v.len; ++l) gsum += g[base + l * v.inner];
        for (std::size_t l = 0; l < v.len; ++l) {
          const std::size_t at = base + l * v.inner;
          gx[at] += g[at] - std::exp(y[at]) * gsum;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, [x](const TensorImpl& o) {
    auto gx = grad_sink(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t rank = x.ndim();
  std::vector<bool> seen(rank, false);
  if (axes.size() != rank) throw DimensionError("permute: axis list does not match shape " + shape_str(x.shape()));
  for (std::size_t a : axes) {
    if (a >= rank || seen[a]) throw DimensionError("permute: invalid axis list for shape " + shape_str(x.shape()));
    seen[a] = true;
  }
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * x.dim(i);
  Shape shape(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    shape[i] = x.dim(axes[i]);
    stride[i] = in_stride[axes[i]];
  }
  // Source offset of each output element.
  const std::size_t n = x.numel();
  auto source = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (*source)[i] = off;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      off += stride[ax];
      if (idx[ax] < shape[ax]) break;
      off -= stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  std::vector<double> out(n);
  const auto in = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = in[(*source)[i]];
  return make_result(std::move(shape), std::move(out), {x}, [x, source](const TensorImpl& o) {
    auto gx = grad_sink(x);
    for (std::size_t i = 0; i < o.grad.size(); ++i) gx[(*source)[i]] += o.grad[i];
  });
}

Tensor transpose(const Tensor& x) {
  if (x.ndim() != 2) throw DimensionError("transpose: expected 2-D, got " + shape_str(x.shape()));
  return permute(x, {1, 0});
}

Tensor index_rows(const Tensor& x, std::span<const std::size_t> rows) {
  if (x.ndim() < 1) throw DimensionError("index_rows: scalar input");
  const std::size_t n = x.dim(0);
  const std::size_t width = n == 0 ? 0 : x.numel() / n;
  std::vector<double> out(rows.size() * width);
  const auto in = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) {
      throw DimensionError("index_rows: row " + std::to_string(rows[i]) + " out of range for shape " +
                           shape_str(x.shape()));
    }
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(rows[i] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  Shape shape = x.shape();
  shape[0] = rows.size();
  auto picked = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
  return make_result(std::move(shape), std::move(out), {x}, [x, picked, width](const TensorImpl& o) {
    auto gx = grad_sink(x);
    for (std::size_t i = 0; i < picked->size(); ++i) {
      double* dst = gx.data() + (*picked)[i] * width;
      const double* g = o.grad.data() + i * width;
      for (std::size_t j = 0; j < width; ++j) dst[j] += g[j];
    }
  });
}

Tensor take(const Tensor& x, std::span<const std::size_t> offsets, Shape shape) {
  if (shape_numel(shape) != offsets.size()) {
    throw DimensionError("take: " + std::to_string(offsets.size()) + " offsets cannot fill shape " + shape_str(shape));
  }
  std::vector<double> out(offsets.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    if (offsets[i] >= in.size()) throw DimensionError("take: offset out of range for shape " + shape_str(x.shape()));
    out[i] = in[offsets[i]];
  }
  auto picked = std::make_shared<std::vector<std::size_t>>(offsets.begin(), offsets.end());
  return make_result(std::move(shape), std::move(out), {x}, [x, picked](const TensorImpl& o) {
    auto gx = grad_sink(x);
    for (std::size_t i = 0; i < picked->size(); ++i) gx[(*picked)[i]] += o.grad[i];
  });
}

Tensor pairwise_sq_dist(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1)) {
    throw DimensionError("pairwise_sq_dist: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), c = b.dim(0), d = a.dim(1);
  std::vector<double> out(n * c);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      double acc = 0.0;
      for (std::size_t l = 0; l < d; ++l) {
        const double diff = pa[i * d + l] - pb[j * d + l];
        acc += diff * diff;
      }
      out[i * c + j] = acc;
    }
  }
  return make_result({n, c}, std::move(out), {a, b}, [a, b, n, c, d](const TensorImpl& o) {
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* ga = a.requires_grad() ? grad_sink(a).data() : nullptr;
    double* gb = b.requires_grad() ? grad_sink(b).data() : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const double g = 2.0 * o.grad[i * c + j];
        if (g == 0.0) continue;
        for (std::size_t l = 0; l < d; ++l) {
          const double diff = g * (pa[i * d + l] - pb[j * d + l]);
          if (ga) ga[i * d + l] += diff;
          if (gb) gb[j * d + l] -= diff;
        }
      }
    }
  });
}

bool all_finite(const Tensor& x) {
  return std::all_of(x.data().begin(), x.data().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace leal
