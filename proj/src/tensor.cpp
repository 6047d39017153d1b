#include "tsgnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "tsgnn/error.hpp"

namespace tsgnn {

namespace {

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

[[noreturn]] void shape_error(const char* kind, const Shape& a, const Shape& b) {
  throw ConfigError(std::string(kind) + ": incompatible shapes " + shape_string(a) + " and " +
                    shape_string(b));
}

void require_2d(const char* kind, const Tensor& t) {
  if (t.rank() != 2) {
    throw ConfigError(std::string(kind) + ": expected a 2-D tensor, got " + shape_string(t.shape()));
  }
}

// Adds `g` into the gradient of `t` when t takes part in differentiation.
void accumulate(Tensor& t, std::span<const double> g) {
  if (!t.requires_grad()) return;
  auto dst = t.mutable_grad();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

bool is_row_broadcast(const Tensor& a, const Tensor& b) {
  return a.rank() == 2 && b.size() == a.cols() && (b.rank() == 1 || (b.rank() == 2 && b.rows() == 1));
}

bool is_col_broadcast(const Tensor& a, const Tensor& b) {
  return a.rank() == 2 && b.rank() == 2 && b.cols() == 1 && b.rows() == a.rows();
}

Tensor map_unary(const Tensor& a, const auto& fn) {
  std::vector<double> out(a.size());
  auto in = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(in[i]);
  return Tensor::from(a.shape(), std::move(out));
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::string to_string(OpKind kind) {
  switch (kind) {
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::concat: return "concat";
    case OpKind::relu: return "relu";
    case OpKind::leaky_relu: return "leaky_relu";
    case OpKind::row_softmax: return "row_softmax";
    case OpKind::reduce_mean_axis: return "reduce_mean_axis";
    case OpKind::reduce_max_axis: return "reduce_max_axis";
    case OpKind::squared_l2_distance: return "squared_l2_distance";
    case OpKind::cross_entropy: return "cross_entropy";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::top_k_select: return "top_k_select";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  const std::size_t n = product(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty() || product(shape) != values.size()) {
    throw ConfigError("tensor: shape " + shape_string(shape) + " does not hold " +
                      std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const std::size_t n = values.size();
  return from({n}, std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Tensor::Impl& Tensor::impl() const {
  if (!impl_) throw ContractViolation("tensor: use of an undefined tensor");
  return *impl_;
}

Tensor::Impl& Tensor::impl() {
  if (!impl_) throw ContractViolation("tensor: use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }
std::size_t Tensor::size() const { return impl().values.size(); }
std::size_t Tensor::rows() const { return rank() == 1 ? 1 : shape()[0]; }
std::size_t Tensor::cols() const { return rank() == 1 ? shape()[0] : shape()[1]; }
std::span<const double> Tensor::values() const { return impl().values; }
std::span<double> Tensor::mutable_values() { return impl().values; }

double Tensor::item() const {
  if (size() != 1) throw ContractViolation("tensor: item() on tensor of shape " + shape_string(shape()));
  return impl().values[0];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }
void Tensor::set_requires_grad(bool flag) { impl().requires_grad = flag; }
bool Tensor::has_grad() const { return !impl().grad.empty(); }
std::span<const double> Tensor::grad() const { return impl().grad; }

std::span<double> Tensor::mutable_grad() {
  auto& i = impl();
  if (i.grad.empty()) i.grad.assign(i.values.size(), 0.0);
  return i.grad;
}

void Tensor::clear_grad() {
  auto& i = impl();
  i.grad.clear();
  i.grad.shrink_to_fit();
}

Tensor Tensor::clone() const {
  auto copy = std::make_shared<Impl>(impl());
  return Tensor(std::move(copy));
}

// ---------------------------------------------------------------------------
// Tape

Tensor Tape::record(std::vector<Tensor> inputs, Tensor output, std::function<void(const Node&)> rule) {
  for (double v : output.values()) {
    if (!std::isfinite(v)) throw DomainError("tape: non-finite value produced in forward pass");
  }
  const bool tracked = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!tracked) return output;
  output.set_requires_grad(true);
  nodes_.push_back(Node{std::move(inputs), output, std::move(rule)});
  return output;
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  require_2d("matmul", b);
  if (a.rank() > 2 || a.cols() != b.rows()) shape_error("matmul", a.shape(), b.shape());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  std::vector<double> out(n * m, 0.0);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      if (x == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += x * bv[p * m + j];
    }
  }
  Shape shape = a.rank() == 1 ? Shape{m} : Shape{n, m};
  return record({a, b}, Tensor::from(std::move(shape), std::move(out)), [n, k, m](const Node& node) {
    Tensor lhs = node.inputs[0];
    Tensor rhs = node.inputs[1];
    auto g = node.output.grad();
    if (lhs.requires_grad()) {
      auto bv = rhs.values();
      auto ga = lhs.mutable_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += g[i * m + j] * bv[p * m + j];
          ga[i * k + p] += s;
        }
    }
    if (rhs.requires_grad()) {
      auto av = lhs.values();
      auto gb = rhs.mutable_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double x = av[i * k + p];
          if (x == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += x * g[i * m + j];
        }
    }
  });
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  auto av = a.values();
  auto bv = b.values();
  if (a.shape() == b.shape()) {
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return record({a, b}, Tensor::from(a.shape(), std::move(out)), [](const Node& node) {
      Tensor x = node.inputs[0], y = node.inputs[1];
      accumulate(x, node.output.grad());
      accumulate(y, node.output.grad());
    });
  }
  if (!is_row_broadcast(a, b)) shape_error("add", a.shape(), b.shape());
  const std::size_t n = a.rows(), d = a.cols();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = av[i * d + j] + bv[j];
  return record({a, b}, Tensor::from(a.shape(), std::move(out)), [n, d](const Node& node) {
    Tensor x = node.inputs[0], y = node.inputs[1];
    auto g = node.output.grad();
    accumulate(x, g);
    if (y.requires_grad()) {
      auto gy = y.mutable_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) gy[j] += g[i * d + j];
    }
  });
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return record({a, b}, Tensor::from(a.shape(), std::move(out)), [](const Node& node) {
    Tensor x = node.inputs[0], y = node.inputs[1];
    auto g = node.output.grad();
    accumulate(x, g);
    if (y.requires_grad()) {
      auto gy = y.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gy[i] -= g[i];
    }
  });
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  auto av = a.values();
  auto bv = b.values();
  const std::size_t d = a.cols();
  // Maps an element index of `a` to the index of the `b` element it meets.
  std::function<std::size_t(std::size_t)> b_index;
  if (a.shape() == b.shape()) {
    b_index = [](std::size_t i) { return i; };
  } else if (is_row_broadcast(a, b)) {
    b_index = [d](std::size_t i) { return i % d; };
  } else if (is_col_broadcast(a, b)) {
    b_index = [d](std::size_t i) { return i / d; };
  } else {
    shape_error("mul", a.shape(), b.shape());
  }
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[b_index(i)];
  return record({a, b}, Tensor::from(a.shape(), std::move(out)), [b_index](const Node& node) {
    Tensor x = node.inputs[0], y = node.inputs[1];
    auto g = node.output.grad();
    auto xv = x.values();
    auto yv = y.values();
    if (x.requires_grad()) {
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[b_index(i)];
    }
    if (y.requires_grad()) {
      auto gy = y.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gy[b_index(i)] += g[i] * xv[i];
    }
  });
}

Tensor Tape::scale(const Tensor& a, double factor) {
  Tensor out = map_unary(a, [factor](double x) { return x * factor; });
  return record({a}, out, [factor](const Node& node) {
    Tensor x = node.inputs[0];
    if (!x.requires_grad()) return;
    auto g = node.output.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
  });
}

Tensor Tape::add_scalar(const Tensor& a, double value) {
  Tensor out = map_unary(a, [value](double x) { return x + value; });
  return record({a}, out, [](const Node& node) {
    Tensor x = node.inputs[0];
    accumulate(x, node.output.grad());
  });
}

Tensor Tape::concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor Tape::concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DomainError("concat: no operands");
  const std::size_t rank = parts[0].rank();
  for (const auto& p : parts) {
    if (p.rank() != rank) shape_error("concat", parts[0].shape(), p.shape());
  }
  if (rank == 1 || axis == 0) {
    // Row stacking (or end-to-end join for vectors) keeps each part contiguous.
    if (rank == 1 && axis != 0) throw ConfigError("concat: axis 1 is invalid for 1-D operands");
    std::size_t total_rows = 0;
    std::vector<double> out;
    for (const auto& p : parts) {
      if (rank == 2 && p.cols() != parts[0].cols()) shape_error("concat", parts[0].shape(), p.shape());
      total_rows += rank == 2 ? p.rows() : p.size();
      out.insert(out.end(), p.values().begin(), p.values().end());
    }
    Shape shape = rank == 1 ? Shape{total_rows} : Shape{total_rows, parts[0].cols()};
    return record(std::vector<Tensor>(parts.begin(), parts.end()), Tensor::from(std::move(shape), std::move(out)),
                  [](const Node& node) {
                    auto g = node.output.grad();
                    std::size_t offset = 0;
                    for (Tensor p : node.inputs) {
                      if (p.requires_grad()) accumulate(p, g.subspan(offset, p.size()));
                      offset += p.size();
                    }
                  });
  }
  if (axis != 1) throw ConfigError("concat: axis must be 0 or 1");
  const std::size_t n = parts[0].rows();
  std::size_t total_cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != n) shape_error("concat", parts[0].shape(), p.shape());
    total_cols += p.cols();
  }
  std::vector<double> out(n * total_cols);
  std::size_t col0 = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.cols();
    auto pv = p.values();
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(i * c), c,
                  out.begin() + static_cast<std::ptrdiff_t>(i * total_cols + col0));
    col0 += c;
  }
  return record(std::vector<Tensor>(parts.begin(), parts.end()), Tensor::from({n, total_cols}, std::move(out)),
                [n, total_cols](const Node& node) {
                  auto g = node.output.grad();
                  std::size_t col = 0;
                  for (Tensor p : node.inputs) {
                    const std::size_t c = p.cols();
                    if (p.requires_grad()) {
                      auto gp = p.mutable_grad();
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < c; ++j) gp[i * c + j] += g[i * total_cols + col + j];
                    }
                    col += c;
                  }
                });
}

Tensor Tape::transpose(const Tensor& a) {
  require_2d("transpose", a);
  const std::size_t n = a.rows(), m = a.cols();
  auto av = a.values();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = av[i * m + j];
  return record({a}, Tensor::from({m, n}, std::move(out)), [n, m](const Node& node) {
    Tensor x = node.inputs[0];
    if (!x.requires_grad()) return;
    auto g = node.output.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += g[j * n + i];
  });
}

Tensor Tape::reshape(const Tensor& a, Shape shape) {
  if (product(shape) != a.size()) shape_error("reshape", a.shape(), shape);
  std::vector<double> out(a.values().begin(), a.values().end());
  return record({a}, Tensor::from(std::move(shape), std::move(out)), [](const Node& node) {
    Tensor x = node.inputs[0];
    accumulate(x, node.output.grad());
  });
}

Tensor Tape::relu(const Tensor& a) {
  Tensor out = map_unary(a, [](double x) { return x > 0.0 ? x : 0.0; });
  return record({a}, out, [](const Node& node) {
    Tensor x = node.inputs[0];
    if (!x.requires_grad()) return;
    auto g = node.output.grad();
    auto xv = x.values();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  });
}

Tensor Tape::leaky_relu(const Tensor& a, double slope) {
  Tensor out = map_unary(a, [slope](double x) { return x > 0.0 ? x : slope * x; });
  return record({a}, out, [slope](const Node& node) {
    Tensor x = node.inputs[0];
    if (!x.requires_grad()) return;
    auto g = node.output.grad();
    auto xv = x.values();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += xv[i] > 0.0 ? g[i] : slope * g[i];
  });
}

Tensor Tape::sigmoid(const Tensor& a) {
  Tensor out = map_unary(a, [](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return record({a}, out, [](const Node& node) {
    Tensor x = node.inputs[0];
    if (!x.requires_grad()) return;
    auto g = node.output.grad();
    auto y = node.output.values();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Tensor Tape::tanh(const Tensor& a) {
  Tensor out = map_unary(a, [](double x) { return std::tanh(x); });
  return record({a}, out, [](const Node& node) {
    Tensor x = node.inputs[0];
    if (!x.requires_grad()) return;
    auto g = node.output.grad();
    auto y = node.output.values();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Tensor Tape::row_softmax(const Tensor& a, std::optional<std::span<const bool>> mask) {
  if (a.rank() > 2) throw ConfigError("row_softmax: expected 1-D or 2-D tensor, got " + shape_string(a.shape()));
  if (mask && mask->size() != a.size()) {
    throw ConfigError("row_softmax: mask holds " + std::to_string(mask->size()) + " entries for shape " +
                      shape_string(a.shape()));
  }
  const std::size_t n = a.rows(), m = a.cols();
  if (m == 0) throw DomainError("row_softmax: empty rows");
  auto av = a.values();
  std::vector<double> out(a.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < m; ++j)
      if (!mask || (*mask)[i * m + j]) mx = std::max(mx, av[i * m + j]);
    if (mx == -INFINITY) continue;
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (mask && !(*mask)[i * m + j]) continue;
      out[i * m + j] = std::exp(av[i * m + j] - mx);
      total += out[i * m + j];
    }
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= total;
  }
  return record({a}, Tensor::from(a.shape(), std::move(out)), [n, m](const Node& node) {
    Tensor x = node.inputs[0];
    if (!x.requires_grad()) return;
    auto g = node.output.grad();
    auto y = node.output.values();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += y[i * m + j] * g[i * m + j];
      for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += y[i * m + j] * (g[i * m + j] - dot);
    }
  });
}

Tensor Tape::row_normalize(const Tensor& a) {
  require_2d("row_normalize", a);
  const std::size_t n = a.rows(), m = a.cols();
  auto av = a.values();
  std::vector<double> out(a.size(), 0.0);
  std::vector<double> sums(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) sums[i] += av[i * m + j];
    if (sums[i] == 0.0) continue;
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = av[i * m + j] / sums[i];
  }
  return record({a}, Tensor::from(a.shape(), std::move(out)), [n, m, sums](const Node& node) {
    Tensor x = node.inputs[0];
    if (!x.requires_grad()) return;
    auto g = node.output.grad();
    auto y = node.output.values();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < n; ++i) {
      if (sums[i] == 0.0) continue;
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * y[i * m + j];
      for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += (g[i * m + j] - dot) / sums[i];
    }
  });
}

namespace {

// Shared layout logic for axis reductions over 1-D and 2-D tensors.
struct ReduceLayout {
  std::size_t outer;   // number of outputs
  std::size_t inner;   // length of each reduced run
  std::size_t stride;  // step between reduced elements
  std::size_t step;    // step between run starts
  Shape out_shape;
};

ReduceLayout reduce_layout(const char* kind, const Tensor& a, std::size_t axis) {
  if (a.rank() == 1) {
    if (axis != 0) throw ConfigError(std::string(kind) + ": axis out of range for " + shape_string(a.shape()));
    if (a.size() == 0) throw DomainError(std::string(kind) + ": empty reduction axis");
    return {1, a.size(), 1, 0, {1}};
  }
  if (a.rank() != 2 || axis > 1) {
    throw ConfigError(std::string(kind) + ": axis " + std::to_string(axis) + " invalid for " +
                      shape_string(a.shape()));
  }
  const std::size_t n = a.rows(), m = a.cols();
  if ((axis == 0 ? n : m) == 0) throw DomainError(std::string(kind) + ": empty reduction axis");
  if (axis == 0) return {m, n, m, 1, {m}};
  return {n, m, 1, m, {n}};
}

}  // namespace

Tensor Tape::reduce_sum_axis(const Tensor& a, std::size_t axis) {
  const ReduceLayout l = reduce_layout("reduce_sum_axis", a, axis);
  auto av = a.values();
  std::vector<double> out(l.outer, 0.0);
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t r = 0; r < l.inner; ++r) out[o] += av[o * l.step + r * l.stride];
  return record({a}, Tensor::from(l.out_shape, std::move(out)), [l](const Node& node) {
    Tensor x = node.inputs[0];
    if (!x.requires_grad()) return;
    auto g = node.output.grad();
    auto gx = x.mutable_grad();
    for (std::size_t o = 0; o < l.outer; ++o)
      for (std::size_t r = 0; r < l.inner; ++r) gx[o * l.step + r * l.stride] += g[o];
  });
}

Tensor Tape::reduce_mean_axis(const Tensor& a, std::size_t axis) {
  const ReduceLayout l = reduce_layout("reduce_mean_axis", a, axis);
  return scale(reduce_sum_axis(a, axis), 1.0 / static_cast<double>(l.inner));
}

Tensor Tape::reduce_max_axis(const Tensor& a, std::size_t axis) {
  const ReduceLayout l = reduce_layout("reduce_max_axis", a, axis);
  auto av = a.values();
  std::vector<double> out(l.outer);
  std::vector<std::size_t> arg(l.outer);
  for (std::size_t o = 0; o < l.outer; ++o) {
    std::size_t best = o * l.step;
    for (std::size_t r = 1; r < l.inner; ++r) {
      const std::size_t idx = o * l.step + r * l.stride;
      if (av[idx] > av[best]) best = idx;
    }
    arg[o] = best;
    out[o] = av[best];
  }
  return record({a}, Tensor::from(l.out_shape, std::move(out)), [arg](const Node& node) {
    Tensor x = node.inputs[0];
    if (!x.requires_grad()) return;
    auto g = node.output.grad();
    auto gx = x.mutable_grad();
    for (std::size_t o = 0; o < arg.size(); ++o) gx[arg[o]] += g[o];
  });
}

Tensor Tape::sum(const Tensor& a) {
  if (a.size() == 0) throw DomainError("sum: empty tensor");
  return reduce_sum_axis(reshape(a, {a.size()}), 0);
}

Tensor Tape::squared_l2_distance(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size() || a.rows() != b.rows()) shape_error("squared_l2_distance", a.shape(), b.shape());
  auto av = a.values();
  auto bv = b.values();
  double total = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) total += (av[i] - bv[i]) * (av[i] - bv[i]);
  return record({a, b}, Tensor::scalar(total), [](const Node& node) {
    Tensor x = node.inputs[0], y = node.inputs[1];
    const double g = node.output.grad()[0];
    auto xv = x.values();
    auto yv = y.values();
    if (x.requires_grad()) {
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += 2.0 * g * (xv[i] - yv[i]);
    }
    if (y.requires_grad()) {
      auto gy = y.mutable_grad();
      for (std::size_t i = 0; i < xv.size(); ++i) gy[i] -= 2.0 * g * (xv[i] - yv[i]);
    }
  });
}

Tensor Tape::cross_entropy(const Tensor& logits, std::size_t true_class) {
  if (logits.rows() != 1) throw ConfigError("cross_entropy: expected a logit vector, got " + shape_string(logits.shape()));
  const std::size_t c = logits.size();
  if (true_class >= c) {
    throw ContractViolation("cross_entropy: class " + std::to_string(true_class) + " out of range for " +
                            std::to_string(c) + " logits");
  }
  auto z = logits.values();
  const double mx = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double v : z) total += std::exp(v - mx);
  const double lse = mx + std::log(total);
  std::vector<double> probs(c);
  for (std::size_t j = 0; j < c; ++j) probs[j] = std::exp(z[j] - lse);
  return record({logits}, Tensor::scalar(lse - z[true_class]), [probs, true_class](const Node& node) {
    Tensor x = node.inputs[0];
    if (!x.requires_grad()) return;
    const double g = node.output.grad()[0];
    auto gx = x.mutable_grad();
    for (std::size_t j = 0; j < probs.size(); ++j) gx[j] += g * (probs[j] - (j == true_class ? 1.0 : 0.0));
  });
}

TopK Tape::top_k_select(const Tensor& scores, std::size_t k) {
  if (scores.rank() != 1) throw ConfigError("top_k_select: expected a 1-D tensor, got " + shape_string(scores.shape()));
  if (k == 0 || k > scores.size()) {
    throw DomainError("top_k_select: k = " + std::to_string(k) + " out of range for " + std::to_string(scores.size()) +
                      " entries");
  }
  auto sv = scores.values();
  std::vector<std::size_t> order(sv.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return sv[i] > sv[j]; });
  order.resize(k);
  std::vector<double> picked(k);
  for (std::size_t i = 0; i < k; ++i) picked[i] = sv[order[i]];
  Tensor values = record({scores}, Tensor::vector(std::move(picked)), [order](const Node& node) {
    Tensor x = node.inputs[0];
    if (!x.requires_grad()) return;
    auto g = node.output.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < order.size(); ++i) gx[order[i]] += g[i];
  });
  return TopK{values, std::move(order)};
}

Tensor Tape::gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_2d("gather_rows", a);
  const std::size_t n = a.rows(), d = a.cols();
  std::vector<double> out;
  out.reserve(rows.size() * d);
  auto av = a.values();
  for (std::size_t r : rows) {
    if (r >= n) {
      throw ContractViolation("gather_rows: row " + std::to_string(r) + " out of range for " + shape_string(a.shape()));
    }
    out.insert(out.end(), av.begin() + static_cast<std::ptrdiff_t>(r * d),
               av.begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return record({a}, Tensor::from({idx.size(), d}, std::move(out)), [idx, d](const Node& node) {
    Tensor x = node.inputs[0];
    if (!x.requires_grad()) return;
    auto g = node.output.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gx[idx[i] * d + j] += g[i * d + j];
  });
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) throw ContractViolation("backward: loss must be a scalar, got " + shape_string(loss.shape()));
  if (consumed_) throw ContractViolation("backward: tape already replayed");
  const bool on_tape = std::any_of(nodes_.begin(), nodes_.end(), [&](const Node& n) { return n.output.same_storage(loss); });
  if (!on_tape && !loss.requires_grad()) {
    throw ContractViolation("backward: loss was not produced on this tape");
  }
  consumed_ = true;
  Tensor seed = loss;
  seed.mutable_grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output.has_grad()) it->backward(*it);
  }
}

// ---------------------------------------------------------------------------

Tensor forward_op(Tape& tape, OpKind kind, std::span<const Tensor> operands, const OpArgs& args) {
  auto need = [&](std::size_t count) {
    if (operands.size() != count) {
      throw ConfigError(to_string(kind) + ": expected " + std::to_string(count) + " operands, got " +
                        std::to_string(operands.size()));
    }
  };
  switch (kind) {
    case OpKind::matmul: need(2); return tape.matmul(operands[0], operands[1]);
    case OpKind::add: need(2); return tape.add(operands[0], operands[1]);
    case OpKind::mul: need(2); return tape.mul(operands[0], operands[1]);
    case OpKind::concat: return tape.concat(operands, args.axis);
    case OpKind::relu: need(1); return tape.relu(operands[0]);
    case OpKind::leaky_relu: need(1); return tape.leaky_relu(operands[0]);
    case OpKind::row_softmax: need(1); return tape.row_softmax(operands[0], args.mask);
    case OpKind::reduce_mean_axis: need(1); return tape.reduce_mean_axis(operands[0], args.axis);
    case OpKind::reduce_max_axis: need(1); return tape.reduce_max_axis(operands[0], args.axis);
    case OpKind::squared_l2_distance: need(2); return tape.squared_l2_distance(operands[0], operands[1]);
    case OpKind::cross_entropy: need(1); return tape.cross_entropy(operands[0], args.index);
    case OpKind::sigmoid: need(1); return tape.sigmoid(operands[0]);
    case OpKind::top_k_select: need(1); return tape.top_k_select(operands[0], args.index).values;
  }
  throw ConfigError("forward_op: unknown kind");
}

}  // namespace tsgnn
