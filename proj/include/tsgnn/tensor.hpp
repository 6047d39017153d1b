#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tsgnn {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

// Dense row-major array of doubles with an optional gradient buffer.
//
// Tensor is a handle: copies share storage, so a parameter captured by a tape
// node and the copy held by a model are the same object. Use clone() for an
// independent copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  // rows()/cols() view a 1-D tensor as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t i) const { return values()[i]; }
  double at(std::size_t r, std::size_t c) const { return values()[r * cols() + c]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<const double> grad() const;
  // Allocates a zero gradient on first use.
  std::span<double> mutable_grad();
  void clear_grad();

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  const Impl& impl() const;
  Impl& impl();

  std::shared_ptr<Impl> impl_;
};

// Primitive kinds addressable through forward_op().
enum class OpKind {
  matmul,
  add,
  mul,
  concat,
  relu,
  leaky_relu,
  row_softmax,
  reduce_mean_axis,
  reduce_max_axis,
  squared_l2_distance,
  cross_entropy,
  sigmoid,
  top_k_select,
};

std::string to_string(OpKind kind);

struct TopK {
  Tensor values;                      // selected entries, in selection order
  std::vector<std::size_t> indices;   // positions in the input, descending by score
};

// Records operations in execution order and replays their backward rules in
// reverse. One tape per forward pass; a tape is confined to a single thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // (n x k)(k x m) -> n x m; a 1-D left operand of length k gives a length-m vector.
  Tensor matmul(const Tensor& a, const Tensor& b);
  // Same shape, or b is a row vector broadcast over the rows of a.
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  // Element-wise; b may be a row vector broadcast over rows, or an n x 1 column.
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double factor);
  Tensor add_scalar(const Tensor& a, double value);
  // axis 0 stacks rows, axis 1 joins columns. 1-D inputs join end to end.
  Tensor concat(std::span<const Tensor> parts, std::size_t axis);
  Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
  Tensor transpose(const Tensor& a);
  Tensor reshape(const Tensor& a, Shape shape);

  Tensor relu(const Tensor& a);
  Tensor leaky_relu(const Tensor& a, double slope = 0.2);
  Tensor sigmoid(const Tensor& a);
  Tensor tanh(const Tensor& a);

  // Softmax along each row. Masked-out entries (mask[i*cols+j] == false) get
  // probability 0 and are excluded from the normaliser; an all-masked row is 0.
  Tensor row_softmax(const Tensor& a, std::optional<std::span<const bool>> mask = std::nullopt);
  // Divides each row by its sum; rows summing to 0 stay 0.
  Tensor row_normalize(const Tensor& a);

  Tensor reduce_mean_axis(const Tensor& a, std::size_t axis);
  Tensor reduce_max_axis(const Tensor& a, std::size_t axis);
  Tensor reduce_sum_axis(const Tensor& a, std::size_t axis);
  Tensor sum(const Tensor& a);

  Tensor squared_l2_distance(const Tensor& a, const Tensor& b);
  // -log softmax(logits)[true_class] for a 1-D logit vector.
  Tensor cross_entropy(const Tensor& logits, std::size_t true_class);

  // k largest entries of a 1-D tensor (ties: lower index first). The index
  // list is not differentiable; gradient flows into the selected entries.
  TopK top_k_select(const Tensor& scores, std::size_t k);
  Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);

  void backward(const Tensor& loss);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void(const Node&)> backward;
  };

  Tensor record(std::vector<Tensor> inputs, Tensor output, std::function<void(const Node&)> rule);

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Generic dispatch over the primitive set. Extra arguments: leaky_relu uses
// slope 0.2; reduce_* take `axis`; cross_entropy takes `index` as the class;
// top_k_select takes `index` as k and returns the selected values;
// row_softmax takes `mask`.
struct OpArgs {
  std::size_t axis = 0;
  std::size_t index = 0;
  std::optional<std::span<const bool>> mask;
};
Tensor forward_op(Tape& tape, OpKind kind, std::span<const Tensor> operands, const OpArgs& args = {});

}  // namespace tsgnn
