#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include "ccrl/tensor.hpp"

namespace ccrl {

/// A trainable tensor with a stable name (used as its checkpoint key).
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
};

template <class T>
class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
template <class T>
class Var {
 public:
  Var() = default;

  Tape<T>& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Records a forward computation so that one reverse pass can produce
/// gradients for its leaves. A tape built with record=false behaves as a
/// plain evaluator: ops compute values and drop their backward rules.
///
/// Leaves borrowed via param()/constant_view() must outlive the tape.
/// Recorded values are never mutated after being pushed.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var<T> constant(Tensor<T> value);
  Var<T> constant_view(const Tensor<T>& value);
  /// Differentiable leaf owned by the tape; read its gradient with grad().
  Var<T> input(Tensor<T> value);
  /// Differentiable leaf (when recording) borrowing p.value. Repeated calls
  /// with the same parameter return the same node.
  Var<T> param(const Parameter<T>& p);

  void backward(Var<T> loss);

  const Tensor<T>& value(std::uint32_t id) const;
  bool requires_grad(std::uint32_t id) const { return nodes_.at(id).requires_grad; }
  const Tensor<T>& grad(Var<T> v) const;
  /// Gradient reaching `p` in the last backward pass; zeros if unreached.
  Tensor<T> grad_of(const Parameter<T>& p) const;
  bool has_param(const Parameter<T>& p) const { return param_nodes_.contains(&p); }

  // Op-building interface used by the functions in ccrl::ad.
  Var<T> record(const char* op, Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn);
  Var<T> record(const char* op, Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn);
  const Tensor<T>& out_grad(std::uint32_t self) const { return nodes_[self].grad; }
  /// Gradient buffer of a node, zero-initialized on first use.
  Tensor<T>& accum(std::uint32_t id);

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* view = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    bool leaf = false;
    BackwardFn backward;
  };

  Var<T> push(Node node);

  bool record_;
  bool consumed_ = false;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::uint32_t> param_nodes_;
};

template <class T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

extern template class Tape<float>;
extern template class Tape<double>;

namespace ad {

template <class T>
Var<T> matmul(Var<T> a, Var<T> b);
/// Elementwise; `b` may also match a trailing suffix of a's shape (row broadcast).
template <class T>
Var<T> add(Var<T> a, Var<T> b);
template <class T>
Var<T> sub(Var<T> a, Var<T> b);
template <class T>
Var<T> mul(Var<T> a, Var<T> b);
template <class T>
Var<T> div(Var<T> a, Var<T> b);
template <class T>
Var<T> add_scalar(Var<T> a, T s);
template <class T>
Var<T> mul_scalar(Var<T> a, T s);
template <class T>
Var<T> relu(Var<T> a);
template <class T>
Var<T> exp(Var<T> a);
template <class T>
Var<T> log(Var<T> a);
template <class T>
Var<T> reshape(Var<T> a, Shape shape);
/// [d0, d1, ...] -> [d0, d1·d2·...]
template <class T>
Var<T> flatten(Var<T> a);
template <class T>
Var<T> transpose(Var<T> a);
template <class T>
Var<T> sum(Var<T> a);
template <class T>
Var<T> mean(Var<T> a);
/// Reduces the last axis.
template <class T>
Var<T> sum_last(Var<T> a);
template <class T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis);

/// x: N×C×H×W, weight: O×C×kh×kw, bias: O (optional, pass nullptr).
template <class T>
Var<T> conv2d(Var<T> x, Var<T> weight, std::type_identity_t<const Var<T>*> bias, std::size_t stride,
              std::size_t pad);
template <class T>
Var<T> avg_pool2d(Var<T> x, std::size_t kernel, std::size_t stride);
/// N×C×H×W -> N×C
template <class T>
Var<T> global_avg_pool(Var<T> x);
/// x: N×C×(spatial...), gamma/beta: C.
template <class T>
Var<T> group_norm(Var<T> x, Var<T> gamma, Var<T> beta, std::size_t groups, T eps = T(1e-5));

/// Rows scaled to unit Euclidean norm. A zero row is an error.
template <class T>
Var<T> l2normalize(Var<T> a);
/// Mean over rows of -log softmax(logits)[target].
template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const std::size_t> targets);

}  // namespace ad
}  // namespace ccrl
