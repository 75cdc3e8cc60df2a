#ifndef FUSEGUARD_AUTODIFF_HPP
#define FUSEGUARD_AUTODIFF_HPP

#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <utility>

#include "fuseguard/tensor.hpp"

namespace fuseguard {

template <class T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <class T>
class Var {
 public:
  Var() = default;

  const BasicTensor<T>& value() const { return tape_->node(id_).value; }
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const { return tape_->node(id_).requires_grad; }
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of primitive operations. Single use: build by running a
/// forward pass, call backward() once, read gradients, discard.
template <class T>
class Tape {
 public:
  // Receives the gradient flowing into a node's output (and the output value)
  // and pushes it to the inputs.
  using Adjoint = std::function<void(Tape&, const BasicTensor<T>& upstream, const BasicTensor<T>& output)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> variable(BasicTensor<T> value) { return push(std::move(value), true, {}); }
  Var<T> constant(BasicTensor<T> value) { return push(std::move(value), false, {}); }

  Var<T> record(BasicTensor<T> value, std::initializer_list<Var<T>> inputs, Adjoint adjoint) {
    bool needs = false;
    for (const auto& in : inputs) {
      if (in.tape_ != this) throw std::logic_error("operation mixes values from different tapes");
      needs = needs || node(in.id_).requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(adjoint) : Adjoint{});
  }

  void backward(const Var<T>& loss) {
    if (loss.tape_ != this) throw std::logic_error("backward: loss belongs to another tape");
    if (loss.size() != 1) {
      throw ShapeError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
    }
    if (consumed_) throw std::logic_error("backward: tape already consumed; re-run the forward pass");
    consumed_ = true;
    for (auto& n : nodes_) {
      if (n.requires_grad) n.grad = BasicTensor<T>(n.value.shape());
    }
    auto& root = nodes_[loss.id_];
    if (!root.requires_grad) return;
    root.grad[0] = T{1};
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.adjoint) n.adjoint(*this, n.grad, n.value);
    }
  }

  const BasicTensor<T>& grad(const Var<T>& v) const {
    const auto& n = node(v.id_);
    if (!consumed_) throw std::logic_error("grad: backward has not been run");
    if (!n.requires_grad) throw std::logic_error("grad: value does not require gradients");
    return n.grad;
  }

  /// Writable gradient buffer for adjoint rules; empty span when v is constant.
  std::span<T> grad_of(const Var<T>& v) {
    auto& n = nodes_[v.id_];
    return n.requires_grad ? n.grad.data() : std::span<T>{};
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

 private:
  friend class Var<T>;

  struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;
    bool requires_grad = false;
    Adjoint adjoint;
  };

  const Node& node(std::size_t id) const { return nodes_[id]; }

  Var<T> push(BasicTensor<T> value, bool requires_grad, Adjoint adjoint) {
    if (consumed_) throw std::logic_error("tape already consumed; start a new tape");
    nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(adjoint)});
    return Var<T>(this, nodes_.size() - 1);
  }

  // deque keeps references to earlier values stable while recording.
  std::deque<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace fuseguard

#endif  // FUSEGUARD_AUTODIFF_HPP
