#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "emo/numerics/tensor.hpp"

namespace emo::num {

struct Node;

// Reads self.grad (and self.value when convenient) and pushes gradient
// contributions into the op's inputs.
using BackwardFn = std::function<void(const Node& self)>;

struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows into it
  bool requires_grad = false;
  BackwardFn backward;
};

// Handle to a value that may participate in reverse-mode differentiation.
// Cheap to copy; copies alias the same node.
class Var {
 public:
  Var() = default;

  static Var constant(Tensor value);
  // Leaf that accumulates gradients across backward passes until zero_grad().
  static Var parameter(Tensor value);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  // Mutable access for optimizers; do not use while a tape references the node.
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }

  void zero_grad() { node_->grad = Tensor(); }
  void accumulate_grad(const Tensor& g) const;
  Var detach() const { return constant(node_->value); }

  Node* node() const { return node_.get(); }

 private:
  friend class Tape;
  friend Var make_op(Tensor, std::initializer_list<Var>, BackwardFn);
  friend Var make_op(Tensor, const std::vector<Var>&, BackwardFn);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

// Records differentiable ops in creation order; creation order is a valid
// topological order, so backward is a single reverse sweep. One tape per
// thread may be active at a time. When no tape is active, ops produce
// constants and keep no history.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  // Seeds d(output)/d(output) = 1; output must hold a single scalar.
  void backward(const Var& output);
  void clear();
  std::size_t size() const { return nodes_.size(); }

  static Tape* active();

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  // Temporarily disables recording on this thread.
  class Pause {
   public:
    Pause();
    ~Pause();
    Pause(const Pause&) = delete;
    Pause& operator=(const Pause&) = delete;

   private:
    Tape* previous_;
  };

 private:
  friend Var make_op(Tensor, std::initializer_list<Var>, BackwardFn);
  friend Var make_op(Tensor, const std::vector<Var>&, BackwardFn);
  void record(std::shared_ptr<Node> node) { nodes_.push_back(std::move(node)); }
  std::vector<std::shared_ptr<Node>> nodes_;
};

// Builds the result of an op. If a tape is active and any input requires a
// gradient, the result is recorded with `backward`; otherwise it is a constant.
Var make_op(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
Var make_op(Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

}  // namespace emo::num
