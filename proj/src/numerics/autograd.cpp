#include "emo/numerics/autograd.hpp"

#include "emo/error.hpp"

namespace emo::num {

namespace {
thread_local Tape* t_active = nullptr;

void add_into(Tensor& dst, const Tensor& src) {
  EMO_CHECK(dst.size() == src.size(), ShapeError,
            "gradient shape " + shape_str(src.shape()) + " does not match " + shape_str(dst.shape()));
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

template <typename Inputs>
bool any_requires_grad(const Inputs& inputs) {
  for (const Var& v : inputs) {
    if (v.requires_grad()) return true;
  }
  return false;
}
}  // namespace

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var Var::parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

void Var::accumulate_grad(const Tensor& g) const {
  if (!requires_grad()) return;
  if (node_->grad.empty()) {
    EMO_CHECK(g.size() == node_->value.size(), ShapeError,
              "gradient shape " + shape_str(g.shape()) + " does not match " + shape_str(node_->value.shape()));
    node_->grad = g.reshaped(node_->value.shape());
  } else {
    add_into(node_->grad, g);
  }
}

Tape::~Tape() { clear(); }

void Tape::backward(const Var& output) {
  EMO_CHECK(output.defined() && output.value().size() == 1, ShapeError, "backward() needs a scalar output");
  EMO_CHECK(output.requires_grad(), Error, "backward() output does not depend on any parameter");
  output.accumulate_grad(Tensor(output.shape(), 1.0));
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.grad.empty() || !n.backward) continue;
    n.backward(n);
  }
}

void Tape::clear() {
  // Release closures first so captured inputs are freed without deep recursion.
  for (auto& n : nodes_) n->backward = nullptr;
  nodes_.clear();
}

Tape* Tape::active() { return t_active; }

Tape::Scope::Scope(Tape& tape) : previous_(t_active) { t_active = &tape; }
Tape::Scope::~Scope() { t_active = previous_; }

Tape::Pause::Pause() : previous_(t_active) { t_active = nullptr; }
Tape::Pause::~Pause() { t_active = previous_; }

Var make_op(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (t_active != nullptr && any_requires_grad(inputs)) {
    node->requires_grad = true;
    node->backward = std::move(backward);
    t_active->record(node);
  }
  return Var(std::move(node));
}

Var make_op(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (t_active != nullptr && any_requires_grad(inputs)) {
    node->requires_grad = true;
    node->backward = std::move(backward);
    t_active->record(node);
  }
  return Var(std::move(node));
}

}  // namespace emo::num
