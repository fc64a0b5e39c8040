#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "sbs/tensor.hpp"

namespace sbs {

/// One value in the reverse-mode differentiation graph. Nodes are created by
/// the free-function operators below and referenced through shared pointers;
/// a root keeps its whole upstream graph alive until it is dropped.
template <class S>
class Node {
public:
  explicit Node(Tensor<S> v) : value(std::move(v)) {}

  Tensor<S> value;
  Tensor<S> grad;  // allocated on first accumulation; same dims as value
  bool requires_grad = false;

  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // routes this->grad into parents

  bool has_grad() const { return grad.size() > 0; }

  void accumulate_grad(const ArrayX<S>& g) {
    if (!has_grad())
      grad = Tensor<S>::zeros(value.dims());
    grad.raw() += g;
  }

  void clear_grad() { grad = Tensor<S>(); }
};

template <class S>
using Var = std::shared_ptr<Node<S>>;

template <class S>
Var<S> make_leaf(Tensor<S> value, bool requires_grad = false) {
  auto n = std::make_shared<Node<S>>(std::move(value));
  n->requires_grad = requires_grad;
  return n;
}

template <class S>
Var<S> make_node(Tensor<S> value, std::vector<Var<S>> parents) {
  auto n = std::make_shared<Node<S>>(std::move(value));
  for (const auto& p : parents)
    if (p && p->requires_grad) n->requires_grad = true;
  n->parents = std::move(parents);
  return n;
}

/// Reverse-mode sweep from a scalar root. Fills `grad` on every reachable
/// node with requires_grad set; gradients accumulate additively across
/// fan-out. `seed` scales the whole sweep (loss weighting).
template <class S>
void backward(const Var<S>& root, S seed = S(1));

// ---- structural and elementwise operators -------------------------------

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b);

template <class S>
Var<S> sub(const Var<S>& a, const Var<S>& b);

template <class S>
Var<S> mul(const Var<S>& a, const Var<S>& b);

template <class S>
Var<S> scale(const Var<S>& a, S factor);

template <class S>
Var<S> sum(const Var<S>& a);

template <class S>
Var<S> reshape(const Var<S>& a, Dims new_dims);

/// Slice `len` entries starting at `offset` along the last axis.
template <class S>
Var<S> slice_last(const Var<S>& a, Index offset, Index len);

/// Concatenate along the last axis; all other dims must agree.
template <class S>
Var<S> concat_last(const Var<S>& a, const Var<S>& b);

template <class S>
Var<S> operator+(const Var<S>& a, const Var<S>& b) { return add(a, b); }

template <class S>
Var<S> operator-(const Var<S>& a, const Var<S>& b) { return sub(a, b); }

template <class S>
Var<S> operator*(const Var<S>& a, const Var<S>& b) { return mul(a, b); }

}  // namespace sbs
