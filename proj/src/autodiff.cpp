#include "sbs/autodiff.hpp"

#include <unordered_set>

namespace sbs {

namespace {

template <class S>
void check_same_dims(const Var<S>& a, const Var<S>& b, const char* op) {
  if (!a->value.same_dims(b->value))
    throw ShapeError(str(op, ": dims ", dims_to_string(a->value.dims()), " vs ",
                         dims_to_string(b->value.dims())));
}

// Post-order DFS, iterative; returns nodes so that parents precede children.
template <class S>
std::vector<Node<S>*> topo_order(Node<S>* root) {
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> visited;
  std::vector<std::pair<Node<S>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<S>* p = node->parents[next].get();
      ++next;
      if (p && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

template <class S>
void backward(const Var<S>& root, S seed) {
  if (!root) throw ValueError("backward: null root");
  if (root->value.size() != 1)
    throw ValueError(str("backward: root must be scalar, got dims ",
                         dims_to_string(root->value.dims())));
  auto order = topo_order(root.get());
  root->accumulate_grad(ArrayX<S>::Constant(1, seed));
  // order has parents before children; visit children first.
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->requires_grad && n->backprop && n->has_grad()) n->backprop(*n);
  }
}

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  check_same_dims(a, b, "add");
  Tensor<S> out(a->value.dims(), a->value.raw() + b->value.raw());
  auto n = make_node(std::move(out), {a, b});
  if (n->requires_grad) {
    n->backprop = [a, b](Node<S>& self) {
      if (a->requires_grad) a->accumulate_grad(self.grad.raw());
      if (b->requires_grad) b->accumulate_grad(self.grad.raw());
    };
  }
  return n;
}

template <class S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  check_same_dims(a, b, "sub");
  Tensor<S> out(a->value.dims(), a->value.raw() - b->value.raw());
  auto n = make_node(std::move(out), {a, b});
  if (n->requires_grad) {
    n->backprop = [a, b](Node<S>& self) {
      if (a->requires_grad) a->accumulate_grad(self.grad.raw());
      if (b->requires_grad) b->accumulate_grad((-self.grad.raw()).eval());
    };
  }
  return n;
}

template <class S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  check_same_dims(a, b, "mul");
  Tensor<S> out(a->value.dims(), a->value.raw() * b->value.raw());
  auto n = make_node(std::move(out), {a, b});
  if (n->requires_grad) {
    n->backprop = [a, b](Node<S>& self) {
      if (a->requires_grad) a->accumulate_grad((self.grad.raw() * b->value.raw()).eval());
      if (b->requires_grad) b->accumulate_grad((self.grad.raw() * a->value.raw()).eval());
    };
  }
  return n;
}

template <class S>
Var<S> scale(const Var<S>& a, S factor) {
  Tensor<S> out(a->value.dims(), a->value.raw() * factor);
  auto n = make_node(std::move(out), {a});
  if (n->requires_grad) {
    n->backprop = [a, factor](Node<S>& self) {
      if (a->requires_grad) a->accumulate_grad((self.grad.raw() * factor).eval());
    };
  }
  return n;
}

template <class S>
Var<S> sum(const Var<S>& a) {
  Tensor<S> out = Tensor<S>::scalar(a->value.raw().sum());
  auto n = make_node(std::move(out), {a});
  if (n->requires_grad) {
    n->backprop = [a](Node<S>& self) {
      if (a->requires_grad)
        a->accumulate_grad(ArrayX<S>::Constant(a->value.size(), self.grad[0]));
    };
  }
  return n;
}

template <class S>
Var<S> reshape(const Var<S>& a, Dims new_dims) {
  Tensor<S> out = a->value.reshaped(std::move(new_dims));
  auto n = make_node(std::move(out), {a});
  if (n->requires_grad) {
    n->backprop = [a](Node<S>& self) {
      if (a->requires_grad) a->accumulate_grad(self.grad.raw());
    };
  }
  return n;
}

template <class S>
Var<S> slice_last(const Var<S>& a, Index offset, Index len) {
  const Dims& d = a->value.dims();
  if (d.empty()) throw ShapeError("slice_last: rank-0 tensor");
  const Index last = d.back();
  if (offset < 0 || len < 1 || offset + len > last)
    throw ShapeError(str("slice_last: [", offset, ",", offset + len,
                         ") out of last axis of size ", last));
  Dims od = d;
  od.back() = len;
  const Index rows = a->value.size() / last;
  Tensor<S> out = Tensor<S>::zeros(od);
  for (Index r = 0; r < rows; ++r)
    out.raw().segment(r * len, len) = a->value.raw().segment(r * last + offset, len);
  auto n = make_node(std::move(out), {a});
  if (n->requires_grad) {
    n->backprop = [a, offset, len, last, rows](Node<S>& self) {
      if (!a->requires_grad) return;
      if (!a->has_grad()) a->grad = Tensor<S>::zeros(a->value.dims());
      for (Index r = 0; r < rows; ++r)
        a->grad.raw().segment(r * last + offset, len) += self.grad.raw().segment(r * len, len);
    };
  }
  return n;
}

template <class S>
Var<S> concat_last(const Var<S>& a, const Var<S>& b) {
  const Dims& da = a->value.dims();
  const Dims& db = b->value.dims();
  if (da.size() != db.size() || da.empty())
    throw ShapeError("concat_last: rank mismatch");
  for (std::size_t i = 0; i + 1 < da.size(); ++i)
    if (da[i] != db[i])
      throw ShapeError(str("concat_last: dims ", dims_to_string(da), " vs ",
                           dims_to_string(db)));
  const Index la = da.back(), lb = db.back();
  Dims od = da;
  od.back() = la + lb;
  const Index rows = a->value.size() / la;
  Tensor<S> out = Tensor<S>::zeros(od);
  for (Index r = 0; r < rows; ++r) {
    out.raw().segment(r * (la + lb), la) = a->value.raw().segment(r * la, la);
    out.raw().segment(r * (la + lb) + la, lb) = b->value.raw().segment(r * lb, lb);
  }
  auto n = make_node(std::move(out), {a, b});
  if (n->requires_grad) {
    n->backprop = [a, b, la, lb, rows](Node<S>& self) {
      if (a->requires_grad) {
        if (!a->has_grad()) a->grad = Tensor<S>::zeros(a->value.dims());
        for (Index r = 0; r < rows; ++r)
          a->grad.raw().segment(r * la, la) += self.grad.raw().segment(r * (la + lb), la);
      }
      if (b->requires_grad) {
        if (!b->has_grad()) b->grad = Tensor<S>::zeros(b->value.dims());
        for (Index r = 0; r < rows; ++r)
          b->grad.raw().segment(r * lb, lb) += self.grad.raw().segment(r * (la + lb) + la, lb);
      }
    };
  }
  return n;
}

#define SBS_INSTANTIATE(S)                                          \
  template void backward<S>(const Var<S>&, S);                      \
  template Var<S> add<S>(const Var<S>&, const Var<S>&);             \
  template Var<S> sub<S>(const Var<S>&, const Var<S>&);             \
  template Var<S> mul<S>(const Var<S>&, const Var<S>&);             \
  template Var<S> scale<S>(const Var<S>&, S);                       \
  template Var<S> sum<S>(const Var<S>&);                            \
  template Var<S> reshape<S>(const Var<S>&, Dims);                  \
  template Var<S> slice_last<S>(const Var<S>&, Index, Index);       \
  template Var<S> concat_last<S>(const Var<S>&, const Var<S>&);

SBS_INSTANTIATE(float)
SBS_INSTANTIATE(double)
#undef SBS_INSTANTIATE

}  // namespace sbs
