#include "elfvc/autodiff.hpp"

#include <stdexcept>
#include <unordered_set>

namespace elfvc {

namespace {
thread_local bool g_grad_enabled = true;
}

Tensor& Node::grad_buf() {
  if (!has_grad) {
    grad = Tensor::zeros(value.shape);
    has_grad = true;
  }
  return grad;
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

Var param(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->op = "param";
  return n;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradScope::NoGradScope() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradScope::~NoGradScope() { g_grad_enabled = prev_; }

Var make_op(const char* name, Tensor value, std::vector<Var> parents,
            std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = name;
  bool need = false;
  if (g_grad_enabled) {
    for (const Var& p : parents)
      if (p && p->requires_grad) {
        need = true;
        break;
      }
  }
  if (need) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

void backward(const Var& loss) {
  if (!loss) throw std::invalid_argument("backward: null variable");
  if (loss->value.numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar, got " +
                                loss->value.shape_str());
  if (!loss->requires_grad) return;

  // Iterative post-order DFS; parents are visited in construction order so
  // the reverse execution order (and thus accumulation order) is fixed.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx].get();
      ++idx;
      if (p && p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients are scratch space for this pass; reset them so a
  // repeated backward over the same graph accumulates only into leaves.
  for (Node* n : order) {
    if (n->backprop) {
      n->has_grad = false;
      n->grad = Tensor();
    }
  }

  loss->grad_buf()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->has_grad) n->backprop(*n);
  }
}

void zero_grad(const std::vector<Var>& vars) {
  for (const Var& v : vars) {
    if (!v) continue;
    v->has_grad = false;
    v->grad = Tensor();
  }
}

std::vector<Tensor> grads_of(const std::vector<Var>& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Var& p : params)
    out.push_back(p->has_grad ? p->grad : Tensor::zeros(p->value.shape));
  return out;
}

}  // namespace elfvc
