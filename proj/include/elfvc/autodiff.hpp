#pragma once

// Reverse-mode autodiff over a dynamically built tape.
//
// A Var is a shared node holding a value tensor, an optional gradient buffer,
// and a closure that scatters the node's gradient into its parents.  Graphs
// are rebuilt every step (define-by-run); when gradients are globally
// disabled, ops produce plain value nodes with no parent links so activations
// are freed as soon as the last consumer drops them.

#include <functional>
#include <memory>
#include <vector>

#include "elfvc/tensor.hpp"

namespace elfvc {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily by grad_buf()
  bool requires_grad = false;
  bool has_grad = false;
  const char* op = "leaf";
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;  // empty for leaves

  // Gradient accumulator, zero-initialized on first touch.
  Tensor& grad_buf();
};

// Leaf with no gradient of its own (inputs, constants).
Var constant(Tensor value);
// Trainable leaf.
Var param(Tensor value);

// Thread-local gradient mode; NoGradScope disables taping in a region.
bool grad_enabled();
struct NoGradScope {
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  bool prev_;
};

// Shared constructor for op nodes.  Drops parents and the closure when the
// result does not require gradients.
Var make_op(const char* name, Tensor value, std::vector<Var> parents,
            std::function<void(Node&)> backprop);

// Reverse pass from a scalar loss.  Seeds d(loss)/d(loss) = 1 and walks the
// tape in reverse topological order (deterministic: parent order is the
// construction order).  Throws std::invalid_argument if `loss` is not a
// scalar.  Gradients accumulate into Node::grad; zero them between passes.
void backward(const Var& loss);

void zero_grad(const std::vector<Var>& vars);

// Gradient tensors for `params` after a backward pass (zeros if untouched).
std::vector<Tensor> grads_of(const std::vector<Var>& params);

}  // namespace elfvc
