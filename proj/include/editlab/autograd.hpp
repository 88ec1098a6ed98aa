#pragma once

#include <functional>
#include <span>
#include <vector>

#include "editlab/tensor.hpp"

namespace editlab {

class Tape;

// Handle to a node on a tape. Valid only while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  double scalar() const;  // requires a 1-element tensor
};

// Reverse-mode tape. Nodes are appended in forward order, which is already a
// topological order, so backward is a single reverse sweep. A tape is built
// per forward pass and discarded afterwards.
class Tape {
 public:
  Var leaf(Tensor value);
  Var param(Parameter& p);  // gradient flows iff p.trainable

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double c);
  Var relu(Var a);
  Var sigmoid(Var a);
  Var transpose(Var a);
  Var slice_cols(Var a, int64_t c0, int64_t c1);
  Var concat_cols(const std::vector<Var>& parts);
  Var take_rows(Var a, std::vector<int64_t> indices);  // gather / embedding lookup
  Var mean_rows(Var a);                                // [m x n] -> [1 x n]
  Var softmax(Var a, int axis);
  Var causal_softmax(Var scores);  // row i normalized over columns [0, i]
  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
  Var cross_entropy(Var logits, std::vector<int64_t> targets);
  Var cosine(Var u, Var v);  // [1 x d], [1 x d] -> [1 x 1]
  Var binary_cross_entropy(Var probs, std::vector<double> labels);

  void backward(Var root);

  // Gradients of registered parameters after backward, in registration order.
  struct ParamGrad {
    Parameter* param;
    const Tensor* grad;
  };
  std::vector<ParamGrad> param_grads() const;
  // Adds tape gradients into each Parameter::grad.
  void apply_param_grads(double scale = 1.0);

  const Tensor& value_of(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  Tensor& grad_of(int id) { return nodes_[static_cast<size_t>(id)].grad; }
  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated on demand during backward
    bool needs_grad = false;
    bool grad_ready = false;
    Parameter* param = nullptr;
    std::function<void(Tape&, int)> pull;  // distributes grad to inputs
  };

  Var make(Tensor value, bool needs_grad, std::function<void(Tape&, int)> pull);
  void ensure_grad(int id);
  bool needs(Var v) const { return nodes_[static_cast<size_t>(v.id)].needs_grad; }

  std::vector<Node> nodes_;
  std::vector<int> param_nodes_;
};

}  // namespace editlab
