#pragma once
// Reverse-mode differentiation over a recorded sequence of tensor ops.
// Every op appends a node holding its value and a closure that pushes the
// node's gradient back to its inputs; backward() replays them in reverse.

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "evha/nn/tensor.hpp"

namespace evha::nn {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var input(Tensor value, bool requires_grad = false);
  // Leaf bound to a parameter; repeated calls with the same tensor share one node.
  Var param(const Tensor& p);

  Var conv2d(Var x, Var weight, Var bias, int stride, int pad);
  Var maxpool2(Var x);
  Var dense(Var x, Var weight, Var bias);
  Var relu(Var x);
  // Per-channel normalization over the spatial extent with affine gamma/beta.
  Var instance_norm(Var x, Var gamma, Var beta);
  // Standardizes a vector across its entries, then per-entry affine.
  Var layer_norm(Var x, Var gamma, Var beta);
  Var global_avg_pool(Var x);
  Var upsample2(Var x);
  Var add(Var a, Var b);
  Var concat_channels(Var a, Var b);
  Var scale(Var x, double c);
  Var sum(Var x);
  Var stopgrad(Var x);

  // D(p, z) = -(p/|p|) . (z/|z|); the norm product is floored at 1e-12.
  Var neg_cosine(Var p, Var z);
  // Scalar loss -log softmax(logits)[label]; probabilities written to `probs` when given.
  Var softmax_cross_entropy(Var logits, int label, std::vector<double>* probs = nullptr);

  // Per-element regression losses against a fixed target, averaged over elements.
  Var mse_loss(Var prediction, const Tensor& target);
  Var l1_loss(Var prediction, const Tensor& target);
  Var power_loss(Var prediction, const Tensor& target, double epsilon, double gamma);

  const Tensor& value(Var v) const;
  std::span<const double> grad(Var v) const;
  bool requires_grad(Var v) const;

  // Seeds d(out)/d(out) with `upstream` (ones for a scalar when omitted).
  void backward(Var out);
  void backward(Var out, const Tensor& upstream);

  // Gradient accumulated for a parameter bound through param(); empty if unused.
  std::vector<double> param_grad(const Tensor& p) const;

  std::size_t node_count() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

  // Set when neg_cosine had to floor a vanishing norm product.
  int stabilized_cosines() const { return stabilized_cosines_; }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::function<void()> back;
  };

  Var push(Tensor value, bool requires_grad, std::function<void()> back = {});
  Node& node(Var v);
  const Node& node(Var v) const;
  std::vector<double>& grad_buffer(Var v);

  std::vector<std::unique_ptr<Node>> nodes_;
  std::unordered_map<const Tensor*, int> params_;
  bool backward_done_ = false;
  int stabilized_cosines_ = 0;
};

}  // namespace evha::nn
