#pragma once

// Minimal reverse-mode differentiation over dense tensors. A Var is a handle
// to a graph node; ops record their parents and a closure that pushes the
// node's gradient back to them. Only nodes reachable from a Parameter with
// trainable == true carry gradients.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "kge/tensor.hpp"

namespace kge {

struct Node {
  Tensor value;
  Tensor grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
  void accumulate(const Tensor& g);
};

using NodePtr = std::shared_ptr<Node>;

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  // Gradient after backward(); empty tensor if nothing flowed here.
  const Tensor& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  const NodePtr& node() const { return node_; }
  const Shape& shape() const { return node_->value.shape(); }
  double item() const;
  // Constant leaf with the same value; gradients never flow through it.
  Var detach() const { return Var(node_->value, false); }

 private:
  NodePtr node_;
};

// Learnable tensor. The value is updated in place by the optimizer; var()
// returns a graph leaf bound to the same storage.
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Tensor value, bool trainable = true);

  const std::string& name() const { return name_; }
  bool trainable() const { return node_->requires_grad; }
  Tensor& value() { return node_->value; }
  const Tensor& value() const { return node_->value; }
  Tensor& gradient() { return node_->grad; }
  const Tensor& gradient() const { return node_->grad; }
  void zero_grad();
  Var var() const { return Var(node_); }
  bool valid() const { return static_cast<bool>(node_); }

 private:
  std::string name_;
  NodePtr node_;
};

// Accumulates d(loss)/d(param) into every reachable trainable Parameter.
// Throws UsageError unless loss holds exactly one element.
void backward(const Var& loss);

namespace ops {

Var add(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var hadamard(const Var& a, const Var& b);
Var matmul(const Var& a, const Var& b);
Var matmul_bt(const Var& a, const Var& b);
// Rows of a [n x d] table selected by ids; backward scatter-adds.
Var gather_rows(const Var& table, std::span<const std::int32_t> ids);
// Mean over rows: [bs x d] -> [1 x d].
Var mean_rows(const Var& x);
Var sum(const Var& x);
Var sum_squares(const Var& x);
Var reshape(const Var& x, Shape shape);
Var softmax_rows(const Var& x, double temperature);
// [bs x (d*k)] -> [bs x d], summing each run of k consecutive columns.
Var sum_pool(const Var& x, std::size_t k);
// Split-half complex layout: first d/2 columns real, last d/2 imaginary.
Var complex_product(const Var& h, const Var& r);
// z[i,c] = sum_{a,b} core[a,b,c] * h[i,a] * r[i,b]
Var tucker_interaction(const Var& h, const Var& r, const Var& core);
// Mean sigmoid binary cross-entropy against constant targets.
Var bce_with_logits(const Var& logits, const Tensor& targets);
// (T^2 / d) * KL(softmax(student/T) || softmax(teacher/T)); the teacher is
// read by value and never receives a gradient.
Var distill_kl(const Var& student, const Var& teacher, double temperature);
// wa * a + wb * b for scalars.
Var weighted_sum(const Var& a, double wa, const Var& b, double wb);

}  // namespace ops
}  // namespace kge
