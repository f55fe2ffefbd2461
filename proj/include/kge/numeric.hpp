#pragma once

#include "kge/autograd.hpp"
#include "kge/rng.hpp"
#include "kge/tensor.hpp"

namespace kge {

// exp(u_i / T) / sum_j exp(u_j / T), max-subtracted. Throws ParameterError
// for T <= 0.
Tensor softmax_temp(const Tensor& u, double temperature);

// sum_i p_i ln(p_i / q_i) with 0 ln(0 / q) = 0. Throws DivergenceError when
// q_i = 0 where p_i > 0, ParameterError when p or q is not a distribution.
double kl_divergence(const Tensor& p, const Tensor& q);

// Inverted dropout: survivors are scaled by 1 / (1 - rate). Identity when not
// training or when rate == 0 (no draws are consumed in either case).
Var dropout(const Var& x, double rate, RngState& rng, bool training);

// Per-column batch normalization over a [bs x d] input. The variance is
// floored at kEpsilon before taking the square root.
class BatchNorm {
 public:
  static constexpr double kEpsilon = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm() = default;
  BatchNorm(const std::string& prefix, std::size_t features);

  Var operator()(const Var& x, bool training);

  std::size_t features() const { return weight_.value().numel(); }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  Tensor& running_mean() { return running_mean_; }
  Tensor& running_var() { return running_var_; }
  const Tensor& running_mean() const { return running_mean_; }
  const Tensor& running_var() const { return running_var_; }

 private:
  Parameter weight_;
  Parameter bias_;
  Tensor running_mean_;
  Tensor running_var_;
};

}  // namespace kge
