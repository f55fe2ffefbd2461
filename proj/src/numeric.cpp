#include "kge/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kge/errors.hpp"
#include "kge/kernels.hpp"

namespace kge {
namespace {

void require_distribution(const Tensor& p, const char* name) {
  double total = 0.0;
  for (double v : p.storage()) {
    if (v < 0.0 || !std::isfinite(v)) throw ParameterError(std::string(name) + " has a negative or non-finite component");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ParameterError(std::string(name) + " sums to " + std::to_string(total) + ", not 1");
  }
}

}  // namespace

Tensor softmax_temp(const Tensor& u, double temperature) {
  if (u.numel() == 0) throw ParameterError("softmax_temp of an empty vector");
  return kernels::softmax_rows(u.reshaped({1, u.numel()}), temperature).reshaped(u.shape());
}

double kl_divergence(const Tensor& p, const Tensor& q) {
  require_same_shape(p, q, "kl_divergence");
  require_distribution(p, "p");
  require_distribution(q, "q");
  double total = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) throw DivergenceError("KL divergence is infinite: q_" + std::to_string(i) + " = 0 where p > 0");
    total += p[i] * std::log(p[i] / q[i]);
  }
  return total;
}

Var dropout(const Var& x, double rate, RngState& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor mask(x.shape());
  for (double& m : mask.storage()) m = rng.uniform() >= rate ? keep_scale : 0.0;
  return ops::hadamard(x, Var(std::move(mask)));
}

BatchNorm::BatchNorm(const std::string& prefix, std::size_t features)
    : weight_(prefix + "_weight", Tensor({features}, 1.0)),
      bias_(prefix + "_bias", Tensor({features}, 0.0)),
      running_mean_({features}, 0.0),
      running_var_({features}, 1.0) {}

Var BatchNorm::operator()(const Var& x, bool training) {
  const Tensor& in = x.value();
  if (in.rank() != 2 || in.dim(1) != features()) {
    throw DimensionError("batchnorm expects [bs x " + std::to_string(features()) + "], got " + shape_string(in.shape()));
  }
  const std::size_t bs = in.dim(0), d = in.dim(1);
  if (training && bs == 0) throw DimensionError("batchnorm in training mode needs at least one row");

  Tensor mean({d}), var({d});
  if (training) {
    for (std::size_t i = 0; i < bs; ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += in.at(i, j);
    for (double& m : mean.storage()) m /= static_cast<double>(bs);
    for (std::size_t i = 0; i < bs; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double c = in.at(i, j) - mean[j];
        var[j] += c * c;
      }
    for (double& v : var.storage()) v /= static_cast<double>(bs);
    for (std::size_t j = 0; j < d; ++j) {
      running_mean_[j] = (1.0 - kMomentum) * running_mean_[j] + kMomentum * mean[j];
      running_var_[j] = (1.0 - kMomentum) * running_var_[j] + kMomentum * var[j];
    }
  } else {
    mean = running_mean_;
    var = running_var_;
  }

  // eps acts as a floor on the variance, so a column with variance 1 is
  // standardized exactly.
  Tensor inv_std({d});
  std::vector<bool> floored(d);
  for (std::size_t j = 0; j < d; ++j) {
    floored[j] = var[j] < kEpsilon;
    inv_std[j] = 1.0 / std::sqrt(std::max(var[j], kEpsilon));
  }
  Tensor normalized({bs, d}), out({bs, d});
  const Tensor& gamma = weight_.value();
  const Tensor& beta = bias_.value();
  for (std::size_t i = 0; i < bs; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      normalized.at(i, j) = (in.at(i, j) - mean[j]) * inv_std[j];
      out.at(i, j) = gamma[j] * normalized.at(i, j) + beta[j];
    }

  auto node = std::make_shared<Node>();
  node->value = std::move(out);
  node->requires_grad = x.requires_grad() || weight_.trainable() || bias_.trainable();
  if (!node->requires_grad) return Var(std::move(node));
  node->parents = {x.node(), weight_.var().node(), bias_.var().node()};
  node->backward = [normalized = std::move(normalized), inv_std = std::move(inv_std), floored = std::move(floored),
                    training, bs, d](Node& self) {
    const auto& px = self.parents[0];
    const auto& pw = self.parents[1];
    const auto& pb = self.parents[2];
    const Tensor& dy = self.grad;
    Tensor sum_dy({d}), sum_dy_xhat({d});
    for (std::size_t i = 0; i < bs; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        sum_dy[j] += dy.at(i, j);
        sum_dy_xhat[j] += dy.at(i, j) * normalized.at(i, j);
      }
    if (pw->requires_grad) pw->accumulate(sum_dy_xhat);
    if (pb->requires_grad) pb->accumulate(sum_dy);
    if (px->requires_grad) {
      const Tensor& gamma = pw->value;
      Tensor dx({bs, d});
      const double n = static_cast<double>(bs);
      for (std::size_t i = 0; i < bs; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          const double scale = gamma[j] * inv_std[j];
          if (!training) {
            dx.at(i, j) = scale * dy.at(i, j);
          } else if (floored[j]) {
            dx.at(i, j) = scale * (dy.at(i, j) - sum_dy[j] / n);
          } else {
            dx.at(i, j) = scale * (dy.at(i, j) - sum_dy[j] / n - normalized.at(i, j) * sum_dy_xhat[j] / n);
          }
        }
      px->accumulate(dx);
    }
  };
  return Var(std::move(node));
}

}  // namespace kge
