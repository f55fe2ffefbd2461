#include "kge/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

#include "kge/errors.hpp"
#include "kge/kernels.hpp"

namespace kge {

Tensor& Node::grad_buffer() {
  if (grad.shape() != value.shape() || grad.numel() != value.numel()) grad = Tensor(value.shape());
  return grad;
}

void Node::accumulate(const Tensor& g) {
  if (grad.numel() != value.numel() || grad.shape() != value.shape()) {
    grad = g.reshaped(value.shape());
    return;
  }
  for (std::size_t i = 0; i < g.numel(); ++i) grad[i] += g[i];
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

double Var::item() const {
  if (value().numel() != 1) throw UsageError("item() on a tensor of shape " + shape_string(shape()));
  return value()[0];
}

Parameter::Parameter(std::string name, Tensor value, bool trainable)
    : name_(std::move(name)), node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = trainable;
  node_->grad = Tensor(node_->value.shape());
}

void Parameter::zero_grad() { node_->grad_buffer().fill(0.0); }

void backward(const Var& loss) {
  if (!loss.node()) throw UsageError("backward on an empty variable");
  if (loss.value().numel() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->accumulate(Tensor(loss.shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->grad.numel() == node->value.numel()) node->backward(*node);
  }
}

namespace ops {
namespace {

Var make_result(Tensor value, std::vector<NodePtr> parents, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requires_grad; });
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward = std::move(backward_fn);
  }
  return Var(std::move(node));
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + ": expected a matrix, got " + shape_string(t.shape()));
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return make_result(std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->accumulate(self.grad);
  });
}

Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (double& v : out.storage()) v *= factor;
  return make_result(std::move(out), {a.node()}, [factor](Node& self) {
    Tensor g = self.grad;
    for (double& v : g.storage()) v *= factor;
    self.parents[0]->accumulate(g);
  });
}

Var hadamard(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "hadamard");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return make_result(std::move(out), {a.node(), b.node()}, [](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (pa->requires_grad) {
      Tensor g = self.grad;
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= pb->value[i];
      pa->accumulate(g);
    }
    if (pb->requires_grad) {
      Tensor g = self.grad;
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= pa->value[i];
      pb->accumulate(g);
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  return make_result(kernels::matmul(a.value(), b.value()), {a.node(), b.node()}, [](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (pa->requires_grad) pa->accumulate(kernels::matmul_bt(self.grad, pb->value));
    if (pb->requires_grad) pb->accumulate(kernels::matmul_at(pa->value, self.grad));
  });
}

Var matmul_bt(const Var& a, const Var& b) {
  return make_result(kernels::matmul_bt(a.value(), b.value()), {a.node(), b.node()}, [](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (pa->requires_grad) pa->accumulate(kernels::matmul(self.grad, pb->value));
    if (pb->requires_grad) pb->accumulate(kernels::matmul_at(self.grad, pa->value));
  });
}

Var gather_rows(const Var& table, std::span<const std::int32_t> ids) {
  require_matrix(table.value(), "gather_rows");
  const std::size_t n = table.value().dim(0), d = table.value().dim(1);
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= n) {
      throw DimensionError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(n) + " rows");
    }
    const auto src = table.value().row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<std::int32_t> index(ids.begin(), ids.end());
  return make_result(std::move(out), {table.node()}, [index = std::move(index), d](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < index.size(); ++i) {
      double* dst = g.data() + static_cast<std::size_t>(index[i]) * d;
      const double* src = self.grad.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

Var mean_rows(const Var& x) {
  require_matrix(x.value(), "mean_rows");
  const std::size_t bs = x.value().dim(0), d = x.value().dim(1);
  if (bs == 0) throw DimensionError("mean_rows over zero rows");
  Tensor out({1, d});
  for (std::size_t i = 0; i < bs; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += x.value().at(i, j);
  for (double& v : out.storage()) v /= static_cast<double>(bs);
  return make_result(std::move(out), {x.node()}, [bs, d](Node& self) {
    Tensor g({bs, d});
    for (std::size_t i = 0; i < bs; ++i)
      for (std::size_t j = 0; j < d; ++j) g.at(i, j) = self.grad[j] / static_cast<double>(bs);
    self.parents[0]->accumulate(g);
  });
}

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().storage()) total += v;
  return make_result(Tensor({}, {total}), {x.node()}, [](Node& self) {
    self.parents[0]->accumulate(Tensor(self.parents[0]->value.shape(), self.grad[0]));
  });
}

Var sum_squares(const Var& x) {
  double total = 0.0;
  for (double v : x.value().storage()) total += v * v;
  return make_result(Tensor({}, {total}), {x.node()}, [](Node& self) {
    Tensor g = self.parents[0]->value;
    for (double& v : g.storage()) v *= 2.0 * self.grad[0];
    self.parents[0]->accumulate(g);
  });
}

Var reshape(const Var& x, Shape shape) {
  return make_result(x.value().reshaped(std::move(shape)), {x.node()},
                     [](Node& self) { self.parents[0]->accumulate(self.grad.reshaped(self.parents[0]->value.shape())); });
}

Var softmax_rows(const Var& x, double temperature) {
  return make_result(kernels::softmax_rows(x.value(), temperature), {x.node()}, [temperature](Node& self) {
    const Tensor& y = self.value;
    Tensor g(y.shape());
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += self.grad.at(i, j) * y.at(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) g.at(i, j) = y.at(i, j) * (self.grad.at(i, j) - dot) / temperature;
    }
    self.parents[0]->accumulate(g);
  });
}

Var sum_pool(const Var& x, std::size_t k) {
  require_matrix(x.value(), "sum_pool");
  const std::size_t bs = x.value().dim(0), width = x.value().dim(1);
  if (k == 0 || width % k != 0) {
    throw DimensionError("sum_pool: width " + std::to_string(width) + " not divisible by pool size " + std::to_string(k));
  }
  const std::size_t d = width / k;
  Tensor out({bs, d});
  for (std::size_t i = 0; i < bs; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t m = 0; m < k; ++m) s += x.value().at(i, j * k + m);
      out.at(i, j) = s;
    }
  return make_result(std::move(out), {x.node()}, [bs, d, k](Node& self) {
    Tensor g({bs, d * k});
    for (std::size_t i = 0; i < bs; ++i)
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t m = 0; m < k; ++m) g.at(i, j * k + m) = self.grad.at(i, j);
    self.parents[0]->accumulate(g);
  });
}

Var complex_product(const Var& h, const Var& r) {
  require_same_shape(h.value(), r.value(), "complex_product");
  require_matrix(h.value(), "complex_product");
  const std::size_t bs = h.value().dim(0), d = h.value().dim(1);
  if (d % 2 != 0) throw ConfigError("complex embeddings need an even dimension, got " + std::to_string(d));
  const std::size_t half = d / 2;
  Tensor out({bs, d});
  for (std::size_t i = 0; i < bs; ++i) {
    const auto hv = h.value().row(i), rv = r.value().row(i);
    for (std::size_t j = 0; j < half; ++j) {
      out.at(i, j) = hv[j] * rv[j] - hv[half + j] * rv[half + j];
      out.at(i, half + j) = hv[j] * rv[half + j] + hv[half + j] * rv[j];
    }
  }
  return make_result(std::move(out), {h.node(), r.node()}, [bs, half](Node& self) {
    const auto& ph = self.parents[0];
    const auto& pr = self.parents[1];
    Tensor gh(ph->value.shape()), gr(pr->value.shape());
    for (std::size_t i = 0; i < bs; ++i) {
      const auto hv = ph->value.row(i), rv = pr->value.row(i), dz = self.grad.row(i);
      for (std::size_t j = 0; j < half; ++j) {
        const double dre = dz[j], dim = dz[half + j];
        gh.at(i, j) = dre * rv[j] + dim * rv[half + j];
        gh.at(i, half + j) = -dre * rv[half + j] + dim * rv[j];
        gr.at(i, j) = dre * hv[j] + dim * hv[half + j];
        gr.at(i, half + j) = -dre * hv[half + j] + dim * hv[j];
      }
    }
    if (ph->requires_grad) ph->accumulate(gh);
    if (pr->requires_grad) pr->accumulate(gr);
  });
}

Var tucker_interaction(const Var& h, const Var& r, const Var& core) {
  require_matrix(h.value(), "tucker_interaction");
  require_matrix(r.value(), "tucker_interaction");
  const std::size_t bs = h.value().dim(0), de = h.value().dim(1), dr = r.value().dim(1);
  const Shape expected{de, dr, de};
  if (r.value().dim(0) != bs || core.value().shape() != expected) {
    throw DimensionError("tucker_interaction: h " + shape_string(h.value().shape()) + ", r " +
                         shape_string(r.value().shape()) + ", core " + shape_string(core.value().shape()));
  }
  Tensor out({bs, de});
  const double* W = core.value().data();
  const auto rows = static_cast<std::ptrdiff_t>(bs);
#pragma omp parallel for schedule(static) if (bs * de * dr * de > (1u << 15))
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    auto z = out.row(i);
    const auto hv = h.value().row(i), rv = r.value().row(i);
    for (std::size_t a = 0; a < de; ++a)
      for (std::size_t b = 0; b < dr; ++b) {
        const double w = hv[a] * rv[b];
        const double* slice = W + (a * dr + b) * de;
        for (std::size_t c = 0; c < de; ++c) z[c] += slice[c] * w;
      }
  }
  return make_result(std::move(out), {h.node(), r.node(), core.node()}, [bs, de, dr](Node& self) {
    const auto& ph = self.parents[0];
    const auto& pr = self.parents[1];
    const auto& pw = self.parents[2];
    const double* W = pw->value.data();
    if (ph->requires_grad || pr->requires_grad) {
      Tensor gh({bs, de}), gr({bs, dr});
      const auto rows = static_cast<std::ptrdiff_t>(bs);
#pragma omp parallel for schedule(static) if (bs * de * dr * de > (1u << 15))
      for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        const auto hv = ph->value.row(i), rv = pr->value.row(i), dz = self.grad.row(i);
        for (std::size_t a = 0; a < de; ++a)
          for (std::size_t b = 0; b < dr; ++b) {
            const double* slice = W + (a * dr + b) * de;
            double t = 0.0;
            for (std::size_t c = 0; c < de; ++c) t += slice[c] * dz[c];
            gh.at(i, a) += rv[b] * t;
            gr.at(i, b) += hv[a] * t;
          }
      }
      if (ph->requires_grad) ph->accumulate(gh);
      if (pr->requires_grad) pr->accumulate(gr);
    }
    if (pw->requires_grad) {
      Tensor& gw = pw->grad_buffer();
      const auto slabs = static_cast<std::ptrdiff_t>(de);
#pragma omp parallel for schedule(static) if (bs * de * dr * de > (1u << 15))
      for (std::ptrdiff_t aa = 0; aa < slabs; ++aa) {
        const auto a = static_cast<std::size_t>(aa);
        for (std::size_t i = 0; i < bs; ++i) {
          const double ha = ph->value.at(i, a);
          const auto rv = pr->value.row(i), dz = self.grad.row(i);
          for (std::size_t b = 0; b < dr; ++b) {
            const double w = ha * rv[b];
            double* slice = gw.data() + (a * dr + b) * de;
            for (std::size_t c = 0; c < de; ++c) slice[c] += w * dz[c];
          }
        }
      }
    }
  });
}

Var bce_with_logits(const Var& logits, const Tensor& targets) {
  Tensor grad;
  const double loss = kernels::bce_with_logits(logits.value(), targets, &grad);
  return make_result(Tensor({}, {loss}), {logits.node()}, [grad = std::move(grad)](Node& self) {
    Tensor g = grad;
    for (double& v : g.storage()) v *= self.grad[0];
    self.parents[0]->accumulate(g);
  });
}

Var distill_kl(const Var& student, const Var& teacher, double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("distillation temperature must be positive");
  const Tensor& s = student.value();
  const Tensor& t = teacher.value();
  if (s.numel() != t.numel() || s.numel() == 0) {
    throw DimensionError("distill_kl: student " + shape_string(s.shape()) + " vs teacher " + shape_string(t.shape()));
  }
  const std::size_t d = s.numel();
  auto log_sum_exp = [temperature](const Tensor& x) {
    const double mx = *std::max_element(x.storage().begin(), x.storage().end());
    double total = 0.0;
    for (double v : x.storage()) total += std::exp((v - mx) / temperature);
    return mx / temperature + std::log(total);
  };
  const double lse_s = log_sum_exp(s);
  const double lse_gap = lse_s - log_sum_exp(t);
  std::vector<double> p(d), diff(d);
  double kl = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    p[i] = std::exp(s[i] / temperature - lse_s);
    diff[i] = (s[i] - t[i]) / temperature - lse_gap;
    kl += p[i] * diff[i];
  }
  const double weight = temperature * temperature / static_cast<double>(d);
  const double loss = std::max(0.0, weight * kl);
  // Only the student is a parent: the teacher is read by value.
  return make_result(Tensor({}, {loss}), {student.node()},
                     [p = std::move(p), diff = std::move(diff), kl, weight, temperature](Node& self) {
                       const auto& ps = self.parents[0];
                       Tensor g(ps->value.shape());
                       const double factor = self.grad[0] * weight / temperature;
                       for (std::size_t i = 0; i < p.size(); ++i) g[i] = factor * p[i] * (diff[i] - kl);
                       ps->accumulate(g);
                     });
}

Var weighted_sum(const Var& a, double wa, const Var& b, double wb) {
  if (a.value().numel() != 1 || b.value().numel() != 1) throw UsageError("weighted_sum expects scalars");
  const double value = (wa == 0.0 ? 0.0 : wa * a.item()) + (wb == 0.0 ? 0.0 : wb * b.item());
  return make_result(Tensor({}, {value}), {a.node(), b.node()}, [wa, wb](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (pa->requires_grad) pa->accumulate(Tensor(pa->value.shape(), wa * self.grad[0]));
    if (pb->requires_grad) pb->accumulate(Tensor(pb->value.shape(), wb * self.grad[0]));
  });
}

}  // namespace ops
}  // namespace kge
