#include "kge/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "kge/errors.hpp"

namespace kge::kernels {
namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1 << 15;

void check_inner(const Tensor& a, const Tensor& b, std::size_t a_inner, std::size_t b_inner, const char* op) {
  if (a.rank() != 2 || b.rank() != 2 || a_inner != b_inner) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
}

inline double stable_sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

inline double bce_term(double u, double y) { return std::max(u, 0.0) - u * y + std::log1p(std::exp(-std::abs(u))); }

void check_temperature(double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("softmax temperature must be positive, got " + std::to_string(temperature));
}

}  // namespace

double rank_from_counts(std::size_t greater, std::size_t equal, TiePolicy policy) {
  switch (policy) {
    case TiePolicy::kOptimistic:
      return 1.0 + static_cast<double>(greater);
    case TiePolicy::kPessimistic:
      return 1.0 + static_cast<double>(greater) + static_cast<double>(equal);
    case TiePolicy::kAverage:
    default:
      return 1.0 + static_cast<double>(greater) + static_cast<double>(equal) / 2.0;
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_inner(a, b, a.rank() == 2 ? a.dim(1) : 0, b.rank() == 2 ? b.dim(0) : 1, "matmul");
  const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(1);
  Tensor out({m, p});
  const double* A = a.data();
  const double* B = b.data();
  double* C = out.data();
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * n * p > kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    double* c_row = C + i * p;
    for (std::size_t k = 0; k < n; ++k) {
      const double a_ik = A[i * n + k];
      const double* b_row = B + k * p;
      for (std::size_t j = 0; j < p; ++j) c_row[j] += a_ik * b_row[j];
    }
  }
  return out;
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
  check_inner(a, b, a.rank() == 2 ? a.dim(1) : 0, b.rank() == 2 ? b.dim(1) : 1, "matmul_bt");
  const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(0);
  Tensor out({m, p});
  const double* A = a.data();
  const double* B = b.data();
  double* C = out.data();
  const auto cells = static_cast<std::ptrdiff_t>(m * p);
#pragma omp parallel for schedule(static) if (m * n * p > kParallelWork)
  for (std::ptrdiff_t cell = 0; cell < cells; ++cell) {
    const std::size_t i = static_cast<std::size_t>(cell) / p;
    const std::size_t j = static_cast<std::size_t>(cell) % p;
    const double* a_row = A + i * n;
    const double* b_row = B + j * n;
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) sum += a_row[k] * b_row[k];
    C[cell] = sum;
  }
  return out;
}

Tensor matmul_at(const Tensor& a, const Tensor& b) {
  check_inner(a, b, a.rank() == 2 ? a.dim(0) : 0, b.rank() == 2 ? b.dim(0) : 1, "matmul_at");
  const std::size_t n = a.dim(0), m = a.dim(1), p = b.dim(1);
  Tensor out({m, p});
  const double* A = a.data();
  const double* B = b.data();
  double* C = out.data();
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * n * p > kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    double* c_row = C + i * p;
    for (std::size_t k = 0; k < n; ++k) {
      const double a_ki = A[k * m + i];
      if (a_ki == 0.0) continue;
      const double* b_row = B + k * p;
      for (std::size_t j = 0; j < p; ++j) c_row[j] += a_ki * b_row[j];
    }
  }
  return out;
}

Tensor softmax_rows(const Tensor& x, double temperature) {
  check_temperature(temperature);
  Tensor out(x.shape());
  const std::size_t m = x.rows(), n = x.cols();
  if (n == 0) throw ParameterError("softmax over an empty row");
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * n > kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    const auto in = x.row(static_cast<std::size_t>(i));
    auto o = out.row(static_cast<std::size_t>(i));
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp((in[j] - mx) / temperature);
      total += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= total;
  }
  return out;
}

double bce_with_logits(const Tensor& logits, const Tensor& targets, Tensor* grad) {
  require_same_shape(logits, targets, "bce_with_logits");
  const std::size_t m = logits.rows(), n = logits.cols();
  const double count = static_cast<double>(logits.numel());
  if (grad) *grad = Tensor(logits.shape());
  std::vector<double> row_sums(m, 0.0);
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * n > kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * n;
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double u = logits[base + j];
      const double y = targets[base + j];
      sum += bce_term(u, y);
      if (grad) (*grad)[base + j] = (stable_sigmoid(u) - y) / count;
    }
    row_sums[static_cast<std::size_t>(i)] = sum;
  }
  double total = 0.0;
  for (double s : row_sums) total += s;
  return total / count;
}

std::vector<double> filtered_ranks(const Tensor& logits, std::span<const std::int32_t> truths,
                                   std::span<const std::span<const std::int32_t>> filters, TiePolicy policy) {
  const std::size_t m = logits.rows(), n = logits.cols();
  if (truths.size() != m || filters.size() != m) {
    throw DimensionError("filtered_ranks: " + std::to_string(m) + " logit rows but " + std::to_string(truths.size()) +
                         " truths and " + std::to_string(filters.size()) + " filter sets");
  }
  for (auto t : truths) {
    if (t < 0 || static_cast<std::size_t>(t) >= n) throw ParameterError("true entity id " + std::to_string(t) + " out of range");
  }
  std::vector<double> ranks(m);
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * n > kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    const auto row = logits.row(static_cast<std::size_t>(i));
    const std::int32_t truth = truths[static_cast<std::size_t>(i)];
    const double target = row[static_cast<std::size_t>(truth)];
    std::size_t greater = 0, equal = 0;
    for (std::size_t c = 0; c < n; ++c) {
      greater += row[c] > target;
      equal += row[c] == target;
    }
    --equal;  // the true entity itself
    for (std::int32_t f : filters[static_cast<std::size_t>(i)]) {
      if (f == truth || f < 0 || static_cast<std::size_t>(f) >= n) continue;
      const double v = row[static_cast<std::size_t>(f)];
      if (v > target) --greater;
      else if (v == target) --equal;
    }
    ranks[static_cast<std::size_t>(i)] = rank_from_counts(greater, equal, policy);
  }
  return ranks;
}

namespace reference {

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_inner(a, b, a.rank() == 2 ? a.dim(1) : 0, b.rank() == 2 ? b.dim(0) : 1, "matmul");
  const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(1);
  Tensor out({m, p});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      double sum = 0.0;
      for (std::size_t k = 0; k < n; ++k) sum += a.at(i, k) * b.at(k, j);
      out.at(i, j) = sum;
    }
  }
  return out;
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
  check_inner(a, b, a.rank() == 2 ? a.dim(1) : 0, b.rank() == 2 ? b.dim(1) : 1, "matmul_bt");
  const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(0);
  Tensor out({m, p});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      double sum = 0.0;
      for (std::size_t k = 0; k < n; ++k) sum += a.at(i, k) * b.at(j, k);
      out.at(i, j) = sum;
    }
  }
  return out;
}

Tensor matmul_at(const Tensor& a, const Tensor& b) {
  check_inner(a, b, a.rank() == 2 ? a.dim(0) : 0, b.rank() == 2 ? b.dim(0) : 1, "matmul_at");
  const std::size_t n = a.dim(0), m = a.dim(1), p = b.dim(1);
  Tensor out({m, p});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      double sum = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        if (a.at(k, i) == 0.0) continue;
        sum += a.at(k, i) * b.at(k, j);
      }
      out.at(i, j) = sum;
    }
  }
  return out;
}

Tensor softmax_rows(const Tensor& x, double temperature) {
  check_temperature(temperature);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : x.row(i)) mx = std::max(mx, v);
    double total = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      out.at(i, j) = std::exp((x.at(i, j) - mx) / temperature);
      total += out.at(i, j);
    }
    for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) /= total;
  }
  return out;
}

double bce_with_logits(const Tensor& logits, const Tensor& targets, Tensor* grad) {
  require_same_shape(logits, targets, "bce_with_logits");
  const double count = static_cast<double>(logits.numel());
  if (grad) *grad = Tensor(logits.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      const double u = logits.at(i, j), y = targets.at(i, j);
      sum += bce_term(u, y);
      if (grad) grad->at(i, j) = (stable_sigmoid(u) - y) / count;
    }
    total += sum;
  }
  return total / count;
}

std::vector<double> filtered_ranks(const Tensor& logits, std::span<const std::int32_t> truths,
                                   std::span<const std::span<const std::int32_t>> filters, TiePolicy policy) {
  if (truths.size() != logits.rows() || filters.size() != logits.rows()) {
    throw DimensionError("filtered_ranks: row count mismatch");
  }
  std::vector<double> ranks;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const std::int32_t truth = truths[i];
    if (truth < 0 || static_cast<std::size_t>(truth) >= logits.cols()) throw ParameterError("true entity id out of range");
    const auto& filter = filters[i];
    const double target = logits.at(i, static_cast<std::size_t>(truth));
    std::size_t greater = 0, equal = 0;
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      if (static_cast<std::int32_t>(c) == truth) continue;
      if (std::binary_search(filter.begin(), filter.end(), static_cast<std::int32_t>(c))) continue;
      if (logits.at(i, c) > target) ++greater;
      else if (logits.at(i, c) == target) ++equal;
    }
    ranks.push_back(rank_from_counts(greater, equal, policy));
  }
  return ranks;
}

}  // namespace reference
}  // namespace kge::kernels
