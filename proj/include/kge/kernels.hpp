#pragma once

// Hot numerical kernels. Each kernel in kge::kernels is OpenMP-parallel over
// independent output elements; every output element is reduced in a fixed
// ascending order, so results are bit-identical to the serial versions in
// kge::kernels::reference and independent of the thread count. The reference
// versions are kept for tests and benchmarks.

#include <cstdint>
#include <span>
#include <vector>

#include "kge/tensor.hpp"

namespace kge {

enum class TiePolicy { kAverage, kOptimistic, kPessimistic };

namespace kernels {

// out[m x p] = a[m x n] * b[n x p]
Tensor matmul(const Tensor& a, const Tensor& b);
// out[m x p] = a[m x n] * b[p x n]^T
Tensor matmul_bt(const Tensor& a, const Tensor& b);
// out[m x p] = a[n x m]^T * b[n x p]
Tensor matmul_at(const Tensor& a, const Tensor& b);

// Row-wise softmax of x / temperature with max subtraction.
Tensor softmax_rows(const Tensor& x, double temperature);

// Mean binary cross-entropy with logits; writes d(loss)/d(logits) into grad
// when it is non-null.
double bce_with_logits(const Tensor& logits, const Tensor& targets, Tensor* grad);

// One row per query. `filters[i]` holds the known-true entities for query i
// (sorted ascending); the true entity itself is never excluded.
std::vector<double> filtered_ranks(const Tensor& logits, std::span<const std::int32_t> truths,
                                   std::span<const std::span<const std::int32_t>> filters, TiePolicy policy);

double rank_from_counts(std::size_t greater, std::size_t equal, TiePolicy policy);

namespace reference {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_bt(const Tensor& a, const Tensor& b);
Tensor matmul_at(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& x, double temperature);
double bce_with_logits(const Tensor& logits, const Tensor& targets, Tensor* grad);
std::vector<double> filtered_ranks(const Tensor& logits, std::span<const std::int32_t> truths,
                                   std::span<const std::span<const std::int32_t>> filters, TiePolicy policy);

}  // namespace reference
}  // namespace kernels
}  // namespace kge
