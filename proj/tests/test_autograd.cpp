#include <doctest.h>

#include <cmath>

#include "kge/autograd.hpp"
#include "kge/errors.hpp"
#include "support/oracles.hpp"

using namespace kge;

namespace {

// Contract an op's output with fixed random weights to get a scalar whose
// gradient exercises every output element.
Var weighted(const Var& out, const Tensor& w) { return ops::sum(ops::hadamard(out, Var(w))); }

}  // namespace

TEST_CASE("sum of squares gradient") {
  Parameter x("x", Tensor::vector({1, 2}));
  backward(ops::sum_squares(x.var()));
  CHECK(x.gradient() == Tensor::vector({2, 4}));
}

TEST_CASE("unused parameter gets an exactly zero gradient") {
  Parameter x("x", Tensor::vector({1, 2}));
  Parameter y("y", Tensor::vector({3, 4}));
  backward(ops::sum_squares(x.var()));
  CHECK(y.gradient() == Tensor::zeros({2}));
}

TEST_CASE("zero_grad clears accumulated gradients") {
  Parameter x("x", Tensor::vector({1, 2}));
  backward(ops::sum_squares(x.var()));
  backward(ops::sum_squares(x.var()));
  CHECK(x.gradient() == Tensor::vector({4, 8}));
  x.zero_grad();
  CHECK(x.gradient() == Tensor::zeros({2}));
}

TEST_CASE("backward on a non-scalar is a usage error") {
  Parameter x("x", Tensor::vector({1, 2}));
  CHECK_THROWS_AS(backward(ops::scale(x.var(), 2.0)), UsageError);
}

TEST_CASE("matmul chain on random 3x3 inputs matches finite differences") {
  RngState rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    Parameter a("a", oracle::random_tensor({3, 3}, rng));
    Parameter b("b", oracle::random_tensor({3, 3}, rng));
    Parameter c("c", oracle::random_tensor({3, 3}, rng));
    const Tensor w = oracle::random_tensor({3, 3}, rng);
    auto loss = [&] { return weighted(ops::matmul(ops::matmul(a.var(), b.var()), c.var()), w); };
    CHECK(oracle::gradient_check({&a, &b, &c}, loss) <= 1e-6);
  }
}

TEST_CASE("every op matches finite differences") {
  RngState rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(3), d = 2 * (1 + rng.below(3)), k = 1 + rng.below(3);
    Parameter a("a", oracle::random_tensor({n, d}, rng));
    Parameter b("b", oracle::random_tensor({n, d}, rng));
    Parameter m("m", oracle::random_tensor({d, k}, rng));
    Parameter t("t", oracle::random_tensor({k, d}, rng));
    Parameter table("table", oracle::random_tensor({5, d}, rng));
    Parameter core("core", oracle::random_tensor({d, d, d}, rng));
    const Tensor wnd = oracle::random_tensor({n, d}, rng);
    const Tensor wnk = oracle::random_tensor({n, k}, rng);
    const Tensor w1d = oracle::random_tensor({1, d}, rng);
    const Tensor targets = oracle::random_tensor({n, d}, rng, 0, 1);
    const std::vector<std::int32_t> ids = {4, 0, 4};
    const std::span<const std::int32_t> gather_ids(ids.data(), n);
    const double temperature = rng.uniform(0.5, 3.0);

    CHECK(oracle::gradient_check({&a, &b}, [&] { return weighted(ops::add(a.var(), b.var()), wnd); }) <= 1e-5);
    CHECK(oracle::gradient_check({&a}, [&] { return weighted(ops::scale(a.var(), -1.7), wnd); }) <= 1e-5);
    CHECK(oracle::gradient_check({&a, &b}, [&] { return weighted(ops::hadamard(a.var(), b.var()), wnd); }) <= 1e-5);
    CHECK(oracle::gradient_check({&a, &m}, [&] { return weighted(ops::matmul(a.var(), m.var()), wnk); }) <= 1e-5);
    CHECK(oracle::gradient_check({&a, &t}, [&] { return weighted(ops::matmul_bt(a.var(), t.var()), wnk); }) <= 1e-5);
    CHECK(oracle::gradient_check({&table},
                                 [&] { return weighted(ops::gather_rows(table.var(), gather_ids), wnd); }) <= 1e-5);
    CHECK(oracle::gradient_check({&a}, [&] { return weighted(ops::mean_rows(a.var()), w1d); }) <= 1e-5);
    CHECK(oracle::gradient_check({&a}, [&] { return ops::sum_squares(a.var()); }) <= 1e-5);
    CHECK(oracle::gradient_check({&a},
                                 [&] { return weighted(ops::reshape(ops::reshape(a.var(), {n * d}), {n, d}), wnd); }) <=
          1e-5);
    CHECK(oracle::gradient_check({&a},
                                 [&] { return weighted(ops::softmax_rows(a.var(), temperature), wnd); }) <= 1e-5);
    const Tensor wpool = oracle::random_tensor({n, d / 2}, rng);
    CHECK(oracle::gradient_check({&a}, [&] { return weighted(ops::sum_pool(a.var(), 2), wpool); }) <= 1e-5);
    CHECK(oracle::gradient_check({&a, &b}, [&] { return weighted(ops::complex_product(a.var(), b.var()), wnd); }) <=
          1e-5);
    CHECK(oracle::gradient_check({&a, &b, &core}, [&] {
            return weighted(ops::tucker_interaction(a.var(), b.var(), core.var()), wnd);
          }) <= 1e-5);
    CHECK(oracle::gradient_check({&a}, [&] { return ops::bce_with_logits(a.var(), targets); }) <= 1e-5);
    CHECK(oracle::gradient_check({&a}, [&] {
            return ops::distill_kl(ops::mean_rows(a.var()), Var(w1d), temperature);
          }) <= 1e-5);
    CHECK(oracle::gradient_check({&a, &b}, [&] {
            return ops::weighted_sum(ops::sum_squares(a.var()), 0.3, ops::sum(b.var()), 0.7);
          }) <= 1e-5);
  }
}

TEST_CASE("complex product rejects odd widths") {
  CHECK_THROWS_AS(ops::complex_product(Var(Tensor::zeros({1, 3})), Var(Tensor::zeros({1, 3}))), ConfigError);
}

TEST_CASE("distill kl never sends gradient to the teacher") {
  Parameter s("s", Tensor::matrix({{0.3, -0.2, 0.9}}));
  Parameter t("t", Tensor::matrix({{0.1, 0.5, -0.4}}));
  backward(ops::distill_kl(s.var(), t.var(), 2.0));
  CHECK(t.gradient() == Tensor::zeros({1, 3}));
  CHECK(oracle::relative_error(s.gradient(), Tensor::zeros({1, 3})) > 0.0);
}

TEST_CASE("weighted sum with a zero weight returns the other term exactly") {
  const Var a(Tensor({}, 0.123456789));
  const Var b(Tensor({}, std::nan("")));
  CHECK(ops::weighted_sum(a, 1.0, b, 0.0).item() == 0.123456789);
}
