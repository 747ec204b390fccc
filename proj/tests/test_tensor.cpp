#include "doctest.h"

#include <cmath>
#include <random>

#include "hca/gradcheck.hpp"
#include "hca/tensor.hpp"

using namespace hca;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < av.size(); ++i)
    if (av[i] != bv[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("matmul matches hand-computed products") {
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(bitwise_equal(matmul(eye, m), m));

  const Tensor zero_col = Tensor::from({2, 1}, {0, 0});
  CHECK(bitwise_equal(matmul(m, zero_col), zero_col));

  const Tensor v = Tensor::from({2, 1}, {5, 6});
  const Tensor prod = matmul(m, v);
  CHECK(prod(0, 0) == 17.0);
  CHECK(prod(1, 0) == 39.0);
}

TEST_CASE("matmul rejects mismatched inner extents") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(matmul(a, b), DimensionError);
}

TEST_CASE("softmax of a constant row is uniform") {
  const Tensor y = softmax(Tensor::from({3}, {0, 0, 0}), 1.0);
  for (int i = 0; i < 3; ++i) CHECK(y(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("softmax is shift invariant") {
  std::mt19937_64 rng(1);
  for (int it = 0; it < 50; ++it) {
    const Tensor x = Tensor::uniform({2, 5}, -3.0, 3.0, rng);
    Tensor shifted = Tensor::zeros({2, 5});
    {
      auto sv = shifted.mutable_data();
      auto xv = x.data();
      for (std::size_t i = 0; i < xv.size(); ++i) sv[i] = xv[i] + 7.25;
    }
    const Tensor a = softmax(x, 1.0), b = softmax(shifted, 1.0);
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < av.size(); ++i) CHECK(std::abs(av[i] - bv[i]) < 1e-12);
  }
}

TEST_CASE("softmax sharpens with low temperature") {
  const Tensor y = softmax(Tensor::from({3}, {10, 0, 0}), 0.1);
  CHECK(y(0) > 1.0 - 1e-10);
}

TEST_CASE("softmax rows are stochastic and in [0, 1]") {
  std::mt19937_64 rng(2);
  for (int it = 0; it < 200; ++it) {
    const Tensor x = Tensor::uniform({3, 4}, -30.0, 30.0, rng);
    const Tensor y = softmax(x, 0.5);
    CHECK(y.all_finite());
    auto yv = y.data();
    for (int r = 0; r < 3; ++r) {
      double sum = 0.0;
      for (int c = 0; c < 4; ++c) {
        const double v = yv[static_cast<std::size_t>(r * 4 + c)];
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("softmax rejects non-positive temperature") {
  CHECK_THROWS_AS(softmax(Tensor::from({2}, {1, 2}), 0.0), ParameterError);
  CHECK_THROWS_AS(softmax(Tensor::from({2}, {1, 2}), -1.0), ParameterError);
}

TEST_CASE("lse closed forms") {
  // Constant vector: c + log(n) / beta.
  const double beta = 2.5, c = 1.75;
  const Tensor v = Tensor::full({4}, c);
  CHECK(lse(beta, v).value() == doctest::Approx(c + std::log(4.0) / beta).epsilon(1e-14));

  // Single element is exact.
  CHECK(lse(0.7, Tensor::from({1}, {-3.25})).value() == -3.25);

  // Large beta approaches the max.
  CHECK(std::abs(lse(100.0, Tensor::from({2}, {0, 1})).value() - 1.0) < 1e-3);
}

TEST_CASE("lse bounds hold on random instances") {
  std::mt19937_64 rng(3);
  for (int it = 0; it < 1000; ++it) {
    std::uniform_int_distribution<int> len(1, 9);
    std::uniform_real_distribution<double> beta_dist(0.1, 30.0);
    const int n = len(rng);
    const double beta = beta_dist(rng);
    const Tensor v = Tensor::uniform({n}, -5.0, 5.0, rng);
    double mx = v(0);
    for (int i = 1; i < n; ++i) mx = std::max(mx, v(i));
    const double val = lse(beta, v).value();
    CHECK(val >= mx - 1e-12);
    CHECK(val <= mx + std::log(static_cast<double>(n)) / beta + 1e-12);
  }
}

TEST_CASE("lse rejects empty input and bad beta") {
  CHECK_THROWS_AS(lse(1.0, Tensor()), ParameterError);
  CHECK_THROWS_AS(lse(0.0, Tensor::from({2}, {1, 2})), ParameterError);
}

TEST_CASE("layer_norm normalizes each row") {
  const Tensor gain = Tensor::ones({3});
  const Tensor bias = Tensor::zeros({3});
  const Tensor y = layer_norm(Tensor::from({1, 3}, {2, 4, 6}), gain, bias, 1e-5);
  double mean_out = 0.0, var_out = 0.0;
  for (int i = 0; i < 3; ++i) mean_out += y(0, i);
  mean_out /= 3.0;
  for (int i = 0; i < 3; ++i) var_out += (y(0, i) - mean_out) * (y(0, i) - mean_out);
  var_out /= 3.0;
  CHECK(std::abs(mean_out) < 1e-9);
  CHECK(std::abs(var_out - 1.0) < 1e-4);  // eps shrinks the variance slightly

  // Degenerate constant row maps to zero instead of blowing up.
  const Tensor z = layer_norm(Tensor::from({1, 3}, {5, 5, 5}), gain, bias, 1e-5);
  for (int i = 0; i < 3; ++i) CHECK(z(0, i) == 0.0);
}

TEST_CASE("layer_norm is scale invariant") {
  std::mt19937_64 rng(4);
  const Tensor gain = Tensor::uniform({6}, 0.5, 2.0, rng);
  const Tensor bias = Tensor::uniform({6}, -1.0, 1.0, rng);
  const Tensor x = Tensor::uniform({4, 6}, -2.0, 2.0, rng);
  Tensor scaled = Tensor::zeros({4, 6});
  {
    auto sv = scaled.mutable_data();
    auto xv = x.data();
    for (std::size_t i = 0; i < xv.size(); ++i) sv[i] = 17.0 * xv[i];
  }
  // Small eps: the eps term itself is what breaks exact scale invariance.
  const Tensor a = layer_norm(x, gain, bias, 1e-12);
  const Tensor b = layer_norm(scaled, gain, bias, 1e-12);
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < av.size(); ++i) CHECK(std::abs(av[i] - bv[i]) < 1e-9);
}

TEST_CASE("elementwise definitions") {
  const Tensor r = relu(Tensor::from({3}, {-1, 0, 2}));
  CHECK(r(0) == 0.0);
  CHECK(r(1) == 0.0);
  CHECK(r(2) == 2.0);

  std::vector<Tensor> parts{Tensor::from({1}, {1}), Tensor::from({1}, {2})};
  const Tensor cat = concat(parts, 0);
  CHECK(cat.shape() == Shape{2});
  CHECK(cat(0) == 1.0);
  CHECK(cat(1) == 2.0);

  CHECK(sigmoid(Tensor::scalar(0.0)).value() == 0.5);

  CHECK_THROWS_AS(add(Tensor::zeros({2, 2}), Tensor::zeros({3})), DimensionError);
}

TEST_CASE("copies share storage until mutated") {
  Tensor a = Tensor::from({2}, {1, 2});
  Tensor b = a;
  b.mutable_data()[0] = 99.0;
  CHECK(a(0) == 1.0);
  CHECK(b(0) == 99.0);
}

TEST_CASE("backward of a product recovers both partials") {
  Graph g;
  const Tensor x = g.parameter(Tensor::scalar(3.0));
  const Tensor y = g.parameter(Tensor::scalar(2.0));
  const GradientMap grads = g.backward(mul(x, y));
  CHECK(grads.at(x).value() == 2.0);
  CHECK(grads.at(y).value() == 3.0);
}

TEST_CASE("backward of a constant output yields zero gradients") {
  Graph g;
  const Tensor x = g.parameter(Tensor::from({3}, {1, 2, 3}));
  // Output does not depend on x.
  const Tensor c = g.parameter(Tensor::scalar(5.0));
  const GradientMap grads = g.backward(mean(c));
  const Tensor& gx = grads.at(x);
  for (int i = 0; i < 3; ++i) CHECK(gx(i) == 0.0);
}

TEST_CASE("backward rejects non-scalar outputs") {
  Graph g;
  const Tensor x = g.parameter(Tensor::from({2}, {1, 2}));
  CHECK_THROWS_AS(g.backward(relu(x)), ContractError);
}

TEST_CASE("softmax-weighted sum gradient matches finite differences") {
  std::mt19937_64 rng(5);
  const Tensor w = Tensor::uniform({6}, -1.0, 1.0, rng);
  const Tensor x = Tensor::uniform({6}, -2.0, 2.0, rng);
  const double err = grad_check(
      [&w](Graph& g, const Tensor& v) { return scale(mean(mul(softmax(v, 1.0), w)), 6.0); }, x,
      1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("grad_check is near-exact for linear functions") {
  const Tensor x = Tensor::from({4}, {0.5, 0.25, -0.75, 1.5});
  const double err = grad_check(
      [](Graph& g, const Tensor& v) { return scale(mean(v), 4.0); }, x, 1.0 / 8192.0);
  CHECK(err < 1e-10);
}

TEST_CASE("grad_check rejects non-deterministic functions") {
  auto rng = std::make_shared<std::mt19937_64>(9);
  const Tensor x = Tensor::from({8}, {1, 2, 3, 4, 5, 6, 7, 8});
  CHECK_THROWS_AS(grad_check(
                      [rng](Graph& g, const Tensor& v) {
                        return mean(dropout(v, 0.5, *rng));
                      },
                      x, 1e-5),
                  ContractError);
}

TEST_CASE("every primitive passes the gradient audit") {
  for (const GradCheckEntry& e : primitive_grad_checks()) {
    INFO(e.op);
    CHECK(e.max_rel_err < 1e-6);
  }
}

TEST_CASE("graph replay is deterministic") {
  auto run = []() {
    std::mt19937_64 rng(123);
    Graph g;
    const Tensor x = g.parameter(Tensor::uniform({4, 4}, -1.0, 1.0, rng));
    const Tensor w = g.parameter(Tensor::uniform({4, 4}, -1.0, 1.0, rng));
    Tensor h = relu(matmul(x, w));
    h = softmax(h, 2.0);
    const Tensor loss = mean(dropout(h, 0.25, rng));
    const GradientMap grads = g.backward(loss);
    return std::make_pair(loss.value(), grads.at(w));
  };
  const auto [l1, g1] = run();
  const auto [l2, g2] = run();
  CHECK(l1 == l2);
  CHECK(bitwise_equal(g1, g2));
}

TEST_CASE("operands from different graphs are rejected") {
  Graph g1, g2;
  const Tensor a = g1.parameter(Tensor::scalar(1.0));
  const Tensor b = g2.parameter(Tensor::scalar(2.0));
  CHECK_THROWS_AS(mul(a, b), ContractError);
}

TEST_CASE("operation outputs stay finite on random pipelines") {
  std::mt19937_64 rng(6);
  for (int it = 0; it < 20; ++it) {
    Graph g;
    const Tensor x = g.parameter(Tensor::uniform({5, 6}, -50.0, 50.0, rng));
    const Tensor w = g.parameter(Tensor::uniform({6, 6}, -2.0, 2.0, rng));
    const Tensor gain = g.parameter(Tensor::ones({6}));
    const Tensor bias = g.parameter(Tensor::zeros({6}));
    const Tensor h = layer_norm(matmul(sigmoid(x), w), gain, bias, 1e-5);
    const Tensor y = softmax(h, 0.1);
    CHECK(y.all_finite());
    const GradientMap grads = g.backward(mean(y));
    CHECK(grads.at(x).all_finite());
    CHECK(grads.at(w).all_finite());
  }
}
