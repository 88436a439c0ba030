#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "unite/errors.hpp"
#include "unite/gradcheck.hpp"
#include "unite/ops.hpp"

using namespace unite;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor random_param(Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = scale * standard_normal(rng);
  return Tensor::parameter(std::move(shape), std::move(v));
}

double check_unary(const std::function<Tensor(const Tensor&)>& op, const Tensor& x) {
  const std::vector<Tensor> in{x};
  return grad_check(
             [&](std::span<const Tensor> v) {
               const Tensor y = op(v[0]);
               std::vector<double> w(y.size());
               std::iota(w.begin(), w.end(), 1.0);
               return ops::sum(ops::mul(y, Tensor::constant(y.shape(), w)));
             },
             in)
      .max_relative_error;
}

}  // namespace

TEST_CASE("broadcasting add/mul") {
  const Tensor a = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor b = Tensor::constant({3}, {10, 20, 30});
  CHECK(values(ops::add(a, b)) == std::vector<double>{11, 22, 33, 14, 25, 36});
  const Tensor col = Tensor::constant({2, 1}, {2, 3});
  CHECK(values(ops::mul(a, col)) == std::vector<double>{2, 4, 6, 12, 15, 18});
  CHECK_THROWS_AS(ops::add(a, Tensor::constant({2}, {1, 2})), DimensionError);
}

TEST_CASE("matmul examples") {
  const Tensor eye = Tensor::constant({2, 2}, {1, 0, 0, 1});
  CHECK(values(ops::matmul(eye, eye)) == values(eye));
  const Tensor a = Tensor::constant({2, 2}, {1, 2, 3, 4});
  const Tensor ones = Tensor::constant({2, 1}, {1, 1});
  CHECK(values(ops::matmul(a, ones)) == std::vector<double>{3, 7});
  try {
    ops::matmul(a, Tensor::constant({3, 1}, {1, 1, 1}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,2]") != std::string::npos);
    CHECK(msg.find("[3,1]") != std::string::npos);
  }
  CHECK(check_unary([](const Tensor& x) { return ops::matmul(x, Tensor::constant({4, 2}, {1, -2, 0.5, 3, 2, 1, -1, 0})); },
                    random_param({3, 4}, 1)) < 1e-6);
}

TEST_CASE("matmul gradient in both operands") {
  const Tensor a = random_param({3, 4}, 2), b = random_param({4, 2}, 3);
  const std::vector<Tensor> in{a, b};
  CHECK(grad_check([](std::span<const Tensor> v) { return ops::sum(ops::matmul(v[0], v[1])); }, in).max_relative_error <
        1e-6);
}

TEST_CASE("softmax examples") {
  auto s = values(ops::softmax(Tensor::constant({3}, {0, 0, 0}), 0));
  for (double v : s) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  s = values(ops::softmax(Tensor::constant({3}, {1000, 0, 0}), 0));
  CHECK(s[0] == doctest::Approx(1.0));
  CHECK(s[1] < 1e-300);
  const Tensor r = ops::softmax(random_param({4, 7}, 4, 3.0), 1);
  for (std::size_t i = 0; i < 4; ++i) {
    double total = 0;
    for (std::size_t j = 0; j < 7; ++j) {
      CHECK(r[i * 7 + j] >= 0.0);
      total += r[i * 7 + j];
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
  CHECK(check_unary([](const Tensor& x) { return ops::softmax(x, 0); }, random_param({5}, 5)) < 1e-6);
  CHECK(check_unary([](const Tensor& x) { return ops::softmax(x, 0); }, random_param({3, 4}, 6)) < 1e-6);
}

TEST_CASE("log_softmax matches log of softmax") {
  const Tensor x = random_param({3, 5}, 7);
  const auto a = values(ops::log_softmax(x, 1));
  const auto b = values(ops::softmax(x, 1));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(std::log(b[i])).epsilon(1e-12));
  CHECK(check_unary([](const Tensor& v) { return ops::log_softmax(v, 1); }, x) < 1e-6);
}

TEST_CASE("layer_norm examples") {
  const Tensor gain = Tensor::constant({2}, {1, 1}), bias = Tensor::constant({2}, {0, 0});
  auto y = values(ops::layer_norm(Tensor::constant({2}, {1, 3}), gain, bias, 1e-12));
  CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-9));
  y = values(ops::layer_norm(Tensor::constant({2}, {4, 4}), gain, bias));
  CHECK(y == std::vector<double>{0.0, 0.0});
  const Tensor x = random_param({3, 6}, 8), g = random_param({6}, 9), b = random_param({6}, 10);
  const std::vector<Tensor> in{x, g, b};
  CHECK(grad_check([](std::span<const Tensor> v) {
          const Tensor out = ops::layer_norm(v[0], v[1], v[2]);
          return ops::sum(ops::mul(out, out));
        }, in).max_relative_error < 1e-6);
}

TEST_CASE("gelu examples") {
  const auto y = values(ops::gelu(Tensor::constant({4}, {0.0, 1.0, 30.0, -30.0})));
  CHECK(y[0] == 0.0);
  // x * Phi(x) at 1, from the error function to double precision.
  CHECK(y[1] == doctest::Approx(0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)))).epsilon(1e-14));
  CHECK(std::abs(y[1] - 0.8413) < 1e-3);
  CHECK(y[2] == doctest::Approx(30.0));
  CHECK(std::abs(y[3]) < 1e-100);
  CHECK(check_unary([](const Tensor& x) { return ops::gelu(x); }, random_param({10}, 11, 2.0)) < 1e-6);
}

TEST_CASE("l2_norm examples") {
  CHECK(ops::l2_norm(Tensor::constant({2}, {3, 4})).item() == 5.0);
  const Tensor zero = Tensor::parameter({3}, {0, 0, 0});
  CHECK(ops::l2_norm(zero).item() == 0.0);
  CHECK(backward(ops::l2_norm(zero)).of(zero) == std::vector<double>{0, 0, 0});
  CHECK(check_unary([](const Tensor& x) { return ops::l2_norm(x); }, random_param({6}, 12)) < 1e-6);
  const auto rows = values(ops::l2_norm(Tensor::constant({2, 2}, {3, 4, 6, 8}), 1));
  CHECK(rows == std::vector<double>{5, 10});
  CHECK(check_unary([](const Tensor& x) { return ops::l2_norm(x, 1); }, random_param({3, 4}, 13)) < 1e-6);
}

TEST_CASE("relu subgradient at zero") {
  const Tensor x = Tensor::parameter({3}, {-1, 0, 2});
  CHECK(values(ops::relu(x)) == std::vector<double>{0, 0, 2});
  CHECK(backward(ops::sum(ops::relu(x))).of(x) == std::vector<double>{0, 0, 1});
}

TEST_CASE("dropout") {
  std::mt19937_64 rng(1);
  const Tensor x = random_param({4, 4}, 14);
  CHECK(values(ops::dropout(x, 0.0, true, rng)) == values(x));
  CHECK(values(ops::dropout(x, 0.7, false, rng)) == values(x));
  CHECK_THROWS_AS(ops::dropout(x, 1.0, true, rng), ValidationError);
  CHECK_THROWS_AS(ops::dropout(x, -0.1, true, rng), ValidationError);

  const Tensor ones = Tensor::full({100000}, 1.0);
  const auto y = values(ops::dropout(ones, 0.5, true, rng));
  std::size_t kept = 0;
  for (double v : y) {
    if (v != 0.0) {
      ++kept;
      CHECK(v == 2.0);
    }
  }
  CHECK(std::abs(static_cast<double>(kept) / 1e5 - 0.5) < 0.01);

  std::mt19937_64 r1(9), r2(9);
  CHECK(values(ops::dropout(x, 0.3, true, r1)) == values(ops::dropout(x, 0.3, true, r2)));
}

TEST_CASE("reductions") {
  const Tensor x = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(ops::sum(x).item() == 21);
  CHECK(ops::mean(x).item() == 3.5);
  CHECK(values(ops::sum(x, 0)) == std::vector<double>{5, 7, 9});
  CHECK(values(ops::mean(x, 1)) == std::vector<double>{2, 5});
  CHECK_THROWS_AS(ops::sum(x, 2), DimensionError);
  CHECK(check_unary([](const Tensor& v) { return ops::sum(v, 1); }, random_param({2, 3, 4}, 15)) < 1e-6);
  CHECK(check_unary([](const Tensor& v) { return ops::mean(v, 2); }, random_param({2, 3, 4}, 16)) < 1e-6);
}

TEST_CASE("shape ops") {
  const Tensor x = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(values(ops::transpose(x)) == std::vector<double>{1, 4, 2, 5, 3, 6});
  CHECK(ops::reshape(x, {3, 2}).shape() == Shape{3, 2});
  CHECK_THROWS_AS(ops::reshape(x, {4, 2}), DimensionError);
  CHECK(values(ops::slice_cols(x, 1, 3)) == std::vector<double>{2, 3, 5, 6});
  const std::vector<Tensor> parts{ops::slice_cols(x, 0, 1), ops::slice_cols(x, 1, 3)};
  CHECK(values(ops::concat_cols(parts)) == values(x));
  const std::vector<Tensor> rows{x, x};
  CHECK(ops::stack(rows).shape() == Shape{2, 2, 3});
  CHECK(values(ops::select(x, 1)) == std::vector<double>{4, 5, 6});
  const std::vector<std::size_t> idx{2, 0};
  CHECK(values(ops::gather_rows(x, idx)) == std::vector<double>{3, 4});
  CHECK(check_unary([](const Tensor& v) { return ops::transpose(v); }, random_param({3, 4}, 17)) < 1e-6);
  CHECK(check_unary([](const Tensor& v) { return ops::slice_cols(v, 1, 3); }, random_param({3, 4}, 18)) < 1e-6);
  CHECK(check_unary([](const Tensor& v) { return ops::select(v, 2); }, random_param({3, 4}, 19)) < 1e-6);
}

TEST_CASE("pool_token_grid matches a block-mean loop") {
  // 27x27 grid of token-index values pooled to 9x9 cells.
  const std::size_t side = 27, grid = 9, frames = 2, dim = 2;
  std::vector<double> v(frames * side * side * dim);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i % 997) * 0.5;
  const Tensor x = Tensor::constant({frames, side * side, dim}, v);
  const Tensor y = ops::pool_token_grid(x, grid);
  REQUIRE(y.shape() == Shape{frames * grid * grid, dim});
  const std::size_t block = side / grid;
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t gr = 0; gr < grid; ++gr)
      for (std::size_t gc = 0; gc < grid; ++gc)
        for (std::size_t k = 0; k < dim; ++k) {
          double acc = 0;
          for (std::size_t r = gr * block; r < (gr + 1) * block; ++r)
            for (std::size_t c = gc * block; c < (gc + 1) * block; ++c) acc += v[((f * side * side) + r * side + c) * dim + k];
          CHECK(y[((f * grid * grid) + gr * grid + gc) * dim + k] == doctest::Approx(acc / 9.0).epsilon(1e-14));
        }
  CHECK_THROWS_AS(ops::pool_token_grid(x, 4), DimensionError);
  CHECK(check_unary([](const Tensor& t) { return ops::pool_token_grid(t, 2); }, random_param({2, 16, 3}, 20)) < 1e-6);
}

TEST_CASE("ops are pure") {
  const Tensor x = random_param({3, 4}, 21);
  CHECK(values(ops::gelu(ops::softmax(x, 1))) == values(ops::gelu(ops::softmax(x, 1))));
}
