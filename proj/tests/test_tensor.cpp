#include <doctest.h>

#include <cmath>
#include <random>

#include "baar/tensor.hpp"
#include "support.hpp"

using namespace baar;
using baar::testing::grad_check;
using baar::testing::random_tensor;
using baar::testing::rel_err;

TEST_CASE("matmul identity and hand cases") {
  Tensor id = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from_data({2, 2}, {3, 4, 5, 6});
  Tensor r = matmul(id, b);
  CHECK(r.data() == b.data());

  Tensor a = Tensor::from_data({1, 2}, {1, 2});
  Tensor c = Tensor::from_data({2, 1}, {3, 4});
  CHECK(matmul(a, c).item() == doctest::Approx(11.0));
}

TEST_CASE("matmul shape mismatch reports both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected throw");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul associativity on random triples") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor a = random_tensor({4, 3}, rng, false);
    Tensor b = random_tensor({3, 5}, rng, false);
    Tensor c = random_tensor({5, 2}, rng, false);
    Tensor left = matmul(matmul(a, b), c);
    Tensor right = matmul(a, matmul(b, c));
    CHECK(baar::testing::max_rel_diff(left.data(), right.data()) < 1e-5);
  }
}

TEST_CASE("softmax rows: symmetry, stabilization, row sums") {
  Tensor x = Tensor::from_data({1, 2}, {0, 0});
  Tensor y = softmax_rows(x);
  CHECK(y.data()[0] == doctest::Approx(0.5));
  CHECK(y.data()[1] == doctest::Approx(0.5));

  Tensor big = Tensor::from_data({1, 2}, {1000, 0});
  Tensor yb = softmax_rows(big);
  CHECK(yb.data()[0] == doctest::Approx(1.0));
  CHECK(yb.data()[1] < 1e-300);
  CHECK(std::isfinite(yb.data()[0]));

  std::mt19937_64 rng(3);
  Tensor r = random_tensor({5, 7}, rng, false, 3.0);
  Tensor yr = softmax_rows(r);
  for (std::int64_t i = 0; i < 5; ++i) {
    double s = 0;
    for (std::int64_t j = 0; j < 7; ++j) s += yr.at(i, j);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("softmax rejects NaN input") {
  Tensor x = Tensor::from_data({1, 2}, {std::nan(""), 0.0});
  CHECK_THROWS_AS(softmax_rows(x), std::runtime_error);
}

TEST_CASE("conv1d lengths and sliding sums") {
  std::mt19937_64 rng(11);
  Tensor k1 = random_tensor({1, 1, 3}, rng, false);
  CHECK(conv1d(Tensor::zeros({3000, 1}), k1).dim(0) == 1500);
  CHECK(conv1d(Tensor::zeros({5, 1}), k1).dim(0) == 3);

  Tensor ones = Tensor::full({1, 1, 3}, 1.0);
  Tensor x = Tensor::from_data({4, 1}, {1, 2, 3, 4});
  Tensor y = conv1d(x, ones);
  REQUIRE(y.dim(0) == 2);
  CHECK(y.data()[0] == doctest::Approx(3.0));   // 0+1+2
  CHECK(y.data()[1] == doctest::Approx(9.0));   // 2+3+4

  CHECK_THROWS_AS(conv1d(Tensor::zeros({0, 1}), ones), std::invalid_argument);
}

TEST_CASE("conv1d matches brute-force oracle") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const std::int64_t T = 1 + static_cast<std::int64_t>(rng() % 17);
    const std::int64_t V = 1 + static_cast<std::int64_t>(rng() % 3);
    const std::int64_t O = 1 + static_cast<std::int64_t>(rng() % 3);
    Tensor x = random_tensor({T, V}, rng, false);
    Tensor k = random_tensor({O, V, 3}, rng, false);
    Tensor y = conv1d(x, k);
    REQUIRE(y.dim(0) == (T + 1) / 2);
    // brute force: pad one zero row each side, slide stride 2
    for (std::int64_t t = 0; t < y.dim(0); ++t) {
      for (std::int64_t o = 0; o < O; ++o) {
        double acc = 0;
        for (std::int64_t j = 0; j < 3; ++j) {
          const std::int64_t src = 2 * t - 1 + j;
          if (src < 0 || src >= T) continue;
          for (std::int64_t v = 0; v < V; ++v) acc += x.at(src, v) * k.data()[static_cast<std::size_t>((o * V + v) * 3 + j)];
        }
        CHECK(y.at(t, o) == doctest::Approx(acc).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("backward basics") {
  Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
  {
    Tape tape;
    Tensor loss = sum_all(x);
    tape.backward(loss);
  }
  for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));

  Tensor v = Tensor::from_data({2}, {1, 2}, true);
  v.zero_grad();
  {
    Tape tape;
    Tensor loss = sum_all(mul(v, v));
    tape.backward(loss);
  }
  CHECK(v.grad()[0] == doctest::Approx(2.0));
  CHECK(v.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward errors: non-scalar loss, double backward") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Tape tape;
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
  Tensor loss = sum_all(y);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), std::runtime_error);
}

TEST_CASE("every differentiable primitive passes finite differences") {
  std::mt19937_64 rng(42);
  const double tol = 1e-4;
  for (int trial = 0; trial < 10; ++trial) {
    {
      Tensor a = random_tensor({5, 3}, rng);
      Tensor b = random_tensor({3, 2}, rng);
      CHECK(grad_check({a, b}, [&]() { return sum_all(mul(matmul(a, b), matmul(a, b))); }) < tol);
    }
    {
      Tensor a = random_tensor({3, 4}, rng);
      Tensor b = random_tensor({3, 4}, rng);
      CHECK(grad_check({a, b}, [&]() { return mean_all(mul(add(a, b), sub(a, scale(b, 0.7)))); }) < tol);
    }
    {
      Tensor a = random_tensor({2, 3}, rng, true, 0.5);
      CHECK(grad_check({a}, [&]() { return sum_all(mul(exp_t(a), a)); }) < tol);
    }
    {
      Tensor a = random_tensor({2, 3}, rng);
      Tensor pos = exp_t(a.detach());
      Tensor p = Tensor::from_data(pos.shape(), pos.data(), true);
      CHECK(grad_check({p}, [&]() { return sum_all(log_t(p)); }) < tol);
    }
    {
      Tensor a = random_tensor({3, 3}, rng);
      CHECK(grad_check({a}, [&]() { return sum_all(mul(gelu(a), a)); }) < tol);
    }
    {
      Tensor a = random_tensor({4, 3}, rng);
      CHECK(grad_check({a}, [&]() { return sum_all(mul(softmax_rows(a), a)); }) < tol);
    }
    {
      Tensor a = random_tensor({3, 4}, rng);
      Tensor g = random_tensor({4}, rng);
      Tensor b = random_tensor({4}, rng);
      CHECK(grad_check({a, g, b}, [&]() { return sum_all(mul(layer_norm(a, g, b), a)); }) < tol);
    }
    {
      Tensor x = random_tensor({7, 2}, rng);
      Tensor k = random_tensor({3, 2, 3}, rng);
      CHECK(grad_check({x, k}, [&]() { return sum_all(mul(conv1d(x, k), conv1d(x, k))); }) < tol);
    }
    {
      Tensor a = random_tensor({4, 3}, rng);
      CHECK(grad_check({a}, [&]() {
              Tensor t = transpose(a);
              Tensor r = reshape(t, {4, 3});
              return sum_all(mul(r, r));
            }) < tol);
    }
    {
      Tensor a = random_tensor({3, 2}, rng);
      Tensor b = random_tensor({2, 2}, rng);
      CHECK(grad_check({a, b}, [&]() {
              Tensor c = concat({a, b}, 0);
              Tensor s = slice(c, 0, 1, 3);
              return sum_all(mul(s, s));
            }) < tol);
    }
    {
      Tensor x = random_tensor({4, 3}, rng);
      Tensor v = random_tensor({3}, rng);
      Tensor w = random_tensor({4}, rng);
      CHECK(grad_check({x, v, w}, [&]() { return sum_all(mul(scale_rows(add_rowvec(x, v), w), x)); }) < tol);
    }
    {
      Tensor logits = random_tensor({5, 4}, rng);
      std::vector<std::int64_t> targets{0, 3, 1, 2, 2};
      CHECK(grad_check({logits}, [&]() { return cross_entropy(logits, targets); }) < tol);
    }
    {
      Tensor logits = random_tensor({3, 2}, rng);
      Tensor y01 = Tensor::from_data({3, 2}, {1, 0, 0, 1, 1, 1});
      CHECK(grad_check({logits}, [&]() { return bce_with_logits(logits, y01); }) < tol);
    }
    {
      Tensor p = random_tensor({4, 2}, rng);
      Tensor t = random_tensor({4, 2}, rng, false);
      CHECK(grad_check({p}, [&]() { return mse(p, t); }) < tol);
    }
    {
      Tensor table = random_tensor({6, 3}, rng);
      std::vector<std::int64_t> codes{1, 4, 1, 0};
      CHECK(grad_check({table}, [&]() {
              Tensor e = embedding(table, codes);
              return sum_all(mul(e, e));
            }) < tol);
    }
  }
}

TEST_CASE("f32 precision rounds stored values") {
  Tensor a = Tensor::from_data({1}, {0.1}, false, Precision::f32);
  CHECK(a.data()[0] == static_cast<double>(static_cast<float>(0.1)));
  Tensor b = Tensor::from_data({1}, {0.2}, false, Precision::f32);
  Tensor c = add(a, b);
  CHECK(c.data()[0] == static_cast<double>(static_cast<float>(a.data()[0] + b.data()[0])));
  CHECK(c.precision() == Precision::f32);
}

TEST_CASE("ops refuse mixed precision") {
  Tensor a = Tensor::zeros({2}, false, Precision::f32);
  Tensor b = Tensor::zeros({2}, false, Precision::f64);
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
}
