#include <doctest.h>

#include <cmath>

#include "emochat/ops.hpp"

using namespace emochat;

TEST_SUITE("tensor") {
  TEST_CASE("shape/data invariants") {
    Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.shape() == std::vector<int>{2, 3});
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), std::invalid_argument);
  }

  TEST_CASE("backward rejects non-scalar loss") {
    Tensor t = Tensor::from_data({2}, {1, 2}, true);
    CHECK_THROWS(t.backward());
  }

  TEST_CASE("sum of squares gradient") {
    Tensor p = Tensor::from_data({2}, {1, 2}, true);
    Tensor loss = sum_all(mul(p, p));
    loss.backward();
    CHECK(p.grad()[0] == doctest::Approx(2.0));
    CHECK(p.grad()[1] == doctest::Approx(4.0));
  }

  TEST_CASE("sigmoid(w.x) gradient at w=0 is x/4") {
    Tensor w = Tensor::from_data({1, 3}, {0, 0, 0}, true);
    Tensor x = Tensor::from_data({3, 1}, {1, 2, 3});
    Tensor loss = sum_all(sigmoid(matmul(w, x)));
    loss.backward();
    for (int i = 0; i < 3; ++i)
      CHECK(w.grad()[size_t(i)] == doctest::Approx(0.25 * (i + 1)).epsilon(1e-5));
  }

  TEST_CASE("unreachable parameters keep zero grad") {
    Tensor p = Tensor::from_data({2}, {1, 2}, true);
    Tensor q = Tensor::from_data({2}, {3, 4}, true);
    Tensor loss = sum_all(p);
    loss.backward();
    CHECK(p.grad()[0] == 1.0);
    CHECK_FALSE(q.has_grad());
  }

  TEST_CASE("detached tensors take no gradient") {
    Tensor p = Tensor::from_data({2}, {1, 2}, true);
    Tensor loss = sum_all(mul(p.detached(), p.detached()));
    CHECK_FALSE(loss.on_tape());
  }
}

TEST_SUITE("ops") {
  TEST_CASE("softmax symmetry and normalization") {
    Tensor x = Tensor::from_data({1, 3}, {0, 0, 0});
    Tensor y = softmax(x);
    for (int i = 0; i < 3; ++i)
      CHECK(y.data()[size_t(i)] == doctest::Approx(1.0 / 3.0));

    Rng rng(3);
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<Real> vals(12);
      for (auto& v : vals) v = Real(rng.uniform(-20, 20));
      Tensor r = softmax(Tensor::from_data({3, 4}, vals));
      for (int row = 0; row < 3; ++row) {
        Real sum = 0;
        for (int c = 0; c < 4; ++c) {
          const Real p = r.data()[size_t(row * 4 + c)];
          CHECK(p > 0);
          sum += p;
        }
        CHECK(std::abs(sum - 1) < 1e-6);
      }
    }
  }

  TEST_CASE("log_softmax equals log of softmax") {
    Rng rng(5);
    std::vector<Real> vals(8);
    for (auto& v : vals) v = Real(rng.uniform(-20, 20));
    Tensor x = Tensor::from_data({2, 4}, vals);
    Tensor a = log_softmax(x);
    Tensor b = softmax(x);
    for (std::size_t i = 0; i < 8; ++i)
      CHECK(std::abs(a.data()[i] - std::log(b.data()[i])) < 1e-6);
  }

  TEST_CASE("sigmoid(0) is one half") {
    Tensor y = sigmoid(Tensor::scalar(0));
    CHECK(y.item() == doctest::Approx(0.5));
  }

  TEST_CASE("matmul identity") {
    Tensor eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Rng rng(7);
    std::vector<Real> vals(9);
    for (auto& v : vals) v = Real(rng.normal());
    Tensor m = Tensor::from_data({3, 3}, vals);
    Tensor out = matmul(eye, m);
    for (std::size_t i = 0; i < 9; ++i) CHECK(out.data()[i] == doctest::Approx(vals[i]));
  }

  TEST_CASE("matmul shape errors name both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 5});
    try {
      matmul(a, b);
      FAIL("expected throw");
    } catch (const std::invalid_argument& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2,3]") != std::string::npos);
      CHECK(msg.find("[4,5]") != std::string::npos);
    }
  }

  TEST_CASE("add broadcast is trailing-vector only") {
    Tensor a = Tensor::zeros({2, 3});
    CHECK_NOTHROW(add(a, Tensor::zeros({3})));
    CHECK_THROWS_AS(add(a, Tensor::zeros({2})), std::invalid_argument);
  }

  TEST_CASE("concat/slice round trip") {
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({1, 2}, {5, 6});
    Tensor c = concat_rows({a, b});
    CHECK(c.dim(0) == 3);
    Tensor back = slice_rows(c, 2, 3);
    CHECK(back.data()[0] == 5);
    CHECK(back.data()[1] == 6);
  }

  TEST_CASE("embedding gathers rows and scatters grads") {
    Tensor table = Tensor::from_data({3, 2}, {0, 1, 10, 11, 20, 21}, true);
    Tensor out = embedding(table, {2, 0, 2});
    CHECK(out.data()[0] == 20);
    CHECK(out.data()[4] == 20);
    sum_all(out).backward();
    CHECK(table.grad()[4] == 2.0);  // row 2 picked twice
    CHECK(table.grad()[2] == 0.0);  // row 1 never picked
  }

  TEST_CASE("determinism: identical inputs give bit-identical forwards") {
    Rng rng(11);
    std::vector<Real> av(64 * 32), bv(32 * 48);
    for (auto& v : av) v = Real(rng.normal());
    for (auto& v : bv) v = Real(rng.normal());
    Tensor a = Tensor::from_data({64, 32}, av);
    Tensor b = Tensor::from_data({32, 48}, bv);
    Tensor c1 = matmul(a, b);
    Tensor c2 = matmul(a, b);
    for (std::size_t i = 0; i < c1.numel(); ++i)
      CHECK(c1.data()[i] == c2.data()[i]);
  }
}
