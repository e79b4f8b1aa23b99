#include <doctest.h>

#include <cmath>

#include "emochat/ops.hpp"
#include "emochat/optim.hpp"

using namespace emochat;

TEST_SUITE("optim") {
  TEST_CASE("zero grad leaves parameters unchanged") {
    Tensor p = Tensor::from_data({2}, {1, 2}, true);
    Adam adam({{"p", &p}}, {});
    adam.step();  // no grad buffer at all
    CHECK(p.data()[0] == 1.0f);
    p.grad();  // allocate zeros
    adam.step();
    CHECK(p.data()[0] == doctest::Approx(1.0));
    CHECK(p.data()[1] == doctest::Approx(2.0));
  }

  TEST_CASE("first Adam step moves by ~lr against the gradient sign") {
    // hand evaluation of the recurrences at t=1: update = lr * sign(g)
    Tensor p = Tensor::scalar(1.0, true);
    p.grad()[0] = 1.0;
    Adam adam({{"p", &p}}, {.lr = Real(0.1)});
    adam.step();
    CHECK(p.item() == doctest::Approx(0.9).epsilon(1e-6));
    CHECK_FALSE(p.grad()[0] != 0.0);  // grads zeroed after the step
  }

  TEST_CASE("constant gradient walks the parameter downhill") {
    Tensor p = Tensor::scalar(0.0, true);
    Adam adam({{"p", &p}}, {.lr = Real(0.05)});
    for (int i = 0; i < 50; ++i) {
      p.grad()[0] = 2.0;  // positive gradient -> parameter must decrease
      adam.step();
    }
    CHECK(p.item() < -1.0);
  }

  TEST_CASE("non-finite gradient aborts the step and names the parameter") {
    Tensor p = Tensor::scalar(1.0, true);
    Tensor q = Tensor::scalar(2.0, true);
    p.grad()[0] = 1.0;
    q.grad()[0] = std::numeric_limits<Real>::quiet_NaN();
    Adam adam({{"p", &p}, {"weights/q", &q}}, {});
    try {
      adam.step();
      FAIL("expected throw");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("weights/q") != std::string::npos);
    }
    CHECK(p.item() == 1.0f);  // nothing moved
    CHECK(q.item() == 2.0f);
  }

  TEST_CASE("gradient descent on a quadratic reaches the minimum") {
    Tensor p = Tensor::scalar(3.0, true);
    Adam adam({{"p", &p}}, {.lr = Real(0.05)});
    for (int i = 0; i < 400; ++i) {
      Tensor loss = mul(add_scalar(p, -1), add_scalar(p, -1));
      loss.backward();
      adam.step();
    }
    CHECK(p.item() == doctest::Approx(1.0).epsilon(1e-2));
  }
}
