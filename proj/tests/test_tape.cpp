#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "fdcheck.hpp"
#include "mgoe/tape.hpp"

using mgoe::ShapeError;
using mgoe::Tape;
using mgoe::Tensor;
using mgoe::Var;

namespace {

Tensor rand_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.0,
                   double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& x : t.v) x = mgoe::detail::rand_range(rng, lo, hi);
  t.requires_grad = true;
  return t;
}

// Runs an op graph builder twice: once on the tape for analytic gradients,
// and many times as a pure function for finite differences.
using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

double check_op(std::vector<Tensor> inputs, const Builder& build) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t));
  Var out = build(tape, vars);
  // Reduce to a scalar with fixed random-ish weights so every output
  // coordinate contributes to the loss.
  std::vector<double> w(tape.len(out));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
  Tensor wt(tape.shape(out), w);
  Var loss = tape.sum(tape.mul(out, tape.leaf(wt)));
  tape.backward(loss);
  std::vector<Tensor> grads;
  for (Var v : vars) grads.push_back(tape.grad(v));

  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape t2(false);
    std::vector<Var> vs;
    for (const auto& x : xs) vs.push_back(t2.leaf(x));
    Var o = build(t2, vs);
    double s = 0.0;
    const double* p = t2.value_ptr(o);
    for (std::size_t i = 0; i < t2.len(o); ++i) s += p[i] * w[i];
    return s;
  };
  return testutil::fd_max_error(inputs, grads, eval);
}

}  // namespace

TEST_CASE("softmax_temp basics") {
  Tape tape;
  SECTION("constant input is uniform") {
    Var x = tape.constant({2.5, 2.5, 2.5});
    Var y = tape.softmax_temp(x, 0.7);
    const double* p = tape.value_ptr(y);
    for (int i = 0; i < 3; ++i) CHECK(p[i] == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
  }
  SECTION("scalar evaluation [1,2] at temperature 1") {
    Var x = tape.constant({1.0, 2.0});
    Var y = tape.softmax_temp(x, 1.0);
    const double* p = tape.value_ptr(y);
    CHECK(p[0] == Catch::Approx(0.26894).margin(1e-5));
    CHECK(p[1] == Catch::Approx(0.73106).margin(1e-5));
  }
  SECTION("sums to one and is shift invariant") {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 20; ++rep) {
      Tape t;
      Tensor x = rand_tensor({6}, rng, -3.0, 3.0);
      Var a = t.softmax_temp(t.leaf(x), 0.9);
      double s = 0.0;
      for (int i = 0; i < 6; ++i) s += t.value_ptr(a)[i];
      CHECK(std::fabs(s - 1.0) <= 1e-9);
      Tensor xs = x;
      for (double& v : xs.v) v += 17.25;
      Var b = t.softmax_temp(t.leaf(xs), 0.9);
      for (int i = 0; i < 6; ++i)
        CHECK(t.value_ptr(b)[i] == Catch::Approx(t.value_ptr(a)[i]).margin(1e-12));
    }
  }
  SECTION("high temperature limit is uniform") {
    Var x = tape.constant({-4.0, 0.5, 9.0, 2.0});
    Var y = tape.softmax_temp(x, 1e6);
    const double* p = tape.value_ptr(y);
    for (int i = 0; i < 4; ++i) CHECK(std::fabs(p[i] - 0.25) < 1e-5);
  }
  SECTION("non-positive temperature rejected") {
    Var x = tape.constant({1.0, 2.0});
    CHECK_THROWS_AS(tape.softmax_temp(x, 0.0), mgoe::ConfigError);
    CHECK_THROWS_AS(tape.softmax_temp(x, -1.0), mgoe::ConfigError);
  }
}

TEST_CASE("sigmoid identity point") {
  Tape tape;
  Var y = tape.sigmoid(tape.constant({0.0}));
  CHECK(tape.value_scalar(y) == 0.5);
}

TEST_CASE("shape mismatches name both shapes") {
  Tape tape;
  Var a = tape.leaf(Tensor({2, 3}, std::vector<double>(6, 1.0)));
  Var b = tape.leaf(Tensor({5, 2}, std::vector<double>(10, 1.0)));
  try {
    tape.matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2x3)") != std::string::npos);
    CHECK(msg.find("(5x2)") != std::string::npos);
  }
  Var c = tape.constant({1.0, 2.0});
  Var d = tape.constant({1.0, 2.0, 3.0});
  CHECK_THROWS_AS(tape.add(c, d), ShapeError);
}

TEST_CASE("backward basics") {
  SECTION("sum of leaf gives all-ones gradient") {
    Tape tape;
    Tensor x({4}, {1.0, -2.0, 0.5, 3.0});
    x.requires_grad = true;
    Var vx = tape.leaf(x);
    tape.backward(tape.sum(vx));
    Tensor g = tape.grad(vx);
    for (double v : g.v) CHECK(v == 1.0);
  }
  SECTION("sigmoid(w.x) matches finite differences") {
    std::mt19937_64 rng(5);
    std::vector<Tensor> inputs = {rand_tensor({6}, rng), rand_tensor({6}, rng)};
    Tape tape;
    Var w = tape.leaf(inputs[0]);
    Var x = tape.leaf(inputs[1]);
    Var loss = tape.sigmoid(tape.dot(w, x));
    tape.backward(loss);
    std::vector<Tensor> grads = {tape.grad(w), tape.grad(x)};
    auto eval = [](const std::vector<Tensor>& in) {
      double s = 0.0;
      for (int i = 0; i < 6; ++i) s += in[0].v[i] * in[1].v[i];
      return 1.0 / (1.0 + std::exp(-s));
    };
    CHECK(testutil::fd_max_error(inputs, grads, eval) < 1e-4);
  }
  SECTION("disconnected leaf gets zero gradient") {
    Tape tape;
    Tensor a({2}, {1.0, 2.0});
    a.requires_grad = true;
    Tensor b = a;
    Var va = tape.leaf(a);
    Var vb = tape.leaf(b);
    tape.backward(tape.sum(va));
    Tensor g = tape.grad(vb);
    CHECK(g.v[0] == 0.0);
    CHECK(g.v[1] == 0.0);
  }
  SECTION("non-scalar loss rejected") {
    Tape tape;
    Tensor a({2}, {1.0, 2.0});
    a.requires_grad = true;
    Var va = tape.leaf(a);
    CHECK_THROWS_AS(tape.backward(va), ShapeError);
  }
  SECTION("tape refuses reuse after backward until reset") {
    Tape tape;
    Tensor a({1}, {2.0});
    a.requires_grad = true;
    Var va = tape.leaf(a);
    tape.backward(tape.sum(va));
    CHECK_THROWS_AS(tape.leaf(a), mgoe::Error);
    tape.reset();
    CHECK_NOTHROW(tape.leaf(a));
  }
}

TEST_CASE("non-finite values are trapped with a named node") {
  Tape tape;
  Var x = tape.leaf(Tensor({1}, {-1.0}), "bad_input");
  try {
    tape.log(x);
    FAIL("expected NumericError");
  } catch (const mgoe::NumericError& e) {
    CHECK(std::string(e.what()).find("log") != std::string::npos);
  }
}

TEST_CASE("per-op gradients match central finite differences") {
  std::mt19937_64 rng(42);
  const double tol = 1e-4;

  SECTION("matmul matrix-matrix") {
    double err = check_op({rand_tensor({3, 4}, rng), rand_tensor({4, 2}, rng)},
                          [](Tape& t, const std::vector<Var>& v) {
                            return t.matmul(v[0], v[1]);
                          });
    CHECK(err < tol);
  }
  SECTION("matmul matrix-vector and vector-matrix") {
    double err = check_op({rand_tensor({3, 4}, rng), rand_tensor({4}, rng)},
                          [](Tape& t, const std::vector<Var>& v) {
                            return t.matmul(v[0], v[1]);
                          });
    CHECK(err < tol);
    err = check_op({rand_tensor({4}, rng), rand_tensor({4, 3}, rng)},
                   [](Tape& t, const std::vector<Var>& v) {
                     return t.matmul(v[0], v[1]);
                   });
    CHECK(err < tol);
  }
  SECTION("linear") {
    double err = check_op(
        {rand_tensor({3, 5}, rng), rand_tensor({5}, rng), rand_tensor({3}, rng)},
        [](Tape& t, const std::vector<Var>& v) { return t.linear(v[0], v[1], v[2]); });
    CHECK(err < tol);
  }
  SECTION("elementwise add sub mul div") {
    for (auto op : {0, 1, 2, 3}) {
      double err = check_op(
          {rand_tensor({5}, rng, 0.5, 2.0), rand_tensor({5}, rng, 0.5, 2.0)},
          [op](Tape& t, const std::vector<Var>& v) {
            switch (op) {
              case 0: return t.add(v[0], v[1]);
              case 1: return t.sub(v[0], v[1]);
              case 2: return t.mul(v[0], v[1]);
              default: return t.div(v[0], v[1]);
            }
          });
      CHECK(err < tol);
    }
  }
  SECTION("neg scale affine") {
    double err = check_op({rand_tensor({6}, rng)}, [](Tape& t, const std::vector<Var>& v) {
      return t.affine(t.scale(t.neg(v[0]), 1.7), -0.4, 0.9);
    });
    CHECK(err < tol);
  }
  SECTION("concat") {
    double err = check_op({rand_tensor({3}, rng), rand_tensor({2}, rng), rand_tensor({4}, rng)},
                          [](Tape& t, const std::vector<Var>& v) {
                            return t.concat({v[0], v[1], v[2]});
                          });
    CHECK(err < tol);
  }
  SECTION("stack_rows") {
    double err = check_op({rand_tensor({4}, rng), rand_tensor({4}, rng)},
                          [](Tape& t, const std::vector<Var>& v) {
                            return t.stack_rows({v[0], v[1]});
                          });
    CHECK(err < tol);
  }
  SECTION("gather_rows accumulates duplicate rows") {
    double err = check_op({rand_tensor({5, 3}, rng)}, [](Tape& t, const std::vector<Var>& v) {
      const int idx[4] = {1, 3, 1, 0};
      return t.gather_rows(v[0], idx);
    });
    CHECK(err < tol);
  }
  SECTION("sigmoid relu log") {
    double err = check_op({rand_tensor({6}, rng)}, [](Tape& t, const std::vector<Var>& v) {
      return t.sigmoid(v[0]);
    });
    CHECK(err < tol);
    // Keep relu inputs away from the kink.
    Tensor r({5}, {0.4, -0.8, 1.2, -0.3, 2.0});
    r.requires_grad = true;
    err = check_op({r}, [](Tape& t, const std::vector<Var>& v) { return t.relu(v[0]); });
    CHECK(err < tol);
    err = check_op({rand_tensor({5}, rng, 0.3, 3.0)},
                   [](Tape& t, const std::vector<Var>& v) { return t.log(v[0]); });
    CHECK(err < tol);
  }
  SECTION("log1p_sum") {
    double err = check_op({rand_tensor({5}, rng, 0.0, 2.0)},
                          [](Tape& t, const std::vector<Var>& v) { return t.log1p_sum(v[0]); });
    CHECK(err < tol);
  }
  SECTION("softmax_temp at several temperatures") {
    for (double gamma : {0.3, 1.0, 2.5}) {
      double err = check_op({rand_tensor({6}, rng, -2.0, 2.0)},
                            [gamma](Tape& t, const std::vector<Var>& v) {
                              return t.softmax_temp(v[0], gamma);
                            });
      CHECK(err < tol);
    }
  }
  SECTION("dot sum broadcast transpose") {
    double err = check_op({rand_tensor({7}, rng), rand_tensor({7}, rng)},
                          [](Tape& t, const std::vector<Var>& v) {
                            return t.dot(v[0], v[1]);
                          });
    CHECK(err < tol);
    err = check_op({rand_tensor({2, 3}, rng)},
                   [](Tape& t, const std::vector<Var>& v) { return t.sum(v[0]); });
    CHECK(err < tol);
    err = check_op({rand_tensor({1}, rng)},
                   [](Tape& t, const std::vector<Var>& v) { return t.broadcast(v[0], 5); });
    CHECK(err < tol);
    err = check_op({rand_tensor({3, 4}, rng)},
                   [](Tape& t, const std::vector<Var>& v) {
                     return t.matmul(t.transpose(v[0]), v[0]);
                   });
    CHECK(err < tol);
  }
  SECTION("clamp passes gradient only inside the interval") {
    Tensor x({4}, {-2.0, 0.2, 0.8, 3.0});
    x.requires_grad = true;
    Tape tape;
    Var vx = tape.leaf(x);
    tape.backward(tape.sum(tape.clamp(vx, 0.0, 1.0)));
    Tensor g = tape.grad(vx);
    CHECK(g.v[0] == 0.0);
    CHECK(g.v[1] == 1.0);
    CHECK(g.v[2] == 1.0);
    CHECK(g.v[3] == 0.0);
  }
  SECTION("composite expression") {
    double err = check_op(
        {rand_tensor({4, 4}, rng), rand_tensor({4}, rng), rand_tensor({4}, rng)},
        [](Tape& t, const std::vector<Var>& v) {
          Var h = t.relu(t.linear(v[0], v[1], v[2]));
          Var s = t.softmax_temp(h, 1.3);
          return t.sigmoid(t.dot(s, v[1]));
        });
    CHECK(err < tol);
  }
}

TEST_CASE("ops are deterministic for fixed inputs") {
  std::mt19937_64 rng(9);
  Tensor a = rand_tensor({4, 4}, rng);
  Tensor x = rand_tensor({4}, rng);
  auto run = [&]() {
    Tape t;
    Var o = t.softmax_temp(t.matmul(t.leaf(a), t.leaf(x)), 0.8);
    return t.value(o).v;
  };
  CHECK(run() == run());
}
