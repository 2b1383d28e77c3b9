// Copyright (c) 2026 JFE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "jfe/error.h"
#include "jfe/rng.h"
#include "jfe/tensor.h"

using namespace jfe;

namespace {

Tensor RandomTensor(Rng& rng, std::vector<size_t> shape, double lo = -2.0,
                    double hi = 2.0, bool requires_grad = false) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.UniformDouble(lo, hi);
  return Tensor::FromValues(std::move(shape), std::move(v), requires_grad);
}

// Random values kept away from the kinks/floors of relu, abs and log so
// that central differences stay valid.
Tensor RandomAwayFromZero(Rng& rng, std::vector<size_t> shape,
                          double min_abs = 1e-3) {
  Tensor t = RandomTensor(rng, shape);
  std::vector<double> v = t.values();
  for (auto& x : v) {
    if (std::fabs(x) < min_abs) x = x < 0 ? x - min_abs : x + min_abs;
  }
  return Tensor::FromValues(t.shape(), std::move(v));
}

bool MessageContains(const Error& e, const std::string& needle) {
  return std::string(e.what()).find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("forward values of analytic cases") {
  // matmul(I3, A) = A
  Tensor eye = Tensor::FromValues({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Rng rng(7);
  Tensor a = RandomTensor(rng, {3, 3});
  Tensor out = MatMul(eye, a);
  for (size_t i = 0; i < 9; ++i) CHECK(out.at(i) == doctest::Approx(a.at(i)));

  // softmax of zeros is uniform
  Tensor sm = Softmax(Tensor::FromValues({3}, {0, 0, 0}));
  for (size_t i = 0; i < 3; ++i)
    CHECK(sm.at(i) == doctest::Approx(1.0 / 3).epsilon(1e-14));

  CHECK(Tanh(Tensor::ScalarOf(0.0)).value() == 0.0);
  CHECK(Sigmoid(Tensor::ScalarOf(0.0)).value() == 0.5);
}

TEST_CASE("softmax rows are probability vectors") {
  Rng rng(11);
  for (int it = 0; it < 20; ++it) {
    Tensor x = RandomTensor(rng, {4, 5}, -30.0, 30.0);
    Tensor p = Softmax(x);
    for (size_t i = 0; i < 4; ++i) {
      double sum = 0.0;
      for (size_t j = 0; j < 5; ++j) {
        CHECK(p.at(i, j) >= 0.0);
        sum += p.at(i, j);
      }
      CHECK(std::fabs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("backward of sum(x*x) is 2x") {
  Tensor x = Tensor::FromValues({3}, {1, 2, 3}, true);
  Tape tape;
  Tensor y;
  {
    TapeScope scope(&tape);
    y = Sum(Mul(x, x));
  }
  tape.Backward(y);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
  CHECK(x.grad()[2] == doctest::Approx(6.0));
}

TEST_CASE("backward of log-softmax picked class is onehot minus softmax") {
  Rng rng(3);
  Tensor z = RandomTensor(rng, {5}, -2.0, 2.0, true);
  const size_t k = 2;
  Tape tape;
  Tensor y;
  {
    TapeScope scope(&tape);
    y = Slice(Log(Softmax(z)), k, k + 1);
  }
  tape.Backward(y);
  Tensor p = Softmax(Tensor::FromValues({5}, z.values()));
  for (size_t i = 0; i < 5; ++i) {
    const double expect = (i == k ? 1.0 : 0.0) - p.at(i);
    CHECK(z.grad()[i] == doctest::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("random composite graph matches finite differences") {
  Rng rng(17);
  for (int it = 0; it < 10; ++it) {
    Tensor w = RandomTensor(rng, {4, 6});
    auto f = [&](const Tensor& x) {
      Tensor h = Tanh(MatMul(w, x));
      Tensor s = Sigmoid(h);
      Tensor m = Mul(s, h);
      return Sum(Add(m, Scale(h, 0.5)));
    };
    Tensor x = RandomTensor(rng, {6});
    auto report = GradCheck(f, x, 1e-5);
    CHECK(report.max_rel_error <= 1e-4);
  }
}

TEST_CASE("gradient accumulation equals duplicated-leaf graph") {
  Rng rng(23);
  Tensor x = RandomTensor(rng, {6}, -2.0, 2.0, true);
  // same leaf used on two paths
  Tape tape;
  Tensor y;
  {
    TapeScope scope(&tape);
    y = Add(Sum(Mul(x, x)), Sum(Tanh(x)));
  }
  tape.Backward(y);
  std::vector<double> combined = x.grad();

  // equivalent graph with two distinct copies of the leaf
  Tensor x1 = Tensor::FromValues({6}, x.values(), true);
  Tensor x2 = Tensor::FromValues({6}, x.values(), true);
  Tape tape2;
  Tensor y2;
  {
    TapeScope scope(&tape2);
    y2 = Add(Sum(Mul(x1, x1)), Sum(Tanh(x2)));
  }
  tape2.Backward(y2);
  for (size_t i = 0; i < 6; ++i) {
    CHECK(combined[i] ==
          doctest::Approx(x1.grad()[i] + x2.grad()[i]).epsilon(1e-12));
  }
}

TEST_CASE("forward is deterministic") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    Tensor a = RandomTensor(rng, {5, 5});
    Tensor b = RandomTensor(rng, {5});
    return Softmax(Tanh(MatMul(a, b))).values();
  };
  CHECK(run(99) == run(99));
}

// One gradient-check case per primitive and operand role, repeated over
// random shapes and values; this is the finite-difference oracle the rest
// of the project leans on.
TEST_CASE("every primitive passes finite-difference checks") {
  Rng rng(41);
  const int kCases = 100;

  auto check = [&](const char* name,
                   const std::function<void(Rng&)>& one_case) {
    CAPTURE(name);
    for (int i = 0; i < kCases; ++i) one_case(rng);
  };

  auto expect_ok = [](const GradCheckReport& r) {
    CHECK(r.max_rel_error <= 1e-4);
  };

  check("matmul", [&](Rng& r) {
    const size_t m = 1 + r.UniformIndex(4), n = 1 + r.UniformIndex(4),
                 k = 1 + r.UniformIndex(4);
    switch (r.UniformIndex(4)) {
      case 0: {  // variable left matrix
        Tensor b = RandomTensor(r, {n, k});
        expect_ok(GradCheck(
            [&](const Tensor& x) { return Sum(MatMul(x, b)); },
            RandomTensor(r, {m, n})));
        break;
      }
      case 1: {  // variable right matrix
        Tensor a = RandomTensor(r, {m, n});
        expect_ok(GradCheck(
            [&](const Tensor& x) { return Sum(MatMul(a, x)); },
            RandomTensor(r, {n, k})));
        break;
      }
      case 2: {  // matrix @ vector
        Tensor a = RandomTensor(r, {m, n});
        expect_ok(GradCheck(
            [&](const Tensor& x) { return Sum(MatMul(a, x)); },
            RandomTensor(r, {n})));
        break;
      }
      default: {  // vector @ matrix and dot product
        Tensor b = RandomTensor(r, {m, n});
        expect_ok(GradCheck(
            [&](const Tensor& x) { return Sum(MatMul(x, b)); },
            RandomTensor(r, {m})));
        Tensor v = RandomTensor(r, {n});
        expect_ok(GradCheck(
            [&](const Tensor& x) { return MatMul(x, v); },
            RandomTensor(r, {n})));
      }
    }
  });

  check("add_sub", [&](Rng& r) {
    const size_t rows = 1 + r.UniformIndex(4), cols = 1 + r.UniformIndex(4);
    Tensor m = RandomTensor(r, {rows, cols});
    Tensor v = RandomTensor(r, {cols});
    expect_ok(GradCheck(
        [&](const Tensor& x) { return Sum(Add(x, v)); },
        RandomTensor(r, {rows, cols})));
    expect_ok(GradCheck(
        [&](const Tensor& x) { return Sum(Add(m, x)); },
        RandomTensor(r, {cols})));
    expect_ok(GradCheck(
        [&](const Tensor& x) { return Sum(Sub(m, x)); },
        RandomTensor(r, {cols})));
    Tensor s = RandomTensor(r, {1});
    expect_ok(GradCheck(
        [&](const Tensor& x) { return Sum(Sub(x, s)); },
        RandomTensor(r, {rows, cols})));
    expect_ok(GradCheck(
        [&](const Tensor& x) { return Sum(Sub(Sum(m), x)); },
        RandomTensor(r, {1})));
  });

  check("mul_div", [&](Rng& r) {
    const size_t n = 1 + r.UniformIndex(6);
    Tensor b = RandomAwayFromZero(r, {n}, 0.3);
    expect_ok(GradCheck(
        [&](const Tensor& x) { return Sum(Mul(x, b)); },
        RandomTensor(r, {n})));
    expect_ok(GradCheck(
        [&](const Tensor& x) { return Sum(Div(x, b)); },
        RandomTensor(r, {n})));
    Tensor a = RandomTensor(r, {n});
    expect_ok(GradCheck(
        [&](const Tensor& x) { return Sum(Div(a, x)); },
        RandomAwayFromZero(r, {n}, 0.3)));
    expect_ok(GradCheck(
        [&](const Tensor& x) { return Sum(Mul(x, Sum(b))); },
        RandomTensor(r, {n})));
  });

  check("unary", [&](Rng& r) {
    const size_t n = 1 + r.UniformIndex(8);
    for (const char* op : {"exp", "tanh", "sigmoid"}) {
      expect_ok(GradCheck(
          [&](const Tensor& x) {
            return Sum(ApplyPrimitive(op, {x}));
          },
          RandomTensor(r, {n})));
    }
    for (const char* op : {"relu", "leaky_relu", "abs"}) {
      expect_ok(GradCheck(
          [&](const Tensor& x) {
            return Sum(ApplyPrimitive(op, {x}));
          },
          RandomAwayFromZero(r, {n})));
    }
    for (const char* op : {"log", "sqrt"}) {
      expect_ok(GradCheck(
          [&](const Tensor& x) {
            return Sum(ApplyPrimitive(op, {x}));
          },
          RandomTensor(r, {n}, 0.05, 2.0)));
    }
  });

  check("softmax_reductions", [&](Rng& r) {
    const size_t rows = 1 + r.UniformIndex(3), cols = 2 + r.UniformIndex(4);
    Tensor w = RandomTensor(r, {rows, cols});
    expect_ok(GradCheck(
        [&](const Tensor& x) { return Sum(Mul(Softmax(x), w)); },
        RandomTensor(r, {rows, cols})));
    expect_ok(GradCheck(
        [&](const Tensor& x) { return Mean(x); },
        RandomTensor(r, {rows, cols})));
    Tensor v = RandomTensor(r, {cols});
    expect_ok(GradCheck(
        [&](const Tensor& x) { return MatMul(ColumnSum(x), v); },
        RandomTensor(r, {rows, cols})));
  });

  check("structural", [&](Rng& r) {
    const size_t n = 2 + r.UniformIndex(5);
    Tensor other = RandomTensor(r, {n});
    expect_ok(GradCheck(
        [&](const Tensor& x) {
          Tensor c = Concat({x, other});
          return Sum(Mul(c, c));
        },
        RandomTensor(r, {n})));
    expect_ok(GradCheck(
        [&](const Tensor& x) {
          Tensor s = StackRows({x, other, x});
          return Sum(Mul(s, s));
        },
        RandomTensor(r, {n})));
    const size_t b = r.UniformIndex(n - 1);
    const size_t e = b + 1 + r.UniformIndex(n - b - 1);
    expect_ok(GradCheck(
        [&](const Tensor& x) {
          Tensor s = Slice(x, b, e);
          return Sum(Mul(s, s));
        },
        RandomTensor(r, {n})));
    std::vector<size_t> idx;
    const size_t rows = 2 + r.UniformIndex(3);
    for (int i = 0; i < 4; ++i) idx.push_back(r.UniformIndex(rows));
    expect_ok(GradCheck(
        [&](const Tensor& x) {
          Tensor g = GatherRows(x, idx);
          return Sum(Mul(g, g));
        },
        RandomTensor(r, {rows, n})));
    expect_ok(GradCheck(
        [&](const Tensor& x) {
          Tensor tr = Transpose(x);
          return Sum(Mul(tr, tr));
        },
        RandomTensor(r, {rows, n})));
    expect_ok(GradCheck(
        [&](const Tensor& x) { return Sum(Scale(x, -1.7)); },
        RandomTensor(r, {n})));
  });
}

TEST_CASE("grad_check of sum is exact up to floating-point noise") {
  Rng rng(5);
  Tensor x = RandomTensor(rng, {7});
  auto report = GradCheck([](const Tensor& t) { return Sum(t); }, x);
  CHECK(report.max_rel_error <= 1e-9);
}

TEST_CASE("grad_check passes on a small two-layer network loss") {
  Rng rng(29);
  Tensor w1 = RandomTensor(rng, {5, 4}, -0.7, 0.7);
  Tensor b1 = RandomTensor(rng, {5}, -0.2, 0.2);
  Tensor w2 = RandomTensor(rng, {3, 5}, -0.7, 0.7);
  Tensor onehot = Tensor::FromValues({3}, {0, 1, 0});
  auto f = [&](const Tensor& x) {
    Tensor h = Tanh(Add(MatMul(w1, x), b1));
    Tensor p = Softmax(MatMul(w2, h));
    return Scale(Sum(Mul(onehot, Log(p))), -1.0);
  };
  auto report = GradCheck(f, RandomTensor(rng, {4}));
  CHECK(report.max_rel_error <= 1e-4);
}

TEST_CASE("grad_check detects a corrupted backward rule") {
  // A custom op with a deliberately wrong derivative (1.5x the true one)
  // must be flagged: this is the negative control for the checker itself.
  auto bad_tanh = [](const Tensor& x) {
    std::vector<double> out(x.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.at(i));
    Tensor y = Tensor::FromValues(x.shape(), std::move(out),
                                  ActiveTape() && x.requires_grad());
    if (Tape* tape = ActiveTape(); tape && y.requires_grad()) {
      tape->RecordOp("bad_tanh", y, [x, y](Tape& t) {
        const auto* gy = t.FindGradBuffer(y.impl());
        if (!gy || !x.requires_grad()) return;
        auto& gx = t.GradBuffer(x.impl());
        for (size_t i = 0; i < gx.size(); ++i) {
          gx[i] += 1.5 * (*gy)[i] * (1.0 - y.at(i) * y.at(i));
        }
      });
    }
    return y;
  };
  Rng rng(31);
  Tensor x = RandomTensor(rng, {6}, -1.0, 1.0);
  auto report =
      GradCheck([&](const Tensor& t) { return Sum(bad_tanh(t)); }, x);
  CHECK(report.max_rel_error >= 1e-2);
}

TEST_CASE("contract violations name the primitive and shapes") {
  Tensor a = Tensor::Zeros({2, 3});
  Tensor b = Tensor::Zeros({4, 2});
  try {
    MatMul(a, b);
    FAIL("expected ContractViolation");
  } catch (const ContractViolation& e) {
    CHECK(MessageContains(e, "matmul"));
    CHECK(MessageContains(e, "(2x3)"));
    CHECK(MessageContains(e, "(4x2)"));
  }
  CHECK_THROWS_AS(Add(Tensor::Zeros({2}), Tensor::Zeros({3})),
                  ContractViolation);
  CHECK_THROWS_AS(Slice(Tensor::Zeros({3}), 2, 5), ContractViolation);
  CHECK_THROWS_AS(ApplyPrimitive("nonesuch", {a}), ContractViolation);
}

TEST_CASE("domain violations raise numeric-domain errors") {
  CHECK_THROWS_AS(Log(Tensor::FromValues({2}, {1.0, -0.5})),
                  NumericDomainError);
  CHECK_THROWS_AS(Sqrt(Tensor::FromValues({1}, {-1.0})), NumericDomainError);
  CHECK_THROWS_AS(Div(Tensor::FromValues({2}, {1.0, 1.0}),
                      Tensor::FromValues({2}, {1.0, 0.0})),
                  NumericDomainError);
  // log floors at 1e-12 instead of rejecting zero: entropy terms evaluate
  // p*log(p) at p = 0.
  CHECK(Log(Tensor::ScalarOf(0.0)).value() ==
        doctest::Approx(std::log(1e-12)));
}

TEST_CASE("backward contract checks") {
  Tensor x = Tensor::FromValues({3}, {1, 2, 3}, true);
  Tape tape;
  Tensor y;
  {
    TapeScope scope(&tape);
    y = Mul(x, x);  // not scalar
  }
  CHECK_THROWS_AS(tape.Backward(y), ContractViolation);

  Tape other;
  Tensor z;
  {
    TapeScope scope(&other);
    z = Sum(x);
  }
  CHECK_THROWS_AS(tape.Backward(z), ContractViolation);  // not on this tape
  CHECK_THROWS_AS(tape.Backward(x), ContractViolation);  // leaf, not output
}

TEST_CASE("no recording happens without an active tape") {
  Tensor x = Tensor::FromValues({3}, {1, 2, 3}, true);
  Tensor y = Sum(Mul(x, x));
  CHECK_FALSE(y.requires_grad());
  CHECK(y.value() == doctest::Approx(14.0));
}

TEST_CASE("apply_primitive dispatches to the same implementations") {
  Rng rng(53);
  Tensor a = RandomTensor(rng, {3, 3});
  Tensor b = RandomTensor(rng, {3, 3});
  CHECK(ApplyPrimitive("matmul", {a, b}).values() == MatMul(a, b).values());
  CHECK(ApplyPrimitive("softmax", {a}).values() == Softmax(a).values());
  CHECK_THROWS_AS(ApplyPrimitive("matmul", {a}), ContractViolation);
  CHECK(PrimitiveNames().size() >= 20);
}
