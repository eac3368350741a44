#include "doctest.h"

#include "support/gradcheck.hpp"
#include "tptkit/autodiff.hpp"
#include "tptkit/error.hpp"

using namespace tptkit;
using namespace tptkit::ad;
using tptkit::testing::gradcheck;
using tptkit::testing::random_tensor;

namespace {

constexpr double kTol = 1e-4;

// Weighted sum against a fixed random tensor so every output element
// contributes a distinct gradient.
Var probe(Tape& tape, Var y, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w = random_tensor(rng, {static_cast<int>(y.value().size()), 1});
  Var flat = reshape(y, {1, static_cast<int>(y.value().size())});
  return matmul(flat, tape.constant(std::move(w)));
}

} // namespace

TEST_CASE("leaky_relu derivative is piecewise constant") {
  Tape tape;
  Var x = tape.parameter(Tensor({1, 2}, {1.5, -2.0}));
  Var y = leaky_relu(x, 0.2);
  Var s = matmul(y, tape.constant(Tensor({2, 1}, {1.0, 1.0})));
  tape.backward(s);
  CHECK(tape.grad(x).data[0] == 1.0);
  CHECK(tape.grad(x).data[1] == doctest::Approx(0.2));
  CHECK(y.value().data[1] == doctest::Approx(-0.4));
}

TEST_CASE("1x1 identity kernel leaves the input unchanged") {
  Rng rng(3);
  Tape tape;
  Tensor x = random_tensor(rng, {2, 3, 5, 4});
  Tensor w({3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) {
    w.data[static_cast<std::size_t>(c * 3 + c)] = 1.0;
  }
  Var y = conv2d(tape.constant(x), tape.constant(w), tape.constant(Tensor({3})), 1, 0);
  CHECK(y.value().shape == x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(y.value().data[i] == x.data[i]);
  }
}

TEST_CASE("shape mismatch names the operands") {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({4, 1}));
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3] vs [4,1]"), ShapeError);
}

TEST_CASE("matmul and bias gradients") {
  Rng rng(1);
  auto r = gradcheck(
      [](Tape& t, const std::vector<Var>& v) {
        return probe(t, add_bias(matmul(v[0], v[1]), v[2]), 11);
      },
      {random_tensor(rng, {4, 3}), random_tensor(rng, {3, 5}), random_tensor(rng, {5})});
  INFO(r.worst);
  CHECK(r.max_rel <= kTol);
}

TEST_CASE("conv2d gradients with stride and padding") {
  Rng rng(2);
  for (int stride : {1, 2}) {
    auto r = gradcheck(
        [stride](Tape& t, const std::vector<Var>& v) {
          return probe(t, conv2d(v[0], v[1], v[2], stride, 1), 12);
        },
        {random_tensor(rng, {2, 2, 6, 6}), random_tensor(rng, {3, 2, 3, 3}),
         random_tensor(rng, {3})});
    INFO(stride << " " << r.worst);
    CHECK(r.max_rel <= kTol);
  }
}

TEST_CASE("batch_norm gradients in training and eval mode") {
  Rng rng(4);
  for (bool training : {true, false}) {
    BatchNormStats stats{{0.1, -0.2, 0.3}, {1.5, 0.7, 1.1}, 0.1};
    auto r = gradcheck(
        [&](Tape& t, const std::vector<Var>& v) {
          BatchNormStats s = stats;
          return probe(t, batch_norm(v[0], v[1], v[2], s, training), 13);
        },
        {random_tensor(rng, {3, 3, 2, 2}), random_tensor(rng, {3}),
         random_tensor(rng, {3})});
    INFO(training << " " << r.worst);
    CHECK(r.max_rel <= kTol);
  }
}

TEST_CASE("batch_norm on [M,C] normalizes columns") {
  Rng rng(5);
  Tape tape;
  BatchNormStats stats;
  Var y = batch_norm(tape.constant(random_tensor(rng, {50, 2})),
                     tape.constant(Tensor({2}, 1.0)), tape.constant(Tensor({2})),
                     stats, true);
  for (int c = 0; c < 2; ++c) {
    double s = 0.0, ss = 0.0;
    for (int m = 0; m < 50; ++m) {
      const double v = y.value().data[static_cast<std::size_t>(m * 2 + c)];
      s += v;
      ss += v * v;
    }
    CHECK(s / 50 == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(ss / 50 == doctest::Approx(1.0).epsilon(1e-4));
  }
  CHECK(stats.mean.size() == 2);
}

TEST_CASE("pixel_norm gradients and unit channel RMS") {
  Rng rng(6);
  auto r = gradcheck(
      [](Tape& t, const std::vector<Var>& v) { return probe(t, pixel_norm(v[0]), 14); },
      {random_tensor(rng, {2, 4, 3, 3})});
  INFO(r.worst);
  CHECK(r.max_rel <= kTol);

  Tape tape;
  Var y = pixel_norm(tape.constant(random_tensor(rng, {1, 5, 1, 1}, 3.0)));
  double ss = 0.0;
  for (double v : y.value().data) {
    ss += v * v;
  }
  CHECK(ss / 5 == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("graph attention gradients and softmax normalization") {
  Rng rng(7);
  Csr g;
  g.nodes = 4;
  g.offsets = {0, 2, 5, 7, 8};
  g.neighbors = {0, 1, 0, 1, 2, 1, 2, 3};
  auto r = gradcheck(
      [&](Tape& t, const std::vector<Var>& v) {
        return probe(t, graph_attention(v[0], v[1], v[2], g, 0.2), 15);
      },
      {random_tensor(rng, {4, 6}), random_tensor(rng, {2, 3}), random_tensor(rng, {2, 3})});
  INFO(r.worst);
  CHECK(r.max_rel <= kTol);

  // Constant features per head: any convex combination returns them.
  Tape tape;
  Tensor wh({4, 6});
  for (int i = 0; i < 4; ++i) {
    for (int k = 0; k < 6; ++k) {
      wh.data[static_cast<std::size_t>(i * 6 + k)] = k;
    }
  }
  Var y = graph_attention(tape.constant(wh), tape.constant(random_tensor(rng, {2, 3})),
                          tape.constant(random_tensor(rng, {2, 3})), g, 0.2);
  for (std::size_t i = 0; i < wh.size(); ++i) {
    CHECK(y.value().data[i] == doctest::Approx(wh.data[i]));
  }
}

TEST_CASE("upsample, reshape, column, scale and mse gradients") {
  Rng rng(8);
  Tensor target = random_tensor(rng, {1, 2, 4, 4});
  auto r = gradcheck(
      [&](Tape&, const std::vector<Var>& v) {
        Var u = upsample_nearest2x(v[0]);
        Var s = scale(mul_scalar_param(u, v[1]), 0.7);
        return mse_loss(s, target);
      },
      {random_tensor(rng, {1, 2, 2, 2}), random_tensor(rng, {1})});
  INFO(r.worst);
  CHECK(r.max_rel <= kTol);

  auto r2 = gradcheck(
      [&](Tape& t, const std::vector<Var>& v) {
        return probe(t, column(v[0], 2), 16);
      },
      {random_tensor(rng, {5, 3})});
  CHECK(r2.max_rel <= kTol);
}

TEST_CASE("masked mse matches brute force and has correct gradients") {
  Rng rng(9);
  std::vector<std::uint8_t> mask{1, 0, 1, 1, 0, 0, 1, 1, 1};
  Tensor target = random_tensor(rng, {2, 1, 3, 3});
  Tensor pred = random_tensor(rng, {2, 1, 3, 3});
  Tape tape;
  Var l = masked_mse_loss(tape.constant(pred), target, mask);
  double s = 0.0;
  int n = 0;
  for (int b = 0; b < 2; ++b) {
    for (int p = 0; p < 9; ++p) {
      if (mask[static_cast<std::size_t>(p)]) {
        const double d = pred.data[static_cast<std::size_t>(b * 9 + p)] -
                         target.data[static_cast<std::size_t>(b * 9 + p)];
        s += d * d;
        ++n;
      }
    }
  }
  CHECK(l.value().data[0] == doctest::Approx(s / n).epsilon(1e-14));

  auto r = gradcheck(
      [&](Tape&, const std::vector<Var>& v) { return masked_mse_loss(v[0], target, mask); },
      {pred});
  CHECK(r.max_rel <= kTol);
}

TEST_CASE("random five-layer composite passes the finite-difference check") {
  Rng rng(10);
  Tensor target = random_tensor(rng, {2, 2, 4, 4});
  BatchNormStats stats;
  auto r = gradcheck(
      [&](Tape&, const std::vector<Var>& v) {
        Var x = leaky_relu(conv2d(v[0], v[1], v[2], 2, 1), 0.2);        // 2x2x4x4 -> 2x3x2x2
        x = upsample_nearest2x(x);                                      // 2x3x4x4
        x = batch_norm(x, v[3], v[4], stats, true);
        x = pixel_norm(leaky_relu(x, 0.2));
        x = conv2d(x, v[5], v[6], 1, 1);                                // 2x2x4x4
        return mse_loss(x, target);
      },
      {random_tensor(rng, {2, 2, 4, 4}), random_tensor(rng, {3, 2, 3, 3}),
       random_tensor(rng, {3}), random_tensor(rng, {3}), random_tensor(rng, {3}),
       random_tensor(rng, {2, 3, 3, 3}), random_tensor(rng, {2})});
  INFO(r.worst);
  CHECK(r.max_rel <= kTol);
}

TEST_CASE("Adam with zero learning rate leaves parameters unchanged") {
  ParamSet p;
  p.add("w", Tensor({2}, {1.0, -1.0}));
  Adam adam(p, {0.0, 0.9, 0.999, 1e-8});
  Tensor g({2}, {0.3, -0.5});
  adam.step(p, {&g});
  CHECK(p[0].data[0] == 1.0);
  CHECK(p[0].data[1] == -1.0);
}

TEST_CASE("Adam first step moves each parameter by lr against the gradient sign") {
  ParamSet p;
  p.add("w", Tensor({2}, {1.0, -1.0}));
  Adam adam(p, {0.01, 0.9, 0.999, 1e-8});
  Tensor g({2}, {0.3, -0.5});
  adam.step(p, {&g});
  CHECK(p[0].data[0] == doctest::Approx(0.99).epsilon(1e-9));
  CHECK(p[0].data[1] == doctest::Approx(-0.99).epsilon(1e-9));
}
