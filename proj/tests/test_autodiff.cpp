#include <doctest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "nsrf/finite_diff.hpp"
#include "nsrf/ops.hpp"
#include "nsrf/rng.hpp"
#include "nsrf/tape.hpp"
#include "nsrf/tensor.hpp"

using namespace nsrf;
using namespace nsrf::ad;

namespace {

std::vector<double> random_vec(Rng& rng, int64_t n, double lo, double hi) {
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Fixed mixing weights so d(loss)/d(y) is non-uniform; derived from a seed so
// every rebuild of the graph uses identical values.
Tensor mix_weights(const Shape& shape, uint64_t seed) {
  Rng rng(seed);
  return Tensor(shape, random_vec(rng, shape_numel(shape), -1.0, 1.0));
}

Tensor weighted_scalar(const Tensor& y, uint64_t seed) {
  return sum(mul(y, mix_weights(y.shape(), seed)));
}

using Builder = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

// Analytic gradients of build(...) versus central differences on the same
// objective, rebuilt from scratch at each probe point.
void require_fd_close(const std::vector<Shape>& shapes,
                      const std::vector<std::vector<double>>& init, const Builder& build,
                      double tol = 1e-6) {
  Tape tape;
  std::vector<Tensor> leaves;
  leaves.reserve(shapes.size());
  for (size_t i = 0; i < shapes.size(); ++i) leaves.push_back(tape.leaf(Tensor(shapes[i], init[i])));
  GradMap grads = tape.backprop(build(tape, leaves));
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (const Tensor& leaf : leaves) analytic.push_back(grads.at(leaf).values());

  auto f = [&](const std::vector<std::vector<double>>& p) {
    Tape probe;
    std::vector<Tensor> ls;
    ls.reserve(shapes.size());
    for (size_t i = 0; i < shapes.size(); ++i) ls.push_back(probe.leaf(Tensor(shapes[i], p[i])));
    return build(probe, ls).value();
  };
  FdReport r = finite_diff_check(f, init, analytic);
  INFO("worst: tensor " << r.worst_tensor << " index " << r.worst_index << " analytic "
                        << r.worst_analytic << " numeric " << r.worst_numeric);
  CHECK(r.max_err < tol);
}

}  // namespace

TEST_CASE("closed-form values") {
  const Tensor sp = softplus(Tensor::scalar(0.0));
  CHECK(sp.value() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  const Tensor sg = sigmoid(Tensor::scalar(0.0));
  CHECK(sg.value() == 0.5);

  const Tensor sm = softmax(Tensor({1, 4}, {0.0, 0.0, 0.0, 0.0}));
  for (int64_t i = 0; i < 4; ++i) CHECK(sm.at(i) == 0.25);

  const Tensor cs = cumsum_exclusive_rows(Tensor({1, 3}, {1.0, 2.0, 3.0}));
  CHECK(cs.at(0) == 0.0);
  CHECK(cs.at(1) == 1.0);
  CHECK(cs.at(2) == 3.0);
}

TEST_CASE("constant operands stay off tape") {
  const Tensor y = add(Tensor::scalar(2.0), Tensor::scalar(3.0));
  CHECK(!y.on_tape());
  CHECK(y.value() == 5.0);
}

TEST_CASE("square at x = 3 differentiates to 6") {
  Tape tape;
  const Tensor x = tape.leaf(Tensor::scalar(3.0));
  GradMap grads = tape.backprop(mul(x, x));
  CHECK(std::abs(grads.at(x).value() - 6.0) < 1e-8);
}

TEST_CASE("sigmoid gradient at zero is exactly 1/4") {
  Tape tape;
  const Tensor x = tape.leaf(Tensor::scalar(0.0));
  GradMap grads = tape.backprop(sigmoid(x));
  CHECK(grads.at(x).value() == 0.25);
}

TEST_CASE("constant objective has zero gradients") {
  Tape tape;
  const Tensor x = tape.leaf(Tensor({3}, {1.0, -2.0, 0.5}));
  const Tensor loss = sum(mul(x, Tensor::zeros({3})));
  GradMap grads = tape.backprop(loss);
  const Tensor g = grads.at(x);
  for (int64_t i = 0; i < 3; ++i) CHECK(g.at(i) == 0.0);
}

TEST_CASE("leaf unreachable from the output gets zero gradients") {
  Tape tape;
  const Tensor x = tape.leaf(Tensor::scalar(1.0));
  const Tensor unused = tape.leaf(Tensor({2}, {4.0, 5.0}));
  GradMap grads = tape.backprop(mul(x, x));
  const Tensor g = grads.at(unused);
  CHECK(g.at(0) == 0.0);
  CHECK(g.at(1) == 0.0);
}

TEST_CASE("leaves without grad are absent from the result") {
  Tape tape;
  const Tensor x = tape.leaf(Tensor::scalar(2.0));
  const Tensor c = tape.leaf(Tensor::scalar(3.0), /*requires_grad=*/false);
  GradMap grads = tape.backprop(mul(x, c));
  CHECK(grads.find(x) != nullptr);
  CHECK(grads.find(c) == nullptr);
  CHECK(grads.at(x).value() == 3.0);
}

TEST_CASE("mixing tapes is rejected") {
  Tape a, b;
  const Tensor x = a.leaf(Tensor::scalar(1.0));
  const Tensor y = b.leaf(Tensor::scalar(2.0));
  CHECK_THROWS_AS(add(x, y), std::invalid_argument);
}

TEST_CASE("shape mismatches are rejected with shapes named") {
  const Tensor a = Tensor::zeros({2});
  const Tensor b = Tensor::zeros({3});
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[2]"), std::invalid_argument);
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), std::invalid_argument);
}

TEST_CASE("backprop requires a scalar output on this tape") {
  Tape tape;
  const Tensor v = tape.leaf(Tensor({2}, {1.0, 2.0}));
  CHECK_THROWS_AS(tape.backprop(add(v, v)), std::invalid_argument);
  CHECK_THROWS_AS(tape.backprop(Tensor::scalar(1.0)), std::invalid_argument);
}

TEST_CASE("softmax rows live on the simplex") {
  Rng rng(41);
  const Tensor x = Tensor({7, 5}, random_vec(rng, 35, -30.0, 30.0));
  const Tensor y = softmax(x);
  for (int64_t r = 0; r < 7; ++r) {
    double s = 0.0;
    for (int64_t c = 0; c < 5; ++c) {
      CHECK(y.at(r * 5 + c) >= 0.0);
      CHECK(y.at(r * 5 + c) <= 1.0);
      s += y.at(r * 5 + c);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("mean pooling is bitwise permutation invariant") {
  Rng rng(7);
  std::vector<Tensor> xs;
  for (int k = 0; k < 5; ++k) xs.emplace_back(Shape{2, 3}, random_vec(rng, 6, -2.0, 2.0));
  const Tensor fwd = mean_pool_sorted(xs);
  std::vector<Tensor> perm = {xs[3], xs[0], xs[4], xs[2], xs[1]};
  const Tensor alt = mean_pool_sorted(perm);
  REQUIRE(fwd.numel() == alt.numel());
  CHECK(std::memcmp(fwd.data(), alt.data(), sizeof(double) * fwd.numel()) == 0);
}

TEST_CASE("mean pooling of four identical views is exact") {
  Rng rng(11);
  const Tensor x(Shape{3, 2}, random_vec(rng, 6, -5.0, 5.0));
  const Tensor pooled = mean_pool_sorted({x, x, x, x});
  CHECK(std::memcmp(pooled.data(), x.data(), sizeof(double) * x.numel()) == 0);
}

TEST_CASE("replaying a graph is bitwise deterministic") {
  auto run = [](std::vector<double>* grad_out) {
    Rng rng(99);
    Tape tape;
    const Tensor x = tape.leaf(Tensor({4, 3}, random_vec(rng, 12, -1.0, 1.0)));
    const Tensor w = tape.leaf(Tensor({3, 5}, random_vec(rng, 15, -1.0, 1.0)));
    const Tensor b = tape.leaf(Tensor({5}, random_vec(rng, 5, -1.0, 1.0)));
    const Tensor y = softmax(relu(linear(x, w, b)));
    const Tensor loss = weighted_scalar(y, 123);
    GradMap grads = tape.backprop(loss);
    *grad_out = grads.at(w).values();
    return loss.value();
  };
  std::vector<double> g1, g2;
  const double v1 = run(&g1);
  const double v2 = run(&g2);
  CHECK(std::memcmp(&v1, &v2, sizeof(double)) == 0);
  REQUIRE(g1.size() == g2.size());
  CHECK(std::memcmp(g1.data(), g2.data(), sizeof(double) * g1.size()) == 0);
}

TEST_CASE("seeded backprop is linear in the seed") {
  auto grads_for = [](double seed_value) {
    Tape tape;
    const Tensor x = tape.leaf(Tensor({2}, {1.25, -0.5}));
    const Tensor y = sum(mul(x, x));
    GradMap grads = tape.backprop_seeded({{y, Tensor::scalar(seed_value)}});
    return grads.at(x).values();
  };
  const auto g1 = grads_for(1.0);
  const auto g2 = grads_for(2.0);
  for (size_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == 2.0 * g1[i]);
}

TEST_CASE("chaining two tapes matches a single tape exactly") {
  const double x0 = 1.5;
  // Single tape: y = (x*x)^2.
  Tape single;
  const Tensor xs = single.leaf(Tensor::scalar(x0));
  const Tensor us = mul(xs, xs);
  const double dx_single = single.backprop(mul(us, us)).at(xs).value();

  // Stage two: y = u*u on its own tape, u treated as a leaf.
  Tape inner, outer;
  const Tensor xi = inner.leaf(Tensor::scalar(x0));
  const Tensor ui = mul(xi, xi);
  const Tensor uo = outer.leaf(Tensor(ui.shape(), ui.values()));
  GradMap outer_grads = outer.backprop(mul(uo, uo));
  GradMap inner_grads = inner.backprop_seeded({{ui, outer_grads.at(uo)}});
  CHECK(inner_grads.at(xi).value() == dx_single);
}

TEST_CASE("finite differences: elementwise primitives") {
  Rng rng(2024);
  const Shape s{3, 4};
  const auto a = random_vec(rng, 12, -2.0, 2.0);
  const auto b = random_vec(rng, 12, -2.0, 2.0);

  require_fd_close({s, s}, {a, b}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(add(t[0], t[1]), 1);
  });
  require_fd_close({s, s}, {a, b}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(sub(t[0], t[1]), 2);
  });
  require_fd_close({s, s}, {a, b}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(mul(t[0], t[1]), 3);
  });
  require_fd_close({s}, {a}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(exp(t[0]), 4);
  });
  require_fd_close({s}, {random_vec(rng, 12, 0.5, 3.0)},
                   [](Tape&, const std::vector<Tensor>& t) {
                     return weighted_scalar(log(t[0]), 5);
                   });
  require_fd_close({s}, {a}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(softplus(t[0]), 6);
  });
  require_fd_close({s}, {a}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(sigmoid(t[0]), 7);
  });
  require_fd_close({s}, {a}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(neg(t[0]), 8);
  });
  require_fd_close({s}, {a}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(scale(t[0], -1.7), 9);
  });
  require_fd_close({s}, {a}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(add_scalar(t[0], 0.3), 10);
  });

  // Keep probe points away from the relu and clamp kinks.
  std::vector<double> away(a);
  for (double& x : away) x += (x >= 0.0 ? 0.05 : -0.05);
  require_fd_close({s}, {away}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(relu(t[0]), 11);
  });
  std::vector<double> interior = random_vec(rng, 12, -2.0, 2.0);
  for (double& x : interior) {
    if (std::abs(x + 0.5) < 0.05) x += 0.1;
    if (std::abs(x - 0.8) < 0.05) x += 0.1;
  }
  require_fd_close({s}, {interior}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(clamp(t[0], -0.5, 0.8), 12);
  });
}

TEST_CASE("finite differences: linear algebra and structure") {
  Rng rng(77);
  const auto x = random_vec(rng, 12, -1.0, 1.0);   // [4 x 3]
  const auto w = random_vec(rng, 15, -1.0, 1.0);   // [3 x 5]
  const auto b = random_vec(rng, 5, -1.0, 1.0);    // [5]
  const auto y = random_vec(rng, 20, -1.0, 1.0);   // [4 x 5]

  require_fd_close({{4, 3}, {3, 5}}, {x, w}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(matmul(t[0], t[1]), 21);
  });
  require_fd_close({{4, 3}, {3, 5}, {5}}, {x, w, b}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(linear(t[0], t[1], t[2]), 22);
  });
  require_fd_close({{4, 5}, {5}}, {y, b}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(add_rowvec(t[0], t[1]), 23);
  });
  require_fd_close({{4, 3}, {4, 5}}, {x, y}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(concat(t[0], t[1], 1), 24);
  });
  require_fd_close({{4, 3}, {2, 3}}, {x, random_vec(rng, 6, -1.0, 1.0)},
                   [](Tape&, const std::vector<Tensor>& t) {
                     return weighted_scalar(concat(t[0], t[1], 0), 25);
                   });
  require_fd_close({{4, 5}}, {y}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(slice_cols(t[0], 1, 4), 26);
  });
  require_fd_close({{4, 5}}, {y}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(reshape(t[0], {2, 10}), 27);
  });
}

TEST_CASE("finite differences: reductions and row ops") {
  Rng rng(1234);
  const auto x = random_vec(rng, 20, -1.5, 1.5);  // [4 x 5]

  require_fd_close({{4, 5}}, {x}, [](Tape&, const std::vector<Tensor>& t) {
    return sum(t[0]);
  });
  require_fd_close({{4, 5}}, {x}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(sum_axis(t[0], 0), 31);
  });
  require_fd_close({{4, 5}}, {x}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(sum_axis(t[0], 1), 32);
  });
  require_fd_close({{4, 5}}, {x}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(mean_axis(t[0], 0), 33);
  });
  require_fd_close({{4, 5}}, {x}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(mean_axis(t[0], 1), 34);
  });
  require_fd_close({{4, 5}}, {x}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(softmax(t[0]), 35);
  });
  require_fd_close({{4, 5}}, {x}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(row_gather(t[0], {0, 4, 2, 1}), 36);
  });
  require_fd_close({{4, 5}}, {x}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(cumsum_exclusive_rows(t[0]), 37);
  });

  const auto wts = random_vec(rng, 12, -1.0, 1.0);  // [3 x 4]
  const auto vals = random_vec(rng, 24, -1.0, 1.0); // [12 x 2]
  require_fd_close({{3, 4}, {12, 2}}, {wts, vals}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(weighted_sum_rows(t[0], t[1]), 38);
  });

  const auto p0 = random_vec(rng, 6, -1.0, 1.0);
  const auto p1 = random_vec(rng, 6, -1.0, 1.0);
  const auto p2 = random_vec(rng, 6, -1.0, 1.0);
  require_fd_close({{2, 3}, {2, 3}, {2, 3}}, {p0, p1, p2},
                   [](Tape&, const std::vector<Tensor>& t) {
                     return weighted_scalar(mean_pool_sorted({t[0], t[1], t[2]}), 39);
                   });
}

TEST_CASE("finite differences: gather, conv, upsample") {
  Rng rng(555);
  const auto map = random_vec(rng, 36, -1.0, 1.0);  // [12 x 3]
  GatherPlan plan;
  plan.rows = 5;
  plan.index = {0, 1, 4, 5, /**/ 2, 3, 6, 7, /**/ -1, -1, -1, -1, /**/ 8, -1, 11, -1, /**/ 9, 10, 2, 0};
  plan.weight = {0.25, 0.25, 0.25, 0.25, /**/ 0.1, 0.2, 0.3, 0.4, /**/ 0.0, 0.0, 0.0, 0.0,
                 /**/ 0.7, 0.0, 0.3, 0.0, /**/ 0.4, 0.3, 0.2, 0.1};
  require_fd_close({{12, 3}}, {map}, [plan](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(bilinear_gather(t[0], plan), 41);
  });

  const auto img = random_vec(rng, 5 * 6 * 2, -1.0, 1.0);
  const auto ker = random_vec(rng, 3 * 18, -0.5, 0.5);
  const auto bias = random_vec(rng, 3, -0.5, 0.5);
  require_fd_close({{5, 6, 2}, {3, 18}, {3}}, {img, ker, bias},
                   [](Tape&, const std::vector<Tensor>& t) {
                     return weighted_scalar(conv3x3(t[0], t[1], t[2], 1), 42);
                   });
  require_fd_close({{5, 6, 2}, {3, 18}, {3}}, {img, ker, bias},
                   [](Tape&, const std::vector<Tensor>& t) {
                     return weighted_scalar(conv3x3(t[0], t[1], t[2], 2), 43);
                   });

  const auto small = random_vec(rng, 3 * 4 * 2, -1.0, 1.0);
  require_fd_close({{3, 4, 2}}, {small}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(upsample2x_nn(t[0], 6, 8), 44);
  });
  require_fd_close({{3, 4, 2}}, {small}, [](Tape&, const std::vector<Tensor>& t) {
    return weighted_scalar(upsample2x_nn(t[0], 5, 7), 45);
  });
}

TEST_CASE("rows with no valid gather entries come out zero") {
  GatherPlan plan;
  plan.rows = 1;
  plan.index = {-1, -1, -1, -1};
  plan.weight = {0.0, 0.0, 0.0, 0.0};
  const Tensor out = bilinear_gather(Tensor::full({4, 3}, 2.0), plan);
  for (int64_t i = 0; i < 3; ++i) CHECK(out.at(i) == 0.0);
}

TEST_CASE("bilinear gather output mixes the planned rows") {
  GatherPlan plan;
  plan.rows = 1;
  plan.index = {0, 1, -1, -1};
  plan.weight = {0.25, 0.75, 0.0, 0.0};
  const Tensor map({2, 2}, {1.0, 2.0, 3.0, 4.0});
  const Tensor out = bilinear_gather(map, plan);
  CHECK(out.at(0) == doctest::Approx(0.25 * 1.0 + 0.75 * 3.0));
  CHECK(out.at(1) == doctest::Approx(0.25 * 2.0 + 0.75 * 4.0));
}

TEST_CASE("conv output shape follows the stride") {
  const Tensor img = Tensor::zeros({7, 9, 2});
  const Tensor ker = Tensor::zeros({4, 18});
  const Tensor bias = Tensor::zeros({4});
  const Tensor y1 = conv3x3(img, ker, bias, 1);
  CHECK(y1.shape() == Shape{7, 9, 4});
  const Tensor y2 = conv3x3(img, ker, bias, 2);
  CHECK(y2.shape() == Shape{4, 5, 4});
}

TEST_CASE("upsample doubles and crops") {
  const Tensor img({2, 2, 1}, {1.0, 2.0, 3.0, 4.0});
  const Tensor up = upsample2x_nn(img, 4, 4);
  CHECK(up.shape() == Shape{4, 4, 1});
  CHECK(up.at(0) == 1.0);
  CHECK(up.at(1) == 1.0);
  CHECK(up.at(2) == 2.0);
  CHECK(up.at(5) == 1.0);
  CHECK(up.at(15) == 4.0);
  const Tensor crop = upsample2x_nn(img, 3, 3);
  CHECK(crop.shape() == Shape{3, 3, 1});
  CHECK(crop.at(8) == 4.0);
}
