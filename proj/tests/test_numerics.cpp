#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "support.hpp"
#include "xrhead/errors.hpp"
#include "xrhead/gradcheck.hpp"
#include "xrhead/layers.hpp"
#include "xrhead/ops.hpp"
#include "xrhead/optim.hpp"

using namespace xrhead;
using testing::max_abs_diff;
using testing::random_tensor;

TEST_SUITE("numerics") {

TEST_CASE("matmul of a row by a column") {
  Tensor a({1, 2}, {1, 2});
  Tensor b({2, 1}, {3, 4});
  Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{1, 1});
  CHECK(c.item() == 11.0);
  CHECK_THROWS_AS(matmul(a, a), DimensionError);
}

TEST_CASE("matmul agrees with a triple loop") {
  std::mt19937_64 rng(3);
  Tensor a = random_tensor({5, 7}, rng), b = random_tensor({7, 4}, rng);
  Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 7; ++k) s += a.at({i, k}) * b.at({k, j});
      CHECK(c.at({i, j}) == doctest::Approx(s).epsilon(1e-12));
    }
  }
}

TEST_CASE("bmm with and without transpose matches per-batch matmul") {
  std::mt19937_64 rng(4);
  Tensor a = random_tensor({3, 2, 5}, rng), b = random_tensor({3, 5, 4}, rng), bt = random_tensor({3, 4, 5}, rng);
  Tensor c = bmm(a, b), ct = bmm(a, bt, true);
  for (std::size_t n = 0; n < 3; ++n) {
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        double s = 0.0, st = 0.0;
        for (std::size_t k = 0; k < 5; ++k) {
          s += a.at({n, i, k}) * b.at({n, k, j});
          st += a.at({n, i, k}) * bt.at({n, j, k});
        }
        CHECK(c.at({n, i, j}) == doctest::Approx(s).epsilon(1e-12));
        CHECK(ct.at({n, i, j}) == doctest::Approx(st).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("softmax examples") {
  Tensor p = softmax_rows(Tensor({1, 2}, {std::log(3.0), 0.0}));
  CHECK(p.values()[0] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(p.values()[1] == doctest::Approx(0.25).epsilon(1e-12));
  Tensor big = softmax_rows(Tensor({1, 2}, {1000.0, 1000.0}));
  CHECK(big.values()[0] == 0.5);
  CHECK(big.values()[1] == 0.5);
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({4, 9}, rng, 10.0);
    Tensor p = softmax_rows(x);
    std::vector<double> shifted = testing::to_vec(x);
    for (std::size_t r = 0; r < 4; ++r) {
      double row = 0.0;
      for (std::size_t c = 0; c < 9; ++c) {
        row += p.at({r, c});
        CHECK(p.at({r, c}) >= 0.0);
        shifted[r * 9 + c] += 37.0 * static_cast<double>(r);
      }
      CHECK(std::abs(row - 1.0) < 1e-9);
    }
    CHECK(max_abs_diff(softmax_rows(Tensor({4, 9}, shifted)).values(), p.values()) < 1e-12);
  }
}

TEST_CASE("l2 normalize") {
  Tensor u = l2_normalize(Tensor({2}, {3, 4}));
  CHECK(u.values()[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(u.values()[1] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK_THROWS_AS(l2_normalize(Tensor({2}, {0, 0})), DegenerateInputError);
  std::mt19937_64 rng(6);
  Tensor x = random_tensor({6, 5}, rng);
  Tensor n = l2_normalize(x);
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 5; ++c) s += n.at({r, c}) * n.at({r, c});
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("relu") {
  Tensor y = relu(Tensor({3}, {-1, 0, 2}));
  CHECK(testing::to_vec(y) == std::vector<double>{0, 0, 2});
}

TEST_CASE("batch norm training, constant columns and eval identity") {
  BatchNormState st(1);
  Tensor g({1}, {1.0}), b({1}, {0.0});
  Tensor y = batch_norm(Tensor({2, 1}, {1, 3}), st, g, b, true);
  CHECK(y.values()[0] == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(y.values()[1] == doctest::Approx(1.0).epsilon(1e-5));

  BatchNormState cst(2);
  Tensor g2({2}, {1.0, 1.0}), b2({2}, {0.0, 0.0});
  Tensor yc = batch_norm(Tensor({3, 2}, {5, 1, 5, 2, 5, 3}), cst, g2, b2, true);
  for (std::size_t r = 0; r < 3; ++r) CHECK(yc.at({r, 0}) == 0.0);

  BatchNormState fresh(2);
  Tensor x({2, 2}, {0.3, -1.2, 4.0, 2.5});
  Tensor ye = batch_norm(x, fresh, g2, b2, false);
  // fresh running stats (0, 1): identity up to 1/sqrt(1 + eps)
  for (std::size_t i = 0; i < 4; ++i) CHECK(ye.values()[i] == doctest::Approx(x.values()[i] / std::sqrt(1.0 + 1e-5)));

  CHECK_THROWS_AS(batch_norm(Tensor({1, 2}, {1, 2}), fresh, g2, b2, true), DataError);
}

TEST_CASE("cross entropy examples") {
  Tensor u({1, 4}, {0, 0, 0, 0});
  const std::size_t l0[] = {0};
  CHECK(cross_entropy(u, l0).item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  Tensor z({1, 2}, {std::log(3.0), 0.0});
  CHECK(cross_entropy(z, l0).item() == doctest::Approx(-std::log(0.75)).epsilon(1e-12));
  CHECK(cross_entropy(z, l0).item() == doctest::Approx(0.2877).epsilon(1e-4));
  const std::size_t bad[] = {2};
  CHECK_THROWS_AS(cross_entropy(z, bad), IndexError);
}

TEST_CASE("backward of sum and of half squared norm") {
  Tensor p({3}, {0.5, -2.0, 4.0}, true);
  backward(sum(p));
  CHECK(testing::to_vec(Tensor({3}, {p.grad().begin(), p.grad().end()})) == std::vector<double>{1, 1, 1});
  p.zero_grad();
  backward(scale(sum(mul(p, p)), 0.5));
  CHECK(max_abs_diff(p.grad(), p.values()) == 0.0);
}

TEST_CASE("leaf gradients accumulate across backward calls") {
  Tensor p({2}, {1.0, 2.0}, true);
  backward(sum(p));
  backward(sum(p));
  CHECK(p.grad()[0] == 2.0);
  CHECK(p.grad()[1] == 2.0);
}

TEST_CASE("sgd: frozen, zero learning rate, plain step") {
  Parameter w{Tensor({2}, {1.0, -1.0}, true), "w"};
  Parameter f{Tensor({2}, {3.0, 4.0}, true), "f", true};
  std::vector<Parameter> ps{w, f};
  backward(add(sum(mul(w.tensor, w.tensor)), sum(f.tensor)));

  OptimState zero;
  zero.lr0 = 0.0;
  const auto before = testing::to_vec(w.tensor);
  sgd_step(ps, zero);
  CHECK(testing::to_vec(w.tensor) == before);
  CHECK(testing::to_vec(f.tensor) == std::vector<double>{3.0, 4.0});

  OptimState plain;
  plain.lr0 = 1.0;
  plain.momentum = 0.0;
  plain.weight_decay = 0.0;
  sgd_step(ps, plain);
  CHECK(testing::to_vec(w.tensor) == std::vector<double>{1.0 - 2.0, -1.0 + 2.0});
  CHECK(testing::to_vec(f.tensor) == std::vector<double>{3.0, 4.0});
}

TEST_CASE("sgd momentum and weight decay follow the update rule") {
  Parameter w{Tensor({1}, {2.0}, true), "w"};
  std::vector<Parameter> ps{w};
  OptimState st;
  st.lr0 = 0.1;
  st.momentum = 0.9;
  st.weight_decay = 0.01;
  double v = 0.0, x = 2.0;
  for (int step = 0; step < 3; ++step) {
    zero_grads(ps);
    backward(sum(mul(w.tensor, w.tensor)));
    const double g = 2.0 * x;
    v = 0.9 * v + (g + 0.01 * x);
    x -= st.current_lr() * v;
    sgd_step(ps, st);
    CHECK(w.tensor.values()[0] == doctest::Approx(x).epsilon(1e-14));
  }
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 100, 2e-3) == 2e-3);
  CHECK(std::abs(cosine_lr(100, 100, 2e-3)) < 1e-18);
  CHECK(cosine_lr(50, 100, 2e-3) == doctest::Approx(1e-3).epsilon(1e-12));
  for (int e = 1; e <= 100; ++e) CHECK(cosine_lr(e, 100, 1.0) <= cosine_lr(e - 1, 100, 1.0));
  CHECK_THROWS_AS(cosine_lr(0, 0, 1.0), ConfigError);
}

TEST_CASE("duplicate parameter names are rejected") {
  std::vector<Parameter> ps{{Tensor({1}, {0.0}), "a"}, {Tensor({1}, {0.0}), "a"}};
  CHECK_THROWS_AS(check_unique_names(ps), ConfigError);
}

namespace {

// Checks one op against central differences taken on its inputs.
void check_op(const std::function<Tensor(const std::vector<Tensor>&)>& op, std::vector<Tensor> inputs) {
  std::vector<Parameter> ps;
  for (std::size_t i = 0; i < inputs.size(); ++i) ps.push_back({inputs[i], "in" + std::to_string(i)});
  std::mt19937_64 rng(11);
  // random projection so every output entry contributes a distinct weight
  Tensor probe = op(inputs);
  Tensor w = random_tensor(probe.shape(), rng);
  auto loss = [&] { return sum(mul(op(inputs), w)); };
  const auto entries = finite_diff_check(loss, ps, 1e-6);
  CHECK(max_error(entries) < 1e-5);
}

}  // namespace

TEST_CASE("every differentiable op passes a finite-difference check") {
  std::mt19937_64 rng(12);
  auto R = [&](Shape s, double sd = 1.0) { return random_tensor(std::move(s), rng, sd, true); };
  check_op([](auto& x) { return matmul(x[0], x[1]); }, {R({3, 4}), R({4, 2})});
  check_op([](auto& x) { return bmm(x[0], x[1]); }, {R({2, 3, 4}), R({2, 4, 2})});
  check_op([](auto& x) { return bmm(x[0], x[1], true); }, {R({2, 3, 4}), R({2, 5, 4})});
  check_op([](auto& x) { return add(x[0], x[1]); }, {R({3, 4}), R({4})});
  check_op([](auto& x) { return sub(x[0], x[1]); }, {R({3, 4}), R({3, 4})});
  check_op([](auto& x) { return mul(x[0], x[1]); }, {R({2, 3, 4}), R({3, 4})});
  check_op([](auto& x) { return scale(x[0], -1.7); }, {R({5})});
  check_op([](auto& x) { return tanh(x[0]); }, {R({3, 3})});
  check_op([](auto& x) { return softmax_rows(x[0]); }, {R({3, 5}, 3.0)});
  check_op([](auto& x) { return l2_normalize(x[0]); }, {R({4, 3})});
  check_op([](auto& x) { return group_scale_norm(x[0], 6, 64.0); }, {R({2, 2, 3})});
  check_op([](auto& x) { return group_scale_norm(x[0], 6, 64.0, true); }, {R({2, 2, 3})});
  check_op([](auto& x) { return mean(x[0]); }, {R({3, 4})});
  check_op([](auto& x) { return sum_axis(x[0], 1); }, {R({2, 3, 4})});
  check_op([](auto& x) { return mean_axis(x[0], 0); }, {R({2, 3, 4})});
  check_op([](auto& x) { return reshape(x[0], {6, 2}); }, {R({3, 4})});
  check_op([](auto& x) { return transpose(x[0]); }, {R({3, 4})});
  check_op([](auto& x) { return permute(x[0], {2, 0, 1}); }, {R({2, 3, 4})});
  check_op([](auto& x) { return slice_last(x[0], 1, 3); }, {R({3, 4})});
  const std::size_t idx[] = {2, 0, 2, 1};
  check_op([&](auto& x) { return take_last(x[0], idx); }, {R({2, 3})});
  check_op([&](auto& x) { return gather_rows(x[0], idx); }, {R({3, 2})});
  check_op([](auto& x) { return concat(x[0], x[1], 1); }, {R({2, 3}), R({2, 2})});
  const std::size_t labels[] = {1, 0, 3};
  check_op([&](auto& x) { return cross_entropy(x[0], labels); }, {R({3, 4})});
  BatchNormState st(3);
  check_op([&](auto& x) { return batch_norm(x[0], st, x[1], x[2], true); }, {R({5, 3}), R({3}), R({3})});
}

TEST_CASE("relu passes away from the kink") {
  std::mt19937_64 rng(13);
  Tensor x = random_tensor({20}, rng, 1.0, true);
  for (double& v : x.values_mut()) v += v > 0 ? 0.1 : -0.1;
  check_op([](auto& in) { return relu(in[0]); }, {x});
}

TEST_CASE("relu kink crossings are re-probed instead of reported") {
  // a step of 1e-2 straddles 1e-3 and the naive quotient would read 0.5
  Parameter p{Tensor({1}, {1e-3}, true), "p"};
  std::vector<Parameter> ps{p};
  const auto e = finite_diff_check([&] { return sum(relu(p.tensor)); }, ps, 1e-2);
  CHECK(e[0].kink_coords == 1);
  CHECK(e[0].max_rel_error < 1e-6);
}

TEST_CASE("gradient check catches a corrupted backward") {
  Parameter p{Tensor({3}, {0.2, -0.4, 0.9}, true), "p"};
  std::vector<Parameter> ps{p};
  auto broken = [&] {
    Tensor y = mul(p.tensor, p.tensor);
    return Tensor::make_result({}, {sum(y).item()}, {p.tensor}, [](const detail::Node& self) {
      auto& parent = *self.parents[0];
      for (std::size_t i = 0; i < parent.value.size(); ++i) parent.grad[i] += 3.0 * parent.value[i] * self.grad[0];
    });
  };
  CHECK(max_error(finite_diff_check(broken, ps)) > 0.1);
}

TEST_CASE("linear layer and mlp shapes") {
  std::mt19937_64 rng(1);
  Linear lin("lin", 4, 3, rng);
  Tensor y = lin.forward(random_tensor({5, 4}, rng));
  CHECK(y.shape() == Shape{5, 3});
  Mlp mlp("mlp", 4, 8, 2, rng);
  CHECK(mlp.forward(random_tensor({5, 4}, rng), true).shape() == Shape{5, 2});
  std::vector<Parameter> ps;
  mlp.collect(ps);
  CHECK_NOTHROW(check_unique_names(ps));
}

}  // TEST_SUITE
