#include <doctest.h>

#include "phlie/diffcore.hpp"

#include <cmath>
#include <random>

using namespace phlie;

namespace {

ParameterStore scalar_store(double v) {
  ParameterStore s;
  s.add("theta", {1}, {v});
  return s;
}

double central(const std::function<double(double)>& f, double x, double h) { return (f(x + h) - f(x - h)) / (2 * h); }

}  // namespace

TEST_SUITE("diffcore") {
  TEST_CASE("square loss value and gradient") {
    auto r = value_and_grad([](Graph& g) { return g.squared_norm(g.param("theta")); }, scalar_store(3.0));
    CHECK(r.loss == doctest::Approx(9.0).epsilon(1e-15));
    CHECK(r.grads.at("theta").values[0] == doctest::Approx(6.0).epsilon(1e-15));
  }

  TEST_CASE("sum gives unit gradient for any shape") {
    ParameterStore s;
    s.add("w", {3, 4}, std::vector<double>(12, 0.37));
    auto r = value_and_grad([](Graph& g) { return g.sum(g.param("w")); }, s);
    for (double v : r.grads.at("w").values) CHECK(v == 1.0);
  }

  TEST_CASE("flatten and unflatten round trip bit exactly") {
    ParameterStore s;
    std::mt19937_64 gen(3);
    std::normal_distribution<double> n;
    std::vector<double> a(6), b(5);
    for (auto& v : a) v = n(gen);
    for (auto& v : b) v = n(gen);
    s.add("a", {2, 3}, a);
    s.add("b", {5}, b);
    CHECK(s.scalar_count() == 11);
    auto flat = s.flatten();
    ParameterStore t = s.zeros_like();
    t.unflatten(flat);
    CHECK(t.flatten() == flat);
    CHECK_THROWS(s.add("a", {1}));
  }

  TEST_CASE("elementwise derivatives match central differences") {
    std::mt19937_64 gen(11);
    std::uniform_real_distribution<double> u(-6, 6);
    for (int i = 0; i < 200; ++i) {
      const double x = u(gen);
      const double s = silu_derivative(x);
      CHECK(std::abs(s - central(silu, x, 1e-6)) / std::max(1.0, std::abs(s)) < 1e-6);
      const double sg = sigmoid(x) * (1 - sigmoid(x));
      CHECK(std::abs(sg - central(sigmoid, x, 1e-6)) / std::max(1.0, std::abs(sg)) < 1e-6);
    }
    CHECK(silu_derivative(0.5) == doctest::Approx(central(silu, 0.5, 1e-6)).epsilon(1e-6));
  }

  TEST_CASE("finite difference check on theta squared") {
    auto rep = finite_difference_check([](Graph& g) { return g.squared_norm(g.param("theta")); }, scalar_store(1.0),
                                       1e-5, 1e-8);
    CHECK(rep.max_relative_error < 1e-8);
    CHECK(rep.flagged.empty());
  }

  TEST_CASE("graph ops agree with finite differences") {
    ParameterStore s;
    std::mt19937_64 gen(5);
    std::normal_distribution<double> n(0, 0.5);
    auto fill = [&](std::size_t k) {
      std::vector<double> v(k);
      for (auto& x : v) x = n(gen);
      return v;
    };
    s.add("x", {4, 6}, fill(24));
    s.add("w", {3, 6}, fill(18));
    s.add("b", {3}, fill(3));
    s.add("cw", {2, 3, 3}, fill(18));
    s.add("cb", {2}, fill(2));
    auto plan = std::make_shared<const ConvPlan>(1, 4, 3, 1, 3, 2, std::vector<int>{0, 1, 2, 3}, std::vector<int>{1, 3});
    auto loss = [&](Graph& g) {
      Var x = g.param("x");
      Var h = g.silu(g.linear(x, g.param("w"), g.param("b")));          // 4x3
      Var t = g.tanh(g.slice_cols(x, 1, 3));                            // 4x3
      Var m = g.mul(g.sigmoid(h), t);
      Var c = g.causal_conv(g.add(m, h), g.param("cw"), g.param("cb"), plan);  // 2 positions x 2 channels
      Var r = g.reshape(c, 1, 4);
      Var v = g.view_row(x, 1, 2, 2, 2);
      Var parts[] = {r, g.scale(g.reshape(v, 1, 4), 0.3)};
      Var cat = g.concat_rows(parts);
      return g.add(g.sum_squared_error(cat, g.constant(Matrix::Ones(2, 4))), g.sum(g.sub(h, t)));
    };
    auto rep = finite_difference_check(loss, s, 1e-5, 1e-6);
    CHECK(rep.max_relative_error < 1e-6);
  }

  TEST_CASE("gradient of a sum is the sum of gradients") {
    ParameterStore s;
    s.add("w", {2, 2}, {0.3, -0.2, 0.9, 1.1});
    auto f1 = [](Graph& g) { return g.squared_norm(g.tanh(g.param("w"))); };
    auto f2 = [](Graph& g) { return g.sum(g.silu(g.param("w"))); };
    auto a = value_and_grad(f1, s), b = value_and_grad(f2, s);
    auto c = value_and_grad([&](Graph& g) { return g.add(f1(g), f2(g)); }, s);
    for (std::size_t i = 0; i < 4; ++i) {
      const double e = a.grads.at("w").values[i] + b.grads.at("w").values[i];
      CHECK(std::abs(c.grads.at("w").values[i] - e) <= 1e-12 * std::max(1.0, std::abs(e)));
    }
  }

  TEST_CASE("non-finite loss names the tensor") {
    ParameterStore s;
    s.add("bad", {1}, {std::nan("")});
    CHECK_THROWS_AS(value_and_grad([](Graph& g) { return g.sum(g.param("bad")); }, s), NonFiniteError);
  }

  TEST_CASE("repeated evaluation is bit identical") {
    ParameterStore s;
    s.add("w", {3}, {0.1, 0.2, -0.7});
    auto f = [](Graph& g) { return g.squared_norm(g.silu(g.param("w"))); };
    auto a = value_and_grad(f, s), b = value_and_grad(f, s);
    CHECK(a.loss == b.loss);
    CHECK(a.grads.flatten() == b.grads.flatten());
  }
}
