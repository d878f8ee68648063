#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "core/jet.hpp"

#include <cmath>
#include <vector>

#include "core/bump.hpp"
#include "oracles.hpp"

using namespace displab;

namespace {
MIdx mi(std::initializer_list<int> a) {
  MIdx m{};
  int i = 0;
  for (int v : a) m[i++] = std::uint8_t(v);
  return m;
}
}  // namespace

TEST_CASE("jet space sizes follow the simplex count") {
  // C(nvars + order, order) monomials at or below the order
  CHECK(JetSpace::get(1, 4).size() == 5);
  CHECK(JetSpace::get(2, 3).size() == 10);
  CHECK(JetSpace::get(3, 2).size() == 10);
}

TEST_CASE("polynomial derivatives are exact") {
  const JetSpace& sp = JetSpace::get(2, 4);
  Jet x = Jet::variable(sp, 0, 1.5);
  Jet y = Jet::variable(sp, 1, -0.5);
  Jet f = x * x * y + 3.0 * y * y - 2.0 * x + 7.0;
  CHECK(f.value() == doctest::Approx(1.5 * 1.5 * -0.5 + 3.0 * 0.25 - 3.0 + 7.0));
  CHECK(f.deriv(mi({1, 0})) == doctest::Approx(2.0 * 1.5 * -0.5 - 2.0));
  CHECK(f.deriv(mi({0, 1})) == doctest::Approx(1.5 * 1.5 + 6.0 * -0.5));
  CHECK(f.deriv(mi({2, 1})) == doctest::Approx(2.0));
  CHECK(f.deriv(mi({2, 0})) == doctest::Approx(-1.0));
  CHECK(f.deriv(mi({1, 1})) == doctest::Approx(3.0));
}

TEST_CASE("transcendental chain rule against finite differences") {
  const JetSpace& sp = JetSpace::get(3, 3);
  auto eval = [](const std::vector<double>& p) {
    return std::exp(0.3 * p[0]) * std::sin(p[1] + 0.2 * p[2] * p[2]) / std::sqrt(1.0 + p[0] * p[0]);
  };
  std::vector<double> at{0.7, 1.1, -0.4};
  Jet x = Jet::variable(sp, 0, at[0]);
  Jet y = Jet::variable(sp, 1, at[1]);
  Jet z = Jet::variable(sp, 2, at[2]);
  Jet f = exp(0.3 * x) * sin(y + 0.2 * z * z) / sqrt(1.0 + x * x);

  CHECK(f.value() == doctest::Approx(eval(at)).epsilon(1e-14));
  for (auto alpha : {std::vector<int>{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {0, 1, 2}, {2, 0, 1}}) {
    double want = oracle::diff_multi(eval, at, alpha, 1e-2);
    double got = f.deriv(mi({alpha[0], alpha[1], alpha[2]}));
    CHECK(got == doctest::Approx(want).epsilon(2e-5));
  }
}

TEST_CASE("division and log invert multiplication and exp") {
  const JetSpace& sp = JetSpace::get(1, 6);
  Jet x = Jet::variable(sp, 0, 0.9);
  Jet a = exp(log(1.0 + x * x));
  Jet b = 1.0 + x * x;
  for (int k = 0; k <= 6; ++k) {
    MIdx m{};
    m[0] = std::uint8_t(k);
    CHECK(a.deriv(m) == doctest::Approx(b.deriv(m)).epsilon(1e-12));
  }
  Jet q = (x * x * x) / x;  // removable only numerically: x != 0 here
  MIdx two{};
  two[0] = 2;
  CHECK(q.deriv(two) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("pow_int matches repeated products") {
  const JetSpace& sp = JetSpace::get(2, 4);
  Jet x = Jet::variable(sp, 0, 1.2);
  Jet y = Jet::variable(sp, 1, 0.3);
  Jet base = 1.0 + x * y;
  Jet p = pow_int(base, 5);
  Jet q = base * base * base * base * base;
  CHECK(p.deriv(mi({2, 2})) == doctest::Approx(q.deriv(mi({2, 2}))).epsilon(1e-12));
}

TEST_CASE("smooth_step on jets tracks the scalar derivatives") {
  const JetSpace& sp = JetSpace::get(1, 4);
  for (double u0 : {0.25, 0.5, 0.8}) {
    Jet u = Jet::variable(sp, 0, u0);
    Jet s = smooth_step(u);
    CHECK(s.value() == doctest::Approx(smooth_step(u0)).epsilon(1e-14));
    MIdx one{};
    one[0] = 1;
    CHECK(s.deriv(one) == doctest::Approx(smooth_step_deriv(u0, 1)).epsilon(1e-12));
    MIdx two{};
    two[0] = 2;
    CHECK(s.deriv(two) == doctest::Approx(smooth_step_deriv(u0, 2)).epsilon(1e-10));
  }
}

TEST_CASE("position is -1 beyond the truncation order") {
  const JetSpace& sp = JetSpace::get(2, 3);
  CHECK(sp.position(mi({2, 2})) == -1);
  CHECK(sp.position(mi({3, 0})) >= 0);
}
