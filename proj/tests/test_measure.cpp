#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <complex>
#include <cstdio>
#include <vector>

#include "core/evolve.hpp"
#include "core/measure.hpp"
#include "core/io.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace displab;

namespace {

FieldSeries constant_series(const SpectralField& f, const std::vector<double>& times) {
  FieldSeries s;
  s.times = times;
  for (std::size_t i = 0; i < times.size(); ++i) s.fields.push_back(f);
  return s;
}

// odd 1d profile r*exp(-r^2/(2w^2))*cos(k r); dividing by r gives a smooth
// radial three dimensional field, and the even dispersion multiplier keeps
// the evolution odd, so the reduction stays exact for all times
SpectralField odd_radial_seed(const Grid& g, double width, double k) {
  return field_from_function(g, [width, k](const std::array<double, 3>& x) {
    return cd(x[0] * std::exp(-x[0] * x[0] / (2.0 * width * width)) * std::cos(k * x[0]), 0.0);
  });
}

double radial_sup(const SpectralField& w) {
  const Grid& g = w.grid();
  const std::vector<cd>& v = w.values();
  double m = 0.0;
  std::array<double, 3> x{};
  for (std::int64_t q = 0; q < g.npts(); ++q) {
    g.x_at(q, x);
    const double r = std::abs(x[0]);
    if (r < 0.5 * g.dx()) continue;
    m = std::max(m, std::abs(v[static_cast<std::size_t>(q)]) / r);
  }
  return m;
}

// L^6 of w(r)/r over R^3, radial quadrature on the positive axis
double radial_l6(const SpectralField& w) {
  const Grid& g = w.grid();
  const std::vector<cd>& v = w.values();
  double acc = 0.0;
  std::array<double, 3> x{};
  for (std::int64_t q = 0; q < g.npts(); ++q) {
    g.x_at(q, x);
    if (x[0] <= 0.0) continue;
    const double a = std::abs(v[static_cast<std::size_t>(q)]);
    acc += std::pow(a, 6.0) / std::pow(x[0], 4.0) * g.dx();
  }
  return std::pow(4.0 * kPi * acc, 1.0 / 6.0);
}

}  // namespace

TEST_CASE("admissible pair algebra") {
  AdmissiblePair pr = admissible_pair(3, 1.0, 6.0);
  CHECK(pr.p == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(pr.sigma == doctest::Approx(5.0 / 6.0).epsilon(1e-14));

  // the scaling identity 2/p + (d-1+theta)/q = (d-1+theta)/2 across a sweep
  for (int d = 1; d <= 4; ++d)
    for (double theta : {0.0, 0.25, 1.0})
      for (double q : {2.0, 4.0, 8.0, 64.0}) {
        if (d - 1 + theta <= 0.0) continue;
        double rhs = (d - 1 + theta) * (0.5 - 1.0 / q);
        if (rhs > 0.0 && 2.0 / rhs < 2.0) continue;
        AdmissiblePair a = admissible_pair(d, theta, q);
        const double lhs = (std::isinf(a.p) ? 0.0 : 2.0 / a.p) + (d - 1 + theta) / q;
        CHECK(lhs == doctest::Approx((d - 1 + theta) * 0.5).epsilon(1e-14));
        CHECK(a.sigma == doctest::Approx(0.25 * (d + 1 + theta) * (1.0 - 2.0 / q)).epsilon(1e-14));
      }

  AdmissiblePair en = admissible_pair(3, 1.0, 2.0);
  CHECK(std::isinf(en.p));
  CHECK(en.sigma == 0.0);

  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_WITH_AS(admissible_pair(3, 0.0, inf), doctest::Contains("forbidden"), Error);
  CHECK_THROWS_WITH_AS(admissible_pair(3, 1.0, 12.0), doctest::Contains("non-admissible"), Error);
  CHECK_THROWS_AS(admissible_pair(0, 1.0, 4.0), Error);
  CHECK_THROWS_AS(admissible_pair(3, -0.1, 4.0), Error);
  CHECK_THROWS_AS(admissible_pair(3, 1.0, 1.5), Error);
}

TEST_CASE("mixed norm on the unit box is exponent independent for constants") {
  // total measure 1 in space and in time, so every L^p_t L^q_x of 1 equals 1
  Grid g = make_grid(1, 32, 0.5);
  SpectralField one = field_from_function(g, [](const std::array<double, 3>&) { return cd(1.0, 0.0); });
  TimeSeriesNorms ts;
  ts.qs = {2.0, 4.0, std::numeric_limits<double>::infinity()};
  for (int i = 0; i <= 8; ++i) append_norms(ts, i / 8.0, one);
  for (double p : {1.0, 2.0, 3.0, std::numeric_limits<double>::infinity()})
    for (double q : ts.qs) CHECK(mixed_norm(ts, p, q) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_WITH_AS(mixed_norm(ts, 2.0, 3.0), doctest::Contains("was not recorded"), Error);
}

TEST_CASE("space-time L2 matches an independent trapezoid sum") {
  Grid g = make_grid(1, 64, 8.0);
  std::mt19937_64 rng = oracle::rng(77);
  TimeSeriesNorms ts;
  ts.qs = {2.0};
  std::vector<double> hand_sq;
  std::vector<double> times = {0.0, 0.3, 0.7, 1.0, 1.6, 2.0};
  for (double t : times) {
    SpectralField f = field_from_function(g, [&](const std::array<double, 3>&) {
      return cd(oracle::urand(rng, -1.0, 1.0), oracle::urand(rng, -1.0, 1.0));
    });
    double acc = 0.0;
    for (const cd& z : f.values()) acc += std::norm(z);
    hand_sq.push_back(acc * g.dx());
    append_norms(ts, t, f);
  }
  double hand = 0.0;
  for (std::size_t i = 1; i < times.size(); ++i)
    hand += 0.5 * (times[i] - times[i - 1]) * (hand_sq[i] + hand_sq[i - 1]);
  CHECK(mixed_norm(ts, 2.0, 2.0) == doctest::Approx(std::sqrt(hand)).epsilon(1e-12));
}

TEST_CASE("separable decay run matches the closed form") {
  // u(t,x) = exp(-t) g(x), so the L^p_t L^q_x norm factors
  Grid g = make_grid(1, 128, 8.0);
  SpectralField gp = gaussian_packet(g, {0.0, 0.0, 0.0}, {2.0, 0.0, 0.0}, 1.0);
  const double T = 2.0;
  const int nt = 2000;
  TimeSeriesNorms ts;
  ts.qs = {2.0, 4.0};
  for (int i = 0; i <= nt; ++i) {
    const double t = T * i / nt;
    SpectralField f = gp;
    f *= cd(std::exp(-t), 0.0);
    append_norms(ts, t, f);
  }
  const double tfac = std::sqrt(0.5 * (1.0 - std::exp(-2.0 * T)));
  for (double q : {2.0, 4.0}) {
    double acc = 0.0;
    for (const cd& z : gp.values()) acc += std::pow(std::abs(z), q);
    const double gq = std::pow(acc * g.dx(), 1.0 / q);
    CHECK(mixed_norm(ts, 2.0, q) == doctest::Approx(gq * tfac).epsilon(1e-5));
  }
}

TEST_CASE("sobolev norm reductions") {
  Grid g = make_grid(1, 64, 8.0);
  SpectralField f = gaussian_packet(g, {1.0, 0.0, 0.0}, {3.0, 0.0, 0.0}, 1.5);
  CHECK(sobolev_norm(f, 0.0) == doctest::Approx(f.norm_l2()).epsilon(1e-13));

  // a pure lattice mode picks up exactly one bracket factor
  const double xi0 = 16.0 * g.dxi();
  SpectralField pw = field_from_function(g, [xi0](const std::array<double, 3>& x) {
    return std::exp(cd(0.0, xi0 * x[0]));
  });
  const double expect = std::sqrt(1.0 + xi0 * xi0) * std::pow(2.0 * g.L, 0.5);
  CHECK(sobolev_norm(pw, 1.0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("gaussian H^2 norm against the moment formula") {
  // hat u = w^d exp(-w^2 |xi|^2 / 2); the H^2 integral reduces to gaussian moments
  const int d = 2;
  const double w = 2.0;
  Grid g = make_grid(d, 128, 16.0);
  SpectralField f = gaussian_packet(g, {0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}, w);
  const double i0 = std::pow(kPi / (w * w), 0.5 * d);
  const double h2 = std::pow(w, 2 * d) * i0 *
                    (1.0 + static_cast<double>(d) / (w * w) +
                     d * (d + 2.0) / (4.0 * std::pow(w, 4.0)));
  CHECK(sobolev_norm(f, 2.0) == doctest::Approx(std::sqrt(h2)).epsilon(1e-8));
}

TEST_CASE("localized energy norm of a single shell") {
  Grid g = make_grid(1, 512, 32.0);
  SpectralField u = field_from_function(g, [](const std::array<double, 3>& x) {
    const double r = std::abs(x[0]);
    return cd(r > 2.0 && r < 8.0 ? 1.0 : 0.0, 0.0);
  });
  FieldSeries series = constant_series(u, {0.0, 1.0, 2.0});
  const int k = 0;
  const double xk = local_energy_norm(series, k);

  // independent evaluation of the same definition from the raw samples
  const std::vector<cd>& v = u.values();
  auto slab_plain = [&](double a, double b) {
    double acc = 0.0;
    std::array<double, 3> x{};
    for (std::int64_t q = 0; q < g.npts(); ++q) {
      g.x_at(q, x);
      const double r = std::abs(x[0]);
      if (r >= a && r < b) acc += std::norm(v[static_cast<std::size_t>(q)]);
    }
    return std::sqrt(acc * g.dx() * 2.0);  // constant in t over [0,2]
  };
  auto slab_weighted = [&](double a, double b) {
    double acc = 0.0;
    std::array<double, 3> x{};
    for (std::int64_t q = 0; q < g.npts(); ++q) {
      g.x_at(q, x);
      const double r = std::abs(x[0]);
      if (r >= a && r < b && r > 0.0) acc += std::norm(v[static_cast<std::size_t>(q)]) / r;
    }
    return std::sqrt(acc * g.dx() * 2.0);
  };
  double sup = 0.0;
  int jtop = 0;
  while (std::pow(2.0, jtop) <= g.L) ++jtop;
  for (int j = -k; j <= jtop; ++j)
    sup = std::max(sup, slab_weighted(std::pow(2.0, j - 1), std::pow(2.0, j + 1)));
  const double expect = std::pow(2.0, k) * slab_plain(0.0, std::pow(2.0, -k)) + std::pow(2.0, 0.5 * k) * sup;
  CHECK(xk == doctest::Approx(expect).epsilon(1e-12));

  // the dominant shell holds all of the mass, so the value sits within a
  // factor 2^{1/2} of 2^{-j0/2} times the plain space-time mass, j0 = 2
  const double st = slab_plain(2.0, 8.0);
  const double ratio = xk / (std::pow(2.0, 0.5 * k) * 0.5 * st);
  CHECK(ratio > 0.69);
  CHECK(ratio < 1.45);

  // absolute homogeneity
  SpectralField u2 = u;
  u2 *= cd(2.0, 0.0);
  FieldSeries series2 = constant_series(u2, series.times);
  CHECK(local_energy_norm(series2, k) == doctest::Approx(2.0 * xk).epsilon(1e-12));

  CHECK_THROWS_WITH_AS(local_energy_norm(series, 4), doctest::Contains("grid spacing"), Error);
}

TEST_CASE("frequency weighted localized energy report") {
  Grid g = make_grid(1, 512, 32.0);
  SpectralField u = gaussian_packet(g, {3.0, 0.0, 0.0}, {2.0, 0.0, 0.0}, 1.5);
  FieldSeries series = constant_series(u, {0.0, 0.5, 1.0, 1.5, 2.0});
  XsReport rep = x_s_norm(series, 0.75);
  CHECK(rep.horizon == doctest::Approx(2.0));
  CHECK(!rep.rows.empty());
  double acc = 0.0;
  for (const XsRow& row : rep.rows) acc += row.weight * row.xk * row.xk;
  CHECK(rep.value == doctest::Approx(std::sqrt(acc)).epsilon(1e-12));

  SpectralField u2 = u;
  u2 *= cd(2.0, 0.0);
  XsReport rep2 = x_s_norm(constant_series(u2, series.times), 0.75);
  CHECK(rep2.value == doctest::Approx(2.0 * rep.value).epsilon(1e-12));
}

TEST_CASE("localized energy of a free band stays bounded as the horizon doubles") {
  Grid g = make_grid(1, 512, 32.0);
  SpectralField u0 = littlewood_paley(gaussian_packet(g, {0.0, 0.0, 0.0}, {2.0, 0.0, 0.0}, 2.0), 1);
  auto run = [&](double T) {
    FieldSeries s;
    for (double t = 0.0; t <= T + 1e-9; t += 0.5) {
      s.times.push_back(t);
      s.fields.push_back(flat_halfkg_step(u0, 1.0, 0.0, t));
    }
    return local_energy_norm(s, 1) / u0.norm_l2();
  };
  const double r1 = run(8.0);
  const double r2 = run(16.0);
  CHECK(r1 > 0.0);
  CHECK(r2 <= 1.3 * r1);
}

TEST_CASE("decay fit recovers a synthetic power law") {
  std::vector<double> times, sups;
  for (int i = 0; i < 30; ++i) {
    const double t = 2.0 * std::pow(25.0, i / 29.0);
    times.push_back(t);
    sups.push_back(3.7 * std::pow(t, -1.5));
  }
  DecayFit fit = decay_fit(times, sups, 2.0, 50.0);
  CHECK(fit.exponent == doctest::Approx(-1.5).epsilon(1e-6));
  CHECK(fit.residual <= 1e-10);
  CHECK(fit.samples == 30);

  CHECK_THROWS_WITH_AS(decay_fit(times, sups, 100.0, 200.0), doctest::Contains("fewer than six"), Error);
  sups.pop_back();
  CHECK_THROWS_WITH_AS(decay_fit(times, sups, 2.0, 50.0), doctest::Contains("misaligned"), Error);
}

TEST_CASE("flat dispersive sup decay at unit frequency, three dimensions") {
  // radial reduction: evolve the odd 1d profile, read sup_x |w|/r; the
  // width 1.2 envelope keeps all mass at O(1) frequencies and the slow
  // stationary point at the origin carries the t^{-3/2} rate cleanly
  Grid g = make_grid(1, 4096, 64.0);
  SpectralField w0 = odd_radial_seed(g, 1.2, 0.0);
  std::vector<double> times, sups;
  for (int i = 0; i < 12; ++i) {
    const double t = 5.0 * std::pow(8.0, i / 11.0);
    times.push_back(t);
    sups.push_back(radial_sup(flat_halfkg_step(w0, 1.0, 0.0, t)));
  }
  DecayFit fit = decay_fit(times, sups, 5.0, 40.0);
  CHECK(fit.exponent > -1.6);
  CHECK(fit.exponent < -1.4);
}

TEST_CASE("flat sup decay of a narrow high band is wave-like") {
  // carrier at |xi| = 8: no radial spreading inside the window, the sup
  // falls off like 1/t from the expanding shell alone
  Grid g = make_grid(1, 4096, 64.0);
  SpectralField w0 = odd_radial_seed(g, 1.0, 8.0);
  std::vector<double> times, sups;
  for (int i = 0; i < 10; ++i) {
    const double t = 5.0 * std::pow(8.0, i / 9.0);
    times.push_back(t);
    sups.push_back(radial_sup(flat_halfkg_step(w0, 1.0, 0.0, t)));
  }
  DecayFit fit = decay_fit(times, sups, 5.0, 40.0);
  CHECK(fit.exponent > -1.15);
  CHECK(fit.exponent < -0.85);
}

TEST_CASE("energy endpoint ratio of a free flow is exactly one") {
  Grid g = make_grid(1, 256, 16.0);
  SpectralField u0 = gaussian_packet(g, {0.0, 0.0, 0.0}, {3.0, 0.0, 0.0}, 1.5);
  FieldSeries s;
  for (int i = 0; i <= 8; ++i) {
    const double t = 0.5 * i;
    s.times.push_back(t);
    s.fields.push_back(flat_halfkg_step(u0, 1.0, 0.0, t));
  }
  AdmissiblePair en = admissible_pair(3, 1.0, 2.0);
  // sup_t of H^s over H^s of the data, and the flow is an H^s isometry
  CHECK(strichartz_ratio(s, en, 0.7) == doctest::Approx(1.0).epsilon(1e-13));
  CHECK_THROWS_WITH_AS(strichartz_ratio(s, en, 0.7, false), doctest::Contains("homogeneous"), Error);
}

TEST_CASE("strichartz ratio stabilizes under horizon doubling") {
  // three dimensional radial free field through the odd reduction; the
  // L^2_t L^6_x mass accumulates like t^{-4/3} past the far field onset,
  // so doubling the horizon from 25 to 50 moves the ratio very little
  Grid g = make_grid(1, 4096, 64.0);
  SpectralField w0 = odd_radial_seed(g, 1.2, 0.0);
  const double denom = std::sqrt(2.0 * kPi) * sobolev_norm(w0, 5.0 / 6.0);
  std::vector<double> times, l6;
  for (double t = 0.0; t <= 50.0 + 1e-9; t += 1.25) {
    times.push_back(t);
    l6.push_back(radial_l6(flat_halfkg_step(w0, 1.0, 0.0, t)));
  }
  auto ratio_to = [&](double T) {
    double acc = 0.0;
    for (std::size_t i = 1; i < times.size(); ++i) {
      if (times[i] > T + 1e-9) break;
      acc += 0.5 * (times[i] - times[i - 1]) * (l6[i] * l6[i] + l6[i - 1] * l6[i - 1]);
    }
    return std::sqrt(acc) / denom;
  };
  const double r25 = ratio_to(25.0);
  const double r50 = ratio_to(50.0);
  CHECK(r25 > 0.0);
  CHECK(std::abs(r50 / r25 - 1.0) < 0.15);
}

TEST_CASE("strichartz ratio is stable under small metric bumps") {
  Grid g = make_grid(3, 32, 16.0);
  SpectralField u0 = gaussian_packet(g, {0.0, 0.0, 0.0}, {1.0, 0.0, 0.0}, 4.0);
  AdmissiblePair pr = admissible_pair(3, 1.0, 6.0);
  auto run = [&](double eps) {
    PropagatorConfig cfg;
    cfg.spec = eps == 0.0 ? make_flat_metric(3) : make_radial_bump_metric(3, eps);
    cfg.M = 1.0;
    cfg.dt = 0.75;
    FieldSeries s;
    s.times.push_back(0.0);
    s.fields.push_back(u0);
    SpectralField u = u0;
    double t = 0.0;
    for (int step = 0; step < 16; ++step) {
      u = perturbed_halfkg_step(u, cfg, t);
      t += cfg.dt;
      if ((step + 1) % 2 == 0) {
        s.times.push_back(t);
        s.fields.push_back(u);
      }
    }
    return strichartz_ratio(s, pr, pr.sigma);
  };
  const double r0 = run(0.0);
  const double r1 = run(0.01);
  const double r2 = run(0.05);
  const double hi = std::max(r0, std::max(r1, r2));
  const double lo = std::min(r0, std::min(r1, r2));
  CHECK(lo > 0.0);
  CHECK(hi / lo - 1.0 < 0.25);
}

TEST_CASE("norm table csv roundtrip") {
  Grid g = make_grid(1, 64, 8.0);
  TimeSeriesNorms ts;
  ts.qs = {2.0, std::numeric_limits<double>::infinity()};
  ts.s = 1.0;
  SpectralField f = gaussian_packet(g, {0.0, 0.0, 0.0}, {1.0, 0.0, 0.0}, 1.0);
  append_norms(ts, 0.0, f);
  f *= cd(0.5, 0.0);
  append_norms(ts, 1.0, f);

  const std::string path = "/tmp/displab_test_norms.csv";
  dump_norms_csv(ts, path);
  Table tb = read_table_csv(path);
  REQUIRE(tb.columns.size() == 5);
  CHECK(tb.columns[0] == "t");
  CHECK(tb.columns[1] == "L2");
  CHECK(tb.columns[2] == "Linf");
  CHECK(tb.columns[3] == "Hs");
  CHECK(tb.columns[4] == "sup");
  REQUIRE(tb.rows.size() == 2);
  CHECK(tb.rows[1][0] == doctest::Approx(1.0));
  CHECK(tb.rows[1][1] == doctest::Approx(ts.lq[1][0]).epsilon(1e-15));
  CHECK(tb.rows[1][3] == doctest::Approx(ts.hs[1]).epsilon(1e-15));
  std::remove(path.c_str());
}
