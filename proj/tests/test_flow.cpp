#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <functional>

#include "core/flow.hpp"
#include "core/io.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace displab;

namespace {

PhasePoint pp(double x1, double x2, double x3, double k1, double k2, double k3) {
  PhasePoint p;
  p.x = {x1, x2, x3};
  p.xi = {k1, k2, k3};
  return p;
}

double hand_drift(const MetricSpec& spec, double lambda, double t, const std::array<double, 3>& x,
                  const std::array<double, 3>& xi) {
  Eigen::Matrix3d g;
  metric_value(spec, t, x, g);
  const double m2 = 1.0 / (lambda * lambda);
  double flat = m2, curved = m2;
  for (int i = 0; i < spec.dim(); ++i) {
    flat += xi[std::size_t(i)] * xi[std::size_t(i)];
    for (int j = 0; j < spec.dim(); ++j) curved += g(i, j) * xi[std::size_t(i)] * xi[std::size_t(j)];
  }
  return std::sqrt(curved) - std::sqrt(flat);
}

std::array<double, 3> closed_flat_x(const PhasePoint& p0, double lambda, double s, double t) {
  const double br = std::sqrt(1.0 / (lambda * lambda) + p0.xi[0] * p0.xi[0] + p0.xi[1] * p0.xi[1] +
                              p0.xi[2] * p0.xi[2]);
  return {p0.x[0] + (t - s) * p0.xi[0] / br, p0.x[1] + (t - s) * p0.xi[1] / br,
          p0.x[2] + (t - s) * p0.xi[2] / br};
}

double norm3(const std::array<double, 3>& v) {
  return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
}

}  // namespace

TEST_CASE("metric drift symbol matches the direct metric route and finite differences") {
  const MetricSpec spec = make_radial_bump_metric(2, 0.05);
  const double lambda = 2.0;
  const Symbol sym = metric_halfwave_perturbation(spec, lambda);
  CHECK(sym.dim() == 2);
  CHECK(sym.max_deriv() >= 1);
  auto g = oracle::rng(91);
  for (int trial = 0; trial < 12; ++trial) {
    const std::array<double, 3> x = {oracle::urand(g, -2.0, 2.0), oracle::urand(g, -2.0, 2.0), 0.0};
    const std::array<double, 3> xi = {oracle::urand(g, -3.0, 3.0), oracle::urand(g, -3.0, 3.0), 0.0};
    const double want = hand_drift(spec, lambda, 0.0, x, xi);
    CHECK(std::abs(sym.value(0.0, x, xi).real() - want) <= 1e-14);
    const Jet j = sym.jet(0.0, x, xi, 1);
    CHECK(std::abs(j.value() - want) <= 1e-12);
    const double h = 1e-5;
    for (int v = 0; v < 4; ++v) {
      std::array<double, 3> xp = x, xm = x, kp = xi, km = xi;
      if (v < 2) {
        xp[std::size_t(v)] += h;
        xm[std::size_t(v)] -= h;
      } else {
        kp[std::size_t(v - 2)] += h;
        km[std::size_t(v - 2)] -= h;
      }
      const double fd = (hand_drift(spec, lambda, 0.0, xp, kp) - hand_drift(spec, lambda, 0.0, xm, km)) / (2.0 * h);
      MIdx a{};
      a[std::size_t(v)] = 1;
      CHECK(std::abs(j.deriv(a) - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("flat field: unit frequency moves at 1/sqrt(2), frequency is conserved") {
  FlowSystem sys;
  sys.d = 3;
  sys.lambda = 1.0;
  const FlowField f = hamiltonian_field(sys, 1.0, pp(0.3, -1.0, 2.0, 1.0, 0.0, 0.0));
  CHECK(f.xdot[0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
  CHECK(f.xdot[1] == 0.0);
  CHECK(f.xdot[2] == 0.0);
  CHECK(f.xidot[0] == 0.0);
  CHECK(f.xidot[1] == 0.0);
  CHECK(f.xidot[2] == 0.0);
}

TEST_CASE("large-scale flat field approaches unit speed like the massless expansion") {
  FlowSystem sys;
  sys.d = 3;
  sys.lambda = 1024.0;  // 2^10
  const std::array<double, 3> u = {0.6, 0.64, 0.48};  // unit vector
  const FlowField f = hamiltonian_field(sys, 1.0, pp(0, 0, 0, u[0], u[1], u[2]));
  const double speed = norm3(f.xdot);
  CHECK(1.0 - speed > 0.0);
  CHECK(1.0 - speed <= std::pow(2.0, -19.0));
  // |xdot| = (1 + lambda^-2 / |xi|^2)^{-1/2} exactly
  const double expect = 1.0 / std::sqrt(1.0 + 1.0 / (1024.0 * 1024.0));
  CHECK(speed == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("x-independent drift leaves the frequency exactly fixed") {
  Symbol::JetFn jfn = [](double, const std::array<double, 3>&, const std::array<double, 3>& xi,
                         const JetSpace& sp) {
    return cos(Jet::variable(sp, 1, xi[0])) * 0.3;  // d = 1: slot 1 is xi_1
  };
  FlowSystem sys;
  sys.d = 1;
  sys.lambda = 1.0;
  sys.pert = Symbol::from_jets(1, 0.0, 3, true, "cos-drift", jfn);
  const PhasePoint p = pp(0.7, 0, 0, 1.3, 0, 0);
  const FlowField f = hamiltonian_field(sys, 2.0, p);
  CHECK(f.xidot[0] == 0.0);
  const double want = 1.3 / std::sqrt(1.0 + 1.3 * 1.3) - 0.3 * std::sin(1.3);
  CHECK(f.xdot[0] == doctest::Approx(want).epsilon(1e-15));
}

TEST_CASE("field and integrator reject bad systems") {
  FlowSystem sys;
  sys.d = 1;
  sys.lambda = 1.0;
  sys.pert = Symbol::from_value(1, 0.0, false, "value-only",
                                [](double, const std::array<double, 3>&, const std::array<double, 3>&) {
                                  return cd(0.0, 0.0);
                                });
  CHECK_THROWS_WITH_AS(hamiltonian_field(sys, 1.0, pp(0, 0, 0, 1, 0, 0)), doctest::Contains("derivatives"),
                       Error);
  FlowSystem bad;
  bad.d = 4;
  CHECK_THROWS_AS(hamiltonian_field(bad, 1.0, pp(0, 0, 0, 1, 0, 0)), Error);
  FlowSystem neg;
  neg.d = 2;
  neg.lambda = -1.0;
  CHECK_THROWS_AS(integrate_flow(neg, pp(0, 0, 0, 1, 0, 0), 1.0, 2.0), Error);
  FlowSystem flat;
  flat.d = 2;
  CHECK_THROWS_AS(integrate_flow(flat, pp(0, 0, 0, 1, 0, 0), 0.0, 2.0), Error);
  CHECK_THROWS_AS(integrate_flow(flat, pp(0, 0, 0, 1, 0, 0), 2.0, 2.0), Error);
  CHECK_THROWS_AS(integrate_flow(flat, pp(0, 0, 0, 1, 0, 0), 1.0, 2.0, 0.0), Error);
}

TEST_CASE("flat flow reproduces the closed form and conserves frequency bitwise") {
  FlowSystem sys;
  sys.d = 3;
  sys.lambda = 1.0;
  const PhaseTrajectory traj = integrate_flow(sys, pp(0, 0, 0, 1, 0, 0), 1.0, 10.0);
  const PhasePoint pt = traj.states.back();
  CHECK(pt.x[0] == doctest::Approx(9.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(std::abs(pt.x[1]) <= 1e-15);
  CHECK(pt.xi[0] == 1.0);
  CHECK(traj.times.back() == 10.0);
  CHECK(traj.times.size() == traj.states.size());
  CHECK(traj.times.size() == traj.derivs.size());

  auto g = oracle::rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    FlowSystem s2;
    s2.d = 1 + trial % 3;
    s2.lambda = (trial % 4 == 0) ? 16.0 : 1.0;
    PhasePoint p0;
    for (int i = 0; i < s2.d; ++i) {
      p0.x[std::size_t(i)] = oracle::urand(g, -3.0, 3.0);
      p0.xi[std::size_t(i)] = oracle::urand(g, -2.0, 2.0);
    }
    double a = oracle::urand(g, 0.5, 20.0), b = oracle::urand(g, 0.5, 20.0);
    if (a == b) b += 0.5;
    const PhaseTrajectory tr = integrate_flow(s2, p0, a, b);
    const std::array<double, 3> want = closed_flat_x(p0, s2.lambda, a, b);
    for (int i = 0; i < 3; ++i) {
      CHECK(std::abs(tr.states.back().x[std::size_t(i)] - want[std::size_t(i)]) <=
            1e-9 * std::max(1.0, std::abs(want[std::size_t(i)])));
      CHECK(tr.states.back().xi[std::size_t(i)] == p0.xi[std::size_t(i)]);
    }
  }
}

TEST_CASE("perturbed flow agrees with an independent fixed-step finite-difference route") {
  const MetricSpec spec = make_inv_sq_metric(2, 0.01);
  FlowSystem sys;
  sys.d = 2;
  sys.lambda = 1.0;
  sys.pert = metric_halfwave_perturbation(spec, 1.0);
  const PhasePoint p0 = pp(1.3, 0.2, 0, 0.9, 0.35, 0);

  // full Hamiltonian sqrt(lambda^-2 + g xi xi), differentiated by centered
  // differences of the plain metric evaluation
  auto ham = [&](double t, const std::array<double, 3>& x, const std::array<double, 3>& xi) {
    Eigen::Matrix3d g;
    metric_value(spec, t, x, g);
    double v = 1.0;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) v += g(i, j) * xi[std::size_t(i)] * xi[std::size_t(j)];
    return std::sqrt(v);
  };
  auto fd_field = [&](double t, const oracle::Y6& y) -> oracle::Y6 {
    const std::array<double, 3> x = {y[0], y[1], y[2]}, xi = {y[3], y[4], y[5]};
    oracle::Y6 f{};
    const double h = 1e-5;
    for (int i = 0; i < 2; ++i) {
      std::array<double, 3> kp = xi, km = xi, xp = x, xm = x;
      kp[std::size_t(i)] += h;
      km[std::size_t(i)] -= h;
      xp[std::size_t(i)] += h;
      xm[std::size_t(i)] -= h;
      f[std::size_t(i)] = (ham(t, x, kp) - ham(t, x, km)) / (2.0 * h);
      f[std::size_t(3 + i)] = -(ham(t, xp, xi) - ham(t, xm, xi)) / (2.0 * h);
    }
    return f;
  };

  const PhaseTrajectory traj = integrate_flow(sys, p0, 1.0, 10.0, 1e-12);
  const oracle::Y6 ref = oracle::rk4_fixed(fd_field, {1.3, 0.2, 0, 0.9, 0.35, 0}, 1.0, 10.0, 2000);
  CHECK(std::abs(traj.states.back().x[0] - ref[0]) <= 1e-8);
  CHECK(std::abs(traj.states.back().x[1] - ref[1]) <= 1e-8);
  CHECK(std::abs(traj.states.back().xi[0] - ref[3]) <= 1e-8);
  CHECK(std::abs(traj.states.back().xi[1] - ref[4]) <= 1e-8);
}

TEST_CASE("frequency drift along the perturbed flow stays of the metric amplitude") {
  const double eps = 0.01;
  const MetricSpec spec = make_inv_sq_metric(2, eps);
  FlowSystem sys;
  sys.d = 2;
  sys.lambda = 1.0;
  sys.pert = metric_halfwave_perturbation(spec, 1.0);
  const PhasePoint p0 = pp(1.3, 0.2, 0, 0.9, 0.35, 0);
  const PhaseTrajectory traj = integrate_flow(sys, p0, 1.0, 100.0);
  double worst = 0.0;
  for (const PhasePoint& p : traj.states) {
    const double dev = std::sqrt((p.xi[0] - p0.xi[0]) * (p.xi[0] - p0.xi[0]) +
                                 (p.xi[1] - p0.xi[1]) * (p.xi[1] - p0.xi[1]));
    worst = std::max(worst, dev);
  }
  const double C = worst / eps;
  MESSAGE("frequency drift / eps = " << C);
  CHECK(C > 0.0);
  CHECK(C <= 5.0);
}

TEST_CASE("integrating forward then backward returns the start") {
  const MetricSpec spec = make_inv_sq_metric(2, 0.01);
  FlowSystem sys;
  sys.d = 2;
  sys.lambda = 1.0;
  sys.pert = metric_halfwave_perturbation(spec, 1.0);
  const PhasePoint p0 = pp(0.4, -0.8, 0, 1.1, -0.3, 0);
  const double tol = 1e-10;
  const PhaseTrajectory fwd = integrate_flow(sys, p0, 1.0, 40.0, tol);
  const PhaseTrajectory bwd = integrate_flow(sys, fwd.states.back(), 40.0, 1.0, tol);
  const PhasePoint pb = bwd.states.back();
  double err = 0.0;
  for (int i = 0; i < 3; ++i) {
    err = std::max(err, std::abs(pb.x[std::size_t(i)] - p0.x[std::size_t(i)]));
    err = std::max(err, std::abs(pb.xi[std::size_t(i)] - p0.xi[std::size_t(i)]));
  }
  MESSAGE("round trip error = " << err);
  CHECK(err <= 10.0 * tol);
}

TEST_CASE("unreachable tolerance underflows the step size") {
  const MetricSpec spec = make_inv_sq_metric(2, 0.01);
  FlowSystem sys;
  sys.d = 2;
  sys.lambda = 1.0;
  sys.pert = metric_halfwave_perturbation(spec, 1.0);
  try {
    integrate_flow(sys, pp(1.0, 0.4, 0, 0.8, 0.1, 0), 1.0, 2.0, 1e-30);
    FAIL("expected a step underflow");
  } catch (const Error& e) {
    CHECK(e.code() == Err::numeric);
    CHECK(std::string(e.what()).find("underflow") != std::string::npos);
  }
}

TEST_CASE("flat jacobian: identity diagonal blocks, kinetic Hessian mixed block") {
  FlowSystem sys;
  sys.d = 2;
  sys.lambda = 1.0;
  const double s = 1.0, t = 10.0;
  const PhasePoint p0 = pp(0.3, -0.2, 0, 0.7, 0.4, 0);
  const FlowJacobian J = flow_jacobian(sys, p0, s, t);
  CHECK(J.forward_det == doctest::Approx(1.0).epsilon(1e-8));

  const JacobianResult kg = kg_jacobian_matrix(2, p0.xi, 1.0);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      const double id = (i == j) ? 1.0 : 0.0;
      CHECK(std::abs(J.mixed(i, j) - id) <= 1e-8);                  // dx_t/dx_s
      CHECK(std::abs(J.mixed(2 + i, j)) <= 1e-8);                   // dxi_s/dx_s
      CHECK(std::abs(J.mixed(2 + i, 2 + j) - id) <= 1e-8);          // dxi_s/dxi_t
      const double ref = (t - s) * kg.phi(i, j);
      CHECK(std::abs(J.mixed(i, 2 + j) - ref) <= 1e-8 * std::max(1.0, std::abs(ref)));
    }
  CHECK(J.ref_scale == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(J.ref_deviation <= 1e-8);
}

TEST_CASE("flat jacobian eigenstructure matches the kinetic Hessian at a coarse scale") {
  FlowSystem sys;
  sys.d = 3;
  sys.lambda = 4.0;
  const double s = 1.0, t = 10.0;
  const std::array<double, 3> xi = {0.48, 0.6, 0.64};
  const FlowJacobian J = flow_jacobian(sys, pp(0.1, 0.2, -0.3, xi[0], xi[1], xi[2]), s, t);
  const Eigen::MatrixXd blk = J.mixed.block(0, 3, 3, 3);
  const JacobianResult kg = kg_jacobian_matrix(3, xi, 4.0);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (blk + blk.transpose()));
  std::vector<double> got(es.eigenvalues().data(), es.eigenvalues().data() + 3);
  std::vector<double> want = kg.eigs;
  for (double& w : want) w *= (t - s);
  std::sort(want.begin(), want.end());
  for (int i = 0; i < 3; ++i) CHECK(got[std::size_t(i)] == doctest::Approx(want[std::size_t(i)]).epsilon(1e-8));

  // the smallest eigenvalue is the frequency direction
  const Eigen::Vector3d v = es.eigenvectors().col(0);
  const double q = norm3(xi);
  const double cosang = std::abs(v(0) * xi[0] + v(1) * xi[1] + v(2) * xi[2]) / q;
  CHECK(cosang >= 1.0 - 1e-8);
  CHECK(J.ref_scale == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(J.ref_deviation <= 1e-8);
}

TEST_CASE("mixed jacobian off-diagonal block scales linearly with the metric amplitude") {
  const double s = 1.0, t = 10.0;
  const PhasePoint p0 = pp(1.1, 0.3, 0, 0.8, 0.2, 0);
  std::vector<double> norms;
  for (double eps : {0.005, 0.01, 0.02}) {
    FlowSystem sys;
    sys.d = 2;
    sys.lambda = 1.0;
    sys.pert = metric_halfwave_perturbation(make_inv_sq_metric(2, eps), 1.0);
    const FlowJacobian J = flow_jacobian(sys, p0, s, t);
    norms.push_back(J.mixed.block(2, 0, 2, 2).norm());
    CHECK(J.forward_det == doctest::Approx(1.0).epsilon(1e-6));
  }
  MESSAGE("off-diagonal norms " << norms[0] << " " << norms[1] << " " << norms[2]);
  CHECK(norms[1] / norms[0] == doctest::Approx(2.0).epsilon(0.2));
  CHECK(norms[2] / norms[1] == doctest::Approx(2.0).epsilon(0.2));

  // started deeper in time, the accumulated sensitivity decays at least like 1/s
  for (double s0 : {1.0, 2.0, 4.0}) {
    FlowSystem sys;
    sys.d = 2;
    sys.lambda = 1.0;
    sys.pert = metric_halfwave_perturbation(make_inv_sq_metric(2, 0.01), 1.0);
    const PhasePoint q0 = pp(1.1 * s0, 0.3 * s0, 0, 0.8, 0.2, 0);
    const FlowJacobian J = flow_jacobian(sys, q0, s0, s0 + 9.0);
    const double C = J.mixed.block(2, 0, 2, 2).norm() * s0 / 0.01;
    MESSAGE("s0 = " << s0 << " scaled off-diagonal " << C);
    CHECK(C <= 8.0);
  }
}

TEST_CASE("inverse Lipschitz bounds for the frequency-to-position map in adapted coordinates") {
  const double s = 1.0, t = 10.0;
  auto g = oracle::rng(23);
  for (double lambda : {1.0, 4.0}) {
    FlowSystem sys;
    sys.d = 3;
    sys.lambda = lambda;
    auto place = [&](const std::array<double, 3>& xi) {
      return integrate_flow(sys, pp(0, 0, 0, xi[0], xi[1], xi[2]), s, t).states.back().x;
    };
    for (int trial = 0; trial < 10; ++trial) {
      std::array<double, 3> base = {oracle::urand(g, -1.0, 1.0), oracle::urand(g, -1.0, 1.0),
                                    oracle::urand(g, -1.0, 1.0)};
      const double bn = norm3(base);
      const double target = oracle::urand(g, 0.5, 2.0);
      for (double& c : base) c *= target / bn;
      // adapted frame: e3 along the base frequency
      const Eigen::Vector3d e3 = Eigen::Vector3d(base[0], base[1], base[2]).normalized();
      Eigen::Vector3d pick(1.0, 0.0, 0.0);
      if (std::abs(e3(0)) > 0.9) pick = Eigen::Vector3d(0.0, 1.0, 0.0);
      const Eigen::Vector3d e1 = e3.cross(pick).normalized();
      const Eigen::Vector3d e2 = e3.cross(e1).normalized();

      auto comp = [&](const std::array<double, 3>& v) -> std::array<double, 3> {
        const Eigen::Vector3d w(v[0], v[1], v[2]);
        return {w.dot(e1), w.dot(e2), w.dot(e3)};
      };
      auto sub = [](const std::array<double, 3>& a, const std::array<double, 3>& b) -> std::array<double, 3> {
        return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
      };

      // purely radial pair
      {
        std::array<double, 3> xa = base, xb = base;
        for (int i = 0; i < 3; ++i) {
          xa[std::size_t(i)] += 0.05 * e3(i);
          xb[std::size_t(i)] -= 0.05 * e3(i);
        }
        const std::array<double, 3> dxi = comp(sub(xa, xb));
        const std::array<double, 3> dx = comp(sub(place(xa), place(xb)));
        CHECK(std::abs(dxi[2]) <= 32.0 / t * lambda * lambda * std::abs(dx[2]));
      }
      // purely transversal pair
      {
        std::array<double, 3> xa = base, xb = base;
        for (int i = 0; i < 3; ++i) {
          xa[std::size_t(i)] += 0.05 * e1(i);
          xb[std::size_t(i)] -= 0.05 * e1(i);
        }
        const std::array<double, 3> dxi = comp(sub(xa, xb));
        const std::array<double, 3> dx = comp(sub(place(xa), place(xb)));
        CHECK(std::abs(dxi[0]) <= 8.0 / t * std::abs(dx[0]));
      }
      // generic pair, aggregated in the distorted norms
      {
        std::array<double, 3> xa = base, xb = base;
        for (int i = 0; i < 3; ++i) {
          const double d = oracle::urand(g, -0.05, 0.05);
          xa[std::size_t(i)] += d;
          xb[std::size_t(i)] -= d;
        }
        const std::array<double, 3> dxi = comp(sub(xa, xb));
        const std::array<double, 3> dx = comp(sub(place(xa), place(xb)));
        const double lhs = t * distorted_norm(dxi, 3, 1.0 / lambda);
        const double rhs = distorted_norm(dx, 3, lambda);
        CHECK(lhs <= 32.0 * rhs);
      }
    }
  }
}

TEST_CASE("damping weight: construction guards and the frozen point values") {
  const EpsProfile prof = make_eps_profile(0.01);
  CHECK_THROWS_AS(make_damping_symbol(0.0, prof), Error);
  CHECK_THROWS_AS(make_damping_symbol(1.0, prof, 0.0), Error);
  CHECK_THROWS_AS(make_damping_symbol(1.0, EpsProfile{}), Error);
  const DampingSymbol D = make_damping_symbol(1.0, prof);
  CHECK(D.c2 == 0.0625);

  // outgoing unit-frequency point deep in the admitted region
  CHECK(damping_symbol_eval(D, 100.0, {100.0, 0, 0}, {1.0, 0, 0}) == 0.0);
  // frequency far outside the band: full weight regardless of position
  CHECK(damping_symbol_eval(D, 16.0, {5.0, -3.0, 2.0}, {0, 100.0, 0}) ==
        doctest::Approx(0.125).epsilon(1e-15));
  // incoming: x antiparallel to xi
  for (double t : {4.0, 25.0}) {
    CHECK(damping_symbol_eval(D, t, {-t, 0, 0}, {1.0, 0, 0}) ==
          doctest::Approx(std::pow(t, -0.75)).epsilon(1e-15));
  }
  // b3 at the origin is pinned to zero and b5 already forces the full weight
  const std::array<double, 5> b0 = damping_factors(D, 9.0, {0, 0, 0}, {1.0, 0, 0});
  CHECK(b0[2] == 0.0);
  CHECK(b0[4] < 0.0);
  CHECK(damping_symbol_eval(D, 9.0, {0, 0, 0}, {1.0, 0, 0}) ==
        doctest::Approx(std::pow(9.0, -0.75)).epsilon(1e-15));

  CHECK_THROWS_AS(damping_symbol_eval(D, 0.5, {1.0, 0, 0}, {1.0, 0, 0}), Error);

  auto g = oracle::rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const double t = oracle::urand(g, 1.0, 200.0);
    const std::array<double, 3> x = {oracle::urand(g, -300.0, 300.0), oracle::urand(g, -300.0, 300.0),
                                     oracle::urand(g, -300.0, 300.0)};
    const std::array<double, 3> xi = {oracle::urand(g, -20.0, 20.0), oracle::urand(g, -20.0, 20.0),
                                      oracle::urand(g, -20.0, 20.0)};
    const double v = damping_symbol_eval(D, t, x, xi);
    CHECK(v >= 0.0);
    CHECK(v <= std::pow(t, -0.75) * (1.0 + 1e-15));
    const std::array<double, 5> b = damping_factors(D, t, x, xi);
    bool all_high = true, any_low = false;
    for (double bv : b) {
      all_high = all_high && bv >= 1.0;
      any_low = any_low || bv <= 0.0;
    }
    if (all_high) CHECK(v == 0.0);
    if (any_low) CHECK(v == doctest::Approx(std::pow(t, -0.75)).epsilon(1e-15));
  }
}

TEST_CASE("damping integral: closed form off the frequency band, zero along outgoing rays") {
  const DampingSymbol D = make_damping_symbol(1.0, make_eps_profile(0.01));
  FlowSystem sys;
  sys.d = 2;
  sys.lambda = 1.0;

  // |xi| = 100 keeps the weight pinned at sigma^{-3/4}
  PhaseTrajectory off = integrate_flow(sys, pp(0.5, 0, 0, 100.0, 0, 0), 1.0, 16.0);
  const std::vector<double>& psi = damping_integral(off, D);
  REQUIRE(psi.size() == off.times.size());
  for (std::size_t i = 0; i < psi.size(); ++i) {
    const double want = 4.0 * (std::pow(off.times[i], 0.25) - 1.0);
    CHECK(std::abs(psi[std::size_t(i)] - want) <= 1e-8 * std::max(1.0, want));
  }
  CHECK(psi.back() == doctest::Approx(4.0).epsilon(1e-9));

  // outgoing ray from the admitted region: the weight vanishes identically
  PhaseTrajectory ray = integrate_flow(sys, pp(4.0, 0, 0, 1.0, 0, 0), 4.0, 100.0);
  const std::vector<double>& zero = damping_integral(ray, D);
  for (double v : zero) CHECK(v == 0.0);

  for (std::size_t i = 1; i < psi.size(); ++i) CHECK(psi[std::size_t(i)] >= psi[std::size_t(i) - 1]);

  PhaseTrajectory empty;
  CHECK_THROWS_AS(damping_integral(empty, D), Error);
}

TEST_CASE("monotone report: flat outgoing trajectory is vacuous") {
  const DampingSymbol D = make_damping_symbol(1.0, make_eps_profile(0.01));
  FlowSystem sys;
  sys.d = 2;
  sys.lambda = 1.0;
  std::vector<PhaseTrajectory> trajs;
  trajs.push_back(integrate_flow(sys, pp(4.0, 0, 0, 1.0, 0, 0), 4.0, 64.0));
  const DampingMonotoneReport rep = verify_damping_monotone(D, sys, trajs);
  CHECK(rep.trajectories == 1);
  CHECK(rep.vacuous);
  CHECK(rep.slope_samples == 0);
  CHECK(rep.all_pass);
  CHECK(rep.max_profile_value == 0.0);
}

TEST_CASE("monotone report: grazing start reproduces the outgoing-detector growth rate") {
  const DampingSymbol D = make_damping_symbol(1.0, make_eps_profile(0.01));
  FlowSystem sys;
  sys.d = 2;
  sys.lambda = 1.0;
  const double t0 = 2.0, r = 2.0, q = 1.0;
  const double eta = std::pow(2.0, -13.0);
  const double c = -std::sqrt(0.5) * (1.0 - eta);  // cos of the x-xi angle, just inside the cone
  const double sgn = std::sqrt(1.0 - c * c);
  const PhasePoint p0 = pp(r, 0, 0, q * c, q * sgn, 0);

  const std::array<double, 5> b = damping_factors(D, t0, p0.x, p0.xi);
  REQUIRE(b[2] > 0.0);
  REQUIRE(b[2] < 1.0);

  std::vector<PhaseTrajectory> trajs;
  trajs.push_back(integrate_flow(sys, p0, t0, 2.5));
  const DampingMonotoneReport rep = verify_damping_monotone(D, sys, trajs);
  CHECK(rep.factor_samples[2] >= 1);
  CHECK(!rep.vacuous);
  CHECK(rep.slopes_pass);
  CHECK(rep.min_slope_ratio[2] >= 1.0);

  // measured growth against the explicit rate of the outgoing detector
  const double dot = r * q * c;
  const double br = std::sqrt(1.0 + q * q);
  const double display = 4096.0 * (r * r * q * q - dot * dot) / (r * r * r * br);
  CHECK(rep.min_slope_ratio[2] == doctest::Approx(display * t0 / 2.0).epsilon(1e-3));
  CHECK(rep.profile_pass);
  CHECK(rep.doubling_pass);
}

TEST_CASE("perturbed family: growth, profile decay, and doubling all pass") {
  const double eps = 0.01;
  // shells starting at s = 1 keep the cumulative e(t) small at the early park
  // times, so the low-frequency threshold stays above the admitted band floor
  const EpsProfile prof = make_eps_profile(eps, 2.0, 0, 40);
  const DampingSymbol D = make_damping_symbol(1.0, prof);
  const MetricSpec spec = make_inv_sq_metric(3, eps);
  FlowSystem sys;
  sys.d = 3;
  sys.lambda = 1.0;
  sys.pert = metric_halfwave_perturbation(spec, 1.0);

  std::vector<PhaseTrajectory> trajs;
  const std::array<double, 3> u = {0.6, 0.64, 0.48};

  // park each threshold argument inside its active window at the start
  {  // b1: frequency at the upper band edge
    const double t0 = 2.0;
    const double q = std::sqrt(128.0) + prof.e(t0) - 0.5 * prof.eps(t0);
    const PhasePoint p0 = pp(t0 * u[0], t0 * u[1], t0 * u[2], q * u[0], q * u[1], q * u[2]);
    const std::array<double, 5> b = damping_factors(D, t0, p0.x, p0.xi);
    REQUIRE(b[0] > 0.0);
    REQUIRE(b[0] < 1.0);
    trajs.push_back(integrate_flow(sys, p0, t0, 2.5 * t0));
  }
  {  // b2: frequency at the lower band edge, still inside the admitted region
    double t0 = 2.0;
    double q = std::sqrt(2.0) / 16.0 - D.c2 * prof.e(t0) + 0.5 * prof.eps(t0);
    if (q <= 1.0 / 16.0 + 2e-3) {
      t0 = 1.25;
      q = std::sqrt(2.0) / 16.0 - D.c2 * prof.e(t0) + 0.5 * prof.eps(t0);
    }
    REQUIRE(q > 1.0 / 16.0 + 1e-4);
    const PhasePoint p0 = pp(t0 * u[0], t0 * u[1], t0 * u[2], q * u[0], q * u[1], q * u[2]);
    const std::array<double, 5> b = damping_factors(D, t0, p0.x, p0.xi);
    REQUIRE(b[1] > 0.0);
    REQUIRE(b[1] < 1.0);
    trajs.push_back(integrate_flow(sys, p0, t0, 2.5 * t0));
  }
  {  // b3: grazing the outgoing cone
    const double t0 = 2.0, r = 2.0;
    const double c = -std::sqrt(0.5) * (1.0 - std::pow(2.0, -13.0));
    const double sgn = std::sqrt(1.0 - c * c);
    const PhasePoint p0 = pp(r, 0, 0, c, sgn, 0);
    const std::array<double, 5> b = damping_factors(D, t0, p0.x, p0.xi);
    REQUIRE(b[2] > 0.0);
    REQUIRE(b[2] < 1.0);
    trajs.push_back(integrate_flow(sys, p0, t0, 2.5 * t0));
  }
  {  // b4: position at the outer edge
    const double t0 = 1.5, r = 63.5 * t0;
    const PhasePoint p0 = pp(r * u[0], r * u[1], r * u[2], u[0], u[1], u[2]);
    const std::array<double, 5> b = damping_factors(D, t0, p0.x, p0.xi);
    REQUIRE(b[3] > 0.0);
    REQUIRE(b[3] < 1.0);
    trajs.push_back(integrate_flow(sys, p0, t0, 2.5 * t0));
  }
  {  // b5: inner edge, direction partially incoming but inside the cone
    const double t0 = 2.0, cth = -0.65;
    const double r = t0 * (0.03125 + 0.5 / 1024.0) / (1.0 + cth);
    const double sth = std::sqrt(1.0 - cth * cth);
    const PhasePoint p0 = pp(r, 0, 0, cth, sth, 0);
    const std::array<double, 5> b = damping_factors(D, t0, p0.x, p0.xi);
    REQUIRE(b[4] > 0.0);
    REQUIRE(b[4] < 1.0);
    trajs.push_back(integrate_flow(sys, p0, t0, 2.5 * t0));
  }
  trajs.push_back(integrate_flow(sys, pp(2.0 * u[0], 2.0 * u[1], 2.0 * u[2], u[0], u[1], u[2]), 2.0, 8.0));

  const DampingMonotoneReport rep = verify_damping_monotone(D, sys, trajs, 0.1);
  CHECK(rep.trajectories == 6);
  CHECK(!rep.vacuous);
  for (int j = 0; j < 5; ++j) CHECK(rep.factor_samples[std::size_t(j)] >= 1);
  MESSAGE("min growth ratio " << rep.min_ratio << ", doubling pairs " << rep.doubling_pairs);
  CHECK(rep.slopes_pass);
  CHECK(rep.min_ratio >= 0.9);
  CHECK(rep.profile_pass);
  CHECK(rep.doubling_pairs >= 1);
  CHECK(rep.doubling_pass);
  CHECK(rep.all_pass);

  // the running damping integral never decreases
  for (PhaseTrajectory& tr : trajs) {
    const std::vector<double>& psi = damping_integral(tr, D);
    for (std::size_t i = 1; i < psi.size(); ++i) CHECK(psi[std::size_t(i)] >= psi[std::size_t(i) - 1]);
  }
}

TEST_CASE("trajectory table round-trips through csv") {
  const DampingSymbol D = make_damping_symbol(1.0, make_eps_profile(0.01));
  FlowSystem sys;
  sys.d = 2;
  sys.lambda = 1.0;
  PhaseTrajectory traj = integrate_flow(sys, pp(2.0, 0.5, 0, 0.9, 0.1, 0), 2.0, 12.0);
  damping_integral(traj, D);
  const std::string path = "flow_traj_test.csv";
  dump_trajectory_csv(traj, D, path);
  const Table tb = read_table_csv(path);
  REQUIRE(tb.columns.size() == 12);
  CHECK(tb.columns[0] == "t");
  CHECK(tb.columns[1] == "x1");
  CHECK(tb.columns[3] == "xi1");
  CHECK(tb.columns[5] == "Psi");
  CHECK(tb.columns[6] == "b1");
  CHECK(tb.columns[11] == "B");
  REQUIRE(tb.rows.size() == traj.times.size());
  const std::size_t mid = tb.rows.size() / 2;
  CHECK(tb.rows[mid][0] == traj.times[mid]);
  CHECK(tb.rows[mid][1] == traj.states[mid].x[0]);
  CHECK(tb.rows[mid][5] == traj.psi[mid]);
  const double v = damping_symbol_eval(D, traj.times[mid], traj.states[mid]);
  CHECK(tb.rows[mid][11] == v);
  std::remove(path.c_str());
}
