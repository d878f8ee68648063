#include "core/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "core/bump.hpp"
#include "core/io.hpp"

namespace displab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_system(const FlowSystem& sys) {
  require(sys.d >= 1 && sys.d <= 3, Err::invalid_argument, "flow: dimension must be 1, 2 or 3");
  require(sys.lambda > 0.0, Err::invalid_argument, "flow: lambda must be positive");
  if (sys.pert.valid()) {
    require(sys.pert.dim() == sys.d, Err::invalid_argument, "flow: perturbation symbol dimension mismatch");
    require(sys.pert.arity() == SymbolArity::scalar, Err::invalid_argument,
            "flow: perturbation symbol must be scalar");
    require(sys.pert.max_deriv() >= 1, Err::invalid_argument,
            "flow: perturbation symbol carries no derivatives");
  }
}

// unvalidated field; callers go through check_system once
FlowField eval_field(const FlowSystem& sys, double t, const PhasePoint& p) {
  FlowField f;
  const double br = bracket_lambda(p.xi, sys.lambda);
  for (int i = 0; i < sys.d; ++i) f.xdot[std::size_t(i)] = p.xi[std::size_t(i)] / br;
  if (sys.pert.valid()) {
    const Jet j = sys.pert.jet(t, p.x, p.xi, 1);
    for (int i = 0; i < sys.d; ++i) {
      MIdx ax{}, axi{};
      ax[std::size_t(i)] = 1;
      axi[std::size_t(sys.d + i)] = 1;
      f.xdot[std::size_t(i)] += j.deriv(axi);
      f.xidot[std::size_t(i)] -= j.deriv(ax);
    }
  }
  return f;
}

using Y6 = std::array<double, 6>;

Y6 pack(const PhasePoint& p) { return {p.x[0], p.x[1], p.x[2], p.xi[0], p.xi[1], p.xi[2]}; }

PhasePoint unpack(const Y6& y) {
  PhasePoint p;
  p.x = {y[0], y[1], y[2]};
  p.xi = {y[3], y[4], y[5]};
  return p;
}

Y6 fld6(const FlowSystem& sys, double t, const Y6& y) {
  const FlowField f = eval_field(sys, t, unpack(y));
  return {f.xdot[0], f.xdot[1], f.xdot[2], f.xidot[0], f.xidot[1], f.xidot[2]};
}

Y6 axpy(const Y6& y, double a, const Y6& k) {
  Y6 o;
  for (int i = 0; i < 6; ++i) o[std::size_t(i)] = y[std::size_t(i)] + a * k[std::size_t(i)];
  return o;
}

Y6 rk4_step(const FlowSystem& sys, double t, const Y6& y, double h) {
  const Y6 k1 = fld6(sys, t, y);
  const Y6 k2 = fld6(sys, t + 0.5 * h, axpy(y, 0.5 * h, k1));
  const Y6 k3 = fld6(sys, t + 0.5 * h, axpy(y, 0.5 * h, k2));
  const Y6 k4 = fld6(sys, t + h, axpy(y, h, k3));
  Y6 o;
  for (int i = 0; i < 6; ++i)
    o[std::size_t(i)] = y[std::size_t(i)] + h / 6.0 *
                            (k1[std::size_t(i)] + 2.0 * k2[std::size_t(i)] + 2.0 * k3[std::size_t(i)] +
                             k4[std::size_t(i)]);
  return o;
}

double max_abs(const Y6& y) {
  double m = 0.0;
  for (double v : y) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace

double bracket_lambda(const std::array<double, 3>& xi, double lambda) {
  require(lambda > 0.0, Err::invalid_argument, "flow: lambda must be positive");
  return std::sqrt(1.0 / (lambda * lambda) + xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]);
}

Symbol metric_halfwave_perturbation(const MetricSpec& spec, double lambda) {
  require(lambda > 0.0, Err::invalid_argument, "flow: lambda must be positive");
  const int d = spec.dim();
  const double m2 = 1.0 / (lambda * lambda);
  Symbol::JetFn jfn = [spec, m2, d](double t, const std::array<double, 3>& x, const std::array<double, 3>& xi,
                                    const JetSpace& sp) -> Jet {
    std::array<Jet, 9> h;
    eval_metric_jets(spec, t, x, sp.order(), h);
    const JetSpace& msp = h[0].space();
    // re-expand a (t,x)-jet as an (x,xi)-jet at frozen t: pure-x coefficients
    // carry over, time coefficients drop
    auto lift = [&](const Jet& src) {
      Jet out(sp, 0.0);
      for (int pos = 0; pos < msp.size(); ++pos) {
        const MIdx& m = msp.index(pos);
        if (m[0] != 0) continue;
        MIdx a{};
        for (int i = 0; i < d; ++i) a[std::size_t(i)] = m[std::size_t(1 + i)];
        const int tp = sp.position(a);
        if (tp >= 0) out.coeffs()[std::size_t(tp)] = src.coeffs()[std::size_t(pos)];
      }
      return out;
    };
    std::array<Jet, 3> xj;
    for (int i = 0; i < d; ++i) xj[std::size_t(i)] = Jet::variable(sp, d + i, xi[std::size_t(i)]);
    Jet flat(sp, m2);
    for (int i = 0; i < d; ++i) flat += xj[std::size_t(i)] * xj[std::size_t(i)];
    Jet full = flat;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) full += lift(h[std::size_t(3 * i + j)]) * xj[std::size_t(i)] * xj[std::size_t(j)];
    return sqrt(full) - sqrt(flat);
  };
  Symbol::ValueFn vfn = [spec, m2, d](double t, const std::array<double, 3>& x,
                                      const std::array<double, 3>& xi) -> cd {
    Eigen::Matrix3d g;
    metric_value(spec, t, x, g);
    double flat = m2, curved = m2;
    for (int i = 0; i < d; ++i) {
      flat += xi[std::size_t(i)] * xi[std::size_t(i)];
      for (int j = 0; j < d; ++j) curved += g(i, j) * xi[std::size_t(i)] * xi[std::size_t(j)];
    }
    return std::sqrt(curved) - std::sqrt(flat);
  };
  return Symbol::from_jets(d, 1.0, spec.max_order(), !spec.time_dependent() && spec.lumps().empty() && !spec.series(),
                           "halfwave-drift[" + spec.name() + "]", jfn, vfn);
}

FlowField hamiltonian_field(const FlowSystem& sys, double t, const PhasePoint& p) {
  check_system(sys);
  return eval_field(sys, t, p);
}

PhaseTrajectory integrate_flow(const FlowSystem& sys, const PhasePoint& p0, double s, double t, double tol) {
  check_system(sys);
  require(s > 0.0 && t > 0.0, Err::invalid_argument, "flow: integration times must be positive");
  require(s != t, Err::invalid_argument, "flow: empty integration interval");
  require(tol > 0.0, Err::invalid_argument, "flow: tolerance must be positive");

  PhaseTrajectory out;
  out.d = sys.d;
  out.lambda = sys.lambda;
  out.tol = tol;

  const double dir = (t > s) ? 1.0 : -1.0;
  const double span = std::abs(t - s);
  auto hcap = [&](double tc) { return std::min(span / 8.0, 0.2 * tc); };

  double tc = s;
  Y6 y = pack(p0);
  auto record = [&](double tv, const Y6& yv) {
    out.times.push_back(tv);
    out.states.push_back(unpack(yv));
    out.derivs.push_back(eval_field(sys, tv, out.states.back()));
  };
  record(tc, y);

  double h = dir * std::min(hcap(s), span / 64.0);
  constexpr int kStepBudget = 1000000;
  while (true) {
    const double rem = t - tc;
    if (dir * rem <= 0.0) break;
    if (std::abs(h) > std::abs(rem))
      h = rem;
    else if (std::abs(h) > hcap(tc))
      h = dir * hcap(tc);
    const Y6 y1 = rk4_step(sys, tc, y, h);
    Y6 y2 = rk4_step(sys, tc, y, 0.5 * h);
    y2 = rk4_step(sys, tc + 0.5 * h, y2, 0.5 * h);
    Y6 diff;
    for (int i = 0; i < 6; ++i) diff[std::size_t(i)] = (y2[std::size_t(i)] - y1[std::size_t(i)]) / 15.0;
    const double est = max_abs(diff);
    const double scale = std::max({1.0, max_abs(y), max_abs(y2)});
    if (est <= tol * scale) {
      y = axpy(y2, 1.0, diff);
      tc = (h == rem) ? t : tc + h;
      record(tc, y);
      ++out.steps_taken;
      require(out.steps_taken < kStepBudget, Err::budget, "flow: integration exceeds the step budget");
      const double fac = (est == 0.0) ? 4.0 : std::clamp(0.9 * std::pow(tol * scale / est, 0.2), 0.2, 4.0);
      h *= fac;
    } else {
      ++out.steps_rejected;
      const double fac = std::clamp(0.9 * std::pow(tol * scale / est, 0.2), 0.1, 0.5);
      h *= fac;
      require(std::abs(h) >= 1e-13 * std::max(1.0, std::abs(tc)), Err::numeric,
              "flow: step underflow at t=" + fmt_double(tc));
    }
  }
  out.times.back() = t;
  return out;
}

FlowJacobian flow_jacobian(const FlowSystem& sys, const PhasePoint& p0, double s, double t) {
  check_system(sys);
  const int d = sys.d;
  const double jtol = 1e-12;
  auto endpoint = [&](const PhasePoint& p) -> Y6 {
    return pack(integrate_flow(sys, p, s, t, jtol).states.back());
  };
  auto shifted = [&](int var, double h) {
    PhasePoint q = p0;
    if (var < d)
      q.x[std::size_t(var)] += h;
    else
      q.xi[std::size_t(var - d)] += h;
    return endpoint(q);
  };

  FlowJacobian J;
  J.d = d;
  J.s = s;
  J.t = t;
  J.forward.resize(2 * d, 2 * d);
  const PhaseTrajectory base = integrate_flow(sys, p0, s, t, jtol);
  const PhasePoint pt = base.states.back();

  for (int v = 0; v < 2 * d; ++v) {
    const double ref = (v < d) ? p0.x[std::size_t(v)] : p0.xi[std::size_t(v - d)];
    const double h0 = 1e-3 * std::max(1.0, std::abs(ref));
    Y6 dh, dh2;
    {
      const Y6 a = shifted(v, h0), b = shifted(v, -h0);
      const Y6 a2 = shifted(v, 0.5 * h0), b2 = shifted(v, -0.5 * h0);
      for (int i = 0; i < 6; ++i) {
        dh[std::size_t(i)] = (a[std::size_t(i)] - b[std::size_t(i)]) / (2.0 * h0);
        dh2[std::size_t(i)] = (a2[std::size_t(i)] - b2[std::size_t(i)]) / h0;
      }
    }
    for (int r = 0; r < 2 * d; ++r) {
      const int slot = (r < d) ? r : 3 + (r - d);
      const double val = (4.0 * dh2[std::size_t(slot)] - dh[std::size_t(slot)]) / 3.0;
      require(std::isfinite(val), Err::numeric,
              "flow: jacobian finite differences diverged (non-smooth flow region)");
      J.forward(r, v) = val;
    }
  }
  J.forward_det = J.forward.determinant();

  const Eigen::MatrixXd A = J.forward.topLeftCorner(d, d);
  const Eigen::MatrixXd B = J.forward.topRightCorner(d, d);
  const Eigen::MatrixXd C = J.forward.bottomLeftCorner(d, d);
  const Eigen::MatrixXd D = J.forward.bottomRightCorner(d, d);
  require(std::abs(D.determinant()) > 1e-10, Err::numeric,
          "flow: jacobian xi_t/xi_s block is numerically singular");
  const Eigen::MatrixXd Dinv = D.inverse();
  J.mixed.resize(2 * d, 2 * d);
  J.mixed.topLeftCorner(d, d) = A - B * Dinv * C;
  J.mixed.topRightCorner(d, d) = B * Dinv;
  J.mixed.bottomLeftCorner(d, d) = -Dinv * C;
  J.mixed.bottomRightCorner(d, d) = Dinv;

  J.mixed_ref = (t - s) * kg_jacobian_matrix(d, pt.xi, sys.lambda).phi;
  const Eigen::MatrixXd blk = J.mixed.topRightCorner(d, d);
  const double den = J.mixed_ref.squaredNorm();
  J.ref_scale = (blk.cwiseProduct(J.mixed_ref)).sum() / den;
  J.ref_deviation = (blk - J.ref_scale * J.mixed_ref).norm() / J.mixed_ref.norm();
  return J;
}

DampingSymbol make_damping_symbol(double lambda, const EpsProfile& prof, double c2) {
  require(lambda > 0.0, Err::invalid_argument, "damping: lambda must be positive");
  require(c2 > 0.0, Err::invalid_argument, "damping: b2 offset coefficient must be positive");
  require(prof.budget() > 0.0, Err::invalid_argument, "damping: needs a normalized scale profile");
  DampingSymbol D;
  D.lambda = lambda;
  D.prof = prof;
  D.c2 = c2;
  return D;
}

std::array<double, 5> damping_factors(const DampingSymbol& D, double t, const std::array<double, 3>& x,
                                      const std::array<double, 3>& xi) {
  require(t >= 1.0, Err::invalid_argument, "damping: the weight is defined for t >= 1");
  const double r = std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
  const double q = std::sqrt(xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]);
  const double dot = x[0] * xi[0] + x[1] * xi[1] + x[2] * xi[2];
  const double eps = D.prof.eps(t);
  const double e = D.prof.e(t);
  std::array<double, 5> b;
  b[0] = (std::sqrt(128.0) + e - q) / eps;
  b[1] = (q - std::sqrt(2.0) / 16.0 + D.c2 * e) / eps;
  b[2] = (r > 0.0) ? (std::sqrt(0.5) * r * q + dot) / (r / 4096.0) : 0.0;
  b[3] = (64.0 * t - r) / t;
  b[4] = (r * q - 0.03125 * t * q + dot) / (t / 1024.0);
  return b;
}

double damping_symbol_eval(const DampingSymbol& D, double t, const std::array<double, 3>& x,
                           const std::array<double, 3>& xi) {
  const std::array<double, 5> b = damping_factors(D, t, x, xi);
  double prod = 1.0;
  for (double v : b) prod *= smooth_step(v);
  return std::pow(t, -0.75) * (1.0 - prod);
}

double damping_symbol_eval(const DampingSymbol& D, double t, const PhasePoint& p) {
  return damping_symbol_eval(D, t, p.x, p.xi);
}

namespace {

// cubic Hermite state between two recorded samples
Y6 herm_state(const PhaseTrajectory& traj, std::size_t i, double sigma) {
  const double t0 = traj.times[i], t1 = traj.times[i + 1];
  const double h = t1 - t0, u = (sigma - t0) / h;
  const double h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
  const double h10 = u * (1.0 - u) * (1.0 - u);
  const double h01 = u * u * (3.0 - 2.0 * u);
  const double h11 = u * u * (u - 1.0);
  const Y6 y0 = {traj.states[i].x[0],      traj.states[i].x[1],      traj.states[i].x[2],
                 traj.states[i].xi[0],     traj.states[i].xi[1],     traj.states[i].xi[2]};
  const Y6 y1 = {traj.states[i + 1].x[0],  traj.states[i + 1].x[1],  traj.states[i + 1].x[2],
                 traj.states[i + 1].xi[0], traj.states[i + 1].xi[1], traj.states[i + 1].xi[2]};
  const Y6 f0 = {traj.derivs[i].xdot[0],      traj.derivs[i].xdot[1],      traj.derivs[i].xdot[2],
                 traj.derivs[i].xidot[0],     traj.derivs[i].xidot[1],     traj.derivs[i].xidot[2]};
  const Y6 f1 = {traj.derivs[i + 1].xdot[0],  traj.derivs[i + 1].xdot[1],  traj.derivs[i + 1].xdot[2],
                 traj.derivs[i + 1].xidot[0], traj.derivs[i + 1].xidot[1], traj.derivs[i + 1].xidot[2]};
  Y6 y;
  for (int k = 0; k < 6; ++k)
    y[std::size_t(k)] = h00 * y0[std::size_t(k)] + h * h10 * f0[std::size_t(k)] + h01 * y1[std::size_t(k)] +
                        h * h11 * f1[std::size_t(k)];
  return y;
}

template <class F>
double simpson_rec(const F& f, double a, double b, double fa, double fm, double fb, double whole, double tol,
                   int depth) {
  const double m = 0.5 * (a + b);
  const double flm = f(0.5 * (a + m)), frm = f(0.5 * (m + b));
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol)
    return left + right + (left + right - whole) / 15.0;
  return simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

template <class F>
double simpson_adaptive(const F& f, double a, double b, double tol) {
  if (b <= a) return 0.0;
  const double fa = f(a), fm = f(0.5 * (a + b)), fb = f(b);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_rec(f, a, b, fa, fm, fb, whole, tol, 20);
}

}  // namespace

const std::vector<double>& damping_integral(PhaseTrajectory& traj, const DampingSymbol& D) {
  require(!traj.times.empty(), Err::invalid_argument, "damping: trajectory has no samples");
  require(traj.times.size() == traj.states.size() && traj.times.size() == traj.derivs.size(),
          Err::invalid_argument, "damping: trajectory sample arrays disagree");
  for (std::size_t i = 1; i < traj.times.size(); ++i)
    require(traj.times[i] > traj.times[i - 1], Err::invalid_argument,
            "damping: the integral needs a forward-in-time trajectory");
  traj.psi.assign(traj.times.size(), 0.0);
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < traj.times.size(); ++i) {
    const double lo = std::max(traj.times[i], 1.0), hi = traj.times[i + 1];
    if (hi > lo) {
      auto g = [&](double sigma) {
        const Y6 y = herm_state(traj, i, sigma);
        return damping_symbol_eval(D, sigma, unpack(y));
      };
      acc += simpson_adaptive(g, lo, hi, 1e-12 * (1.0 + (hi - lo)));
    }
    traj.psi[i + 1] = acc;
  }
  return traj.psi;
}

DampingMonotoneReport verify_damping_monotone(const DampingSymbol& D, const FlowSystem& sys,
                                              const std::vector<PhaseTrajectory>& trajs, double rel_tol) {
  check_system(sys);
  require(rel_tol > 0.0, Err::invalid_argument, "damping: relative tolerance must be positive");
  DampingMonotoneReport rep;
  rep.min_slope_ratio.fill(kInf);
  rep.min_ratio = kInf;
  for (const PhaseTrajectory& traj : trajs) {
    require(traj.d == sys.d, Err::invalid_argument, "damping: trajectory dimension mismatch");
    ++rep.trajectories;
    double prev_profile = -kInf;
    for (std::size_t i = 0; i < traj.times.size(); ++i) {
      const double t = traj.times[i];
      if (t < 1.0) continue;
      const PhasePoint& p = traj.states[i];
      const double v = std::pow(t, 0.75) * damping_symbol_eval(D, t, p);
      rep.max_profile_value = std::max(rep.max_profile_value, v);
      if (prev_profile > -kInf) rep.max_profile_increase = std::max(rep.max_profile_increase, v - prev_profile);
      prev_profile = v;

      const double r = std::sqrt(p.x[0] * p.x[0] + p.x[1] * p.x[1] + p.x[2] * p.x[2]);
      const double q = std::sqrt(p.xi[0] * p.xi[0] + p.xi[1] * p.xi[1] + p.xi[2] * p.xi[2]);
      const double dot = p.x[0] * p.xi[0] + p.x[1] * p.xi[1] + p.x[2] * p.xi[2];
      const bool in_region = q > 1.0 / 16.0 && q < 16.0 && r > t / 64.0 && r < 64.0 * t &&
                             dot > -std::sqrt(0.5) * r * q;
      if (in_region) {
        const std::array<double, 5> b = damping_factors(D, t, p.x, p.xi);
        bool need = false;
        for (double bv : b) need = need || (bv >= 0.0 && bv <= 1.0);
        if (need) {
          const double delta = 1e-4 * t;
          const Y6 y0 = pack(p);
          const Y6 yp = rk4_step(sys, t, y0, delta);
          const Y6 ym = rk4_step(sys, t, y0, -delta);
          const PhasePoint pp = unpack(yp), pm = unpack(ym);
          const std::array<double, 5> bp = damping_factors(D, t + delta, pp.x, pp.xi);
          const std::array<double, 5> bm = damping_factors(D, t - delta, pm.x, pm.xi);
          for (int jf = 0; jf < 5; ++jf) {
            if (b[std::size_t(jf)] < 0.0 || b[std::size_t(jf)] > 1.0) continue;
            const double slope = (bp[std::size_t(jf)] - bm[std::size_t(jf)]) / (2.0 * delta);
            const double ratio = slope * t / 2.0;
            rep.min_slope_ratio[std::size_t(jf)] = std::min(rep.min_slope_ratio[std::size_t(jf)], ratio);
            rep.min_ratio = std::min(rep.min_ratio, ratio);
            ++rep.factor_samples[std::size_t(jf)];
            ++rep.slope_samples;
          }
        }
      }

      if (v > 1e-9 && v < 1.0 - 1e-9) {
        const PhaseTrajectory hop = integrate_flow(sys, p, t, 2.0 * t, traj.tol);
        const double v2 = damping_symbol_eval(D, 2.0 * t, hop.states.back());
        ++rep.doubling_pairs;
        rep.max_doubling_value = std::max(rep.max_doubling_value, v2);
      }
    }
  }
  rep.vacuous = rep.slope_samples == 0;
  rep.slopes_pass = rep.vacuous || rep.min_ratio >= 1.0 - rel_tol;
  rep.profile_pass = rep.max_profile_increase <= rel_tol * std::max(rep.max_profile_value, 1e-6);
  rep.doubling_pass = rep.doubling_pairs == 0 || rep.max_doubling_value <= 1e-9;
  rep.all_pass = rep.slopes_pass && rep.profile_pass && rep.doubling_pass;
  return rep;
}

void dump_trajectory_csv(const PhaseTrajectory& traj, const DampingSymbol& D, const std::string& path) {
  require(!traj.times.empty(), Err::invalid_argument, "trajectory dump: no samples");
  require(traj.times.front() >= 1.0, Err::invalid_argument,
          "trajectory dump: damping columns need sample times >= 1");
  PhaseTrajectory work = traj;
  if (work.psi.size() != work.times.size()) damping_integral(work, D);
  Table tb;
  tb.columns.push_back("t");
  for (int i = 0; i < work.d; ++i) tb.columns.push_back("x" + std::to_string(i + 1));
  for (int i = 0; i < work.d; ++i) tb.columns.push_back("xi" + std::to_string(i + 1));
  tb.columns.push_back("Psi");
  for (int j = 0; j < 5; ++j) tb.columns.push_back("b" + std::to_string(j + 1));
  tb.columns.push_back("B");
  for (std::size_t i = 0; i < work.times.size(); ++i) {
    std::vector<double> row;
    row.push_back(work.times[i]);
    for (int k = 0; k < work.d; ++k) row.push_back(work.states[i].x[std::size_t(k)]);
    for (int k = 0; k < work.d; ++k) row.push_back(work.states[i].xi[std::size_t(k)]);
    row.push_back(work.psi[i]);
    const std::array<double, 5> b = damping_factors(D, work.times[i], work.states[i].x, work.states[i].xi);
    for (double bv : b) row.push_back(bv);
    row.push_back(damping_symbol_eval(D, work.times[i], work.states[i]));
    tb.rows.push_back(std::move(row));
  }
  write_table_csv(tb, path);
}

}  // namespace displab
