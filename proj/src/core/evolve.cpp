#include "core/evolve.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>

#include "core/bump.hpp"
#include "core/common.hpp"
#include "core/measure.hpp"
#include "core/phasespace.hpp"

namespace displab {

namespace {

void check_config(const PropagatorConfig& cfg, const Grid& g) {
  require(g.d >= 1 && g.n > 0, Err::invalid_argument, "propagator: empty grid");
  require(cfg.spec.dim() == g.d, Err::invalid_argument, "propagator: metric dimension does not match the grid");
  require(cfg.M > 0.0 && std::isfinite(cfg.M), Err::invalid_argument, "propagator: mass must be positive");
  require(cfg.dt > 0.0 && std::isfinite(cfg.dt), Err::invalid_argument, "propagator: time step must be positive");
  // group speed stays below 1, so one step should not cross a cell
  require(cfg.dt <= g.dx() * (1.0 + 1e-12), Err::invalid_argument, "propagator: time step exceeds the grid spacing");
  require(cfg.window_lo >= 0.0, Err::invalid_argument, "propagator: window floor must be nonnegative");
  require(cfg.window_hi > cfg.window_lo, Err::invalid_argument, "propagator: window must have positive width");
  require(cfg.fbi_scale > 0.0 && std::isfinite(cfg.fbi_scale), Err::invalid_argument,
          "propagator: transform scale must be positive");
}

double norm3(const std::array<double, 3>& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

// Frozen-coefficient tables of the perturbation operator
//   P = 1/2 sum_{jk} [ c_jk(x) m_jk(D) + m_jk(D) c_jk(x) ],
//   m_jk(xi) = W(|xi|) xi_j xi_k / (2 sqrt(M^2+|xi|^2)),
// with c = g - delta at the frozen time. Symmetric pairs are folded.
struct PerturbTables {
  std::vector<std::array<int, 2>> pairs;
  std::vector<double> wt;
  std::vector<std::vector<double>> cvals;  // [pair][x]
  std::vector<std::vector<double>> mvals;  // [pair][xi]
  double cmax = 0.0;  // sup_x Frobenius norm of c(x), bounds the spectral norm
  double mmax = 0.0;  // sup_xi of the scalar frequency factor
};

PerturbTables build_tables(const PropagatorConfig& cfg, const Grid& g, double tmid) {
  PerturbTables T;
  const int d = g.d;
  for (int j = 0; j < d; ++j)
    for (int k = j; k < d; ++k) {
      T.pairs.push_back({j, k});
      T.wt.push_back(j == k ? 1.0 : 2.0);
    }
  const std::int64_t np = g.npts();
  const size_t npairs = T.pairs.size();
  T.cvals.assign(npairs, std::vector<double>(size_t(np), 0.0));
  T.mvals.assign(npairs, std::vector<double>(size_t(np), 0.0));

  std::array<double, 3> x{}, xi{};
  Eigen::Matrix3d G;
  for (std::int64_t i = 0; i < np; ++i) {
    g.x_at(i, x);
    metric_value(cfg.spec, tmid, x, G);
    double fro2 = 0.0;
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k) {
        double c = G(j, k) - (j == k ? 1.0 : 0.0);
        fro2 += c * c;
      }
    T.cmax = std::max(T.cmax, std::sqrt(fro2));
    for (size_t p = 0; p < npairs; ++p) T.cvals[p][size_t(i)] = G(T.pairs[p][0], T.pairs[p][1]) - (T.pairs[p][0] == T.pairs[p][1] ? 1.0 : 0.0);
  }
  for (std::int64_t i = 0; i < np; ++i) {
    g.xi_at(i, xi);
    const double r = norm3(xi);
    const double w = perturbation_window(r, cfg.window_lo, cfg.window_hi);
    const double denom = 2.0 * std::sqrt(cfg.M * cfg.M + r * r);
    T.mmax = std::max(T.mmax, w * r * r / denom);
    for (size_t p = 0; p < npairs; ++p) T.mvals[p][size_t(i)] = w * xi[T.pairs[p][0]] * xi[T.pairs[p][1]] / denom;
  }
  return T;
}

SpectralField apply_perturbation(const SpectralField& v, const PerturbTables& T, const Grid& g) {
  const std::int64_t np = g.npts();
  const auto& vc = v.coeffs();
  const auto& vv = v.values();
  std::vector<cd> accx(size_t(np), cd(0.0, 0.0));
  SpectralField accf(g);
  auto& bc = accf.mutable_coeffs();
  SpectralField tmp(g);
  for (size_t p = 0; p < T.pairs.size(); ++p) {
    const double half = 0.5 * T.wt[p];
    {
      auto& tc = tmp.mutable_coeffs();
      for (std::int64_t i = 0; i < np; ++i) tc[size_t(i)] = vc[size_t(i)] * T.mvals[p][size_t(i)];
    }
    const auto& tv = tmp.values();
    for (std::int64_t i = 0; i < np; ++i) accx[size_t(i)] += half * T.cvals[p][size_t(i)] * tv[size_t(i)];
    {
      auto& tw = tmp.mutable_values();
      for (std::int64_t i = 0; i < np; ++i) tw[size_t(i)] = vv[size_t(i)] * T.cvals[p][size_t(i)];
    }
    const auto& tc2 = tmp.coeffs();
    for (std::int64_t i = 0; i < np; ++i) bc[size_t(i)] += half * T.mvals[p][size_t(i)] * tc2[size_t(i)];
  }
  SpectralField out(g);
  auto& ov = out.mutable_values();
  const auto& bv = accf.values();
  for (std::int64_t i = 0; i < np; ++i) ov[size_t(i)] = accx[size_t(i)] + bv[size_t(i)];
  return out;
}

// Truncated exponential series for e^{-i dt P}; with |dt| ||P|| <= 1/2 the
// remainder is below (1/2)^4/24.
SpectralField exp_perturbation(const SpectralField& u, const PerturbTables& T, const Grid& g, double dt_signed) {
  SpectralField acc = u;
  SpectralField w = u;
  const cd factor(0.0, -dt_signed);
  for (int k = 1; k <= 3; ++k) {
    w = apply_perturbation(w, T, g);
    w *= factor / double(k);
    acc += w;
  }
  return acc;
}

}  // namespace

double perturbation_window(double r, double lo, double hi) {
  require(lo >= 0.0 && hi > lo, Err::invalid_argument, "window: need 0 <= lo < hi");
  if (r <= 0.0) return lo > 0.0 ? 0.0 : 1.0;
  double w = 1.0;
  if (lo > 0.0) w *= smooth_step(std::log2(r / lo) + 1.0);
  if (std::isfinite(hi)) w *= 1.0 - smooth_step(std::log2(r / hi));
  return w;
}

SpectralField flat_halfkg_step(const SpectralField& u, double M, double t0, double dt) {
  (void)t0;
  require(M > 0.0 && std::isfinite(M), Err::invalid_argument, "flat step: mass must be positive");
  require(std::isfinite(dt), Err::invalid_argument, "flat step: step must be finite");
  if (dt == 0.0) return u;
  const double M2 = M * M;
  return apply_multiplier(u, [M2, dt](const std::array<double, 3>& xi) {
    const double ph = -dt * std::sqrt(M2 + xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]);
    return cd(std::cos(ph), std::sin(ph));
  });
}

SpectralField dealias_two_thirds(const SpectralField& u) {
  return frequency_cutoff(u, 0.0, (2.0 / 3.0) * u.grid().nyquist(), Sharpness::sharp);
}

SpectralField perturbed_halfkg_step(const SpectralField& u, const PropagatorConfig& cfg, double t0, int sign) {
  const Grid& g = u.grid();
  check_config(cfg, g);
  require(sign == 1 || sign == -1, Err::invalid_argument, "perturbed step: sign must be +1 or -1");
  const double sdt = sign * cfg.dt;
  SpectralField out(g);
  if (cfg.spec.eps() == 0.0) {
    out = flat_halfkg_step(u, cfg.M, t0, sdt);
  } else {
    const double tmid = t0 + 0.5 * cfg.dt;
    PerturbTables T = build_tables(cfg, g, tmid);
    require(T.cmax * T.mmax * cfg.dt <= 0.5, Err::numeric,
            "perturbed step: operator norm estimate times dt exceeds 1/2, reduce the step");
    out = flat_halfkg_step(u, cfg.M, t0, 0.5 * sdt);
    out = exp_perturbation(out, T, g, sdt);
    out = flat_halfkg_step(out, cfg.M, t0, 0.5 * sdt);
  }
  if (cfg.dealias) out = dealias_two_thirds(out);
  return out;
}

SpectralField damped_step(const SpectralField& u, const PropagatorConfig& cfg, const DampingSymbol& D, double t0) {
  const Grid& g = u.grid();
  check_config(cfg, g);
  require(t0 >= 1.0, Err::invalid_argument, "damped step: the damping weight is defined for t >= 1");

  SpectralField v = perturbed_halfkg_step(u, cfg, t0, +1);

  const double tmid = t0 + 0.5 * cfg.dt;
  PhaseFunction F = bargmann(v, cfg.fbi_scale);
  const std::int64_t nxi = F.nxi();
  const std::int64_t np = g.npts();
  auto& vals = F.mutable_vals();

  double vmax = 0.0;
  for (const cd& z : vals) vmax = std::max(vmax, std::abs(z));
  const double floor_amp = 1e-13 * vmax;

  std::array<double, 3> x{}, xi{};
  for (std::int64_t sl = 0; sl < nxi; ++sl) {
    cd* row = vals.data() + sl * np;
    double rmax = 0.0;
    for (std::int64_t i = 0; i < np; ++i) rmax = std::max(rmax, std::abs(row[i]));
    if (rmax <= floor_amp) {
      // slot carries no field mass; its damped correction is below roundoff
      std::fill(row, row + np, cd(0.0, 0.0));
      continue;
    }
    F.xi_at(sl, xi);
    for (std::int64_t i = 0; i < np; ++i) {
      g.x_at(i, x);
      const double B = damping_symbol_eval(D, tmid, x, xi);
      row[i] *= (B > 0.0) ? (1.0 - std::exp(-cfg.dt * B)) : 0.0;
    }
  }
  SpectralField corr = bargmann_adjoint(F);
  v -= corr;
  return v;
}

// --- outgoing partition ---

namespace {

// bump on (2^{j-1}, 2^{j+1}) from two shifted steps; the family telescopes
double radial_member(int j, double r) {
  if (r <= 0.0) return j == 0 ? 1.0 : 0.0;
  const double y = std::log2(r);
  if (j == 0) return 1.0 - smooth_step(y);
  return smooth_step(y - j + 1.0) - smooth_step(y - j);
}

double angular_member(const std::array<double, 3>& x, const std::array<double, 3>& xi) {
  const double rx = norm3(x), rxi = norm3(xi);
  if (rx == 0.0 || rxi == 0.0) return 1.0;
  const double c = (x[0] * xi[0] + x[1] * xi[1] + x[2] * xi[2]) / (rx * rxi);
  return smooth_step(32.0 * c + 1.0);
}

}  // namespace

double OutgoingPartition::annulus(double r) {
  if (r <= 0.0) return 0.0;
  const double y = std::log2(r);
  return smooth_step(y + 2.0) - smooth_step(y - 1.0);
}

double OutgoingPartition::eval(int j, const std::array<double, 3>& x, const std::array<double, 3>& xi) const {
  require(j >= 0 && j <= jmax_, Err::invalid_argument, "partition: member index out of range");
  return radial_member(j, norm3(x)) * angular_member(x, xi) * annulus(norm3(xi));
}

double OutgoingPartition::sum(const std::array<double, 3>& x, const std::array<double, 3>& xi) const {
  double acc = 0.0;
  for (int j = 0; j <= jmax_; ++j) acc += eval(j, x, xi);
  return acc;
}

SpectralField OutgoingPartition::apply(const SpectralField& u, int j, double s) const {
  require(u.grid() == g_, Err::invalid_argument, "partition: field lives on a different grid");
  require(j >= 0 && j <= jmax_, Err::invalid_argument, "partition: member index out of range");
  const std::int64_t np = g_.npts();
  if (g_.d == 1) {
    // the angular factor reduces to a sign agreement; both factors split off
    auto band = [](double sgn) {
      return [sgn](const std::array<double, 3>& xi) {
        if (xi[0] * sgn <= 0.0) return cd(0.0, 0.0);
        return cd(annulus(std::fabs(xi[0])), 0.0);
      };
    };
    SpectralField hi = apply_multiplier(u, band(+1.0));
    SpectralField lo = apply_multiplier(u, band(-1.0));
    SpectralField out(g_);
    auto& ov = out.mutable_values();
    const auto& hv = hi.values();
    const auto& lv = lo.values();
    std::array<double, 3> x{};
    for (std::int64_t i = 0; i < np; ++i) {
      g_.x_at(i, x);
      const double w = radial_member(j, std::fabs(x[0]));
      ov[size_t(i)] = w * (x[0] >= 0.0 ? hv[size_t(i)] : lv[size_t(i)]);
    }
    return out;
  }
  // window-transform localization at scale s
  PhaseFunction F = bargmann(u, s);
  auto& vals = F.mutable_vals();
  std::array<double, 3> x{}, xi{};
  for (std::int64_t sl = 0; sl < F.nxi(); ++sl) {
    F.xi_at(sl, xi);
    cd* row = vals.data() + sl * np;
    for (std::int64_t i = 0; i < np; ++i) {
      g_.x_at(i, x);
      row[i] *= eval(j, x, xi);
    }
  }
  return bargmann_adjoint(F);
}

OutgoingPartition outgoing_partition(const Grid& g, int j_max) {
  require(g.d >= 1 && g.n > 0, Err::invalid_argument, "partition: empty grid");
  require(j_max >= 0, Err::invalid_argument, "partition: need j_max >= 0");
  require(std::ldexp(1.0, j_max + 1) <= g.L, Err::invalid_argument,
          "partition: box too small for the requested shells");
  OutgoingPartition P;
  P.g_ = g;
  P.jmax_ = j_max;
  return P;
}

ParametrixReport parametrix_diagnostics(const PropagatorConfig& cfg, const DampingSymbol& D, int j, double s, double t,
                                        const SpectralField& data) {
  const Grid& g = data.grid();
  check_config(cfg, g);
  require(j >= 0 && std::ldexp(1.0, j + 1) <= g.L, Err::invalid_argument, "parametrix: shell does not fit the box");
  require(t > s, Err::invalid_argument, "parametrix: need t > s");
  if (cfg.scheme == Scheme::damped) require(s >= 1.0, Err::invalid_argument, "parametrix: damped runs start at s >= 1");
  const double horizon = t - s;
  // outgoing data moves at speed < 1; refuse runs whose front could wrap
  require(std::ldexp(1.0, j + 1) + horizon <= 0.9 * g.L + 1e-9, Err::invalid_argument,
          "parametrix: horizon would wrap the box, enlarge it or stop earlier");
  const double n0 = data.norm_l2();
  require(n0 > 0.0, Err::invalid_argument, "parametrix: data is identically zero");

  const int nsteps = std::max(1, int(std::ceil(horizon / cfg.dt - 1e-9)));
  PropagatorConfig run = cfg;
  run.dt = horizon / nsteps;

  ParametrixReport rep;
  SpectralField u = data;
  const int stride = std::max(1, nsteps / 16);
  double tcur = s;
  for (int k = 1; k <= nsteps; ++k) {
    switch (cfg.scheme) {
      case Scheme::exact_flat:
        u = flat_halfkg_step(u, cfg.M, tcur, run.dt);
        break;
      case Scheme::split_step:
        u = perturbed_halfkg_step(u, run, tcur, +1);
        break;
      case Scheme::damped:
        u = damped_step(u, run, D, tcur);
        break;
    }
    tcur = s + k * run.dt;
    if (k % stride == 0 || k == nsteps) {
      DecaySample ds;
      ds.tau = k * run.dt;
      ds.sup = u.sup_norm();
      rep.sups.push_back(ds);
    }
  }
  const double tau0 = rep.sups.front().tau;
  const double sup0 = rep.sups.front().sup;
  for (auto& ds : rep.sups) {
    ds.ref1 = sup0 * (tau0 / ds.tau);
    ds.ref2 = sup0 * (tau0 / ds.tau) * (tau0 / ds.tau);
  }

  rep.inner_radius = std::ldexp(horizon + std::ldexp(1.0, j), -10);
  rep.outer_radius = std::ldexp(horizon + std::ldexp(1.0, j), +10);
  const auto& uv = u.values();
  double in2 = 0.0, out2 = 0.0;
  std::array<double, 3> x{};
  for (std::int64_t i = 0; i < g.npts(); ++i) {
    g.x_at(i, x);
    const double r = norm3(x);
    const double m = std::norm(uv[size_t(i)]);
    if (r < rep.inner_radius) in2 += m;
    if (r > rep.outer_radius) out2 += m;
  }
  rep.inner_mass = std::sqrt(in2 * g.cell_vol()) / n0;
  rep.outer_mass = std::sqrt(out2 * g.cell_vol()) / n0;

  SpectralField leak = u;
  leak -= frequency_cutoff(u, 1.0 / 16.0, 16.0, Sharpness::sharp);
  rep.freq_leakage = leak.norm_l2() / n0;
  rep.final_state = u;
  return rep;
}

// --- cubic Dirac ---

double spinor_hs_norm(const SpinorField& psi, double s) {
  double acc = 0.0;
  for (const auto& c : psi.comp) {
    const double h = sobolev_norm(c, s);
    acc += h * h;
  }
  return std::sqrt(acc);
}

namespace {

SpinorField spinor_bracket_multiplier(const SpinorField& psi, double M) {
  SpinorField out(psi.grid());
  const double M2 = M * M;
  for (int c = 0; c < 4; ++c)
    out.comp[size_t(c)] = apply_multiplier(psi.comp[size_t(c)], [M2](const std::array<double, 3>& xi) {
      return cd(std::sqrt(M2 + xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]), 0.0);
    });
  return out;
}

// sign [<D>_M, E] with the Neumann-truncated (1+E)^{-1} in front
SpinorField curved_correction(const SpinorField& psi, const QuantizedOperator& E, double M, int sign, int order) {
  SpinorField c = spinor_bracket_multiplier(E.apply(psi), M);
  c -= E.apply(spinor_bracket_multiplier(psi, M));
  if (sign < 0) c *= cd(-1.0, 0.0);
  if (order >= 1) {
    SpinorField e1 = E.apply(c);
    if (order >= 2) {
      SpinorField e2 = E.apply(e1);
      c -= e1;
      c += e2;
    } else {
      c -= e1;
    }
  }
  return c;
}

double spinor_sup(const SpinorField& psi) {
  const std::int64_t np = psi.grid().npts();
  double m2 = 0.0;
  const auto& v0 = psi.comp[0].values();
  const auto& v1 = psi.comp[1].values();
  const auto& v2 = psi.comp[2].values();
  const auto& v3 = psi.comp[3].values();
  for (std::int64_t i = 0; i < np; ++i) {
    const double a = std::norm(v0[size_t(i)]) + std::norm(v1[size_t(i)]) + std::norm(v2[size_t(i)]) + std::norm(v3[size_t(i)]);
    m2 = std::max(m2, a);
  }
  return std::sqrt(m2);
}

}  // namespace

DiracSeries cubic_dirac_solve(const SpinorField& psi0, const MetricSpec& spec, double M, double T, double dt,
                              const DiracOptions& opt) {
  const Grid& g = psi0.grid();
  require(g.d == 3, Err::invalid_argument, "cubic dirac: the spin structure needs three space dimensions");
  require(spec.dim() == 3, Err::invalid_argument, "cubic dirac: metric dimension must be 3");
  require(M > 0.0 && std::isfinite(M), Err::invalid_argument, "cubic dirac: mass must be positive");
  require(dt > 0.0 && dt <= g.dx() * (1.0 + 1e-12), Err::invalid_argument,
          "cubic dirac: step must be positive and below the grid spacing");
  require(T >= dt, Err::invalid_argument, "cubic dirac: horizon shorter than one step");
  require(opt.s > 1.0, Err::invalid_argument, "cubic dirac: guard exponent must exceed 1");
  require(opt.neumann_order >= 0 && opt.neumann_order <= 2, Err::invalid_argument,
          "cubic dirac: the inverse is truncated at order 0, 1 or 2");

  QuantizedOperator Pp = flat_projector(M, +1, g);
  QuantizedOperator Pm = flat_projector(M, -1, g);
  SpinorField psi_p = Pp.apply(psi0);
  SpinorField psi_m = Pm.apply(psi0);

  const bool curved = spec.eps() != 0.0;
  QuantizedOperator E;
  if (curved) E = projector_error_proxy(spec, M, g);

  const double eta = opt.eta > 0.0 ? opt.eta : std::max(spinor_hs_norm(psi_p, opt.s), spinor_hs_norm(psi_m, opt.s));

  const int nsteps = std::max(1, int(std::ceil(T / dt - 1e-9)));
  const double h = T / nsteps;

  PropagatorConfig lin;
  lin.spec = spec;
  lin.M = M;
  lin.dt = 0.5 * h;
  lin.scheme = Scheme::split_step;
  lin.dealias = false;

  DiracSeries S;
  S.M = M;
  S.s = opt.s;
  S.eta = eta;

  auto half_linear = [&](SpinorField& part, int sign, double t0) {
    for (int c = 0; c < 4; ++c) part.comp[size_t(c)] = perturbed_halfkg_step(part.comp[size_t(c)], lin, t0, sign);
    if (curved) {
      SpinorField corr = curved_correction(part, E, M, sign, opt.neumann_order);
      corr *= cd(0.0, -0.5 * h);
      part += corr;
    }
  };

  auto record = [&](double tcur) {
    SpinorField psi = psi_p;
    psi += psi_m;
    S.times.push_back(tcur);
    S.l2.push_back(psi.norm_l2());
    S.sup.push_back(spinor_sup(psi));
    const double hp = spinor_hs_norm(psi_p, opt.s);
    const double hm = spinor_hs_norm(psi_m, opt.s);
    S.hs_plus.push_back(hp);
    S.hs_minus.push_back(hm);
    require(std::max(hp, hm) <= 4.0 * eta, Err::numeric, "cubic dirac: left the small-data regime");
  };
  auto snapshot = [&](double tcur) {
    S.snap_times.push_back(tcur);
    S.snaps_plus.push_back(psi_p);
    S.snaps_minus.push_back(psi_m);
  };

  record(0.0);
  snapshot(0.0);
  for (int k = 0; k < nsteps; ++k) {
    const double t0 = k * h;
    half_linear(psi_p, +1, t0);
    half_linear(psi_m, -1, t0);
    SpinorField psi = psi_p;
    psi += psi_m;
    if (opt.nonlinear) {
      const auto& v0 = psi.comp[0].values();
      const auto& v1 = psi.comp[1].values();
      const auto& v2 = psi.comp[2].values();
      const auto& v3 = psi.comp[3].values();
      SpinorField rot(g);
      auto& r0 = rot.comp[0].mutable_values();
      auto& r1 = rot.comp[1].mutable_values();
      auto& r2 = rot.comp[2].mutable_values();
      auto& r3 = rot.comp[3].mutable_values();
      const std::int64_t np = g.npts();
      for (std::int64_t i = 0; i < np; ++i) {
        const size_t u = size_t(i);
        const double a2 = std::norm(v0[u]) + std::norm(v1[u]) + std::norm(v2[u]) + std::norm(v3[u]);
        const double th = h * a2;
        // time gamma matrix is diag(1,1,-1,-1): upper pair rotates forward
        const cd ep(std::cos(th), std::sin(th));
        const cd em = std::conj(ep);
        r0[u] = v0[u] * ep;
        r1[u] = v1[u] * ep;
        r2[u] = v2[u] * em;
        r3[u] = v3[u] * em;
      }
      psi = rot;
    }
    if (opt.dealias)
      for (int c = 0; c < 4; ++c) psi.comp[size_t(c)] = dealias_two_thirds(psi.comp[size_t(c)]);
    psi_p = Pp.apply(psi);
    psi_m = Pm.apply(psi);
    const double tmid = t0 + 0.5 * h;
    half_linear(psi_p, +1, tmid);
    half_linear(psi_m, -1, tmid);
    const double tnext = (k + 1) * h;
    record(tnext);
    if ((opt.snap_stride > 0 && (k + 1) % opt.snap_stride == 0) || k + 1 == nsteps) snapshot(tnext);
  }
  return S;
}

TailTable scattering_tail(const DiracSeries& series, double s, const std::vector<double>& T_list) {
  require(series.snap_times.size() >= 2, Err::invalid_argument, "scattering tail: need at least two stored snapshots");
  require(T_list.size() >= 2, Err::invalid_argument, "scattering tail: need at least two times");

  auto locate = [&](double t) -> size_t {
    size_t best = 0;
    double dbest = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < series.snap_times.size(); ++i) {
      const double d = std::fabs(series.snap_times[i] - t);
      if (d < dbest) {
        dbest = d;
        best = i;
      }
    }
    require(dbest <= 1e-6 * std::max(1.0, std::fabs(t)), Err::invalid_argument,
            "scattering tail: requested time is not among the stored snapshots");
    return best;
  };

  std::vector<double> ts = T_list;
  std::sort(ts.begin(), ts.end());
  const double tmax = ts.back();
  const size_t imax = locate(tmax);

  auto pullback = [&](const SpinorField& f, int sign, double t) {
    SpinorField out(f.grid());
    for (int c = 0; c < 4; ++c) out.comp[size_t(c)] = flat_halfkg_step(f.comp[size_t(c)], series.M, 0.0, -sign * t);
    return out;
  };

  TailTable out;
  out.s = s;
  for (int sign : {+1, -1}) {
    const auto& snaps = sign > 0 ? series.snaps_plus : series.snaps_minus;
    SpinorField ref = pullback(snaps[imax], sign, series.snap_times[imax]);
    for (size_t q = 0; q + 1 < ts.size(); ++q) {
      const size_t ip = locate(ts[q]);
      SpinorField d = pullback(snaps[ip], sign, series.snap_times[ip]);
      d -= ref;
      TailRow row;
      row.sign = sign;
      row.t_prime = series.snap_times[ip];
      row.t = series.snap_times[imax];
      row.value = spinor_hs_norm(d, s);
      out.rows.push_back(row);
    }
  }
  return out;
}

}  // namespace displab
