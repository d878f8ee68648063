#include "core/measure.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "core/io.hpp"

namespace displab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool q_matches(double a, double b) {
  if (std::isinf(a) || std::isinf(b)) return std::isinf(a) && std::isinf(b);
  return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b));
}

// trapezoid of sampled g(t) >= 0 raised to p, then the 1/p root
double time_lp(const std::vector<double>& t, const std::vector<double>& g, double p) {
  if (std::isinf(p)) {
    double m = 0.0;
    for (double v : g) m = std::max(m, v);
    return m;
  }
  double acc = 0.0;
  for (std::size_t i = 1; i < t.size(); ++i)
    acc += 0.5 * (t[i] - t[i - 1]) * (std::pow(g[i], p) + std::pow(g[i - 1], p));
  return std::pow(acc, 1.0 / p);
}

}  // namespace

AdmissiblePair admissible_pair(int d, double theta, double q) {
  require(d >= 1, Err::invalid_argument, "admissible pair: dimension must be positive");
  require(theta >= 0.0 && theta <= 1.0, Err::invalid_argument, "admissible pair: theta must lie in [0,1]");
  require(q >= 2.0, Err::invalid_argument, "admissible pair: q must be at least 2");
  require(d == 3 ? !(theta == 0.0 && std::isinf(q)) : true, Err::invalid_argument,
          "admissible pair: forbidden endpoint");

  AdmissiblePair pr;
  pr.d = d;
  pr.theta = theta;
  pr.q = q;
  const double invq = std::isinf(q) ? 0.0 : 1.0 / q;
  const double rhs = (d - 1 + theta) * (0.5 - invq);  // equals 2/p
  pr.p = rhs > 0.0 ? 2.0 / rhs : kInf;
  require(pr.p >= 2.0, Err::invalid_argument, "admissible pair: non-admissible, p falls below 2");
  pr.sigma = 0.25 * (d + 1 + theta) * (1.0 - 2.0 * invq);
  return pr;
}

double lq_norm(const SpectralField& f, double q) {
  require(q >= 1.0, Err::invalid_argument, "lq norm: q must be at least 1");
  const std::vector<cd>& v = f.values();
  if (std::isinf(q)) return f.sup_norm();
  double acc = 0.0;
  for (const cd& z : v) acc += std::pow(std::abs(z), q);
  return std::pow(acc * f.grid().cell_vol(), 1.0 / q);
}

void append_norms(TimeSeriesNorms& ts, double t, const SpectralField& f) {
  require(ts.times.empty() || t > ts.times.back(), Err::invalid_argument,
          "append norms: sample times must increase");
  ts.times.push_back(t);
  std::vector<double> row;
  row.reserve(ts.qs.size());
  for (double q : ts.qs) row.push_back(lq_norm(f, q));
  ts.lq.push_back(std::move(row));
  ts.hs.push_back(sobolev_norm(f, ts.s));
  ts.sup.push_back(f.sup_norm());
}

double mixed_norm(const TimeSeriesNorms& ts, double p, double q) {
  require(p >= 1.0, Err::invalid_argument, "mixed norm: p must be at least 1");
  require(!ts.times.empty(), Err::invalid_argument, "mixed norm: empty series");
  std::size_t m = ts.qs.size();
  for (std::size_t i = 0; i < ts.qs.size(); ++i)
    if (q_matches(ts.qs[i], q)) m = i;
  require(m < ts.qs.size(), Err::invalid_argument,
          "mixed norm: spatial exponent " + fmt_double(q) + " was not recorded");
  std::vector<double> g(ts.times.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = ts.lq[i][m];
  return time_lp(ts.times, g, p);
}

double sobolev_norm(const SpectralField& f, double s) {
  const Grid& g = f.grid();
  const std::vector<cd>& c = f.coeffs();
  std::array<double, 3> xi{};
  double acc = 0.0;
  for (std::int64_t q = 0; q < g.npts(); ++q) {
    g.xi_at(q, xi);
    const double w = 1.0 + xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
    acc += std::pow(w, s) * std::norm(c[static_cast<std::size_t>(q)]);
  }
  return std::sqrt(acc * g.dual_cell_vol());
}

namespace {

// L2 over a radial slab a <= |x| < b through the sampled horizon
double slab_l2(const FieldSeries& u, double a, double b) {
  const Grid& g = u.fields.front().grid();
  std::vector<double> per(u.times.size());
  std::array<double, 3> x{};
  for (std::size_t i = 0; i < u.fields.size(); ++i) {
    const std::vector<cd>& v = u.fields[i].values();
    double acc = 0.0;
    for (std::int64_t q = 0; q < g.npts(); ++q) {
      g.x_at(q, x);
      const double r = std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
      if (r >= a && r < b) acc += std::norm(v[static_cast<std::size_t>(q)]);
    }
    per[i] = acc * g.cell_vol();
  }
  double acc = 0.0;
  for (std::size_t i = 1; i < per.size(); ++i)
    acc += 0.5 * (u.times[i] - u.times[i - 1]) * (per[i] + per[i - 1]);
  return std::sqrt(acc);
}

// like slab_l2 with the |x|^{-1/2} weight inside
double slab_l2_weighted(const FieldSeries& u, double a, double b) {
  const Grid& g = u.fields.front().grid();
  std::vector<double> per(u.times.size());
  std::array<double, 3> x{};
  for (std::size_t i = 0; i < u.fields.size(); ++i) {
    const std::vector<cd>& v = u.fields[i].values();
    double acc = 0.0;
    for (std::int64_t q = 0; q < g.npts(); ++q) {
      g.x_at(q, x);
      const double r = std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
      if (r >= a && r < b && r > 0.0) acc += std::norm(v[static_cast<std::size_t>(q)]) / r;
    }
    per[i] = acc * g.cell_vol();
  }
  double acc = 0.0;
  for (std::size_t i = 1; i < per.size(); ++i)
    acc += 0.5 * (u.times[i] - u.times[i - 1]) * (per[i] + per[i - 1]);
  return std::sqrt(acc);
}

void check_series(const FieldSeries& u, const char* who) {
  require(u.times.size() >= 2 && u.times.size() == u.fields.size(), Err::invalid_argument,
          std::string(who) + ": series needs at least two aligned samples");
  for (std::size_t i = 1; i < u.times.size(); ++i)
    require(u.times[i] > u.times[i - 1], Err::invalid_argument,
            std::string(who) + ": sample times must increase");
  const Grid& g = u.fields.front().grid();
  for (const SpectralField& f : u.fields)
    require(f.grid() == g, Err::invalid_argument, std::string(who) + ": series mixes grids");
}

int max_shell_index(const Grid& g) {
  // outermost shell whose inner radius still fits the box
  int j = 0;
  while (std::pow(2.0, j) <= g.L) ++j;
  return j;
}

}  // namespace

double local_energy_norm(const FieldSeries& u, int k) {
  check_series(u, "local energy norm");
  const Grid& g = u.fields.front().grid();
  const double rlow = std::pow(2.0, -k);
  require(rlow >= g.dx(), Err::invalid_argument,
          "local energy norm: the low-region radius 2^{-k} falls below the grid spacing");
  const double low = std::pow(2.0, k) * slab_l2(u, 0.0, rlow);
  double sup = 0.0;
  for (int j = -k; j <= max_shell_index(g); ++j)
    sup = std::max(sup, slab_l2_weighted(u, std::pow(2.0, j - 1), std::pow(2.0, j + 1)));
  return low + std::pow(2.0, 0.5 * k) * sup;
}

XsReport x_s_norm(const FieldSeries& u, double s) {
  check_series(u, "x_s norm");
  const Grid& g = u.fields.front().grid();
  XsReport rep;
  rep.horizon = u.times.back() - u.times.front();

  // bands limited by the dual lattice below and the transform range above,
  // and by the low-region radius of the X_k definition
  const int kmin = static_cast<int>(std::ceil(std::log2(g.dxi())));
  int kmax = static_cast<int>(std::floor(std::log2(g.nyquist()))) - 1;
  kmax = std::min(kmax, static_cast<int>(std::floor(-std::log2(g.dx()))));
  require(kmax >= kmin, Err::invalid_argument, "x_s norm: no dyadic band is resolvable on this grid");

  double acc = 0.0;
  for (int k = kmin; k <= kmax; ++k) {
    FieldSeries band;
    band.times = u.times;
    band.fields.reserve(u.fields.size());
    for (const SpectralField& f : u.fields) band.fields.push_back(littlewood_paley(f, k));
    XsRow row;
    row.k = k;
    row.xk = local_energy_norm(band, k);
    row.weight = std::pow(1.0 + std::pow(4.0, k), s);
    rep.rows.push_back(row);
    acc += row.weight * row.xk * row.xk;
  }
  rep.value = std::sqrt(acc);
  return rep;
}

DecayFit decay_fit(const std::vector<double>& times, const std::vector<double>& sups, double window_lo,
                   double window_hi) {
  require(times.size() == sups.size(), Err::invalid_argument, "decay fit: misaligned inputs");
  require(window_lo > 0.0 && window_hi > window_lo, Err::invalid_argument, "decay fit: bad window");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] < window_lo || times[i] > window_hi) continue;
    require(sups[i] > 0.0, Err::invalid_argument, "decay fit: norms must be positive inside the window");
    lx.push_back(std::log(times[i]));
    ly.push_back(std::log(sups[i]));
  }
  require(lx.size() >= 6, Err::invalid_argument, "decay fit: fewer than six samples fall in the window");

  const double n = static_cast<double>(lx.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sx += lx[i];
    sy += ly[i];
    sxx += lx[i] * lx[i];
    sxy += lx[i] * ly[i];
  }
  const double det = n * sxx - sx * sx;
  require(det > 0.0, Err::numeric, "decay fit: degenerate time window");
  DecayFit fit;
  fit.samples = static_cast<int>(lx.size());
  fit.exponent = (n * sxy - sx * sy) / det;
  const double b = (sy - fit.exponent * sx) / n;
  double ss = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double r = ly[i] - (fit.exponent * lx[i] + b);
    ss += r * r;
  }
  fit.residual = std::sqrt(ss / n);
  fit.stderr_exponent = lx.size() > 2 ? std::sqrt(ss / (n - 2.0) / (sxx - sx * sx / n)) : 0.0;
  return fit;
}

double strichartz_ratio(const FieldSeries& u, const AdmissiblePair& pair, double s, bool homogeneous) {
  require(homogeneous, Err::invalid_argument,
          "strichartz ratio: only homogeneous runs are comparable against the data norm");
  check_series(u, "strichartz ratio");
  const double denom = sobolev_norm(u.fields.front(), s);
  require(denom > 0.0, Err::invalid_argument, "strichartz ratio: zero initial data");

  const double w = s - pair.sigma;
  std::vector<double> g(u.times.size());
  for (std::size_t i = 0; i < u.fields.size(); ++i) {
    SpectralField v = apply_multiplier(u.fields[i], [w](const std::array<double, 3>& xi) {
      return cd(std::pow(1.0 + xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2], 0.5 * w), 0.0);
    });
    g[i] = lq_norm(v, pair.q);
  }
  return time_lp(u.times, g, pair.p) / denom;
}

void dump_norms_csv(const TimeSeriesNorms& ts, const std::string& path) {
  Table tb;
  tb.columns.push_back("t");
  for (double q : ts.qs)
    tb.columns.push_back(std::isinf(q) ? std::string("Linf") : "L" + fmt_double(q));
  tb.columns.push_back("Hs");
  tb.columns.push_back("sup");
  for (std::size_t i = 0; i < ts.times.size(); ++i) {
    std::vector<double> row;
    row.push_back(ts.times[i]);
    for (double v : ts.lq[i]) row.push_back(v);
    row.push_back(ts.hs[i]);
    row.push_back(ts.sup[i]);
    tb.rows.push_back(row);
  }
  write_table_csv(tb, path);
}

}  // namespace displab
