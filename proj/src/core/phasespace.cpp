#include "core/phasespace.hpp"

#include <algorithm>
#include <cmath>

#include "core/common.hpp"
#include "core/io.hpp"

namespace displab {

namespace {

double window_const(int d) { return std::pow(2.0, -0.5 * d) * std::pow(kPi, -0.75 * d); }

// nearest periodic image of a coordinate difference
double wrap_diff(double z, double L) {
  while (z >= L) z -= 2.0 * L;
  while (z < -L) z += 2.0 * L;
  return z;
}

// phase lattice entries, not bytes; keeps the product lattice in memory
constexpr std::int64_t kPhaseBudget = std::int64_t(1) << 22;

void check_scale(const Grid& g, double s, const char* who) {
  require(s > 0.0, Err::invalid_argument, std::string(who) + ": scale must be positive");
  require(std::sqrt(s) >= 2.0 * g.dx(), Err::invalid_argument,
          std::string(who) + ": window width sqrt(s) is below two grid cells and cannot be resolved");
}

int auto_stride(const Grid& g, double s) {
  // keep at least four decimated cells across the xi window of width 1/sqrt(s)
  const double target = 1.0 / (4.0 * std::sqrt(s));
  int stride = 1;
  while (2 * stride <= g.n / 4 && 2 * stride * g.dxi() <= target) stride *= 2;
  return stride;
}

std::int64_t ipow(std::int64_t b, int e) {
  std::int64_t r = 1;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

// storage slot of the shifted frequency eta - xi, per axis
int shift_slot(int k, int m, int n) {
  int r = (k - m) % n;
  if (r < 0) r += n;
  return r;
}

void decimated_unflatten(const PhaseFunction& F, std::int64_t flat, std::array<int, 3>& idx) {
  const int nx = F.nxi_axis();
  idx = {0, 0, 0};
  for (int a = F.grid().d - 1; a >= 0; --a) {
    idx[size_t(a)] = int(flat % nx);
    flat /= nx;
  }
}

}  // namespace

PhaseFunction::PhaseFunction(const Grid& g, double s, int stride) : g_(g), s_(s), stride_(stride) {
  require(g.d >= 1, Err::invalid_argument, "phase function: empty grid");
  require(stride >= 1 && g.n % stride == 0, Err::invalid_argument, "phase function: stride must divide n");
  v_.assign(size_t(nxi() * g_.npts()), cd(0.0, 0.0));
}

std::int64_t PhaseFunction::nxi() const { return ipow(nxi_axis(), g_.d); }

void PhaseFunction::xi_at(std::int64_t flat, std::array<double, 3>& xi) const {
  const int nx = nxi_axis();
  xi = {0.0, 0.0, 0.0};
  for (int a = g_.d - 1; a >= 0; --a) {
    int j = int(flat % nx);
    if (j >= nx / 2) j -= nx;
    xi[size_t(a)] = dxi_dec() * j;
    flat /= nx;
  }
}

cd PhaseFunction::at(std::int64_t xi_flat, std::int64_t x_flat) const {
  return v_[size_t(xi_flat * g_.npts() + x_flat)];
}

double PhaseFunction::norm() const {
  double acc = 0.0;
  for (const cd& z : v_) acc += std::norm(z);
  return std::sqrt(acc * g_.cell_vol() * std::pow(dxi_dec(), g_.d));
}

void PhaseFunction::check_mate(const PhaseFunction& o) const {
  require(g_ == o.g_ && s_ == o.s_ && stride_ == o.stride_, Err::invalid_argument,
          "phase functions live on different lattices or scales");
}

PhaseFunction& PhaseFunction::operator+=(const PhaseFunction& o) {
  check_mate(o);
  for (size_t i = 0; i < v_.size(); ++i) v_[i] += o.v_[i];
  return *this;
}

PhaseFunction& PhaseFunction::operator-=(const PhaseFunction& o) {
  check_mate(o);
  for (size_t i = 0; i < v_.size(); ++i) v_[i] -= o.v_[i];
  return *this;
}

PhaseFunction& PhaseFunction::operator*=(cd a) {
  for (cd& z : v_) z *= a;
  return *this;
}

PhaseFunction bargmann(const SpectralField& f, double s, int stride) {
  const Grid& g = f.grid();
  check_scale(g, s, "bargmann");
  if (stride == 0) stride = auto_stride(g, s);
  require(stride >= 1 && g.n % stride == 0 && (stride & (stride - 1)) == 0, Err::invalid_argument,
          "bargmann: stride must be a power of two dividing n");
  require(stride <= g.n / 4, Err::invalid_argument, "bargmann: stride leaves fewer than four xi slots per axis");

  const std::int64_t entries = ipow(g.n / stride, g.d) * g.npts();
  require(entries <= kPhaseBudget, Err::budget,
          "bargmann: phase lattice needs " + std::to_string(entries) + " entries, budget is " +
              std::to_string(kPhaseBudget) + "; coarsen the grid or pass a larger stride");
  PhaseFunction F(g, s, stride);

  SpectralField window(g);
  {
    auto& wv = window.mutable_values();
    for (std::int64_t i = 0; i < g.npts(); ++i) {
      std::array<double, 3> x{};
      g.x_at(i, x);
      double q = 0.0;
      for (int a = 0; a < g.d; ++a) q += x[size_t(a)] * x[size_t(a)];
      wv[size_t(i)] = cd(std::exp(-q / (2.0 * s)), 0.0);
    }
  }
  const std::vector<cd>& cg = window.coeffs();
  const std::vector<cd>& cu = f.coeffs();

  // (Tf)(.,xi) is a windowed convolution; in coefficients it is a product
  // against the window spectrum shifted by xi.
  const double amp = window_const(g.d) * std::pow(s, -0.25 * g.d) * std::pow(2.0 * kPi, 0.5 * g.d);
  const std::int64_t npts = g.npts();
  std::array<int, 3> kidx{};
  for (std::int64_t xf = 0; xf < F.nxi(); ++xf) {
    std::array<int, 3> jd{};
    decimated_unflatten(F, xf, jd);
    std::array<int, 3> shift{};
    for (int a = 0; a < g.d; ++a) {
      int j = jd[size_t(a)];
      if (j >= F.nxi_axis() / 2) j -= F.nxi_axis();
      shift[size_t(a)] = j * stride;
    }
    SpectralField w(g);
    auto& cw = w.mutable_coeffs();
    for (std::int64_t k = 0; k < npts; ++k) {
      g.unflatten(k, kidx);
      std::array<int, 3> sh{};
      for (int a = 0; a < g.d; ++a) sh[size_t(a)] = shift_slot(kidx[size_t(a)], shift[size_t(a)], g.n);
      cw[size_t(k)] = amp * cg[size_t(g.flatten(sh))] * cu[size_t(k)];
    }
    const std::vector<cd>& wv = w.values();
    std::copy(wv.begin(), wv.end(), F.mutable_vals().begin() + xf * npts);
  }
  return F;
}

cd bargmann_point(const SpectralField& f, double s, const PhasePoint& p) {
  const Grid& g = f.grid();
  check_scale(g, s, "bargmann_point");
  const std::vector<cd>& fv = f.values();
  cd acc(0.0, 0.0);
  std::array<double, 3> y{};
  for (std::int64_t i = 0; i < g.npts(); ++i) {
    g.x_at(i, y);
    double q = 0.0, ph = 0.0;
    for (int a = 0; a < g.d; ++a) {
      const double z = wrap_diff(p.x[size_t(a)] - y[size_t(a)], g.L);
      q += z * z;
      ph += p.xi[size_t(a)] * z;
    }
    acc += std::exp(-q / (2.0 * s)) * std::polar(1.0, ph) * fv[size_t(i)];
  }
  return window_const(g.d) * std::pow(s, -0.25 * g.d) * g.cell_vol() * acc;
}

SpectralField bargmann_adjoint(const PhaseFunction& F) {
  const Grid& g = F.grid();
  require(g.d >= 1 && F.stride() >= 1, Err::invalid_argument, "bargmann_adjoint: empty phase function");
  require(std::int64_t(F.vals().size()) == F.nxi() * g.npts(), Err::invalid_argument,
          "bargmann_adjoint: malformed phase lattice");
  check_scale(g, F.scale(), "bargmann_adjoint");

  SpectralField window(g);
  {
    auto& wv = window.mutable_values();
    for (std::int64_t i = 0; i < g.npts(); ++i) {
      std::array<double, 3> x{};
      g.x_at(i, x);
      double q = 0.0;
      for (int a = 0; a < g.d; ++a) q += x[size_t(a)] * x[size_t(a)];
      wv[size_t(i)] = cd(std::exp(-q / (2.0 * F.scale())), 0.0);
    }
  }
  const std::vector<cd>& cg = window.coeffs();

  const double amp = window_const(g.d) * std::pow(F.scale(), -0.25 * g.d) * std::pow(2.0 * kPi, 0.5 * g.d) *
                     std::pow(F.dxi_dec(), g.d);
  const std::int64_t npts = g.npts();
  std::vector<cd> acc(size_t(npts), cd(0.0, 0.0));
  std::array<int, 3> kidx{};
  for (std::int64_t xf = 0; xf < F.nxi(); ++xf) {
    std::array<int, 3> jd{};
    decimated_unflatten(F, xf, jd);
    std::array<int, 3> shift{};
    for (int a = 0; a < g.d; ++a) {
      int j = jd[size_t(a)];
      if (j >= F.nxi_axis() / 2) j -= F.nxi_axis();
      shift[size_t(a)] = j * F.stride();
    }
    SpectralField row(g);
    {
      auto& rv = row.mutable_values();
      const auto base = F.vals().begin() + xf * npts;
      std::copy(base, base + npts, rv.begin());
    }
    const std::vector<cd>& cr = row.coeffs();
    for (std::int64_t k = 0; k < npts; ++k) {
      g.unflatten(k, kidx);
      std::array<int, 3> sh{};
      for (int a = 0; a < g.d; ++a) sh[size_t(a)] = shift_slot(kidx[size_t(a)], shift[size_t(a)], g.n);
      acc[size_t(k)] += amp * cg[size_t(g.flatten(sh))] * cr[size_t(k)];
    }
  }
  SpectralField out(g);
  out.mutable_coeffs() = std::move(acc);
  return out;
}

SpectralField coherent_state(const Grid& g, double s, const PhasePoint& p) {
  check_scale(g, s, "coherent_state");
  const double pref = window_const(g.d) * std::pow(s, -0.25 * g.d);
  return field_from_function(g, [&, pref, s](const std::array<double, 3>& y) {
    double q = 0.0, ph = 0.0;
    for (int a = 0; a < g.d; ++a) {
      const double z = wrap_diff(y[size_t(a)] - p.x[size_t(a)], g.L);
      q += z * z;
      ph += p.xi[size_t(a)] * z;
    }
    return pref * std::exp(-q / (2.0 * s)) * std::polar(1.0, ph);
  });
}

double phase_distance(const PhasePoint& p, const PhasePoint& q, double t) {
  require(t > 0.0, Err::invalid_argument, "phase_distance: time must be positive");
  double dx2 = 0.0, dxi2 = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double ax = p.x[size_t(a)] - q.x[size_t(a)];
    const double af = p.xi[size_t(a)] - q.xi[size_t(a)];
    dx2 += ax * ax;
    dxi2 += af * af;
  }
  return std::sqrt(dx2 / t + t * dxi2);
}

double distorted_norm(const std::array<double, 3>& v, int d, double delta) {
  require(d >= 1 && d <= 3, Err::invalid_argument, "distorted_norm: bad dimension");
  double q = 0.0;
  for (int a = 0; a < d - 1; ++a) q += v[size_t(a)] * v[size_t(a)];
  q += delta * delta * v[size_t(d - 1)] * v[size_t(d - 1)];
  return std::sqrt(q);
}

JacobianResult kg_jacobian_matrix(int d, const std::array<double, 3>& xi, double a) {
  require(d >= 1 && d <= 3, Err::invalid_argument, "kg_jacobian_matrix: bad dimension");
  require(a > 0.0, Err::invalid_argument, "kg_jacobian_matrix: scale parameter must be positive");
  double n2 = 0.0;
  for (int i = 0; i < d; ++i) n2 += xi[size_t(i)] * xi[size_t(i)];
  const double br2 = 1.0 / (a * a) + n2;
  const double br = std::sqrt(br2);
  JacobianResult r;
  r.phi = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) r.phi(i, j) = ((i == j ? br2 : 0.0) - xi[size_t(i)] * xi[size_t(j)]) / (br2 * br);
  for (int i = 0; i < d - 1; ++i) r.eigs.push_back(1.0 / br);
  r.eigs.push_back(1.0 / (a * a * br2 * br));
  return r;
}

WaveJacobianResult wave_jacobian_matrix(int d, const std::array<double, 3>& xi) {
  require(d >= 1 && d <= 3, Err::invalid_argument, "wave_jacobian_matrix: bad dimension");
  double n2 = 0.0;
  for (int i = 0; i < d; ++i) n2 += xi[size_t(i)] * xi[size_t(i)];
  WaveJacobianResult r;
  r.phi = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) r.phi(i, j) = (i == j ? n2 : 0.0) - xi[size_t(i)] * xi[size_t(j)];
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r.phi);
  const double top = es.eigenvalues().cwiseAbs().maxCoeff();
  r.rank = 0;
  for (int i = 0; i < d; ++i)
    if (std::abs(es.eigenvalues()(i)) > 1e-12 * std::max(1.0, top)) ++r.rank;
  return r;
}

ProbeTable kernel_decay_probe(const FieldMap& evolution, const Grid& g, double t, double s, double N,
                              const std::vector<KernelProbe>& probes, double lambda) {
  require(bool(evolution), Err::invalid_argument, "kernel_decay_probe: empty evolution");
  check_scale(g, s, "kernel_decay_probe");
  check_scale(g, t, "kernel_decay_probe");
  require(N >= 0.0, Err::invalid_argument, "kernel_decay_probe: bound exponent must be nonnegative");
  require(lambda > 0.0, Err::invalid_argument, "kernel_decay_probe: lambda must be positive");

  auto check_point = [&](const PhasePoint& p) {
    for (int a = 0; a < g.d; ++a) {
      require(std::abs(p.x[size_t(a)]) <= g.L + 1e-12, Err::invalid_argument,
              "kernel_decay_probe: probe point leaves the box");
      require(std::abs(p.xi[size_t(a)]) <= g.nyquist() + 1e-12, Err::invalid_argument,
              "kernel_decay_probe: probe frequency beyond the lattice");
    }
  };

  ProbeTable table;
  table.d = g.d;
  table.t = t;
  table.s = s;
  table.N = N;
  table.lambda = lambda;
  double best = -1.0;
  for (const KernelProbe& probe : probes) {
    check_point(probe.source);
    check_point(probe.target);
    SpectralField moved = evolution(coherent_state(g, s, probe.source));
    require(moved.grid() == g, Err::invalid_argument, "kernel_decay_probe: evolution changed the grid");
    ProbeRow row;
    row.probe = probe;
    row.measured = std::abs(bargmann_point(moved, t, probe.target));
    std::array<double, 3> dx{}, dxi{};
    for (int a = 0; a < 3; ++a) {
      dx[size_t(a)] = probe.target.x[size_t(a)] - probe.reference.x[size_t(a)];
      dxi[size_t(a)] = probe.target.xi[size_t(a)] - probe.reference.xi[size_t(a)];
    }
    const double bx = distorted_norm(dx, g.d, lambda);
    const double bxi = distorted_norm(dxi, g.d, 1.0 / lambda);
    const double bracket = 1.0 + probe.dpsi * probe.dpsi + bx * bx / t + s * bxi * bxi;
    row.bound = std::pow(t / s, -0.25 * g.d) * std::pow(bracket, -N);
    row.ratio = row.measured / row.bound;
    if (row.ratio > best) {
      best = row.ratio;
      table.max_index = table.rows.size();
    }
    table.rows.push_back(row);
  }
  return table;
}

void dump_probe_csv(const ProbeTable& table, const std::string& path) {
  Table out;
  out.columns = {"t", "s"};
  for (int a = 0; a < table.d; ++a) out.columns.push_back("x" + std::to_string(a));
  for (int a = 0; a < table.d; ++a) out.columns.push_back("xi" + std::to_string(a));
  out.columns.push_back("measured");
  out.columns.push_back("bound_N");
  out.columns.push_back("ratio");
  for (const ProbeRow& r : table.rows) {
    std::vector<double> row{table.t, table.s};
    for (int a = 0; a < table.d; ++a) row.push_back(r.probe.target.x[size_t(a)]);
    for (int a = 0; a < table.d; ++a) row.push_back(r.probe.target.xi[size_t(a)]);
    row.push_back(r.measured);
    row.push_back(r.bound);
    row.push_back(r.ratio);
    out.rows.push_back(std::move(row));
  }
  write_table_csv(out, path);
}

}  // namespace displab
