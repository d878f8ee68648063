#include "core/pdo.hpp"

#include <cmath>
#include <limits>
#include <mutex>
#include <random>

#include "core/io.hpp"

namespace displab {

double SpinorField::norm_l2() const {
  double s = 0.0;
  for (const auto& c : comp) {
    const double n = c.norm_l2();
    s += n * n;
  }
  return std::sqrt(s);
}

SpinorField& SpinorField::operator+=(const SpinorField& o) {
  for (int c = 0; c < 4; ++c) comp[static_cast<size_t>(c)] += o.comp[static_cast<size_t>(c)];
  return *this;
}

SpinorField& SpinorField::operator-=(const SpinorField& o) {
  for (int c = 0; c < 4; ++c) comp[static_cast<size_t>(c)] -= o.comp[static_cast<size_t>(c)];
  return *this;
}

SpinorField& SpinorField::operator*=(cd a) {
  for (auto& c : comp) c *= a;
  return *this;
}

SpinorField random_band_spinor(const Grid& g, int k, std::uint64_t seed) {
  SpinorField u(g);
  const std::int64_t npts = g.npts();
  for (int c = 0; c < 4; ++c) {
    std::mt19937_64 eng(mix_seed(seed + 0x9d5ull * static_cast<std::uint64_t>(c + 1)));
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto& coeffs = u.comp[static_cast<size_t>(c)].mutable_coeffs();
    for (std::int64_t f = 0; f < npts; ++f) {
      const double w = lp_symbol(g.xi_norm(f), k);
      if (w > 0.0) {
        coeffs[static_cast<size_t>(f)] = w * cd(gauss(eng), gauss(eng));
      } else {
        // keep the engine stream aligned so masking does not shift draws
        gauss(eng);
        gauss(eng);
      }
    }
  }
  const double n = u.norm_l2();
  require(n > 0.0, Err::invalid_argument, "random_band_spinor: dyadic band 2^" + std::to_string(k) + " is empty on this grid");
  u *= cd(1.0 / n, 0.0);
  return u;
}

namespace {

double dot_d(int d, const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double s = 0.0;
  for (int i = 0; i < d; ++i) s += a[static_cast<size_t>(i)] * b[static_cast<size_t>(i)];
  return s;
}

std::function<cd(const std::array<double, 3>&)> conj_mult(std::function<cd(const std::array<double, 3>&)> m) {
  return [m](const std::array<double, 3>& xi) { return std::conj(m(xi)); };
}

double fit_log2_slope(const std::vector<int>& xs, const std::vector<double>& ys) {
  const size_t n = xs.size();
  if (n < 2) return 0.0;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < n; ++i) {
    const double x = xs[i], y = std::log2(std::max(ys[i], 1e-300));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double den = n * sxx - sx * sx;
  return den == 0.0 ? 0.0 : (n * sxy - sx * sy) / den;
}

}  // namespace

struct QuantizedOperator::Impl {
  enum class Kind { multiplier, matrix_multiplier, kn, weyl, separable, matrix_kn, matrix_separable, projector };

  Kind kind = Kind::multiplier;
  Symbol sym;
  QuantFlavor flav = QuantFlavor::kohn_nirenberg;
  Grid g;

  // matrix_separable payload: per-term frequency factors plus one sweep that
  // fills all x-tables for a given time (geometry per point is shared work)
  using MatTables = std::vector<std::vector<Eigen::Matrix4cd>>;
  std::vector<std::function<cd(const std::array<double, 3>&)>> mat_gxi;
  std::function<void(double, const Grid&, MatTables&)> mat_fill;
  mutable std::mutex cache_mu;
  mutable double cache_t = std::numeric_limits<double>::quiet_NaN();
  mutable std::shared_ptr<const MatTables> cache_tabs;

  // projector payload
  double pm = 0.0;
  QuantizedOperator inner;
  std::function<cd(const std::array<double, 3>&)> outer_mult;

  std::shared_ptr<const MatTables> mat_tables(double t) const {
    std::lock_guard<std::mutex> lock(cache_mu);
    if (!cache_tabs || !(cache_t == t)) {
      auto fresh = std::make_shared<MatTables>();
      mat_fill(t, g, *fresh);
      cache_tabs = std::move(fresh);
      cache_t = t;
    }
    return cache_tabs;
  }
};

const Symbol& QuantizedOperator::symbol() const {
  require(valid(), Err::invalid_argument, "operator: empty");
  return impl_->sym;
}
QuantFlavor QuantizedOperator::flavor() const {
  require(valid(), Err::invalid_argument, "operator: empty");
  return impl_->flav;
}
const Grid& QuantizedOperator::grid() const {
  require(valid(), Err::invalid_argument, "operator: empty");
  return impl_->g;
}
bool QuantizedOperator::matrix_arity() const {
  require(valid(), Err::invalid_argument, "operator: empty");
  using K = Impl::Kind;
  const K k = impl_->kind;
  return k == K::matrix_multiplier || k == K::matrix_kn || k == K::matrix_separable || k == K::projector;
}

namespace {

// out(x_i) = (2 pi)^{-d/2} dxi^d sum_f a(t, x_i, xi_f) u^(f) e^{i xi_f . x_i}
SpectralField kn_apply_scalar(const Symbol& sym, const Grid& g, const SpectralField& u, double t) {
  const auto& C = u.coeffs();
  const std::int64_t npts = g.npts();
  SpectralField out(g);
  auto& vals = out.mutable_values();
  const double scale = std::pow(2.0 * kPi, -0.5 * g.d) * g.dual_cell_vol();
  std::array<double, 3> x{}, xi{};
  for (std::int64_t i = 0; i < npts; ++i) {
    g.x_at(i, x);
    cd acc(0.0, 0.0);
    for (std::int64_t f = 0; f < npts; ++f) {
      g.xi_at(f, xi);
      acc += sym.value(t, x, xi) * C[static_cast<size_t>(f)] * std::polar(1.0, dot_d(g.d, xi, x));
    }
    vals[static_cast<size_t>(i)] = scale * acc;
  }
  return out;
}

// (A* v)^(xi_f) = (2 pi)^{-d/2} dx^d sum_i conj(a(t, x_i, xi_f)) v(x_i) e^{-i xi_f . x_i}
SpectralField kn_apply_adjoint_scalar(const Symbol& sym, const Grid& g, const SpectralField& u, double t) {
  const auto& V = u.values();
  const std::int64_t npts = g.npts();
  SpectralField out(g);
  auto& coeffs = out.mutable_coeffs();
  const double scale = std::pow(2.0 * kPi, -0.5 * g.d) * g.cell_vol();
  std::array<double, 3> x{}, xi{};
  for (std::int64_t f = 0; f < npts; ++f) {
    g.xi_at(f, xi);
    cd acc(0.0, 0.0);
    for (std::int64_t i = 0; i < npts; ++i) {
      g.x_at(i, x);
      acc += std::conj(sym.value(t, x, xi)) * V[static_cast<size_t>(i)] * std::polar(1.0, -dot_d(g.d, xi, x));
    }
    coeffs[static_cast<size_t>(f)] = scale * acc;
  }
  return out;
}

// midpoint lattice index arithmetic for the weyl kernel: axis slot i+m
std::int64_t mid_flat_index(const Grid& g, const std::array<int, 3>& a, const std::array<int, 3>& b) {
  std::int64_t flat = 0;
  for (int ax = 0; ax < g.d; ++ax) flat = flat * (2 * g.n - 1) + (a[static_cast<size_t>(ax)] + b[static_cast<size_t>(ax)]);
  return flat;
}

// (Au)(x_i) = n^{-d} sum_m sum_f a(t, (x_i+y_m)/2, xi_f) e^{i xi_f.(x_i-y_m)} u(y_m)
SpectralField weyl_apply_scalar(const Symbol& sym, const Grid& g, const SpectralField& u, double t, bool adjoint) {
  const auto& V = u.values();
  const std::int64_t npts = g.npts();
  std::int64_t mids = 1;
  for (int ax = 0; ax < g.d; ++ax) mids *= 2 * g.n - 1;

  // midpoint-by-frequency symbol table; the kernel loop below is then pure arithmetic
  std::vector<cd> tab(static_cast<size_t>(mids * npts));
  std::array<double, 3> mid{}, xi{};
  std::array<int, 3> sidx{};
  for (std::int64_t s = 0; s < mids; ++s) {
    std::int64_t r = s;
    for (int ax = g.d - 1; ax >= 0; --ax) {
      sidx[static_cast<size_t>(ax)] = static_cast<int>(r % (2 * g.n - 1));
      r /= 2 * g.n - 1;
    }
    for (int ax = 0; ax < g.d; ++ax) mid[static_cast<size_t>(ax)] = -g.L + 0.5 * g.dx() * sidx[static_cast<size_t>(ax)];
    for (std::int64_t f = 0; f < npts; ++f) {
      g.xi_at(f, xi);
      const cd a = sym.value(t, mid, xi);
      tab[static_cast<size_t>(s * npts + f)] = adjoint ? std::conj(a) : a;
    }
  }

  SpectralField out(g);
  auto& vals = out.mutable_values();
  const double scale = std::pow(static_cast<double>(g.n), -g.d);
  std::array<int, 3> ii{}, mm{};
  std::array<double, 3> delta{};
  for (std::int64_t i = 0; i < npts; ++i) {
    g.unflatten(i, ii);
    cd acc(0.0, 0.0);
    for (std::int64_t m = 0; m < npts; ++m) {
      g.unflatten(m, mm);
      for (int ax = 0; ax < g.d; ++ax)
        delta[static_cast<size_t>(ax)] = g.dx() * (ii[static_cast<size_t>(ax)] - mm[static_cast<size_t>(ax)]);
      const std::int64_t s = mid_flat_index(g, ii, mm);
      cd ker(0.0, 0.0);
      for (std::int64_t f = 0; f < npts; ++f) {
        g.xi_at(f, xi);
        ker += tab[static_cast<size_t>(s * npts + f)] * std::polar(1.0, dot_d(g.d, xi, delta));
      }
      acc += ker * V[static_cast<size_t>(m)];
    }
    vals[static_cast<size_t>(i)] = scale * acc;
  }
  return out;
}

SpectralField separable_apply(const Symbol& sym, const Grid& g, const SpectralField& u, double t) {
  const std::int64_t npts = g.npts();
  SpectralField out(g);
  auto& vals = out.mutable_values();
  std::array<double, 3> x{};
  for (const auto& term : sym.separable()) {
    SpectralField w = apply_multiplier(u, term.gxi);
    const auto& wv = w.values();
    for (std::int64_t i = 0; i < npts; ++i) {
      g.x_at(i, x);
      vals[static_cast<size_t>(i)] += term.fx(t, x) * wv[static_cast<size_t>(i)];
    }
  }
  return out;
}

SpectralField separable_apply_adjoint(const Symbol& sym, const Grid& g, const SpectralField& u, double t) {
  const std::int64_t npts = g.npts();
  const auto& V = u.values();
  SpectralField out(g);
  auto& coeffs = out.mutable_coeffs();
  std::array<double, 3> x{};
  for (const auto& term : sym.separable()) {
    SpectralField w(g);
    auto& wv = w.mutable_values();
    for (std::int64_t i = 0; i < npts; ++i) {
      g.x_at(i, x);
      wv[static_cast<size_t>(i)] = std::conj(term.fx(t, x)) * V[static_cast<size_t>(i)];
    }
    SpectralField z = apply_multiplier(w, conj_mult(term.gxi));
    const auto& zc = z.coeffs();
    for (std::int64_t f = 0; f < npts; ++f) coeffs[static_cast<size_t>(f)] += zc[static_cast<size_t>(f)];
  }
  return out;
}

SpinorField matrix_multiplier_apply(const Symbol& sym, const Grid& g, const SpinorField& u, double t, bool adjoint) {
  const std::int64_t npts = g.npts();
  SpinorField out(g);
  std::array<const std::vector<cd>*, 4> in{};
  std::array<std::vector<cd>*, 4> oc{};
  for (int c = 0; c < 4; ++c) {
    in[static_cast<size_t>(c)] = &u.comp[static_cast<size_t>(c)].coeffs();
    oc[static_cast<size_t>(c)] = &out.comp[static_cast<size_t>(c)].mutable_coeffs();
  }
  std::array<double, 3> xi{};
  const std::array<double, 3> origin{};
  for (std::int64_t f = 0; f < npts; ++f) {
    g.xi_at(f, xi);
    Eigen::Matrix4cd A = sym.matrix_value(t, origin, xi);
    if (adjoint) A = Eigen::Matrix4cd(A.adjoint());
    Eigen::Vector4cd v;
    for (int c = 0; c < 4; ++c) v(c) = (*in[static_cast<size_t>(c)])[static_cast<size_t>(f)];
    Eigen::Vector4cd w = A * v;
    for (int c = 0; c < 4; ++c) (*oc[static_cast<size_t>(c)])[static_cast<size_t>(f)] = w(c);
  }
  return out;
}

SpinorField matrix_kn_apply(const Symbol& sym, const Grid& g, const SpinorField& u, double t) {
  const std::int64_t npts = g.npts();
  SpinorField out(g);
  std::array<const std::vector<cd>*, 4> in{};
  std::array<std::vector<cd>*, 4> ov{};
  for (int c = 0; c < 4; ++c) {
    in[static_cast<size_t>(c)] = &u.comp[static_cast<size_t>(c)].coeffs();
    ov[static_cast<size_t>(c)] = &out.comp[static_cast<size_t>(c)].mutable_values();
  }
  const double scale = std::pow(2.0 * kPi, -0.5 * g.d) * g.dual_cell_vol();
  std::array<double, 3> x{}, xi{};
  for (std::int64_t i = 0; i < npts; ++i) {
    g.x_at(i, x);
    Eigen::Vector4cd acc = Eigen::Vector4cd::Zero();
    for (std::int64_t f = 0; f < npts; ++f) {
      g.xi_at(f, xi);
      Eigen::Vector4cd v;
      for (int c = 0; c < 4; ++c) v(c) = (*in[static_cast<size_t>(c)])[static_cast<size_t>(f)];
      acc += sym.matrix_value(t, x, xi) * v * std::polar(1.0, dot_d(g.d, xi, x));
    }
    for (int c = 0; c < 4; ++c) (*ov[static_cast<size_t>(c)])[static_cast<size_t>(i)] = scale * acc(c);
  }
  return out;
}

SpinorField matrix_kn_apply_adjoint(const Symbol& sym, const Grid& g, const SpinorField& u, double t) {
  const std::int64_t npts = g.npts();
  SpinorField out(g);
  std::array<const std::vector<cd>*, 4> in{};
  std::array<std::vector<cd>*, 4> oc{};
  for (int c = 0; c < 4; ++c) {
    in[static_cast<size_t>(c)] = &u.comp[static_cast<size_t>(c)].values();
    oc[static_cast<size_t>(c)] = &out.comp[static_cast<size_t>(c)].mutable_coeffs();
  }
  const double scale = std::pow(2.0 * kPi, -0.5 * g.d) * g.cell_vol();
  std::array<double, 3> x{}, xi{};
  for (std::int64_t f = 0; f < npts; ++f) {
    g.xi_at(f, xi);
    Eigen::Vector4cd acc = Eigen::Vector4cd::Zero();
    for (std::int64_t i = 0; i < npts; ++i) {
      g.x_at(i, x);
      Eigen::Vector4cd v;
      for (int c = 0; c < 4; ++c) v(c) = (*in[static_cast<size_t>(c)])[static_cast<size_t>(i)];
      acc += Eigen::Matrix4cd(sym.matrix_value(t, x, xi).adjoint()) * v * std::polar(1.0, -dot_d(g.d, xi, x));
    }
    for (int c = 0; c < 4; ++c) (*oc[static_cast<size_t>(c)])[static_cast<size_t>(f)] = scale * acc(c);
  }
  return out;
}

}  // namespace

SpectralField QuantizedOperator::apply(const SpectralField& u, double t) const {
  require(valid(), Err::invalid_argument, "operator: empty");
  require(u.grid() == impl_->g, Err::invalid_argument, "operator: field grid mismatch");
  using K = Impl::Kind;
  switch (impl_->kind) {
    case K::multiplier: {
      const Symbol sym = impl_->sym;
      const std::array<double, 3> origin{};
      return apply_multiplier(u, [sym, t, origin](const std::array<double, 3>& xi) { return sym.value(t, origin, xi); });
    }
    case K::kn:
      return kn_apply_scalar(impl_->sym, impl_->g, u, t);
    case K::weyl:
      return weyl_apply_scalar(impl_->sym, impl_->g, u, t, false);
    case K::separable:
      return separable_apply(impl_->sym, impl_->g, u, t);
    default:
      fail(Err::invalid_argument, "operator: matrix-valued operator needs a spinor field");
  }
}

SpectralField QuantizedOperator::apply_adjoint(const SpectralField& u, double t) const {
  require(valid(), Err::invalid_argument, "operator: empty");
  require(u.grid() == impl_->g, Err::invalid_argument, "operator: field grid mismatch");
  using K = Impl::Kind;
  switch (impl_->kind) {
    case K::multiplier: {
      const Symbol sym = impl_->sym;
      const std::array<double, 3> origin{};
      return apply_multiplier(u, [sym, t, origin](const std::array<double, 3>& xi) { return std::conj(sym.value(t, origin, xi)); });
    }
    case K::kn:
      return kn_apply_adjoint_scalar(impl_->sym, impl_->g, u, t);
    case K::weyl:
      return weyl_apply_scalar(impl_->sym, impl_->g, u, t, true);
    case K::separable:
      return separable_apply_adjoint(impl_->sym, impl_->g, u, t);
    default:
      fail(Err::invalid_argument, "operator: matrix-valued operator needs a spinor field");
  }
}

SpinorField QuantizedOperator::apply(const SpinorField& u, double t) const {
  require(valid(), Err::invalid_argument, "operator: empty");
  require(u.grid() == impl_->g, Err::invalid_argument, "operator: field grid mismatch");
  using K = Impl::Kind;
  switch (impl_->kind) {
    case K::multiplier:
    case K::kn:
    case K::weyl:
    case K::separable: {
      SpinorField out(impl_->g);
      for (int c = 0; c < 4; ++c) out.comp[static_cast<size_t>(c)] = apply(u.comp[static_cast<size_t>(c)], t);
      return out;
    }
    case K::matrix_multiplier:
      return matrix_multiplier_apply(impl_->sym, impl_->g, u, t, false);
    case K::matrix_kn:
      return matrix_kn_apply(impl_->sym, impl_->g, u, t);
    case K::matrix_separable: {
      const auto tabs_ptr = impl_->mat_tables(t);
      const auto& tabs = *tabs_ptr;
      const Grid& g = impl_->g;
      const std::int64_t npts = g.npts();
      SpinorField out(g);
      std::array<std::vector<cd>*, 4> ov{};
      for (int c = 0; c < 4; ++c) ov[static_cast<size_t>(c)] = &out.comp[static_cast<size_t>(c)].mutable_values();
      for (size_t m = 0; m < impl_->mat_gxi.size(); ++m) {
        std::array<SpectralField, 4> w;
        std::array<const std::vector<cd>*, 4> wv{};
        for (int c = 0; c < 4; ++c) {
          w[static_cast<size_t>(c)] = apply_multiplier(u.comp[static_cast<size_t>(c)], impl_->mat_gxi[m]);
          wv[static_cast<size_t>(c)] = &w[static_cast<size_t>(c)].values();
        }
        for (std::int64_t i = 0; i < npts; ++i) {
          const Eigen::Matrix4cd& F = tabs[m][static_cast<size_t>(i)];
          Eigen::Vector4cd v;
          for (int c = 0; c < 4; ++c) v(c) = (*wv[static_cast<size_t>(c)])[static_cast<size_t>(i)];
          Eigen::Vector4cd r = F * v;
          for (int c = 0; c < 4; ++c) (*ov[static_cast<size_t>(c)])[static_cast<size_t>(i)] += r(c);
        }
      }
      return out;
    }
    case K::projector: {
      SpinorField w = impl_->inner.apply(u, t);
      for (int c = 0; c < 4; ++c)
        apply_multiplier_inplace(w.comp[static_cast<size_t>(c)], impl_->outer_mult);
      SpinorField out = u;
      out *= cd(0.5, 0.0);
      w *= cd(0.5 * impl_->pm, 0.0);
      out += w;
      return out;
    }
  }
  fail(Err::invalid_argument, "operator: unreachable kind");
}

SpinorField QuantizedOperator::apply_adjoint(const SpinorField& u, double t) const {
  require(valid(), Err::invalid_argument, "operator: empty");
  require(u.grid() == impl_->g, Err::invalid_argument, "operator: field grid mismatch");
  using K = Impl::Kind;
  switch (impl_->kind) {
    case K::multiplier:
    case K::kn:
    case K::weyl:
    case K::separable: {
      SpinorField out(impl_->g);
      for (int c = 0; c < 4; ++c) out.comp[static_cast<size_t>(c)] = apply_adjoint(u.comp[static_cast<size_t>(c)], t);
      return out;
    }
    case K::matrix_multiplier:
      return matrix_multiplier_apply(impl_->sym, impl_->g, u, t, true);
    case K::matrix_kn:
      return matrix_kn_apply_adjoint(impl_->sym, impl_->g, u, t);
    case K::matrix_separable: {
      // (sum_m F_m(x) g_m(D))* = sum_m conj(g_m)(D) F_m(x)^H
      const auto tabs_ptr = impl_->mat_tables(t);
      const auto& tabs = *tabs_ptr;
      const Grid& g = impl_->g;
      const std::int64_t npts = g.npts();
      SpinorField out(g);
      std::array<std::vector<cd>*, 4> oc{};
      for (int c = 0; c < 4; ++c) oc[static_cast<size_t>(c)] = &out.comp[static_cast<size_t>(c)].mutable_coeffs();
      std::array<const std::vector<cd>*, 4> uv{};
      for (int c = 0; c < 4; ++c) uv[static_cast<size_t>(c)] = &u.comp[static_cast<size_t>(c)].values();
      for (size_t m = 0; m < impl_->mat_gxi.size(); ++m) {
        SpinorField w(g);
        std::array<std::vector<cd>*, 4> wv{};
        for (int c = 0; c < 4; ++c) wv[static_cast<size_t>(c)] = &w.comp[static_cast<size_t>(c)].mutable_values();
        for (std::int64_t i = 0; i < npts; ++i) {
          const Eigen::Matrix4cd FH = tabs[m][static_cast<size_t>(i)].adjoint();
          Eigen::Vector4cd v;
          for (int c = 0; c < 4; ++c) v(c) = (*uv[static_cast<size_t>(c)])[static_cast<size_t>(i)];
          Eigen::Vector4cd r = FH * v;
          for (int c = 0; c < 4; ++c) (*wv[static_cast<size_t>(c)])[static_cast<size_t>(i)] = r(c);
        }
        for (int c = 0; c < 4; ++c) {
          SpectralField z = apply_multiplier(w.comp[static_cast<size_t>(c)], conj_mult(impl_->mat_gxi[m]));
          const auto& zc = z.coeffs();
          for (std::int64_t f = 0; f < npts; ++f) (*oc[static_cast<size_t>(c)])[static_cast<size_t>(f)] += zc[static_cast<size_t>(f)];
        }
      }
      return out;
    }
    case K::projector: {
      SpinorField z = u;
      for (int c = 0; c < 4; ++c)
        apply_multiplier_inplace(z.comp[static_cast<size_t>(c)], conj_mult(impl_->outer_mult));
      SpinorField w = impl_->inner.apply_adjoint(z, t);
      SpinorField out = u;
      out *= cd(0.5, 0.0);
      w *= cd(0.5 * impl_->pm, 0.0);
      out += w;
      return out;
    }
  }
  fail(Err::invalid_argument, "operator: unreachable kind");
}

namespace {

// dense-path op budgets; past these the synthesis loops are no longer a
// sensible route and the caller should restructure the symbol
constexpr std::int64_t kKnOpBudget = std::int64_t(1) << 30;
constexpr std::int64_t kWeylOpBudget = std::int64_t(1) << 26;

void check_kn_budget(const Grid& g) {
  const std::int64_t work = g.npts() * g.npts();
  require(work <= kKnOpBudget, Err::budget,
          "dense kohn-nirenberg synthesis: " + std::to_string(g.npts()) + "^2 = " + std::to_string(work) +
              " point-frequency pairs exceeds the op budget " + std::to_string(kKnOpBudget) +
              "; declare separable structure or reduce the grid");
}

void check_weyl_budget(const Grid& g) {
  const std::int64_t work = g.npts() * g.npts() * g.npts();
  require(work <= kWeylOpBudget, Err::budget,
          "dense weyl synthesis: " + std::to_string(g.npts()) + "^3 = " + std::to_string(work) +
              " kernel entries exceeds the op budget " + std::to_string(kWeylOpBudget) + "; reduce the grid");
}

}  // namespace

QuantizedOperator quantize(const Symbol& sym, QuantFlavor flavor, const Grid& g) {
  require(sym.valid(), Err::invalid_argument, "quantize: empty symbol");
  require(sym.dim() == g.d, Err::invalid_argument, "quantize: symbol and grid dimensions differ");
  auto impl = std::make_shared<QuantizedOperator::Impl>();
  impl->sym = sym;
  impl->flav = flavor;
  impl->g = g;
  using K = QuantizedOperator::Impl::Kind;
  if (sym.arity() == SymbolArity::matrix) {
    if (sym.x_independent()) {
      impl->kind = K::matrix_multiplier;
    } else {
      require(flavor == QuantFlavor::kohn_nirenberg, Err::invalid_argument,
              "quantize: weyl flavor is not provided for x-dependent matrix symbols");
      check_kn_budget(g);
      impl->kind = K::matrix_kn;
    }
  } else if (sym.x_independent()) {
    impl->kind = K::multiplier;
  } else if (!sym.separable().empty() && flavor == QuantFlavor::kohn_nirenberg) {
    impl->kind = K::separable;
  } else if (flavor == QuantFlavor::kohn_nirenberg) {
    check_kn_budget(g);
    impl->kind = K::kn;
  } else {
    check_weyl_budget(g);
    impl->kind = K::weyl;
  }
  QuantizedOperator op;
  op.impl_ = std::move(impl);
  return op;
}

Eigen::Matrix4cd flat_projector_matrix(double M, int sign, const std::array<double, 3>& xi) {
  require(M > 0.0, Err::invalid_argument, "flat_projector: mass must be positive");
  require(sign == 1 || sign == -1, Err::invalid_argument, "flat_projector: sign must be +1 or -1");
  const auto& G = flat_gammas();
  Eigen::Matrix4cd A = M * G[0];
  for (int j = 0; j < 3; ++j) A += xi[static_cast<size_t>(j)] * (G[0] * G[static_cast<size_t>(j + 1)]);
  const double br = std::sqrt(M * M + xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]);
  return 0.5 * (Eigen::Matrix4cd::Identity() + (static_cast<double>(sign) / br) * A);
}

QuantizedOperator flat_projector(double M, int sign, const Grid& g) {
  require(M > 0.0, Err::invalid_argument, "flat_projector: mass must be positive");
  require(sign == 1 || sign == -1, Err::invalid_argument, "flat_projector: sign must be +1 or -1");
  Symbol sym = Symbol::matrix(
      g.d, 0.0, true, sign > 0 ? "Pi+flat" : "Pi-flat",
      [M, sign](double, const std::array<double, 3>&, const std::array<double, 3>& xi) {
        return flat_projector_matrix(M, sign, xi);
      });
  return quantize(sym, QuantFlavor::kohn_nirenberg, g);
}

QuantizedOperator dirac_generator(const MetricSpec& spec, double M, const Grid& g) {
  require(M > 0.0, Err::invalid_argument, "dirac_generator: mass must be positive");
  require(spec.dim() == g.d, Err::invalid_argument, "dirac_generator: metric and grid dimensions differ");
  const int d = g.d;
  auto impl = std::make_shared<QuantizedOperator::Impl>();
  impl->kind = QuantizedOperator::Impl::Kind::matrix_separable;
  impl->flav = QuantFlavor::kohn_nirenberg;
  impl->g = g;
  for (int j = 0; j < d; ++j)
    impl->mat_gxi.push_back([j](const std::array<double, 3>& xi) { return cd(xi[static_cast<size_t>(j)], 0.0); });
  impl->mat_gxi.push_back([](const std::array<double, 3>&) { return cd(1.0, 0.0); });
  MetricSpec spec_copy = spec;
  impl->mat_fill = [spec_copy, M, d](double t, const Grid& grid, std::vector<std::vector<Eigen::Matrix4cd>>& tabs) {
    const std::int64_t npts = grid.npts();
    tabs.assign(static_cast<size_t>(d + 1), std::vector<Eigen::Matrix4cd>(static_cast<size_t>(npts)));
    std::array<double, 3> x{};
    const cd mi(0.0, -1.0);
    for (std::int64_t i = 0; i < npts; ++i) {
      grid.x_at(i, x);
      const SpinFrame frame = vierbein(spec_copy, t, x);
      const auto gam = gamma_matrices(frame);
      const auto conn = spin_connection(spec_copy, t, x);
      Eigen::Matrix4cd low = conn[0];
      for (int j = 0; j < d; ++j) {
        const Eigen::Matrix4cd gj = gam[0] * gam[static_cast<size_t>(j + 1)];
        tabs[static_cast<size_t>(j)][static_cast<size_t>(i)] = gj;
        low += gj * conn[static_cast<size_t>(j + 1)];
      }
      tabs[static_cast<size_t>(d)][static_cast<size_t>(i)] = mi * low + M * gam[0];
    }
  };
  MetricSpec sym_spec = spec;
  impl->sym = Symbol::matrix(
      d, 1.0, false, "dirac_generator",
      [sym_spec, M, d](double t, const std::array<double, 3>& x, const std::array<double, 3>& xi) {
        const SpinFrame frame = vierbein(sym_spec, t, x);
        const auto gam = gamma_matrices(frame);
        const auto conn = spin_connection(sym_spec, t, x);
        const cd mi(0.0, -1.0);
        Eigen::Matrix4cd A = M * gam[0] + mi * conn[0];
        for (int j = 0; j < d; ++j) {
          const Eigen::Matrix4cd gj = gam[0] * gam[static_cast<size_t>(j + 1)];
          A += xi[static_cast<size_t>(j)] * gj + mi * (gj * conn[static_cast<size_t>(j + 1)]);
        }
        return A;
      });
  QuantizedOperator op;
  op.impl_ = std::move(impl);
  return op;
}

QuantizedOperator curved_projector(const MetricSpec& spec, double M, int sign, const Grid& g) {
  require(sign == 1 || sign == -1, Err::invalid_argument, "curved_projector: sign must be +1 or -1");
  QuantizedOperator gen = dirac_generator(spec, M, g);
  auto impl = std::make_shared<QuantizedOperator::Impl>();
  impl->kind = QuantizedOperator::Impl::Kind::projector;
  impl->flav = QuantFlavor::kohn_nirenberg;
  impl->g = g;
  impl->pm = static_cast<double>(sign);
  impl->inner = gen;
  impl->outer_mult = [M](const std::array<double, 3>& xi) {
    return cd(1.0 / std::sqrt(M * M + xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]), 0.0);
  };
  const Symbol gen_sym = gen.symbol();
  impl->sym = Symbol::matrix(
      g.d, 0.0, false, sign > 0 ? "Pi+" : "Pi-",
      [gen_sym, M, sign](double t, const std::array<double, 3>& x, const std::array<double, 3>& xi) {
        const double br = std::sqrt(M * M + xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]);
        return Eigen::Matrix4cd(0.5 * (Eigen::Matrix4cd::Identity() +
                                       (static_cast<double>(sign) / br) * gen_sym.matrix_value(t, x, xi)));
      });
  QuantizedOperator op;
  op.impl_ = std::move(impl);
  return op;
}

QuantizedOperator projector_error_proxy(const MetricSpec& spec, double M, const Grid& g) {
  require(M > 0.0, Err::invalid_argument, "projector_error_proxy: mass must be positive");
  require(spec.dim() == g.d, Err::invalid_argument, "projector_error_proxy: metric and grid dimensions differ");
  const int d = g.d;
  MetricSpec spec_copy = spec;
  Symbol sym = Symbol::from_value(
      d, 0.0, false, "E0proxy",
      [spec_copy, M, d](double t, const std::array<double, 3>& x, const std::array<double, 3>& xi) {
        Eigen::Matrix3d gm;
        metric_value(spec_copy, t, x, gm);
        double q = 0.0, n2 = M * M;
        for (int j = 0; j < d; ++j) n2 += xi[static_cast<size_t>(j)] * xi[static_cast<size_t>(j)];
        for (int j = 0; j < d; ++j)
          for (int k = 0; k < d; ++k)
            q += (gm(j, k) - (j == k ? 1.0 : 0.0)) * xi[static_cast<size_t>(j)] * xi[static_cast<size_t>(k)];
        return cd(0.25 * q / n2, 0.0);
      });
  std::vector<Symbol::SepTerm> terms;
  for (int j = 0; j < d; ++j) {
    for (int k = 0; k < d; ++k) {
      Symbol::SepTerm term;
      term.fx = [spec_copy, j, k](double t, const std::array<double, 3>& x) {
        Eigen::Matrix3d gm;
        metric_value(spec_copy, t, x, gm);
        return cd(0.25 * (gm(j, k) - (j == k ? 1.0 : 0.0)), 0.0);
      };
      term.gxi = [M, j, k, d](const std::array<double, 3>& xi) {
        double n2 = M * M;
        for (int a = 0; a < d; ++a) n2 += xi[static_cast<size_t>(a)] * xi[static_cast<size_t>(a)];
        return cd(xi[static_cast<size_t>(j)] * xi[static_cast<size_t>(k)] / n2, 0.0);
      };
      terms.push_back(std::move(term));
    }
  }
  sym.set_separable(std::move(terms));
  return quantize(sym, QuantFlavor::kohn_nirenberg, g);
}

double operator_norm(const QuantizedOperator& A, double t, std::uint64_t seed, int iters, double tol) {
  require(A.valid(), Err::invalid_argument, "operator_norm: empty operator");
  require(iters >= 1, Err::invalid_argument, "operator_norm: iters must be >= 1");
  const Grid& g = A.grid();
  const std::int64_t npts = g.npts();
  std::mt19937_64 eng(mix_seed(seed));
  std::normal_distribution<double> gauss(0.0, 1.0);
  double sigma = 0.0, prev = -1.0;
  if (A.matrix_arity()) {
    SpinorField v(g);
    for (int c = 0; c < 4; ++c) {
      auto& coeffs = v.comp[static_cast<size_t>(c)].mutable_coeffs();
      for (std::int64_t f = 0; f < npts; ++f) coeffs[static_cast<size_t>(f)] = cd(gauss(eng), gauss(eng));
    }
    double n = v.norm_l2();
    v *= cd(1.0 / n, 0.0);
    for (int it = 0; it < iters; ++it) {
      SpinorField w = A.apply(v, t);
      sigma = w.norm_l2();
      if (sigma == 0.0) return 0.0;
      SpinorField z = A.apply_adjoint(w, t);
      const double zn = z.norm_l2();
      if (zn == 0.0) return sigma;
      z *= cd(1.0 / zn, 0.0);
      v = z;
      if (prev >= 0.0 && std::abs(sigma - prev) <= tol * std::max(1.0, sigma)) break;
      prev = sigma;
    }
  } else {
    SpectralField v(g);
    auto& coeffs = v.mutable_coeffs();
    for (std::int64_t f = 0; f < npts; ++f) coeffs[static_cast<size_t>(f)] = cd(gauss(eng), gauss(eng));
    double n = v.norm_l2();
    v *= cd(1.0 / n, 0.0);
    for (int it = 0; it < iters; ++it) {
      SpectralField w = A.apply(v, t);
      sigma = w.norm_l2();
      if (sigma == 0.0) return 0.0;
      SpectralField z = A.apply_adjoint(w, t);
      const double zn = z.norm_l2();
      if (zn == 0.0) return sigma;
      z *= cd(1.0 / zn, 0.0);
      v = z;
      if (prev >= 0.0 && std::abs(sigma - prev) <= tol * std::max(1.0, sigma)) break;
      prev = sigma;
    }
  }
  return sigma;
}

DefectTable projector_defect(const MetricSpec& spec, double M, int sign, const Grid& g, const std::vector<int>& ks,
                             std::uint64_t seed, double t) {
  require(!ks.empty(), Err::invalid_argument, "projector_defect: no scales given");
  QuantizedOperator Pi = curved_projector(spec, M, sign, g);
  QuantizedOperator E0 = projector_error_proxy(spec, M, g);
  DefectTable table;
  std::vector<int> seen_k;
  std::vector<double> seen_defect;
  for (int k : ks) {
    SpinorField u = random_band_spinor(g, k, seed + static_cast<std::uint64_t>(k) * 0x51ull);
    SpinorField w = Pi.apply(u, t);
    SpinorField v = Pi.apply(w, t);
    v -= w;
    SpinorField e = E0.apply(u, t);
    v -= e;
    DefectRow row;
    row.k = k;
    row.defect = v.norm_l2() / u.norm_l2();
    seen_k.push_back(k);
    seen_defect.push_back(row.defect);
    row.slope_so_far = fit_log2_slope(seen_k, seen_defect);
    table.rows.push_back(row);
  }
  table.slope = table.rows.back().slope_so_far;
  return table;
}

void dump_defect_csv(const DefectTable& table, const std::string& path) {
  Table t;
  t.columns = {"k", "defect", "slope-so-far"};
  for (const auto& row : table.rows) t.add_row({static_cast<double>(row.k), row.defect, row.slope_so_far});
  write_table_csv(t, path);
}

}  // namespace displab
