#include "core/grid.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>

#include "core/bump.hpp"
#include "core/io.hpp"

namespace displab {

double Grid::cell_vol() const {
  double v = 1.0;
  for (int i = 0; i < d; ++i) v *= dx();
  return v;
}

double Grid::dual_cell_vol() const {
  double v = 1.0;
  for (int i = 0; i < d; ++i) v *= dxi();
  return v;
}

void Grid::unflatten(std::int64_t flat, std::array<int, 3>& idx) const {
  idx = {0, 0, 0};
  for (int a = d - 1; a >= 0; --a) {
    idx[a] = static_cast<int>(flat % n);
    flat /= n;
  }
}

std::int64_t Grid::flatten(const std::array<int, 3>& idx) const {
  std::int64_t f = 0;
  for (int a = 0; a < d; ++a) f = f * n + idx[a];
  return f;
}

void Grid::xi_at(std::int64_t flat, std::array<double, 3>& xi) const {
  std::array<int, 3> idx;
  unflatten(flat, idx);
  xi = {0.0, 0.0, 0.0};
  for (int a = 0; a < d; ++a) xi[a] = xi_axis(idx[a]);
}

void Grid::x_at(std::int64_t flat, std::array<double, 3>& x) const {
  std::array<int, 3> idx;
  unflatten(flat, idx);
  x = {0.0, 0.0, 0.0};
  for (int a = 0; a < d; ++a) x[a] = x_axis(idx[a]);
}

double Grid::xi_norm(std::int64_t flat) const {
  std::array<double, 3> xi;
  xi_at(flat, xi);
  return std::sqrt(xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]);
}

Grid make_grid(int d, int n, double L) {
  require(d >= 1 && d <= 3, Err::invalid_argument, "make_grid: d must be 1, 2, or 3");
  require(n >= 8 && (n & (n - 1)) == 0, Err::invalid_argument, "make_grid: n must be a power of two >= 8");
  require(L > 0.0, Err::invalid_argument, "make_grid: L must be positive");
  Grid g;
  g.d = d;
  g.n = n;
  g.L = L;
  return g;
}

namespace {

// Plans are created in-place per (d, n, sign) and reused via new-array execute.
class FftPlans {
 public:
  static fftw_plan get(const Grid& g, int sign) {
    static std::mutex mu;
    static std::map<std::tuple<int, int, int>, fftw_plan> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::make_tuple(g.d, g.n, sign);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    std::vector<cd> scratch(g.npts());
    int dims[3] = {g.n, g.n, g.n};
    fftw_plan p = fftw_plan_dft(g.d, dims, reinterpret_cast<fftw_complex*>(scratch.data()),
                                reinterpret_cast<fftw_complex*>(scratch.data()), sign,
                                FFTW_ESTIMATE | FFTW_UNALIGNED);
    require(p != nullptr, Err::numeric, "fftw plan creation failed");
    cache.emplace(key, p);
    return p;
  }
};

void check_finite(const std::vector<cd>& v, const char* what) {
  for (const cd& z : v)
    if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) fail(Err::numeric, std::string(what) + ": non-finite input");
}

int index_parity(const Grid& g, std::int64_t flat) {
  int s = 0;
  for (int a = 0; a < g.d; ++a) {
    s += static_cast<int>(flat % g.n);
    flat /= g.n;
  }
  return s & 1;
}

}  // namespace

SpectralField::SpectralField(const Grid& g) : g_(g), vals_(g.npts(), cd(0.0, 0.0)), vals_ok_(true) {}

void SpectralField::ensure_values() const {
  if (vals_ok_) return;
  require(coefs_ok_, Err::invalid_argument, "field holds no data");
  check_finite(coefs_, "inverse transform");
  // values[m] = (2pi)^{-d/2} dxi^d sum_k c_k e^{+i xi_k x_m}; the (-1)^k index
  // phase converts the FFT's 0-based layout to the x = -L origin.
  std::vector<cd> tmp(coefs_);
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(tmp.size()); ++i)
    if (index_parity(g_, i)) tmp[i] = -tmp[i];
  fftw_plan p = FftPlans::get(g_, FFTW_BACKWARD);
  fftw_execute_dft(p, reinterpret_cast<fftw_complex*>(tmp.data()), reinterpret_cast<fftw_complex*>(tmp.data()));
  const double scale = std::pow(2.0 * kPi, -0.5 * g_.d) * g_.dual_cell_vol();
  vals_.resize(tmp.size());
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(tmp.size()); ++i)
    vals_[i] = scale * tmp[i];
  vals_ok_ = true;
}

void SpectralField::ensure_coeffs() const {
  if (coefs_ok_) return;
  require(vals_ok_, Err::invalid_argument, "field holds no data");
  check_finite(vals_, "forward transform");
  std::vector<cd> tmp(vals_);
  fftw_plan p = FftPlans::get(g_, FFTW_FORWARD);
  fftw_execute_dft(p, reinterpret_cast<fftw_complex*>(tmp.data()), reinterpret_cast<fftw_complex*>(tmp.data()));
  const double scale = std::pow(2.0 * kPi, -0.5 * g_.d) * g_.cell_vol();
  coefs_.resize(tmp.size());
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(tmp.size()); ++i)
    coefs_[i] = scale * (index_parity(g_, i) ? -tmp[i] : tmp[i]);
  coefs_ok_ = true;
}

const std::vector<cd>& SpectralField::values() const {
  ensure_values();
  return vals_;
}

const std::vector<cd>& SpectralField::coeffs() const {
  ensure_coeffs();
  return coefs_;
}

std::vector<cd>& SpectralField::mutable_values() {
  ensure_values();
  coefs_ok_ = false;
  return vals_;
}

std::vector<cd>& SpectralField::mutable_coeffs() {
  ensure_coeffs();
  vals_ok_ = false;
  return coefs_;
}

double SpectralField::norm_l2() const {
  double s = 0.0;
  if (vals_ok_) {
    for (const cd& z : vals_) s += std::norm(z);
    return std::sqrt(s * g_.cell_vol());
  }
  for (const cd& z : coeffs()) s += std::norm(z);
  return std::sqrt(s * g_.dual_cell_vol());
}

double SpectralField::sup_norm() const {
  double s = 0.0;
  for (const cd& z : values()) s = std::max(s, std::abs(z));
  return s;
}

SpectralField& SpectralField::operator+=(const SpectralField& o) {
  require(g_ == o.g_, Err::invalid_argument, "field grids differ");
  auto& v = mutable_values();
  const auto& w = o.values();
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(v.size()); ++i) v[i] += w[i];
  return *this;
}

SpectralField& SpectralField::operator-=(const SpectralField& o) {
  require(g_ == o.g_, Err::invalid_argument, "field grids differ");
  auto& v = mutable_values();
  const auto& w = o.values();
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(v.size()); ++i) v[i] -= w[i];
  return *this;
}

SpectralField& SpectralField::operator*=(cd a) {
  if (vals_ok_) {
    coefs_ok_ = false;
    for (cd& z : vals_) z *= a;
  } else {
    for (cd& z : mutable_coeffs()) z *= a;
  }
  return *this;
}

SpectralField transform(const SpectralField& f, Direction dir) {
  SpectralField out = f;
  if (dir == Direction::forward)
    out.coeffs();
  else
    out.values();
  return out;
}

cd inner_product(const SpectralField& a, const SpectralField& b) {
  require(a.grid() == b.grid(), Err::invalid_argument, "field grids differ");
  cd s(0.0, 0.0);
  const auto& va = a.values();
  const auto& vb = b.values();
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(va.size()); ++i) s += std::conj(va[i]) * vb[i];
  return s * a.grid().cell_vol();
}

SpectralField field_from_function(const Grid& g, const std::function<cd(const std::array<double, 3>&)>& fn) {
  SpectralField f(g);
  auto& v = f.mutable_values();
  std::array<double, 3> x;
  for (std::int64_t i = 0; i < g.npts(); ++i) {
    g.x_at(i, x);
    v[i] = fn(x);
  }
  return f;
}

SpectralField gaussian_packet(const Grid& g, const std::array<double, 3>& x0, const std::array<double, 3>& xi0,
                              double width) {
  require(width > 0.0, Err::invalid_argument, "gaussian_packet: width must be positive");
  return field_from_function(g, [&](const std::array<double, 3>& x) {
    double q = 0.0, ph = 0.0;
    for (int a = 0; a < g.d; ++a) {
      const double dxa = x[a] - x0[a];
      q += dxa * dxa;
      ph += xi0[a] * dxa;
    }
    return std::exp(-q / (2.0 * width * width)) * cd(std::cos(ph), std::sin(ph));
  });
}

SpectralField apply_multiplier(const SpectralField& f, const std::function<cd(const std::array<double, 3>&)>& m) {
  SpectralField out = f;
  apply_multiplier_inplace(out, m);
  return out;
}

void apply_multiplier_inplace(SpectralField& f, const std::function<cd(const std::array<double, 3>&)>& m) {
  const Grid& g = f.grid();
  auto& c = f.mutable_coeffs();
  std::array<double, 3> xi;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(c.size()); ++i) {
    g.xi_at(i, xi);
    c[i] *= m(xi);
  }
}

double lp_symbol(double r, int j) {
  return dyadic_lowpass(r / std::pow(2.0, j)) - dyadic_lowpass(r / std::pow(2.0, j - 1));
}

SpectralField lp_below(const SpectralField& f, int j) {
  const double s = std::pow(2.0, j);
  return apply_multiplier(f, [&](const std::array<double, 3>& xi) {
    const double r = std::sqrt(xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]);
    return cd(dyadic_lowpass(r / s), 0.0);
  });
}

SpectralField littlewood_paley(const SpectralField& f, int j) {
  require(std::pow(2.0, j + 1) <= f.grid().nyquist(), Err::invalid_argument,
          "littlewood_paley: band 2^{j+1} beyond the Nyquist frequency");
  return apply_multiplier(f, [&](const std::array<double, 3>& xi) {
    const double r = std::sqrt(xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]);
    return cd(lp_symbol(r, j), 0.0);
  });
}

double frequency_cutoff_symbol(double r, double lo, double hi, Sharpness s) {
  require(lo >= 0.0 && lo < hi, Err::invalid_argument, "frequency_cutoff: need 0 <= lo < hi");
  if (s == Sharpness::sharp) return (r >= lo && r <= hi) ? 1.0 : 0.0;
  const double low = (lo > 0.0) ? 1.0 - dyadic_lowpass(2.0 * r / lo) : 1.0;
  return low * dyadic_lowpass(r / hi);
}

SpectralField frequency_cutoff(const SpectralField& f, double lo, double hi, Sharpness s) {
  require(lo >= 0.0 && lo < hi, Err::invalid_argument, "frequency_cutoff: need 0 <= lo < hi");
  return apply_multiplier(f, [&](const std::array<double, 3>& xi) {
    const double r = std::sqrt(xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]);
    return cd(frequency_cutoff_symbol(r, lo, hi, s), 0.0);
  });
}

void dump_field_csv(const SpectralField& f, const std::string& path, bool as_coeffs) {
  const Grid& g = f.grid();
  const auto& data = as_coeffs ? f.coeffs() : f.values();
  std::string out;
  out.reserve(data.size() * 48 + 64);
  char line[160];
  std::snprintf(line, sizeof line, "# grid d=%d n=%d L=%.17g repr=%s\n", g.d, g.n, g.L,
                as_coeffs ? "coeffs" : "values");
  out += line;
  std::array<int, 3> idx;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(data.size()); ++i) {
    g.unflatten(i, idx);
    int pos = 0;
    for (int a = 0; a < g.d; ++a) pos += std::snprintf(line + pos, sizeof line - pos, "%d,", idx[a]);
    std::snprintf(line + pos, sizeof line - pos, "%.17g,%.17g\n", data[i].real(), data[i].imag());
    out += line;
  }
  write_file_atomic(path, out);
}

}  // namespace displab
