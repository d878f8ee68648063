#pragma once

// Periodic computational box [-L,L)^d with unitary spectral transforms and
// dyadic frequency projections. Frequencies live on the lattice (pi/L)*k,
// k in [-n/2, n/2). Coefficients are trapezoid samples of the continuum
// unitary Fourier transform, so Parseval holds in the literal form
//   sum |values|^2 dx^d == sum |coeffs|^2 dxi^d.

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "core/common.hpp"

namespace displab {

struct Grid {
  int d = 0;
  int n = 0;
  double L = 0.0;

  std::int64_t npts() const {
    std::int64_t p = 1;
    for (int i = 0; i < d; ++i) p *= n;
    return p;
  }
  double dx() const { return 2.0 * L / n; }
  double dxi() const { return kPi / L; }
  double nyquist() const { return n * kPi / (2.0 * L); }
  double cell_vol() const;
  double dual_cell_vol() const;

  // storage index along one axis -> signed lattice integer / coordinate
  int k_signed(int i) const { return i < n / 2 ? i : i - n; }
  double xi_axis(int i) const { return dxi() * k_signed(i); }
  double x_axis(int m) const { return -L + dx() * m; }

  void unflatten(std::int64_t flat, std::array<int, 3>& idx) const;
  std::int64_t flatten(const std::array<int, 3>& idx) const;
  void xi_at(std::int64_t flat, std::array<double, 3>& xi) const;
  void x_at(std::int64_t flat, std::array<double, 3>& x) const;
  double xi_norm(std::int64_t flat) const;

  bool operator==(const Grid& o) const { return d == o.d && n == o.n && L == o.L; }
};

Grid make_grid(int d, int n, double L);

// Complex field with lazily consistent point samples and Fourier coefficients.
class SpectralField {
 public:
  SpectralField() = default;
  explicit SpectralField(const Grid& g);

  const Grid& grid() const { return g_; }

  const std::vector<cd>& values() const;
  const std::vector<cd>& coeffs() const;
  std::vector<cd>& mutable_values();
  std::vector<cd>& mutable_coeffs();

  bool has_values() const { return vals_ok_; }
  bool has_coeffs() const { return coefs_ok_; }

  double norm_l2() const;  // sqrt(sum |values|^2 dx^d)
  double sup_norm() const;

  SpectralField& operator+=(const SpectralField& o);
  SpectralField& operator-=(const SpectralField& o);
  SpectralField& operator*=(cd a);

 private:
  Grid g_;
  mutable std::vector<cd> vals_, coefs_;
  mutable bool vals_ok_ = false, coefs_ok_ = false;

  void ensure_values() const;
  void ensure_coeffs() const;
};

enum class Direction { forward, inverse };

// Populates the requested representation (checks for NaN/Inf in the source).
SpectralField transform(const SpectralField& f, Direction dir);

cd inner_product(const SpectralField& a, const SpectralField& b);

SpectralField field_from_function(const Grid& g, const std::function<cd(const std::array<double, 3>&)>& fn);

// Gaussian wave packet exp(-|x-x0|^2/(2 w^2)) exp(i xi0 . (x-x0)).
SpectralField gaussian_packet(const Grid& g, const std::array<double, 3>& x0, const std::array<double, 3>& xi0,
                              double width);

// Multiply coefficients by m(xi).
SpectralField apply_multiplier(const SpectralField& f, const std::function<cd(const std::array<double, 3>&)>& m);
void apply_multiplier_inplace(SpectralField& f, const std::function<cd(const std::array<double, 3>&)>& m);

// Dyadic pieces: lp_below(_,j) has symbol 1 on |xi| <= 2^j, 0 beyond 2^{j+1};
// littlewood_paley(_,j) = lp_below(_,j) - lp_below(_,j-1), supported in
// 2^{j-1} < |xi| < 2^{j+1}. Sums over j telescope exactly.
SpectralField littlewood_paley(const SpectralField& f, int j);
SpectralField lp_below(const SpectralField& f, int j);
double lp_symbol(double r, int j);  // the scalar profile of littlewood_paley

enum class Sharpness { smooth, sharp };
SpectralField frequency_cutoff(const SpectralField& f, double lo, double hi, Sharpness s);
double frequency_cutoff_symbol(double r, double lo, double hi, Sharpness s);

void dump_field_csv(const SpectralField& f, const std::string& path, bool as_coeffs);

}  // namespace displab
