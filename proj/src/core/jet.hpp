#pragma once

// Dense truncated multivariate Taylor arithmetic ("jets"). Metric profiles and
// analytic symbols are written once as ordinary expressions over Jet and yield
// machine-precision partial derivatives to the table order; no finite
// differencing is involved anywhere in profile/symbol derivative evaluation.

#include <array>
#include <cstdint>
#include <vector>

namespace displab {

inline constexpr int kJetMaxVars = 8;
inline constexpr int kJetMaxOrder = 6;

using MIdx = std::array<std::uint8_t, kJetMaxVars>;

// Shared index tables for (nvars, order); instances are cached and immutable.
class JetSpace {
 public:
  static const JetSpace& get(int nvars, int order);

  int nvars() const { return nvars_; }
  int order() const { return order_; }
  int size() const { return static_cast<int>(midx_.size()); }
  const MIdx& index(int pos) const { return midx_[pos]; }
  int position(const MIdx& a) const;  // -1 if |a| exceeds the order
  int total_degree(int pos) const { return degree_[pos]; }

  struct ProdTerm {
    std::int32_t a, b, target;
  };
  const std::vector<ProdTerm>& prod_terms() const { return prod_; }

 private:
  JetSpace(int nvars, int order);
  int nvars_, order_;
  std::vector<MIdx> midx_;
  std::vector<int> degree_;
  std::vector<int> key_to_pos_;
  std::vector<ProdTerm> prod_;
};

class Jet {
 public:
  Jet() : sp_(nullptr) {}
  explicit Jet(const JetSpace& sp, double value = 0.0);
  static Jet variable(const JetSpace& sp, int var, double value);

  double value() const { return c_[0]; }
  // d^alpha at the expansion point (alpha! times the Taylor coefficient).
  double deriv(const MIdx& alpha) const;
  const JetSpace& space() const { return *sp_; }

  Jet operator-() const;
  Jet& operator+=(const Jet& o);
  Jet& operator-=(const Jet& o);
  Jet& operator+=(double v);
  Jet& operator-=(double v);
  Jet& operator*=(double v);

  friend Jet operator+(Jet a, const Jet& b) { return a += b; }
  friend Jet operator-(Jet a, const Jet& b) { return a -= b; }
  friend Jet operator+(Jet a, double b) { return a += b; }
  friend Jet operator-(Jet a, double b) { return a -= b; }
  friend Jet operator+(double a, Jet b) { return b += a; }
  friend Jet operator-(double a, Jet b) { return (-b) += a; }
  friend Jet operator*(Jet a, double b) { return a *= b; }
  friend Jet operator*(double a, Jet b) { return b *= a; }
  friend Jet operator*(const Jet& a, const Jet& b);
  friend Jet operator/(const Jet& a, const Jet& b);
  friend Jet operator/(Jet a, double b) { return a *= (1.0 / b); }
  friend Jet operator/(double a, const Jet& b);

  // Composition with a scalar function given its derivatives at value().
  // derivs[k] = f^(k)(value()), k = 0..order.
  Jet compose(const std::vector<double>& derivs) const;

  friend Jet sqrt(const Jet& a);
  friend Jet exp(const Jet& a);
  friend Jet log(const Jet& a);
  friend Jet sin(const Jet& a);
  friend Jet cos(const Jet& a);
  friend Jet pow_int(const Jet& a, int k);
  friend Jet smooth_step(const Jet& a);  // jet lift of bump.hpp smooth_step

  const std::vector<double>& coeffs() const { return c_; }
  std::vector<double>& coeffs() { return c_; }

 private:
  const JetSpace* sp_;
  std::vector<double> c_;
};

// d/d(var) as a jet one order down; the source must carry order >= 2 so the
// result is itself a genuine truncated expansion.
Jet jet_partial(const Jet& f, int var);

}  // namespace displab
