#pragma once

// Quantization of phase-space symbols on the periodic grid, the Dirac
// projection operators built from the spin geometry, and the defect
// diagnostic that measures how far the curved projections are from being
// idempotent once the leading error operator is removed.

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "core/grid.hpp"
#include "core/metric.hpp"
#include "core/symbol.hpp"

namespace displab {

// Four-component field; components share one grid and transform together.
struct SpinorField {
  std::array<SpectralField, 4> comp;

  SpinorField() = default;
  explicit SpinorField(const Grid& g) : comp{SpectralField(g), SpectralField(g), SpectralField(g), SpectralField(g)} {}

  const Grid& grid() const { return comp[0].grid(); }
  double norm_l2() const;
  SpinorField& operator+=(const SpinorField& o);
  SpinorField& operator-=(const SpinorField& o);
  SpinorField& operator*=(cd a);
};

// Random spinor content band-limited to the dyadic shell around 2^k.
// Deterministic in (grid, k, seed); unit L2 norm.
SpinorField random_band_spinor(const Grid& g, int k, std::uint64_t seed);

enum class QuantFlavor { kohn_nirenberg, weyl };

class QuantizedOperator {
 public:
  QuantizedOperator() = default;

  bool valid() const { return impl_ != nullptr; }
  const Symbol& symbol() const;
  QuantFlavor flavor() const;
  const Grid& grid() const;
  // matrix operators accept spinor fields only; scalar operators accept both
  // (acting componentwise on spinors)
  bool matrix_arity() const;

  SpectralField apply(const SpectralField& u, double t = 0.0) const;
  SpinorField apply(const SpinorField& u, double t = 0.0) const;
  SpectralField apply_adjoint(const SpectralField& u, double t = 0.0) const;
  SpinorField apply_adjoint(const SpinorField& u, double t = 0.0) const;

 private:
  struct Impl;
  std::shared_ptr<const Impl> impl_;
  friend QuantizedOperator quantize(const Symbol&, QuantFlavor, const Grid&);
  friend QuantizedOperator flat_projector(double, int, const Grid&);
  friend QuantizedOperator dirac_generator(const MetricSpec&, double, const Grid&);
  friend QuantizedOperator curved_projector(const MetricSpec&, double, int, const Grid&);
  friend QuantizedOperator projector_error_proxy(const MetricSpec&, double, const Grid&);
};

// Dispatch: x-independent symbols become exact Fourier multipliers under both
// flavors; declared-separable scalar symbols take the term-by-term fast path
// (kohn-nirenberg only); everything else runs the dense synthesis loops, which
// refuse products of lattices past a fixed op budget.
QuantizedOperator quantize(const Symbol& sym, QuantFlavor flavor, const Grid& g);

// 1/2 (I +- (xi_j gamma0 gamma^j + M gamma0) / sqrt(M^2 + |xi|^2)); the
// matrix-valued multiplier value at one frequency, and the operator.
Eigen::Matrix4cd flat_projector_matrix(double M, int sign, const std::array<double, 3>& xi);
QuantizedOperator flat_projector(double M, int sign, const Grid& g);

// -i(gamma^0 gamma^j D_j + Gamma_0) + M gamma^0 with covariant D_j; the
// right-hand generator whose rescaling by 1/<D>_M separates the projections.
QuantizedOperator dirac_generator(const MetricSpec& spec, double M, const Grid& g);

// 1/2 (I +- <D>_M^{-1} dirac_generator); reduces to flat_projector on the
// flat metric. Geometry tables are cached per evaluation time.
QuantizedOperator curved_projector(const MetricSpec& spec, double M, int sign, const Grid& g);

// Leading error operator of the projection algebra,
//   quantize((1/4) <xi>_M^{-2} (g^{jk} - delta^{jk}) xi_j xi_k),
// separable in (x, xi). The 1/4 is forced by the two half factors in the
// projections: Pi^2 - Pi = 1/4 (T^2 - I), and T^2 - I has leading symbol
// <xi>_M^{-2} (g - delta) xi xi.
QuantizedOperator projector_error_proxy(const MetricSpec& spec, double M, const Grid& g);

// Largest singular value by power iteration on A*A; fixed iteration budget
// with early exit on relative stall.
double operator_norm(const QuantizedOperator& A, double t = 0.0, std::uint64_t seed = 1, int iters = 20,
                     double tol = 1e-6);

struct DefectRow {
  int k = 0;
  double defect = 0.0;
  double slope_so_far = 0.0;  // log2 defect vs k, fitted over rows up to here
};

struct DefectTable {
  std::vector<DefectRow> rows;
  double slope = 0.0;  // fit over all rows
};

// || (Pi Pi - Pi - proxy) u_k || / || u_k || on band spinors at scales 2^k.
DefectTable projector_defect(const MetricSpec& spec, double M, int sign, const Grid& g, const std::vector<int>& ks,
                             std::uint64_t seed, double t = 0.0);

// columns: k, defect, slope-so-far
void dump_defect_csv(const DefectTable& table, const std::string& path);

}  // namespace displab
