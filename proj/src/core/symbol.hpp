#pragma once

// Phase-space symbols a(t, x, xi). Scalar symbols are authored over jets in
// the 2d variables (x_1..x_d, xi_1..xi_d), so every exposed partial
// derivative is an exact Taylor coefficient of the defining expression.
// Matrix symbols (4x4 complex) are value-only. The class tag `order` is pure
// bookkeeping for reports and never enters any computation.

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "core/common.hpp"
#include "core/jet.hpp"

namespace displab {

enum class SymbolArity { scalar, matrix };

class Symbol {
 public:
  // jet variable convention: slots 0..d-1 are x, slots d..2d-1 are xi
  using JetFn = std::function<Jet(double t, const std::array<double, 3>& x, const std::array<double, 3>& xi,
                                  const JetSpace& sp)>;
  using ValueFn = std::function<cd(double t, const std::array<double, 3>& x, const std::array<double, 3>& xi)>;
  using MatrixFn =
      std::function<Eigen::Matrix4cd(double t, const std::array<double, 3>& x, const std::array<double, 3>& xi)>;

  // One term of a sum_m f_m(t,x) g_m(xi) decomposition; quantization uses
  // this as a fast path (one multiplier plus one pointwise product per term).
  struct SepTerm {
    std::function<cd(double t, const std::array<double, 3>& x)> fx;
    std::function<cd(const std::array<double, 3>& xi)> gxi;
  };

  Symbol() = default;

  // vfn overrides the default value route (jet at order 1); required when
  // max_deriv == 0 would leave the symbol without a value path.
  static Symbol from_jets(int d, double order, int max_deriv, bool x_independent, std::string name, JetFn jfn,
                          ValueFn vfn = nullptr);
  static Symbol from_value(int d, double order, bool x_independent, std::string name, ValueFn vfn);
  static Symbol matrix(int d, double order, bool x_independent, std::string name, MatrixFn mfn);

  bool valid() const { return data_ != nullptr; }
  int dim() const;
  SymbolArity arity() const;
  double order() const;
  int max_deriv() const;
  bool x_independent() const;
  const std::string& name() const;

  cd value(double t, const std::array<double, 3>& x, const std::array<double, 3>& xi) const;
  // jet over 2*dim() variables at the requested order (1 <= order <= max_deriv)
  Jet jet(double t, const std::array<double, 3>& x, const std::array<double, 3>& xi, int order) const;
  Eigen::Matrix4cd matrix_value(double t, const std::array<double, 3>& x, const std::array<double, 3>& xi) const;

  // Declare separable structure. Call before the symbol is shared; copies
  // alias the same payload.
  Symbol& set_separable(std::vector<SepTerm> terms);
  const std::vector<SepTerm>& separable() const;

 private:
  struct Data;
  std::shared_ptr<Data> data_;
};

// sqrt(M^2 + |xi|^2); order tag 1
Symbol bracket_weight_symbol(int d, double mass);
// coordinate / momentum line symbols, order tags 0 and 1
Symbol coordinate_symbol(int d, int axis);
Symbol momentum_symbol(int d, int axis);
// pointwise product with derivatives when both factors carry them
Symbol symbol_product(const Symbol& a, const Symbol& b);

// {a,b} = da/dxi . db/dx - da/dx . db/dxi. Derivative order drops by one.
Symbol poisson_bracket(const Symbol& a, const Symbol& b);

// Truncated composition: order 1 gives a*b, order 2 adds (1/i) da/dxi . db/dx.
// The tail beyond the requested order is dropped, not estimated; the result's
// name records that.
Symbol compose_leading(const Symbol& a, const Symbol& b, int order);

}  // namespace displab
