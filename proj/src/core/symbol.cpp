#include "core/symbol.hpp"

#include <cmath>
#include <utility>

namespace displab {

struct Symbol::Data {
  int d = 0;
  double order = 0.0;
  int max_deriv = 0;
  bool x_indep = false;
  SymbolArity arity = SymbolArity::scalar;
  std::string name;
  JetFn jfn;
  ValueFn vfn;
  MatrixFn mfn;
  std::vector<SepTerm> sep;
};

static void check_dim(int d) { require(d >= 1 && d <= 3, Err::invalid_argument, "symbol: dimension must be 1..3"); }

Symbol Symbol::from_jets(int d, double order, int max_deriv, bool x_independent, std::string name, JetFn jfn,
                         ValueFn vfn) {
  check_dim(d);
  require(max_deriv >= 0 && max_deriv <= kJetMaxOrder, Err::invalid_argument, "symbol: bad derivative order");
  require(2 * d <= kJetMaxVars, Err::invalid_argument, "symbol: too many jet variables");
  require(static_cast<bool>(jfn), Err::invalid_argument, "symbol: missing jet callback");
  require(max_deriv >= 1 || static_cast<bool>(vfn), Err::invalid_argument,
          "symbol: derivative-free symbol needs an explicit value callback");
  auto data = std::make_shared<Data>();
  data->d = d;
  data->order = order;
  data->max_deriv = max_deriv;
  data->x_indep = x_independent;
  data->arity = SymbolArity::scalar;
  data->name = std::move(name);
  data->jfn = std::move(jfn);
  data->vfn = std::move(vfn);
  Symbol s;
  s.data_ = std::move(data);
  return s;
}

Symbol Symbol::from_value(int d, double order, bool x_independent, std::string name, ValueFn vfn) {
  check_dim(d);
  require(static_cast<bool>(vfn), Err::invalid_argument, "symbol: missing value callback");
  auto data = std::make_shared<Data>();
  data->d = d;
  data->order = order;
  data->max_deriv = 0;
  data->x_indep = x_independent;
  data->arity = SymbolArity::scalar;
  data->name = std::move(name);
  data->vfn = std::move(vfn);
  Symbol s;
  s.data_ = std::move(data);
  return s;
}

Symbol Symbol::matrix(int d, double order, bool x_independent, std::string name, MatrixFn mfn) {
  check_dim(d);
  require(static_cast<bool>(mfn), Err::invalid_argument, "symbol: missing matrix callback");
  auto data = std::make_shared<Data>();
  data->d = d;
  data->order = order;
  data->max_deriv = 0;
  data->x_indep = x_independent;
  data->arity = SymbolArity::matrix;
  data->name = std::move(name);
  data->mfn = std::move(mfn);
  Symbol s;
  s.data_ = std::move(data);
  return s;
}

int Symbol::dim() const {
  require(valid(), Err::invalid_argument, "symbol: empty");
  return data_->d;
}
SymbolArity Symbol::arity() const {
  require(valid(), Err::invalid_argument, "symbol: empty");
  return data_->arity;
}
double Symbol::order() const {
  require(valid(), Err::invalid_argument, "symbol: empty");
  return data_->order;
}
int Symbol::max_deriv() const {
  require(valid(), Err::invalid_argument, "symbol: empty");
  return data_->max_deriv;
}
bool Symbol::x_independent() const {
  require(valid(), Err::invalid_argument, "symbol: empty");
  return data_->x_indep;
}
const std::string& Symbol::name() const {
  require(valid(), Err::invalid_argument, "symbol: empty");
  return data_->name;
}

cd Symbol::value(double t, const std::array<double, 3>& x, const std::array<double, 3>& xi) const {
  require(valid(), Err::invalid_argument, "symbol: empty");
  require(data_->arity == SymbolArity::scalar, Err::invalid_argument, "symbol: matrix symbol has no scalar value");
  if (data_->vfn) return data_->vfn(t, x, xi);
  return cd(jet(t, x, xi, 1).value(), 0.0);
}

Jet Symbol::jet(double t, const std::array<double, 3>& x, const std::array<double, 3>& xi, int order) const {
  require(valid(), Err::invalid_argument, "symbol: empty");
  require(data_->arity == SymbolArity::scalar, Err::invalid_argument, "symbol: matrix symbols expose no jets");
  require(static_cast<bool>(data_->jfn) && order >= 1 && order <= data_->max_deriv, Err::invalid_argument,
          "symbol '" + data_->name + "': derivatives to order " + std::to_string(order) + " not available");
  const JetSpace& sp = JetSpace::get(2 * data_->d, order);
  return data_->jfn(t, x, xi, sp);
}

Eigen::Matrix4cd Symbol::matrix_value(double t, const std::array<double, 3>& x, const std::array<double, 3>& xi) const {
  require(valid(), Err::invalid_argument, "symbol: empty");
  require(data_->arity == SymbolArity::matrix, Err::invalid_argument, "symbol: scalar symbol has no matrix value");
  return data_->mfn(t, x, xi);
}

Symbol& Symbol::set_separable(std::vector<SepTerm> terms) {
  require(valid(), Err::invalid_argument, "symbol: empty");
  require(data_->arity == SymbolArity::scalar, Err::invalid_argument, "symbol: separable terms are scalar-only");
  data_->sep = std::move(terms);
  return *this;
}

const std::vector<Symbol::SepTerm>& Symbol::separable() const {
  require(valid(), Err::invalid_argument, "symbol: empty");
  return data_->sep;
}

// jets of the arguments inside a symbol callback
static Jet xi_var(const JetSpace& sp, int d, int axis, const std::array<double, 3>& xi) {
  return Jet::variable(sp, d + axis, xi[static_cast<size_t>(axis)]);
}
static Jet x_var(const JetSpace& sp, int axis, const std::array<double, 3>& x) {
  return Jet::variable(sp, axis, x[static_cast<size_t>(axis)]);
}

Symbol bracket_weight_symbol(int d, double mass) {
  check_dim(d);
  require(mass >= 0.0, Err::invalid_argument, "bracket_weight_symbol: mass must be >= 0");
  auto jfn = [d, mass](double, const std::array<double, 3>&, const std::array<double, 3>& xi, const JetSpace& sp) {
    Jet s(sp, mass * mass);
    for (int k = 0; k < d; ++k) {
      Jet v = xi_var(sp, d, k, xi);
      s += v * v;
    }
    return sqrt(s);
  };
  return Symbol::from_jets(d, 1.0, kJetMaxOrder, true, "<xi>", jfn);
}

Symbol coordinate_symbol(int d, int axis) {
  check_dim(d);
  require(axis >= 0 && axis < d, Err::invalid_argument, "coordinate_symbol: bad axis");
  auto jfn = [axis](double, const std::array<double, 3>& x, const std::array<double, 3>&, const JetSpace& sp) {
    return x_var(sp, axis, x);
  };
  return Symbol::from_jets(d, 0.0, kJetMaxOrder, false, "x" + std::to_string(axis + 1), jfn);
}

Symbol momentum_symbol(int d, int axis) {
  check_dim(d);
  require(axis >= 0 && axis < d, Err::invalid_argument, "momentum_symbol: bad axis");
  auto jfn = [d, axis](double, const std::array<double, 3>&, const std::array<double, 3>& xi, const JetSpace& sp) {
    return xi_var(sp, d, axis, xi);
  };
  return Symbol::from_jets(d, 1.0, kJetMaxOrder, true, "xi" + std::to_string(axis + 1), jfn);
}

static void check_scalar_pair(const Symbol& a, const Symbol& b, const char* who) {
  require(a.valid() && b.valid(), Err::invalid_argument, std::string(who) + ": empty symbol");
  require(a.dim() == b.dim(), Err::invalid_argument, std::string(who) + ": dimension mismatch");
  require(a.arity() == SymbolArity::scalar && b.arity() == SymbolArity::scalar, Err::invalid_argument,
          std::string(who) + ": scalar symbols only");
}

Symbol symbol_product(const Symbol& a, const Symbol& b) {
  check_scalar_pair(a, b, "symbol_product");
  const int md = std::min(a.max_deriv(), b.max_deriv());
  Symbol::JetFn jfn;
  if (md >= 1) {
    jfn = [a, b](double t, const std::array<double, 3>& x, const std::array<double, 3>& xi, const JetSpace& sp) {
      return a.jet(t, x, xi, sp.order()) * b.jet(t, x, xi, sp.order());
    };
  }
  auto vfn = [a, b](double t, const std::array<double, 3>& x, const std::array<double, 3>& xi) {
    return a.value(t, x, xi) * b.value(t, x, xi);
  };
  const std::string nm = a.name() + "*" + b.name();
  if (md >= 1) return Symbol::from_jets(a.dim(), a.order() + b.order(), md, a.x_independent() && b.x_independent(), nm, jfn, vfn);
  return Symbol::from_value(a.dim(), a.order() + b.order(), a.x_independent() && b.x_independent(), nm, vfn);
}

Symbol poisson_bracket(const Symbol& a, const Symbol& b) {
  check_scalar_pair(a, b, "poisson_bracket");
  require(a.max_deriv() >= 1 && b.max_deriv() >= 1, Err::invalid_argument,
          "poisson_bracket: both symbols must expose first derivatives");
  const int d = a.dim();
  const int md = std::min(a.max_deriv(), b.max_deriv()) - 1;
  auto jfn = [a, b, d](double t, const std::array<double, 3>& x, const std::array<double, 3>& xi, const JetSpace& sp) {
    const int q = sp.order();
    Jet ja = a.jet(t, x, xi, q + 1);
    Jet jb = b.jet(t, x, xi, q + 1);
    Jet acc(sp, 0.0);
    for (int k = 0; k < d; ++k) {
      acc += jet_partial(ja, d + k) * jet_partial(jb, k) - jet_partial(ja, k) * jet_partial(jb, d + k);
    }
    return acc;
  };
  auto vfn = [a, b, d](double t, const std::array<double, 3>& x, const std::array<double, 3>& xi) {
    Jet ja = a.jet(t, x, xi, 1);
    Jet jb = b.jet(t, x, xi, 1);
    double v = 0.0;
    for (int k = 0; k < d; ++k) {
      MIdx ex{}, exi{};
      ex[static_cast<size_t>(k)] = 1;
      exi[static_cast<size_t>(d + k)] = 1;
      v += ja.deriv(exi) * jb.deriv(ex) - ja.deriv(ex) * jb.deriv(exi);
    }
    return cd(v, 0.0);
  };
  const std::string nm = "{" + a.name() + "," + b.name() + "}";
  return Symbol::from_jets(d, a.order() + b.order() - 1.0, md, a.x_independent() && b.x_independent(), nm, jfn, vfn);
}

Symbol compose_leading(const Symbol& a, const Symbol& b, int order) {
  check_scalar_pair(a, b, "compose_leading");
  require(order == 1 || order == 2, Err::invalid_argument, "compose_leading: order must be 1 or 2");
  if (order == 2)
    require(a.max_deriv() >= 1 && b.max_deriv() >= 1, Err::invalid_argument,
            "compose_leading: order 2 needs first derivatives of both symbols");
  const int d = a.dim();
  auto vfn = [a, b, d, order](double t, const std::array<double, 3>& x, const std::array<double, 3>& xi) {
    cd v = a.value(t, x, xi) * b.value(t, x, xi);
    if (order == 2) {
      Jet ja = a.jet(t, x, xi, 1);
      Jet jb = b.jet(t, x, xi, 1);
      double corr = 0.0;
      for (int k = 0; k < d; ++k) {
        MIdx ex{}, exi{};
        ex[static_cast<size_t>(k)] = 1;
        exi[static_cast<size_t>(d + k)] = 1;
        corr += ja.deriv(exi) * jb.deriv(ex);
      }
      // (1/i) = -i times the transport term
      v += cd(0.0, -corr);
    }
    return v;
  };
  const std::string nm =
      "compose" + std::to_string(order) + "(" + a.name() + "," + b.name() + ")+r" + std::to_string(order) + "[unevaluated]";
  return Symbol::from_value(d, a.order() + b.order(), a.x_independent() && b.x_independent(), nm, vfn);
}

}  // namespace displab
