#include "core/jet.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>

#include "core/bump.hpp"
#include "core/common.hpp"

namespace displab {

namespace {

// Mixed-radix key with digits alpha_i <= kJetMaxOrder.
int midx_key(const MIdx& a, int nvars) {
  int key = 0;
  for (int i = nvars - 1; i >= 0; --i) key = key * (kJetMaxOrder + 1) + a[i];
  return key;
}

void enumerate(int nvars, int order, int var, MIdx& cur, int used, std::vector<MIdx>& out) {
  if (var == nvars) {
    out.push_back(cur);
    return;
  }
  for (int k = 0; k + used <= order; ++k) {
    cur[var] = static_cast<std::uint8_t>(k);
    enumerate(nvars, order, var + 1, cur, used + k, out);
  }
  cur[var] = 0;
}

}  // namespace

JetSpace::JetSpace(int nvars, int order) : nvars_(nvars), order_(order) {
  require(nvars >= 1 && nvars <= kJetMaxVars, Err::invalid_argument, "jet: bad nvars");
  require(order >= 1 && order <= kJetMaxOrder, Err::invalid_argument, "jet: bad order");
  MIdx cur{};
  enumerate(nvars, order, 0, cur, 0, midx_);
  // graded order: sort by total degree, then lexicographic; position 0 is the value
  std::sort(midx_.begin(), midx_.end(), [&](const MIdx& a, const MIdx& b) {
    int da = 0, db = 0;
    for (int i = 0; i < nvars; ++i) {
      da += a[i];
      db += b[i];
    }
    if (da != db) return da < db;
    return a < b;
  });
  int key_span = 1;
  for (int i = 0; i < nvars; ++i) key_span *= (kJetMaxOrder + 1);
  key_to_pos_.assign(key_span, -1);
  degree_.resize(midx_.size());
  for (int p = 0; p < size(); ++p) {
    key_to_pos_[midx_key(midx_[p], nvars)] = p;
    int d = 0;
    for (int i = 0; i < nvars; ++i) d += midx_[p][i];
    degree_[p] = d;
  }
  for (int i = 0; i < size(); ++i) {
    for (int j = 0; j < size(); ++j) {
      if (degree_[i] + degree_[j] > order) continue;
      MIdx s{};
      for (int v = 0; v < nvars; ++v) s[v] = static_cast<std::uint8_t>(midx_[i][v] + midx_[j][v]);
      prod_.push_back({i, j, position(s)});
    }
  }
}

int JetSpace::position(const MIdx& a) const {
  int d = 0;
  for (int i = 0; i < nvars_; ++i) d += a[i];
  if (d > order_) return -1;
  return key_to_pos_[midx_key(a, nvars_)];
}

const JetSpace& JetSpace::get(int nvars, int order) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, const JetSpace*> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_pair(nvars, order);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, new JetSpace(nvars, order)).first;
  return *it->second;
}

Jet::Jet(const JetSpace& sp, double value) : sp_(&sp), c_(sp.size(), 0.0) { c_[0] = value; }

Jet Jet::variable(const JetSpace& sp, int var, double value) {
  require(var >= 0 && var < sp.nvars(), Err::invalid_argument, "jet: bad variable index");
  Jet j(sp, value);
  MIdx a{};
  a[var] = 1;
  j.c_[sp.position(a)] = 1.0;
  return j;
}

double Jet::deriv(const MIdx& alpha) const {
  int pos = sp_->position(alpha);
  require(pos >= 0, Err::invalid_argument, "jet: derivative order beyond table");
  double fact = 1.0;
  for (int i = 0; i < sp_->nvars(); ++i)
    for (int k = 2; k <= alpha[i]; ++k) fact *= k;
  return c_[pos] * fact;
}

Jet Jet::operator-() const {
  Jet r = *this;
  for (double& v : r.c_) v = -v;
  return r;
}

Jet& Jet::operator+=(const Jet& o) {
  for (int i = 0; i < static_cast<int>(c_.size()); ++i) c_[i] += o.c_[i];
  return *this;
}

Jet& Jet::operator-=(const Jet& o) {
  for (int i = 0; i < static_cast<int>(c_.size()); ++i) c_[i] -= o.c_[i];
  return *this;
}

Jet& Jet::operator+=(double v) {
  c_[0] += v;
  return *this;
}

Jet& Jet::operator-=(double v) {
  c_[0] -= v;
  return *this;
}

Jet& Jet::operator*=(double v) {
  for (double& x : c_) x *= v;
  return *this;
}

Jet operator*(const Jet& a, const Jet& b) {
  Jet r(*a.sp_, 0.0);
  r.c_[0] = 0.0;
  for (const auto& t : a.sp_->prod_terms()) r.c_[t.target] += a.c_[t.a] * b.c_[t.b];
  return r;
}

Jet Jet::compose(const std::vector<double>& derivs) const {
  const int p = sp_->order();
  require(static_cast<int>(derivs.size()) >= p + 1, Err::invalid_argument, "jet: compose needs order+1 derivatives");
  Jet u = *this;
  u.c_[0] = 0.0;  // nilpotent part
  // Horner: f(u0 + t) = sum_k f^(k)(u0)/k! t^k
  double fact = 1.0;
  for (int k = 2; k <= p; ++k) fact *= k;
  Jet r(*sp_, derivs[p] / fact);
  for (int k = p - 1; k >= 0; --k) {
    fact = 1.0;
    for (int j = 2; j <= k; ++j) fact *= j;
    r = r * u;
    r += derivs[k] / fact;
  }
  return r;
}

Jet operator/(const Jet& a, const Jet& b) { return a * (1.0 / b); }

Jet operator/(double a, const Jet& b) {
  const int p = b.sp_->order();
  const double u0 = b.value();
  require(u0 != 0.0, Err::numeric, "jet: division by zero value");
  std::vector<double> d(p + 1);
  double fact = 1.0, upow = 1.0 / u0;
  for (int k = 0; k <= p; ++k) {
    d[k] = ((k % 2 == 0) ? 1.0 : -1.0) * fact * upow;
    fact *= (k + 1);
    upow /= u0;
  }
  Jet r = b.compose(d);
  return r *= a;
}

Jet sqrt(const Jet& a) {
  const int p = a.sp_->order();
  const double u0 = a.value();
  require(u0 > 0.0, Err::numeric, "jet: sqrt of nonpositive value");
  // d[k] = (1/2)(1/2-1)...(1/2-k+1) u0^{1/2-k}
  std::vector<double> d(p + 1);
  d[0] = std::sqrt(u0);
  double run = 1.0;
  for (int k = 1; k <= p; ++k) {
    run *= (0.5 - (k - 1));
    d[k] = run * std::pow(u0, 0.5 - k);
  }
  return a.compose(d);
}

Jet exp(const Jet& a) {
  const int p = a.sp_->order();
  std::vector<double> d(p + 1, std::exp(a.value()));
  return a.compose(d);
}

Jet log(const Jet& a) {
  const int p = a.sp_->order();
  const double u0 = a.value();
  require(u0 > 0.0, Err::numeric, "jet: log of nonpositive value");
  std::vector<double> d(p + 1);
  d[0] = std::log(u0);
  double fact = 1.0;
  for (int k = 1; k <= p; ++k) {
    d[k] = ((k % 2 == 1) ? 1.0 : -1.0) * fact / std::pow(u0, k);
    fact *= k;
  }
  return a.compose(d);
}

Jet sin(const Jet& a) {
  const int p = a.sp_->order();
  const double s = std::sin(a.value()), c = std::cos(a.value());
  const double cycle[4] = {s, c, -s, -c};
  std::vector<double> d(p + 1);
  for (int k = 0; k <= p; ++k) d[k] = cycle[k % 4];
  return a.compose(d);
}

Jet cos(const Jet& a) {
  const int p = a.sp_->order();
  const double s = std::sin(a.value()), c = std::cos(a.value());
  const double cycle[4] = {c, -s, -c, s};
  std::vector<double> d(p + 1);
  for (int k = 0; k <= p; ++k) d[k] = cycle[k % 4];
  return a.compose(d);
}

Jet pow_int(const Jet& a, int k) {
  require(k >= 0, Err::invalid_argument, "jet: pow_int wants k >= 0");
  Jet r(a.space(), 1.0);
  Jet base = a;
  int e = k;
  while (e > 0) {
    if (e & 1) r = r * base;
    base = base * base;
    e >>= 1;
  }
  return r;
}

Jet smooth_step(const Jet& a) {
  const int p = a.sp_->order();
  std::vector<double> d(p + 1);
  for (int k = 0; k <= p; ++k) d[k] = smooth_step_deriv(a.value(), k);
  return a.compose(d);
}

Jet jet_partial(const Jet& f, int var) {
  const JetSpace& sp = f.space();
  require(var >= 0 && var < sp.nvars(), Err::invalid_argument, "jet_partial: bad variable");
  require(sp.order() >= 2, Err::invalid_argument, "jet_partial: source order must be >= 2");
  const JetSpace& tsp = JetSpace::get(sp.nvars(), sp.order() - 1);
  Jet out(tsp);
  for (int pos = 0; pos < tsp.size(); ++pos) {
    MIdx b = tsp.index(pos);
    b[static_cast<size_t>(var)] = static_cast<std::uint8_t>(b[static_cast<size_t>(var)] + 1);
    const int src = sp.position(b);
    // Taylor coefficient of d^b shifts down: c_out(beta) = c(beta + e_var) * (beta_var + 1)
    out.coeffs()[static_cast<size_t>(pos)] =
        f.coeffs()[static_cast<size_t>(src)] * static_cast<double>(b[static_cast<size_t>(var)]);
  }
  return out;
}

}  // namespace displab
