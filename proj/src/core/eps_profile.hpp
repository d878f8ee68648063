#pragma once

#include <vector>

#include "core/common.hpp"

namespace displab {

// Slowly varying scale profile: a dyadic-shell sequence eps_j, a smooth
// interpolation eps(s) pinched between eps_j and 2*eps_j on each shell, and
// the normalized cumulative e(s) = (1/budget) * int_0^s eps(u)/u du, which
// increases to exactly 1.  Consecutive shell values differ in log by at most
// 2^-10 and s*eps'(s)/eps(s) stays below 2^-5, so the profile drifts by o(1)
// across any bounded number of doublings.
class EpsProfile {
 public:
  double budget() const { return budget_; }
  int jmin() const { return jmin_; }
  int jmax() const { return jmax_; }

  // shell value, valid for j in [jmin, jmax]
  double eps_shell(int j) const;

  double eps(double s) const;
  double eps_deriv(double s) const;

  // e(0)=0, e increasing, e(inf)=1
  double e(double s) const;

 private:
  friend EpsProfile make_eps_profile(double, double, int, int);
  double budget_ = 0.0;
  int jmin_ = 0, jmax_ = 0;
  double scale_ = 0.0;                 // C such that eps_j = C * a_j
  std::vector<double> log_a_;          // node logs, j = jmin .. jmax+1
  std::vector<double> cum_;            // int_0^{2^j} A(s)/s ds at node boundaries
  double total_ = 0.0;                 // int_0^inf A(s)/s ds

  double log_interp(double u) const;   // log of the raw (unscaled) A(2^u)
  double dlog_du(double u) const;
  double raw_cum(double u) const;      // int over (-inf, u] of A(2^v) ln2 dv
};

EpsProfile make_eps_profile(double budget, double decay_exp = 2.0, int jmin = -40, int jmax = 40);

}  // namespace displab
