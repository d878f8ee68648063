#include "core/eps_profile.hpp"

#include <cmath>
#include <functional>

#include "core/bump.hpp"

namespace displab {

namespace {

constexpr double kMaxLogStep = 0x1p-10;   // consecutive-shell log ratio cap
constexpr double kTailRate = 0x1p-5;      // |s eps'/eps| on the tails
constexpr double kLift = 1.3;             // places eps(s) strictly inside (eps_j, 2 eps_j)
const double kLn2 = std::log(2.0);

double simpson(const std::function<double(double)>& f, double a, double b, int panels) {
  // panels must be even
  const double h = (b - a) / panels;
  double s = f(a) + f(b);
  for (int i = 1; i < panels; ++i) s += (i & 1 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

}  // namespace

double EpsProfile::log_interp(double u) const {
  const int top = jmax_ + 1;
  if (u <= jmin_) return log_a_[0] + (u - jmin_) * kTailRate * kLn2;
  if (u >= top) return log_a_.back() - (u - top) * kTailRate * kLn2;
  int j = static_cast<int>(std::floor(u));
  if (j >= top) j = top - 1;
  const double w = smooth_step(u - j);
  const size_t k = static_cast<size_t>(j - jmin_);
  return (1.0 - w) * log_a_[k] + w * log_a_[k + 1];
}

double EpsProfile::dlog_du(double u) const {
  const int top = jmax_ + 1;
  if (u <= jmin_) return kTailRate * kLn2;
  if (u >= top) return -kTailRate * kLn2;
  int j = static_cast<int>(std::floor(u));
  if (j >= top) j = top - 1;
  const size_t k = static_cast<size_t>(j - jmin_);
  return smooth_step_deriv(u - j, 1) * (log_a_[k + 1] - log_a_[k]);
}

double EpsProfile::raw_cum(double u) const {
  // integral of A(s)/s ds = ln2 * integral of A(2^v) dv
  if (u <= jmin_) return std::exp(log_interp(u)) / kTailRate;
  const int top = jmax_ + 1;
  const auto integrand = [&](double v) { return std::exp(log_interp(v)); };
  if (u >= top) return total_ - std::exp(log_interp(u)) / kTailRate;
  int j = static_cast<int>(std::floor(u));
  if (j >= top) j = top - 1;
  double base = cum_[static_cast<size_t>(j - jmin_)];
  if (u > j) base += kLn2 * simpson(integrand, j, u, 64);
  return base;
}

double EpsProfile::eps_shell(int j) const {
  require(j >= jmin_ && j <= jmax_, Err::invalid_argument, "eps_shell: shell index out of range");
  return scale_ * std::exp(log_a_[static_cast<size_t>(j - jmin_)]);
}

double EpsProfile::eps(double s) const {
  require(s > 0.0, Err::invalid_argument, "eps: s must be positive");
  return scale_ * kLift * std::exp(log_interp(std::log2(s)));
}

double EpsProfile::eps_deriv(double s) const {
  require(s > 0.0, Err::invalid_argument, "eps_deriv: s must be positive");
  const double u = std::log2(s);
  return eps(s) * dlog_du(u) / (s * kLn2);
}

double EpsProfile::e(double s) const {
  if (s <= 0.0) return 0.0;
  return raw_cum(std::log2(s)) / total_;
}

EpsProfile make_eps_profile(double budget, double decay_exp, int jmin, int jmax) {
  require(budget > 0.0, Err::invalid_argument, "make_eps_profile: budget must be positive");
  require(decay_exp >= 0.0, Err::invalid_argument, "make_eps_profile: decay exponent must be nonnegative");
  require(jmax >= jmin + 1, Err::invalid_argument, "make_eps_profile: shell range too short to normalize");

  EpsProfile p;
  p.budget_ = budget;
  p.jmin_ = jmin;
  p.jmax_ = jmax;

  // base logs of (1+|j|)^{-decay_exp}, then shrink toward constant until the
  // consecutive log step fits under the slowly-varying cap
  const int nodes = jmax - jmin + 2;
  std::vector<double> base(nodes);
  for (int k = 0; k < nodes; ++k) {
    const int j = jmin + k;
    base[static_cast<size_t>(k)] = -decay_exp * std::log(1.0 + std::abs(j));
  }
  double max_step = 0.0;
  for (int k = 1; k < nodes; ++k) max_step = std::max(max_step, std::abs(base[k] - base[k - 1]));
  const double shrink = (max_step <= kMaxLogStep) ? 1.0 : kMaxLogStep / max_step;
  p.log_a_.resize(nodes);
  for (int k = 0; k < nodes; ++k) p.log_a_[static_cast<size_t>(k)] = shrink * base[static_cast<size_t>(k)];

  // cumulative integral of the raw lifted profile at node boundaries
  const auto integrand = [&](double v) { return std::exp(p.log_interp(v)); };
  p.cum_.resize(nodes);
  p.cum_[0] = std::exp(p.log_a_[0]) / kTailRate;
  for (int k = 1; k < nodes; ++k)
    p.cum_[static_cast<size_t>(k)] =
        p.cum_[static_cast<size_t>(k - 1)] + kLn2 * simpson(integrand, jmin + k - 1, jmin + k, 64);
  p.total_ = p.cum_.back() + std::exp(p.log_a_.back()) / kTailRate;

  // with this scale, int_0^inf eps(s)/s ds = budget exactly
  p.scale_ = budget / (kLift * p.total_);
  return p;
}

}  // namespace displab
