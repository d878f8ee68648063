#include "core/bump.hpp"

#include <array>
#include <cmath>
#include <vector>

#include "core/common.hpp"

namespace displab {

double bump(double s) {
  if (std::abs(s) >= 1.0) return 0.0;
  return std::exp(-1.0 / (1.0 - s * s));
}

// Taylor coefficients of -1/(1-s^2) at s0 via partial fractions, then the
// series exponential h' = g' h. bump_deriv(s,k) = k! * h_k.
double bump_deriv(double s, int k) {
  if (k == 0) return bump(s);
  if (std::abs(s) >= 1.0) return 0.0;
  const int n = k + 1;
  std::vector<double> g(n + 1), h(n + 1, 0.0);
  for (int j = 0; j <= n; ++j) {
    const double a = std::pow(1.0 - s, -(j + 1));
    const double b = std::pow(1.0 + s, -(j + 1));
    g[j] = -0.5 * (a + ((j % 2 == 0) ? b : -b));
  }
  h[0] = std::exp(g[0]);
  for (int m = 0; m < n; ++m) {
    double acc = 0.0;
    for (int j = 0; j <= m; ++j) acc += (j + 1) * g[j + 1] * h[m - j];
    h[m + 1] = acc / (m + 1);
  }
  double fact = 1.0;
  for (int j = 2; j <= k; ++j) fact *= j;
  return fact * h[k];
}

namespace {

// Cumulative Simpson table for the bump integral on [-1,1].
struct StepTable {
  static constexpr int kCells = 8192;  // even
  std::vector<double> cum;             // cum[i] = integral from -1 to node i
  double total = 0.0;

  StepTable() : cum(kCells + 1, 0.0) {
    const double h = 2.0 / kCells;
    for (int i = 0; i < kCells; ++i) {
      const double a = -1.0 + i * h;
      cum[i + 1] = cum[i] + (h / 6.0) * (bump(a) + 4.0 * bump(a + 0.5 * h) + bump(a + h));
    }
    total = cum[kCells];
  }

  double integral_to(double x) const {
    if (x <= -1.0) return 0.0;
    if (x >= 1.0) return total;
    const double h = 2.0 / kCells;
    const double pos = (x + 1.0) / h;
    int i = static_cast<int>(pos);
    if (i >= kCells) i = kCells - 1;
    const double a = -1.0 + i * h;
    const double w = x - a;
    return cum[i] + (w / 6.0) * (bump(a) + 4.0 * bump(a + 0.5 * w) + bump(x));
  }
};

const StepTable& step_table() {
  static const StepTable t;
  return t;
}

}  // namespace

double smooth_step(double u) {
  if (u <= 0.0) return 0.0;
  if (u >= 1.0) return 1.0;
  const StepTable& t = step_table();
  return t.integral_to(2.0 * u - 1.0) / t.total;
}

double smooth_step_deriv(double u, int k) {
  if (k == 0) return smooth_step(u);
  if (u <= 0.0 || u >= 1.0) return 0.0;
  return std::pow(2.0, k) * bump_deriv(2.0 * u - 1.0, k - 1) / step_table().total;
}

double dyadic_lowpass(double r) {
  if (r <= 1.0) return 1.0;
  return 1.0 - smooth_step(std::log2(r));
}

}  // namespace displab
