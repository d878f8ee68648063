#pragma once

// Time propagators on the periodic box: the exact flat half Klein-Gordon
// multiplier, a Strang split step for the metric perturbation, damped
// evolution through a fixed-scale window transform, the outgoing phase-space
// partition with its region diagnostics, and the cubic Dirac solver in
// projected form.

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "core/flow.hpp"
#include "core/grid.hpp"
#include "core/metric.hpp"
#include "core/pdo.hpp"

namespace displab {

enum class Scheme { exact_flat, split_step, damped };

struct PropagatorConfig {
  MetricSpec spec = make_flat_metric(3);
  double M = 1.0;  // mass; rescaled frequency bands pass 1/lambda here
  double dt = 0.0625;
  Scheme scheme = Scheme::split_step;
  bool dealias = false;
  // smooth frequency window modulating the perturbation symbol; the default
  // [0, inf) disables it
  double window_lo = 0.0;
  double window_hi = std::numeric_limits<double>::infinity();
  // window scale of the damping transform; the xi resolution of the applied
  // damping factor is 1/sqrt(fbi_scale)
  double fbi_scale = 4.0;
};

// Smooth window profile at radius r: rises across [lo/2, lo], falls across
// [hi, 2 hi]; identically 1 on [lo, hi].
double perturbation_window(double r, double lo, double hi);

// Coefficients multiplied by e^{-i dt sqrt(M^2+|xi|^2)}; exact in time.
SpectralField flat_halfkg_step(const SpectralField& u, double M, double t0, double dt);

// One Strang step of the perturbed half Klein-Gordon flow: half flat
// multiplier, the symmetrized separable perturbation with coefficients frozen
// at t0 + dt/2 applied through a short exponential series, half flat
// multiplier. sign -1 propagates the conjugate branch (generator of opposite
// sign). Self-convergence is second order in dt.
SpectralField perturbed_halfkg_step(const SpectralField& u, const PropagatorConfig& cfg, double t0, int sign = +1);

// Perturbed step followed by one damping sandwich at the midpoint time:
// u <- u - F*[(1 - e^{-dt B}) F u] with F the window transform at
// cfg.fbi_scale and B the damping weight on the phase lattice. Norm
// nonincreasing up to the O(dt^2) splitting tolerance.
SpectralField damped_step(const SpectralField& u, const PropagatorConfig& cfg, const DampingSymbol& D, double t0);

// Sharp truncation above two thirds of the Nyquist radius.
SpectralField dealias_two_thirds(const SpectralField& u);

// Smooth partition subordinate to the outgoing cone. Member j lives on
// 2^{j-1} < |x| < 2^{j+1} (j >= 1; member 0 fills |x| < 2), carries the
// angular factor vanishing for (x/|x|).(xi/|xi|) <= -2^{-5}, and the dyadic
// frequency annulus supported on 1/4 < |xi| < 4. The members sum to the
// annulus cutoff on the outgoing cone out to radius 2^{jmax}.
class OutgoingPartition {
 public:
  OutgoingPartition() = default;

  const Grid& grid() const { return g_; }
  int jmax() const { return jmax_; }

  double eval(int j, const std::array<double, 3>& x, const std::array<double, 3>& xi) const;
  double sum(const std::array<double, 3>& x, const std::array<double, 3>& xi) const;
  // scalar frequency profile common to every member
  static double annulus(double r);

  // Member j applied to a field. One space dimension splits the symbol into
  // exact separable terms; higher dimensions localize through the window
  // transform at scale s.
  SpectralField apply(const SpectralField& u, int j, double s = 4.0) const;

 private:
  Grid g_;
  int jmax_ = 0;

  friend OutgoingPartition outgoing_partition(const Grid& g, int j_max);
};

OutgoingPartition outgoing_partition(const Grid& g, int j_max);

struct DecaySample {
  double tau = 0.0;   // elapsed time t - s
  double sup = 0.0;   // sup norm of the evolved state
  double ref1 = 0.0;  // first-sample sup scaled by tau^{-1}
  double ref2 = 0.0;  // and by tau^{-2}
};

struct ParametrixReport {
  double inner_radius = 0.0, outer_radius = 0.0;
  // L2 norm fractions of the final state: inside |x| < inner_radius, outside
  // |x| > outer_radius (clipped to the box), and outside the frequency band
  // [1/16, 16] under the sharp cutoff
  double inner_mass = 0.0, outer_mass = 0.0, freq_leakage = 0.0;
  std::vector<DecaySample> sups;
  SpectralField final_state;
};

// Evolves partition-localized data from time s to t under cfg.scheme and
// reports where its mass ended up. The step count divides t - s evenly;
// refuses runs long enough to wrap the box.
ParametrixReport parametrix_diagnostics(const PropagatorConfig& cfg, const DampingSymbol& D, int j, double s, double t,
                                        const SpectralField& data);

struct DiracOptions {
  double s = 2.0;      // Sobolev index of the small-data guard, > 1
  double eta = 0.0;    // guard radius; 0 measures it from the initial data
  int snap_stride = 8;  // steps between stored projected snapshots
  bool nonlinear = true;
  int neumann_order = 2;  // truncation of (1+E)^{-1} in the curved correction
  bool dealias = true;
};

struct DiracSeries {
  double M = 1.0;
  double s = 2.0;
  double eta = 0.0;  // guard radius actually used
  std::vector<double> times;
  std::vector<double> l2, sup;             // recombined field, every step
  std::vector<double> hs_plus, hs_minus;   // H^s of the projected parts
  std::vector<double> snap_times;
  std::vector<SpinorField> snaps_plus, snaps_minus;
};

// H^s norm summed over spinor components in quadrature.
double spinor_hs_norm(const SpinorField& psi, double s);

// Cubic Dirac flow in the projected reformulation: the signed parts evolve by
// perturbed half Klein-Gordon steps (with the Neumann-truncated curved
// correction when the metric is not flat), the nonlinear substep rotates each
// point by dt |psi(x)|^2 through the time gamma matrix exactly, and the field
// is re-projected after each substep. Stops with an error once a projected
// H^s norm exceeds 4 eta.
DiracSeries cubic_dirac_solve(const SpinorField& psi0, const MetricSpec& spec, double M, double T, double dt,
                              const DiracOptions& opt = {});

struct TailRow {
  int sign = +1;
  double t_prime = 0.0, t = 0.0;
  double value = 0.0;  // H^s distance of the free-flow pullbacks
};

struct TailTable {
  double s = 0.0;
  std::vector<TailRow> rows;
};

// Scattering diagnostic: for each sign and each t' < t = max(T_list), the
// H^s distance between the free pullbacks of the stored projected snapshots
// at t and t'. Decay in t' indicates convergence of the wave operators.
TailTable scattering_tail(const DiracSeries& series, double s, const std::vector<double>& T_list);

}  // namespace displab
