#pragma once

// Hamilton flow of the half-wave evolution with a metric perturbation:
//   xdot = d_xi (<xi>_lambda + A),  xidot = -d_x (<xi>_lambda + A),
// where <xi>_lambda = sqrt(lambda^-2 + |xi|^2). Trajectories come from an
// adaptive fourth-order integrator, Jacobian blocks from central finite
// differences of the integrated flow, and the damping symbol and its running
// integral are evaluated along trajectories.

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "core/common.hpp"
#include "core/eps_profile.hpp"
#include "core/metric.hpp"
#include "core/phasespace.hpp"
#include "core/symbol.hpp"

namespace displab {

double bracket_lambda(const std::array<double, 3>& xi, double lambda);

// sqrt(lambda^-2 + g^{ij} xi_i xi_j) - sqrt(lambda^-2 + |xi|^2) as a jet
// symbol; derivatives pass through the metric profile jets, so they are exact
// Taylor data, not differences.
Symbol metric_halfwave_perturbation(const MetricSpec& spec, double lambda);

// pert invalid means the flat flow; otherwise a scalar jet symbol over the
// same dimension.
struct FlowSystem {
  int d = 1;
  double lambda = 1.0;
  Symbol pert;
};

struct FlowField {
  std::array<double, 3> xdot{};
  std::array<double, 3> xidot{};
};

FlowField hamiltonian_field(const FlowSystem& sys, double t, const PhasePoint& p);

struct PhaseTrajectory {
  int d = 1;
  double lambda = 1.0;
  double tol = 1e-10;
  std::vector<double> times;
  std::vector<PhasePoint> states;
  std::vector<FlowField> derivs;  // field at each sample; cubic interpolation data
  std::vector<double> psi;        // damping integral samples; filled by damping_integral
  int steps_taken = 0;
  int steps_rejected = 0;

  double start() const { return times.front(); }
  double end() const { return times.back(); }
};

// Integrates from s to t (either direction, both positive). Classic RK4 with
// step doubling; local error per step kept below tol and the higher-order
// combination is propagated.
PhaseTrajectory integrate_flow(const FlowSystem& sys, const PhasePoint& p0, double s, double t,
                               double tol = 1e-10);

// Forward Jacobian d(x_t,xi_t)/d(x_s,xi_s) by central differences of the
// integrated flow with Richardson extrapolation, and the mixed-variable
// blocks d(x_t,xi_s)/d(x_s,xi_t) obtained from it by solving for xi_s at
// prescribed xi_t. The top-right mixed block is reported against the
// (t-s)-scaled kinetic Hessian reference.
struct FlowJacobian {
  int d = 1;
  double s = 0.0, t = 0.0;
  Eigen::MatrixXd forward;    // 2d x 2d, rows (x_t,xi_t), cols (x_s,xi_s)
  double forward_det = 0.0;
  Eigen::MatrixXd mixed;      // 2d x 2d, rows (x_t,xi_s), cols (x_s,xi_t)
  Eigen::MatrixXd mixed_ref;  // d x d, (t-s) * Phi(xi_t)
  double ref_scale = 0.0;     // Frobenius fit of mixed top-right against mixed_ref
  double ref_deviation = 0.0; // relative residual of that fit
};

FlowJacobian flow_jacobian(const FlowSystem& sys, const PhasePoint& p0, double s, double t);

// Phase-space damping weight
//   B(t,x,xi) = t^{-3/4} (1 - phi(b1) phi(b2) phi(b3) phi(b4) phi(b5)),
// phi the smooth step: the weight is t^{-3/4} for incoming or out-of-band
// points and vanishes on the outgoing region. b2 carries the small offset
// coefficient c2; lambda is carried for bookkeeping only, the weight itself
// is evaluated in unit-scaled variables.
struct DampingSymbol {
  double lambda = 1.0;
  EpsProfile prof;
  double c2 = 0.0625;
};

DampingSymbol make_damping_symbol(double lambda, const EpsProfile& prof, double c2 = 0.0625);

// The five threshold arguments. b3 is defined as 0 at x = 0; the b5 factor
// already forces the full weight there.
std::array<double, 5> damping_factors(const DampingSymbol& D, double t, const std::array<double, 3>& x,
                                      const std::array<double, 3>& xi);

double damping_symbol_eval(const DampingSymbol& D, double t, const std::array<double, 3>& x,
                           const std::array<double, 3>& xi);
double damping_symbol_eval(const DampingSymbol& D, double t, const PhasePoint& p);

// Psi(t_i) = integral of B along the trajectory from max(1, start) to t_i;
// adaptive Simpson on each recorded interval over the cubic Hermite state
// interpolant. Fills traj.psi and returns it.
const std::vector<double>& damping_integral(PhaseTrajectory& traj, const DampingSymbol& D);

// Checks along already-integrated trajectories: the threshold arguments grow
// at rate >= 2/t where they are active inside the admitted region, t^{3/4} B
// never increases between samples, and whenever 0 < t^{3/4} B < 1 the weight
// vanishes one doubling later. Slopes are measured by short centered steps of
// the same field, the doubling state by re-integration.
struct DampingMonotoneReport {
  int trajectories = 0;
  int slope_samples = 0;
  std::array<int, 5> factor_samples{};
  std::array<double, 5> min_slope_ratio{};  // min of (db_j/dt) / (2/t) per factor
  double min_ratio = 0.0;                   // min over tested factors
  double max_profile_increase = 0.0;
  double max_profile_value = 0.0;
  int doubling_pairs = 0;
  double max_doubling_value = 0.0;
  bool vacuous = false;
  bool slopes_pass = false, profile_pass = false, doubling_pass = false, all_pass = false;
};

DampingMonotoneReport verify_damping_monotone(const DampingSymbol& D, const FlowSystem& sys,
                                              const std::vector<PhaseTrajectory>& trajs, double rel_tol = 0.1);

// columns: t, x1..xd, xi1..xid, Psi, b1..b5, B
void dump_trajectory_csv(const PhaseTrajectory& traj, const DampingSymbol& D, const std::string& path);

}  // namespace displab
