#pragma once

#include <Eigen/Dense>
#include <array>
#include <memory>
#include <string>
#include <vector>

#include "core/common.hpp"
#include "core/eps_profile.hpp"
#include "core/jet.hpp"

namespace displab {

// Derivative multi-index over (t, x1, x2, x3); alpha[0] counts time derivatives.
using MIdx4 = std::array<int, 4>;

inline int midx4_order(const MIdx4& a) { return a[0] + a[1] + a[2] + a[3]; }

enum class LumpShape { gauss, inv_pow, grow, carrier_gauss };

// One additive perturbation term tau(t) * C^{ij} * rho(|x-center|^2 / width^2).
// tau = cos(omega t + phase), so omega = phase = 0 gives a static term.
struct Lump {
  LumpShape shape = LumpShape::gauss;
  Eigen::Matrix3d cmat = Eigen::Matrix3d::Identity();
  std::array<double, 3> center{0.0, 0.0, 0.0};
  double width = 1.0;
  double power = 2.0;    // inv_pow: (1+u)^{-power/2}
  double carrier = 0.0;  // carrier_gauss: extra cos(carrier * x_1) factor
  double omega = 0.0, phase = 0.0;
};

// Band-limited perturbation sampled from a grid; evaluated as a sparse
// trigonometric sum with exact derivatives. Stores the full perturbation
// g^{ij} - delta^{ij} (amplitude included).
struct TrigSeries {
  int d = 1, n = 0;
  double L = 0.0;
  struct Term {
    std::array<double, 3> xi;
    double amp, phase;  // amp * cos(xi . x + phase)
  };
  std::vector<std::vector<Term>> entries;  // index i*d+j, upper triangle mirrored
};

// Spatial metric model g^{ij} = delta^{ij} + eps * h^{ij}(t,x), g_{00} = -1,
// g^{0j} = 0. Entries beyond dim are flat. Profiles carry closed-form
// derivatives (jets); no finite differencing.
class MetricSpec {
 public:
  MetricSpec(int d, double eps, std::string name, std::vector<Lump> lumps);
  MetricSpec(int d, double eps, std::string name, std::shared_ptr<const TrigSeries> series);

  int dim() const { return d_; }
  double eps() const { return eps_; }
  const std::string& name() const { return name_; }
  bool time_dependent() const;
  int max_order() const;  // highest |alpha| the profile supplies
  // below this amplitude the spatial block stays positive definite everywhere
  double pd_threshold() const;
  const std::vector<Lump>& lumps() const { return lumps_; }
  const TrigSeries* series() const { return series_.get(); }

 private:
  int d_;
  double eps_;
  std::string name_;
  std::vector<Lump> lumps_;
  std::shared_ptr<const TrigSeries> series_;
};

MetricSpec make_flat_metric(int d);
MetricSpec make_radial_bump_metric(int d, double eps, double width = 1.0);
MetricSpec make_inv_sq_metric(int d, double eps);                       // h = I/(1+|x|^2)
MetricSpec make_inv_pow_metric(int d, double eps, double decay_power);  // h = I (1+|x|^2)^{-a/2}
MetricSpec make_aniso_metric(int d, double eps);                        // rank-one direction/(1+|x|^2)
MetricSpec make_growing_metric(int d, double eps);                      // h = I sqrt(1+|x|^2), violates decay
MetricSpec make_dyadic_bump_metric(int d, double eps, int l0, double width_factor = 16.0);
MetricSpec make_random_metric(int d, double eps, std::uint64_t seed, bool time_dep = false);
MetricSpec metric_from_config_name(const std::string& profile, int d, double eps, std::uint64_t seed);

// d^alpha g^{ij} at (t,x); the delta is included at alpha = 0.
Eigen::Matrix3d eval_metric(const MetricSpec& spec, double t, const std::array<double, 3>& x, const MIdx4& alpha);

// Jets of the full perturbation g^{ij} - delta^{ij} over (t, x_1..x_d), all
// derivatives to total order `order` at once. h has d*d entries (row-major 3x3
// layout, flat entries zero).
void eval_metric_jets(const MetricSpec& spec, double t, const std::array<double, 3>& x, int order,
                      std::array<Jet, 9>& h);

// value-only fast path: out = g^{ij}(t,x) as 3x3 (extended flat)
void metric_value(const MetricSpec& spec, double t, const std::array<double, 3>& x, Eigen::Matrix3d& out);

double min_metric_eigenvalue(const MetricSpec& spec, double t, const std::array<double, 3>& x);

// Shell suprema of weighted derivatives. Shell k covers 2^{k-1} < |x| < 2^{k+1};
// sample points are a prefix of a fixed low-discrepancy sequence, so refining
// the sample count only grows each supremum.
struct SeminormReport {
  int kmin = 0, kmax = 0, samples = 0;
  double eps = 0.0;
  std::vector<MIdx4> alphas_low;                // |alpha| <= 2
  std::vector<MIdx4> alphas_high;               // 3 <= |alpha| <= [d/2]+3
  std::vector<std::vector<double>> c_low;       // [alpha][shell]
  std::vector<std::vector<double>> c_high;      // weighted |x|^{(|alpha|+1)/2}
  std::vector<double> sum_low, sum_high;        // per-alpha sums over shells
  std::vector<double> regular;                  // unit-ball constants per alphas_all order
  std::vector<MIdx4> alphas_all;
  bool decay_low_pass = false, decay_high_pass = false;
};

SeminormReport flatness_seminorms(const MetricSpec& spec, int kmin, int kmax, int samples_per_shell);

// Scale-filtered metric: delta plus the band-and-space truncated pieces of the
// perturbation, containing only frequencies well below 2^k and, per band,
// only the near region. Realized on an internal grid; d <= 2.
MetricSpec mollify_metric(const MetricSpec& spec, int k);

struct MollifyBoundReport {
  std::vector<MIdx4> alphas;  // |alpha| <= 2, spatial
  std::vector<double> c_alpha;
  double max_c = 0.0;
};

// measured constants in |d^alpha (g_(k) - delta)| <= c_alpha eps_k(|x|) 2^{|alpha| k} (1 + 2^k |x|)^{-|alpha|}
MollifyBoundReport mollify_bound_report(const MetricSpec& mollified, int k, const EpsProfile& prof, int npoints);

// --- spin geometry ---

struct SpinFrame {
  int d = 3;
  Eigen::Matrix4d b;        // frame field b^alpha_mu, frame row, coordinate col
  Eigen::Matrix4d g_upper;  // diag(-1, g^{ij} extended)
  Eigen::Matrix4d g_lower;
};

const std::array<Eigen::Matrix4cd, 4>& flat_gammas();  // Dirac representation
const Eigen::Matrix4d& minkowski();                    // diag(-1,1,1,1)

// b0_0 = 1, spatial block the symmetric principal square root of [g_{ij}]
SpinFrame vierbein(const MetricSpec& spec, double t, const std::array<double, 3>& x);

// gamma^mu = (b^{-1})^mu_alpha gammatilde^alpha; Clifford to the metric
std::array<Eigen::Matrix4cd, 4> gamma_matrices(const SpinFrame& frame);

// connection matrices making the lowered gammas covariantly constant
std::array<Eigen::Matrix4cd, 4> spin_connection(const MetricSpec& spec, double t, const std::array<double, 3>& x);

double clifford_residual(const SpinFrame& frame);
double vierbein_residual(const SpinFrame& frame);
// max entry of d_mu gamma_nu - Ch^l_{mu nu} gamma_l - Gamma_mu gamma_nu + gamma_nu Gamma_mu
double affine_spin_residual(const MetricSpec& spec, double t, const std::array<double, 3>& x);

}  // namespace displab
