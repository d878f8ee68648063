#pragma once

// Norms and fits: mixed space-time norms over sampled runs, Sobolev weights,
// dyadic localized-energy norms, dispersive admissible-pair arithmetic, decay
// exponent fitting, and the Strichartz quotient of a homogeneous run.

#include <string>
#include <vector>

#include "core/grid.hpp"

namespace displab {

// Scaling triple (sigma, p, q) for dimension d and interpolation weight theta:
//   2/p + (d-1+theta)/q = (d-1+theta)/2,  sigma = ((d+1+theta)/4)(1 - 2/q).
// q = infinity is allowed except at the forbidden (d, theta) = (3, 0) corner.
struct AdmissiblePair {
  int d = 0;
  double theta = 0.0;
  double q = 0.0;     // may be +inf
  double p = 0.0;     // solved, may be +inf
  double sigma = 0.0;
};

AdmissiblePair admissible_pair(int d, double theta, double q);

// Per-sample norms of a run. `qs` lists the recorded spatial exponents
// (inf allowed); lq[i][m] is the L^{qs[m]} norm at times[i].
struct TimeSeriesNorms {
  std::vector<double> times;
  std::vector<double> qs;
  std::vector<std::vector<double>> lq;
  double s = 0.0;
  std::vector<double> hs;
  std::vector<double> sup;
};

// L^q spatial norm on the grid quadrature; q >= 1, inf -> grid max.
double lq_norm(const SpectralField& f, double q);

// Appends one sample row, computing every configured L^q plus H^s and sup.
void append_norms(TimeSeriesNorms& ts, double t, const SpectralField& f);

// Trapezoid-in-time mixed norm || ||u(t)||_{L^q} ||_{L^p_t}; p = inf -> max.
double mixed_norm(const TimeSeriesNorms& ts, double p, double q);

// (sum <xi>^{2s} |u^(xi)|^2 dxi^d)^{1/2} with <xi> = sqrt(1+|xi|^2).
double sobolev_norm(const SpectralField& f, double s);

// A run kept as sampled fields, for norms that need spatial localization.
struct FieldSeries {
  std::vector<double> times;
  std::vector<SpectralField> fields;
};

// Dyadic-shell localized-energy norm over the sampled horizon:
//   X_k = 2^k ||u||_{L2(|x|<2^{-k})} + 2^{k/2} sup_{j>=-k} || |x|^{-1/2} u ||_{L2(A_j)}
// with A_j the space-time shell 2^{j-1} < |x| < 2^{j+1}; time by trapezoid.
double local_energy_norm(const FieldSeries& u, int k);

struct XsRow {
  int k = 0;
  double xk = 0.0;      // X_k of the band-k piece
  double weight = 0.0;  // <2^k>^{2s}
};

// Weighted l2 sum of X_k over the grid-resolvable bands. The time integral
// runs over the sampled horizon only; `horizon` records it.
struct XsReport {
  double value = 0.0;
  double horizon = 0.0;
  std::vector<XsRow> rows;
};

XsReport x_s_norm(const FieldSeries& u, double s);

struct DecayFit {
  double exponent = 0.0;
  double stderr_exponent = 0.0;
  double residual = 0.0;  // rms of log-space fit residuals
  int samples = 0;
};

// Least-squares slope of log(sup) against log(t) over t in [window_lo, window_hi].
DecayFit decay_fit(const std::vector<double>& times, const std::vector<double>& sups, double window_lo,
                   double window_hi);

// || <D>^{s-sigma} u ||_{L^p_t L^q_x} / || u(0) ||_{H^s} for a homogeneous run.
double strichartz_ratio(const FieldSeries& u, const AdmissiblePair& pair, double s, bool homogeneous = true);

void dump_norms_csv(const TimeSeriesNorms& ts, const std::string& path);

}  // namespace displab
