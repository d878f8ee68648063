#pragma once

// Gaussian windowed transforms at an adjustable scale, the phase-space
// distances used to localize propagator kernels, and the flow-Jacobian
// matrices of the free dispersion relations.

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "core/grid.hpp"

namespace displab {

// Transform samples on a product lattice: x on the field grid, xi on the dual
// lattice decimated by `stride`. Stored xi-major, x fastest.
class PhaseFunction {
 public:
  PhaseFunction() = default;
  PhaseFunction(const Grid& g, double s, int stride);

  const Grid& grid() const { return g_; }
  double scale() const { return s_; }
  int stride() const { return stride_; }

  int nxi_axis() const { return stride_ > 0 ? g_.n / stride_ : 0; }
  std::int64_t nxi() const;
  double dxi_dec() const { return stride_ * g_.dxi(); }
  // signed frequency of a decimated lattice slot
  void xi_at(std::int64_t flat, std::array<double, 3>& xi) const;

  const std::vector<cd>& vals() const { return v_; }
  std::vector<cd>& mutable_vals() { return v_; }
  cd at(std::int64_t xi_flat, std::int64_t x_flat) const;

  // quadrature of the phase-space L2 integral
  double norm() const;

  PhaseFunction& operator+=(const PhaseFunction& o);
  PhaseFunction& operator-=(const PhaseFunction& o);
  PhaseFunction& operator*=(cd a);

 private:
  Grid g_;
  double s_ = 0.0;
  int stride_ = 0;
  std::vector<cd> v_;

  void check_mate(const PhaseFunction& o) const;
};

// Forward transform
//   (Tf)(x,xi) = c_d s^{-d/4} sum_y dx^d e^{-|x-y|^2/(2s)} e^{i xi.(x-y)} f(y),
// c_d = 2^{-d/2} pi^{-3d/4}, differences taken to the nearest periodic image.
// stride 0 picks the coarsest decimation whose window still covers four xi
// cells; an explicit stride trades adjoint accuracy for memory.
PhaseFunction bargmann(const SpectralField& f, double s, int stride = 0);

// Same quadrature at a single off-lattice phase point.
struct PhasePoint {
  std::array<double, 3> x{};
  std::array<double, 3> xi{};
};
cd bargmann_point(const SpectralField& f, double s, const PhasePoint& p);

// Adjoint quadrature. bargmann_adjoint(bargmann(f,s)) reproduces f to about
// 1e-8 for auto-chosen strides.
SpectralField bargmann_adjoint(const PhaseFunction& F);

// The transform kernel rooted at p, as a grid field.
SpectralField coherent_state(const Grid& g, double s, const PhasePoint& p);

// d_t(p,q)^2 = t^{-1}|x-y|^2 + t|xi-eta|^2
double phase_distance(const PhasePoint& p, const PhasePoint& q, double t);

// |v|_delta^2 = v_1^2 + ... + v_{d-1}^2 + delta^2 v_d^2
double distorted_norm(const std::array<double, 3>& v, int d, double delta);

struct JacobianResult {
  Eigen::MatrixXd phi;
  std::vector<double> eigs;  // closed forms, transverse values first
};

// Phi = <xi>_a^{-3} (<xi>_a^2 I - xi xi^T) with <xi>_a = sqrt(a^{-2}+|xi|^2).
// Eigenvalues <xi>_a^{-1} (d-1 fold) and a^{-2}<xi>_a^{-3} along xi.
JacobianResult kg_jacobian_matrix(int d, const std::array<double, 3>& xi, double a);

struct WaveJacobianResult {
  Eigen::MatrixXd phi;  // |xi|^2 I - xi xi^T
  int rank;             // numeric rank: d-1 away from xi = 0
};
WaveJacobianResult wave_jacobian_matrix(int d, const std::array<double, 3>& xi);

struct KernelProbe {
  PhasePoint source;     // coherent state location at scale s
  PhasePoint reference;  // expected image of the source under the flow
  PhasePoint target;     // where the kernel is sampled at scale t
  double dpsi = 0.0;     // damping increment entering the bound
};

struct ProbeRow {
  KernelProbe probe;
  double measured = 0.0;
  double bound = 0.0;
  double ratio = 0.0;
};

struct ProbeTable {
  int d = 0;
  double t = 0.0, s = 0.0, N = 0.0, lambda = 1.0;
  std::vector<ProbeRow> rows;
  std::size_t max_index = 0;  // row with the largest ratio
};

using FieldMap = std::function<SpectralField(const SpectralField&)>;

// Samples the kernel of `evolution` between phase-space points: push a scale-s
// coherent state at probe.source through the map, transform at scale t at
// probe.target, and compare against
//   (t/s)^{-d/4} (1 + dpsi^2 + t^{-1}|x-x_ref|_l^2 + s|xi-xi_ref|_{1/l}^2)^{-N}.
ProbeTable kernel_decay_probe(const FieldMap& evolution, const Grid& g, double t, double s, double N,
                              const std::vector<KernelProbe>& probes, double lambda = 1.0);

void dump_probe_csv(const ProbeTable& table, const std::string& path);

}  // namespace displab
