#pragma once

// Smooth cutoff machinery. Everything here is built from the single compactly
// supported profile exp(-1/(1-s^2)) so the multipliers and symbols derived from
// it have derivatives of every order.

namespace displab {

// exp(-1/(1-s^2)) on (-1,1), zero outside.
double bump(double s);

// k-th derivative of bump at s (k <= 6).
double bump_deriv(double s, int k);

// Smooth step: 0 for u <= 0, 1 for u >= 1, strictly increasing between.
double smooth_step(double u);

// k-th derivative of smooth_step at u (k <= 6).
double smooth_step_deriv(double u, int k);

// Radial falloff in log2 scale: 1 for r <= 1, 0 for r >= 2, smooth in between.
// All dyadic frequency/space cutoffs are built from this one profile.
double dyadic_lowpass(double r);

}  // namespace displab
