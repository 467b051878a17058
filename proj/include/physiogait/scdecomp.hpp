#pragma once

#include <vector>

#include "physiogait/core.hpp"

namespace physiogait {

/// Bateman impulse-response time constants. tau_rise shapes the onset,
/// tau_decay the recovery; the response is h(t) = (e^{-t/decay} -
/// e^{-t/rise}) / (decay - rise) for t >= 0, which integrates to 1.
struct BatemanParams {
  double tau_rise_s = 0.7;
  double tau_decay_s = 2.0;
};

void check_taus(const BatemanParams& p);

/// Sampled Bateman kernel h[k] = h(k / rate_hz), k = 0 .. rate*duration.
std::vector<double> bateman_kernel(const BatemanParams& params, double rate_hz,
                                   double duration_s);

/// Discrete phasic response: y_p[k] = y_p0 * e^{-t_k/tau_decay}
/// + dt * sum_{j<=k} h[k-j] u[j].
std::vector<double> phasic_from_driver(const std::vector<double>& driver,
                                       const BatemanParams& params,
                                       double rate_hz, double y_p0 = 0.0);

struct DecomposeOptions {
  double lambda_tonic = -1.0;   // < 0: pick by GCV
  double lambda_sparse = -1.0;  // < 0: pick by GCV
  double knot_spacing_s = 10.0;
  double rel_tol = 1e-6;
  int max_iterations = 50;
  int sweeps_per_block = 4;
  bool refine_taus = false;  // grid search over rise x decay, off by default
};

struct ScDecomposition {
  SensorStream y;         // input skin conductance
  SensorStream tonic;     // y_s
  SensorStream phasic;    // y_p = A u
  SensorStream driver;    // u >= 0, same grid as y
  SensorStream residual;  // y - tonic - phasic, exact by construction
  BatemanParams params;
  double lambda_tonic = 0.0;
  double lambda_sparse = 0.0;
  std::vector<double> objective_trace;  // one entry per block step
  bool converged = false;
  int iterations = 0;
};

/// Tonic/phasic split by alternating a nonnegative sparse-driver block
/// (cyclic coordinate descent on ||r - A u||^2 + lambda_u * sum u) with a
/// penalized-spline tonic block (||r - B l||^2 + lambda_l ||D2 l||^2).
/// Regularization weights come from generalized cross-validation on a fixed
/// logarithmic grid; selection is frozen after the second outer iteration.
ScDecomposition decompose(const SensorStream& y, const BatemanParams& params,
                          const DecomposeOptions& opts = {});

}  // namespace physiogait
