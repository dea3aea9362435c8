#pragma once

#include <optional>
#include <string>
#include <vector>

#include "twoscale/cell_spectral.hpp"

namespace twoscale {

enum class Definiteness { positive_definite, negative_definite, indefinite, semidefinite };

const char* definiteness_name(Definiteness d);

struct HessianClassification {
  Definiteness definiteness = Definiteness::semidefinite;
  RVec eigenvalues;  // ascending
  double pd_tol = 0;
};

/// Symmetric eigendecomposition; an eigenvalue counts as nonzero beyond
/// pd_tol = 1e-8 (1 + max |entry|).
HessianClassification classify_hessian(const RMat& hessian);

struct CriticalPoint {
  int n = 1;
  BlochPoint location;
  double lambda = 0;
  double grad_norm = 0;
  RMat hessian;  // [[xx, xt], [xt^T, tt]]
  Definiteness definiteness = Definiteness::semidefinite;
  RVec hessian_eigenvalues;
  int iterations = 0;
};

HessianClassification classify_hessian(const CriticalPoint& cp);

struct NewtonOptions {
  double critical_tol = 1e-8;
  int max_iter = 50;
  double x_bound = 10.0;  // LeftSearchDomain beyond max_k |x_k|
  HessianOptions hessian{};
};

/// Damped Newton on grad lambda_n with the Hessian identities as Jacobian. The step is the
/// minimum-norm least-squares solution, so x-independent bands (singular x-block) are fine.
CriticalPoint find_critical_point(const CoefficientField& field, int n, const BlochPoint& guess,
                                  const CellDiscretization& disc, const NewtonOptions& options = {});

struct SearchOutcome {
  BlochPoint guess;
  std::optional<CriticalPoint> point;
  std::string error;  // empty on success
};

/// Independent Newton runs from every guess on a worker pool; results keep the guess order.
std::vector<SearchOutcome> multi_start_search(const CoefficientField& field, int n,
                                              const std::vector<BlochPoint>& guesses,
                                              const CellDiscretization& disc, const NewtonOptions& options = {},
                                              int workers = 0);

struct PhaseTrajectory {
  std::vector<double> times;
  std::vector<BlochPoint> states;
  std::vector<double> lambda;
  bool complete = true;
  std::string abort_reason;  // set when a degenerate band stopped the flow
};

/// RK4 for dx/dt = grad_theta lambda_n, dtheta/dt = -grad_x lambda_n. A degenerate band
/// mid-flight ends the run and returns the partial trajectory.
PhaseTrajectory hamiltonian_flow(const CoefficientField& field, int n, const BlochPoint& start, double T, double dt,
                                 const CellDiscretization& disc);

}  // namespace twoscale
