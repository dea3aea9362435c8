#pragma once

#include <optional>
#include <string>
#include <vector>

#include "twoscale/band_geometry.hpp"
#include "twoscale/cell_spectral.hpp"
#include "twoscale/homogenization.hpp"

namespace twoscale {

enum class Frame { x_frame, z_frame };

const char* frame_name(Frame f);

/// Complex field on the periodic box center + [-L, L)^N with P points per axis
/// (node j at center - L + 2 L j / P, row-major as the cell grid).
struct WaveField {
  int dimension = 1;
  double L = 1;
  int P = 16;
  SmallVec center;
  Frame frame = Frame::z_frame;
  CVec values;

  WaveField() = default;
  WaveField(int dimension, double L, int P, SmallVec center, Frame frame);

  int size() const { return dimension == 1 ? P : P * P; }
  double spacing() const { return 2 * L / P; }
  double cell_volume() const { return std::pow(spacing(), dimension); }
  /// Coordinates of node j.
  SmallVec node(int j) const;
  double norm() const;
  /// Fraction of |values|^2 mass on nodes with max_k |node_k - center_k| > 0.95 L.
  double boundary_mass() const;
  bool same_grid(const WaveField& other, double tol = 1e-12) const;
};

/// Gaussian pi^{-N/4} exp(-|z|^2 / 2) on a z-frame grid (unit L2 norm up to truncation).
WaveField gaussian_profile(int dimension, double L, int P);

struct Snapshot {
  double t = 0;
  WaveField field;
};

struct EvolutionResult {
  std::vector<Snapshot> snapshots;
  std::vector<std::pair<double, double>> norm_history;  // (t, L2 norm)
  int steps = 0;
  long linear_iterations = 0;
  int max_linear_iterations = 0;
  double max_norm_drift = 0;      // max_t | ||u(t)|| - ||u(0)|| | / ||u(0)||
  double max_boundary_mass = 0;
  double energy_shift = 0;        // lambda_ref removed analytically (epsilon problem)

  const Snapshot& at(double t) const;  // throws FrameMismatch if absent
};

struct BoxChoice {
  double L_z = 0;
  double L_x = 0;
  int P = 0;
  int cells = 0;
};

/// Power-of-two cell count with cells * sqrt(eps) / 2 >= L_min and points_per_cell nodes per
/// period, so the x-frame box holds a whole number of periods and matches the z grid.
BoxChoice commensurate_box(double eps, double L_min, int points_per_cell = 16);

struct InitialDataOptions {
  const BandDerivatives* correctors = nullptr;  // first-order terms when set
  int min_points_per_cell = 16;
};

/// u0(x) = psi_n(x / eps) e^{2 i pi theta . x / eps} v0((x - x^n) / sqrt(eps)) on the x-frame box
/// center x^n, half-width sqrt(eps) L_z, same P as v0.
WaveField build_initial_data(double eps, const BlochEigenpair& pair, const CriticalPoint& cp, const WaveField& v0,
                             const InitialDataOptions& options = {});

struct EpsilonOptions {
  Scheme scheme = Scheme::pseudo_spectral;
  double energy_shift = 0;               // lambda_ref; evolve e^{-i lambda_ref t / eps} u
  std::optional<double> band_energy;     // lambda_n for the dt precondition
  double dt_factor_scale = 1e-2;         // dt <= eps * scale / |lambda_n - shift|
  std::vector<double> snapshot_times;    // t = 0 and t = T are always recorded
  double solve_tol = 1e-12;
  double boundary_tol = 1e-6;
  int norm_every = 1;
};

/// Crank-Nicolson for (i / eps) du/dt = div(A(x, x/eps) grad u) - c(x, x/eps) u / eps^2.
EvolutionResult evolve_epsilon(const CoefficientField& field, const WaveField& u0, double eps, double T, double dt,
                               const EpsilonOptions& options = {});

struct HomogenizedOptions {
  DriftForm form = DriftForm::hom;
  std::vector<double> snapshot_times;
  double solve_tol = 1e-13;
  double boundary_tol = 1e-6;
  int norm_every = 1;
};

/// Crank-Nicolson for i dv/dt = -A* v with A* v = -div(A* grad v) + div(v B* z) + c* v + D* z.z v.
EvolutionResult evolve_homogenized(const HomogenizedTensors& t, const WaveField& v0, double T, double dt,
                                   const HomogenizedOptions& options = {});

/// Matrix-free homogenized operator on the z grid of `like`.
CVec apply_homogenized(const HomogenizedTensors& t, const WaveField& like, const CVec& v,
                       DriftForm form = DriftForm::hom);

struct DecayEstimate {
  double gamma = 0;           // +inf when the window underflows
  bool underflow = false;
  double resolvable_gamma = 0;  // slope over the resolvable part of the window
  double r_min = 0, r_max = 0;
};

/// Least-squares slope of log shell-mean density of |phi|^2 over r in [0.5 L, 0.8 L];
/// gamma = -slope / 2.
DecayEstimate decay_rate(const WaveField& phi);
/// Same; throws WindowUnderflow instead of returning the sentinel.
double decay_rate_strict(const WaveField& phi);

struct HomogenizedEigenpair {
  int m = 1;
  double sigma = 0;
  WaveField phi;
  DecayEstimate decay;
  double residual = 0;
};

struct EigsReport {
  std::vector<HomogenizedEigenpair> pairs;
  double orthonormality_residual = 0;
  double hermitian_residual = 0;
  double boundary_mass = 0;  // of the lowest eigenfunction
};

/// Lowest m_max eigenpairs of the discretized homogenized operator on the z box.
/// Throws NotPositiveDefinite (joint Hessian implied by the tensors) or BoxTooSmall.
EigsReport homogenized_eigs(const HomogenizedTensors& t, int m_max, int dimension, double L, int P);

/// w_eps(t, z) = e^{-i lambda t / eps} u_eps(t, x) on the z grid (same nodes).
WaveField transformed_solution(const EvolutionResult& u, double lambda, double eps, double t);

/// int |v_eps(t,z) - psi_n(x/eps) v(t,z)|^2 dz / ||v0||^2 with v_eps from u_eps by phase removal.
double two_scale_error(const EvolutionResult& u, const EvolutionResult& v, const BlochEigenpair& pair,
                       const CriticalPoint& cp, double eps, double t);

/// First-order ansatz e^{2 i pi theta.x/eps}[psi v + sqrt(eps) sum_k ((1/2 i pi) psi_theta_k d_k v
/// + z_k psi_x_k v)]; with `derivs == nullptr` only the leading term.
WaveField corrector_reconstruction(const EvolutionResult& v, const BlochEigenpair& pair,
                                   const BandDerivatives* derivs, const CriticalPoint& cp, double eps, double t);

/// Samples a cell grid function at y = x / eps for every node of an x-frame grid.
CVec sample_cell_function(const CVec& cell_values, int dimension, int M, const WaveField& xgrid, double eps);

}  // namespace twoscale
