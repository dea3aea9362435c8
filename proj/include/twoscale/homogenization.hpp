#pragma once

#include "twoscale/band_geometry.hpp"
#include "twoscale/cell_spectral.hpp"

namespace twoscale {

/// Where the zero-order and drift terms of the homogenized operator come from:
/// `hom` is div(v B* z) + c* v, `asym` is (B* z) . grad v + conj(c*) v.
enum class DriftForm { hom, asym };

struct TensorProvenance {
  bool certified = false;  // assembled at a certified critical point
  int n = 1;
  BlochPoint point;
  CellDiscretization disc;
  double lambda = 0;
  double grad_norm = 0;
  RMat joint_hessian;
  Definiteness definiteness = Definiteness::semidefinite;
};

struct HomogenizedTensors {
  int dimension = 1;
  RMat A_star;
  CMat B_star;  // (k, h) pairs z_h with d/dz_k in the drift
  cplx c_star{0, 0};
  RMat D_star;
  TensorProvenance provenance;

  double identity_residual = 0;       // |tr(B*)/(2i) + Im c*|
  double c_star_route_delta = 0;      // |paper quadrature - operator form| (spectral scheme)
  double c_star_gauge_sensitivity = 0;  // |dc*| when the x-corrector gains i psi
  double quadrature_delta = 0;        // relative M vs 2M change of c*
};

/// Tensors from explicit values (synthetic oracles); B* need not be anti-real.
HomogenizedTensors make_tensors(const RMat& A_star, const CMat& B_star, cplx c_star, const RMat& D_star);

struct AssemblyOptions {
  double quadrature_tol = 1e-6;
  bool check_quadrature = true;
};

/// Assembly at the operator's Bloch point without a critical-point certificate.
HomogenizedTensors assemble_tensors_at(const CellOperator& op, const BandDerivatives& derivs,
                                       const BlochEigenpair& pair, const AssemblyOptions& options = {});

/// A* = hess_tt / 8 pi^2, B* = hess_xt^T / 2 i pi, D* = hess_xx / 2, c* by torus quadrature.
/// Throws MissingCorrectors, QuadratureInconsistency, InvalidArgument if cp and op disagree.
HomogenizedTensors assemble_tensors(const CellOperator& op, const CriticalPoint& cp, const BandDerivatives& derivs,
                                    const BlochEigenpair& pair, const AssemblyOptions& options = {});

/// Builds the operator at cp, solves band n and assembles.
HomogenizedTensors homogenize(const CoefficientField& field, const CriticalPoint& cp, const CellDiscretization& disc,
                              const AssemblyOptions& options = {});

/// |tr(B*)/(2i) + Im c*|.
double check_selfadjoint_identity(const HomogenizedTensors& t);

/// Zero-order coefficient of the homogenized operator once the drift is written in the
/// symmetric form (1/2) sum B*_kh (d_k z_h + z_h d_k).
cplx zero_order_coefficient(const HomogenizedTensors& t, DriftForm form);

/// Max |B* + conj(B*)|: zero when B* is purely imaginary.
double drift_realness_residual(const HomogenizedTensors& t);

}  // namespace twoscale
