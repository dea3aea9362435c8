#include <cmath>

#include "twoscale/errors.hpp"
#include "twoscale/fft.hpp"
#include "twoscale/homogenization.hpp"

namespace twoscale {

HomogenizedTensors make_tensors(const RMat& A_star, const CMat& B_star, cplx c_star, const RMat& D_star) {
  const int N = int(A_star.rows());
  if (A_star.cols() != N || B_star.rows() != N || B_star.cols() != N || D_star.rows() != N || D_star.cols() != N)
    throw InvalidArgument("tensor shapes disagree");
  HomogenizedTensors t;
  t.dimension = N;
  t.A_star = A_star;
  t.B_star = B_star;
  t.c_star = c_star;
  t.D_star = D_star;
  t.identity_residual = check_selfadjoint_identity(t);
  return t;
}

namespace {

// Spectral (grad + 2 i pi theta) along each axis.
std::vector<CVec> bloch_gradient(const CVec& u, int N, int M, const SmallVec& theta) {
  const FftGrid& g = fft_grid(N, M);
  CVec f = g.forward(u);
  std::vector<CVec> out;
  for (int a = 0; a < N; ++a) {
    CVec fa = f;
    for (int j = 0; j < g.size(); ++j) fa(j) *= kTwoPiI * (g.wavenumber(g.multi_index(j)[a]) + theta(a));
    out.push_back(g.backward(fa) / double(g.size()));
  }
  return out;
}

// c* = sum_k mean[(A D psi)_k conj(psi_xk) - (A conj(D psi_xk))_k psi - (A_{1,k} conj(D psi))_k psi]
cplx c_star_quadrature(const CellOperator& sop, const CVec& psi, const std::vector<CVec>& px) {
  const int N = sop.disc().dimension, M = sop.disc().points;
  const SmallVec& theta = sop.point().theta;
  auto Dpsi = bloch_gradient(psi, N, M, theta);
  cplx total = 0;
  for (int k = 0; k < N; ++k) {
    auto Dpx = bloch_gradient(px[k], N, M, theta);
    CVec acc = CVec::Zero(psi.size());
    for (int l = 0; l < N; ++l) {
      const RVec& a = sop.coefficient_samples({}, k, l);
      const RVec& a1 = sop.coefficient_samples({1, k, k}, k, l);
      acc += a.cast<cplx>().cwiseProduct(Dpsi[l].cwiseProduct(px[k].conjugate()));
      acc -= a.cast<cplx>().cwiseProduct(Dpx[l].conjugate().cwiseProduct(psi));
      acc -= a1.cast<cplx>().cwiseProduct(Dpsi[l].conjugate().cwiseProduct(psi));
    }
    total += acc.mean();
  }
  return total;
}

// Discrete-consistent form (i / 2 pi) sum_k [<H_theta_k psi, psi_xk> + conj(P_kk)], valid for
// every term list; it makes the self-adjointness identity exact at the discrete level.
cplx c_star_operator_form(const CellOperator& op, const CVec& psi, const std::vector<CVec>& px) {
  const int N = op.disc().dimension;
  cplx total = 0;
  for (int k = 0; k < N; ++k) {
    cplx first = mean_inner(op.apply_theta(k, psi), px[k]);
    cplx P = op.left_derivative_pairing({1, k, k}, k, psi, psi);
    total += first + std::conj(P);
  }
  return cplx(0, 1.0 / (2 * kPi)) * total;
}

}  // namespace

HomogenizedTensors assemble_tensors_at(const CellOperator& op, const BandDerivatives& derivs,
                                       const BlochEigenpair& pair, const AssemblyOptions& options) {
  const int N = op.disc().dimension;
  if (int(derivs.corr_x.size()) != N || int(derivs.corr_theta.size()) != N || derivs.hess_tt.rows() != N)
    throw MissingCorrectors("tensor assembly needs band derivatives with both corrector families");
  HomogenizedTensors t;
  t.dimension = N;
  t.A_star = derivs.hess_tt / (8 * kPi * kPi);
  t.D_star = derivs.hess_xx / 2.0;
  t.B_star = derivs.hess_xt.transpose().cast<cplx>() / (kTwoPiI);

  const bool spectral = op.disc().scheme == Scheme::pseudo_spectral;
  cplx c_op = c_star_operator_form(op, pair.psi, derivs.corr_x);
  std::optional<CellOperator> sop_storage;
  if (!spectral) {
    CellDiscretization sd = op.disc();
    sd.scheme = Scheme::pseudo_spectral;
    sop_storage.emplace(op.field(), op.point(), sd);
  }
  const CellOperator& sop = spectral ? op : *sop_storage;
  cplx c_quad = c_star_quadrature(sop, pair.psi, derivs.corr_x);
  t.c_star = spectral ? c_quad : c_op;
  t.c_star_route_delta = spectral ? std::abs(c_quad - c_op) : std::nan("");

  std::vector<CVec> shifted = derivs.corr_x;
  for (auto& v : shifted) v += cplx(0, 1) * pair.psi;
  cplx c_shift = spectral ? c_star_quadrature(op, pair.psi, shifted) : c_star_operator_form(op, pair.psi, shifted);
  t.c_star_gauge_sensitivity = std::abs(c_shift - t.c_star);

  t.quadrature_delta = std::nan("");
  const int M = op.disc().points;
  if (options.check_quadrature && 2 * M <= 512) {
    CellDiscretization fine = op.disc();
    fine.points = 2 * M;
    fine.scheme = Scheme::pseudo_spectral;
    fine.method = EigenMethod::dense;
    CellOperator fop(op.field(), op.point(), fine);
    auto up = [&](const CVec& v) { return TrigInterpolant(N, M, v).resample(2 * M); };
    std::vector<CVec> px2;
    for (const auto& v : derivs.corr_x) px2.push_back(up(v));
    cplx c_fine = c_star_quadrature(fop, up(pair.psi), px2);
    t.quadrature_delta = std::abs(c_fine - c_quad) / (1 + std::abs(c_quad));
    if (t.quadrature_delta > options.quadrature_tol)
      throw QuadratureInconsistency("c* quadrature changes by " + std::to_string(t.quadrature_delta) +
                                    " under M doubling");
  }

  t.provenance.n = pair.n;
  t.provenance.point = op.point();
  t.provenance.disc = op.disc();
  t.provenance.lambda = pair.lambda;
  t.provenance.grad_norm = std::hypot(derivs.grad_x.norm(), derivs.grad_theta.norm());
  t.provenance.joint_hessian = derivs.joint_hessian();
  t.provenance.definiteness = classify_hessian(t.provenance.joint_hessian).definiteness;
  t.identity_residual = check_selfadjoint_identity(t);
  return t;
}

HomogenizedTensors assemble_tensors(const CellOperator& op, const CriticalPoint& cp, const BandDerivatives& derivs,
                                    const BlochEigenpair& pair, const AssemblyOptions& options) {
  if ((op.point().x - cp.location.x).norm() > 1e-12 ||
      (wrap_theta(op.point().theta - cp.location.theta)).norm() > 1e-12)
    throw InvalidArgument("operator is not built at the critical point");
  if (pair.n != cp.n || derivs.n != cp.n) throw InvalidArgument("band index differs from the critical point");
  HomogenizedTensors t = assemble_tensors_at(op, derivs, pair, options);
  t.provenance.certified = true;
  t.provenance.grad_norm = cp.grad_norm;
  t.provenance.definiteness = cp.definiteness;
  return t;
}

HomogenizedTensors homogenize(const CoefficientField& field, const CriticalPoint& cp, const CellDiscretization& disc,
                              const AssemblyOptions& options) {
  CellOperator op(field, cp.location, disc);
  auto pairs = solve_bands(op, cp.n + 1);
  auto derivs = band_derivatives(op, pairs[cp.n - 1]);
  return assemble_tensors(op, cp, derivs, pairs[cp.n - 1], options);
}

double check_selfadjoint_identity(const HomogenizedTensors& t) {
  cplx tr = t.B_star.trace();
  return std::abs(tr / cplx(0, 2) + t.c_star.imag());
}

cplx zero_order_coefficient(const HomogenizedTensors& t, DriftForm form) {
  cplx tr = t.B_star.trace();
  return form == DriftForm::hom ? t.c_star + 0.5 * tr : std::conj(t.c_star) - 0.5 * tr;
}

double drift_realness_residual(const HomogenizedTensors& t) {
  return (t.B_star + t.B_star.conjugate()).cwiseAbs().maxCoeff();
}

}  // namespace twoscale
