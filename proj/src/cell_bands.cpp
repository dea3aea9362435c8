#include <algorithm>
#include <cmath>
#include <limits>

#include "cell_internal.hpp"
#include "twoscale/cell_spectral.hpp"
#include "twoscale/errors.hpp"
#include "twoscale/fft.hpp"

namespace twoscale {

RMat BandDerivatives::joint_hessian() const {
  const int N = int(hess_xx.rows());
  RMat J(2 * N, 2 * N);
  J.topLeftCorner(N, N) = hess_xx;
  J.topRightCorner(N, N) = hess_xt;
  J.bottomLeftCorner(N, N) = hess_xt.transpose();
  J.bottomRightCorner(N, N) = hess_tt;
  return J;
}

std::vector<BlochEigenpair> solve_bands(const CellOperator& op, int n_max) {
  if (n_max < 1 || n_max > 32) throw InvalidArgument("n_max must be in 1..32");
  auto spec = op.spectrum(n_max);
  std::vector<BlochEigenpair> pairs;
  for (int j = 0; j < n_max; ++j) {
    BlochEigenpair p;
    p.n = j + 1;
    p.lambda = spec->values(j);
    p.psi = spec->vectors.col(j);
    p.gauge_anchor = spec->anchors[j];
    p.residual = mean_norm(op.apply(p.psi) - p.lambda * p.psi) / (std::abs(p.lambda) + 1);
    if (!(p.residual < 1e-9))
      throw EigensolverFailure("band " + std::to_string(p.n) + " residual " + std::to_string(p.residual));
    pairs.push_back(std::move(p));
  }
  return pairs;
}

double default_gap_tol(double lambda) { return 1e-6 * (1 + std::abs(lambda)); }

double gap_value(const std::vector<BlochEigenpair>& pairs, int n) {
  if (n < 1 || n + 1 > int(pairs.size())) throw InvalidArgument("gap needs bands n and n+1");
  double lam = pairs[n - 1].lambda;
  double gap = pairs[n].lambda - lam;
  if (n >= 2) gap = std::min(gap, lam - pairs[n - 2].lambda);
  return gap;
}

double spectral_gap(const std::vector<BlochEigenpair>& pairs, int n, std::optional<double> gap_tol) {
  double gap = gap_value(pairs, n);
  double tol = gap_tol.value_or(default_gap_tol(pairs[n - 1].lambda));
  if (gap < tol)
    throw DegenerateBand("band " + std::to_string(n) + " gap " + std::to_string(gap) + " below " +
                         std::to_string(tol));
  return gap;
}

namespace {

CVec project_out(const CVec& r, const CVec& psi) { return r - mean_inner(r, psi) * psi; }

void require_simple(const CellOperator& op, const BlochEigenpair& pair) {
  auto pairs = solve_bands(op, pair.n + 1);
  spectral_gap(pairs, pair.n);
}

}  // namespace

CVec solve_deflated(const CellOperator& op, const BlochEigenpair& pair, const CVec& rhs, double* residual) {
  const CVec r = project_out(rhs, pair.psi);
  CVec u;
  if (op.disc().uses_dense()) {
    auto spec = op.spectrum(pair.n + 1);
    const int n = op.size();
    CVec coef = spec->vectors.adjoint() * r / double(n);
    for (int m = 0; m < spec->values.size(); ++m) {
      if (m == pair.n - 1) {
        coef(m) = 0;
        continue;
      }
      double d = spec->values(m) - pair.lambda;
      if (std::abs(d) < default_gap_tol(pair.lambda))
        throw SingularSolve("deflated corrector system is singular beyond span{psi}");
      coef(m) /= d;
    }
    u = spec->vectors * coef;
  } else {
    int iters = 0;
    u = detail::minres_deflated(op, pair.lambda, pair.psi, r, 1e-12, 4000, &iters);
  }
  u = project_out(u, pair.psi);
  double res = mean_norm(op.apply(u) - pair.lambda * u - r) / (1 + mean_norm(r));
  if (residual) *residual = res;
  if (!(res < 1e-8)) throw SingularSolve("corrector residual " + std::to_string(res));
  return u;
}

namespace {

CVec theta_rhs(const CellOperator& op, const BlochEigenpair& pair, int k, double dlam) {
  return -(op.apply_theta(k, pair.psi) - dlam * pair.psi);
}
CVec x_rhs(const CellOperator& op, const BlochEigenpair& pair, int l, double dlam) {
  return -(op.apply_x(l, pair.psi) - dlam * pair.psi);
}

}  // namespace

BandGradient grad_lambda(const CellOperator& op, const BlochEigenpair& pair) {
  require_simple(op, pair);
  const int N = op.disc().dimension;
  BandGradient g;
  g.grad_x.resize(N);
  g.grad_theta.resize(N);
  for (int k = 0; k < N; ++k) {
    cplx t = mean_inner(op.apply_theta(k, pair.psi), pair.psi);
    cplx x = mean_inner(op.apply_x(k, pair.psi), pair.psi);
    g.grad_theta(k) = t.real();
    g.grad_x(k) = x.real();
    g.imaginary_residual = std::max({g.imaginary_residual, std::abs(t.imag()), std::abs(x.imag())});
  }
  return g;
}

CVec solve_theta_corrector(const CellOperator& op, const BlochEigenpair& pair, int k) {
  require_simple(op, pair);
  double dlam = mean_inner(op.apply_theta(k, pair.psi), pair.psi).real();
  return solve_deflated(op, pair, theta_rhs(op, pair, k, dlam));
}

CVec solve_x_corrector(const CellOperator& op, const BlochEigenpair& pair, int l) {
  require_simple(op, pair);
  double dlam = mean_inner(op.apply_x(l, pair.psi), pair.psi).real();
  return solve_deflated(op, pair, x_rhs(op, pair, l, dlam));
}

namespace {

struct HessianBlocks {
  RMat tt, xt, xx;
  double asym = 0;
  double imag = 0;
};

// The three second-derivative identities evaluated with the given operator.
HessianBlocks evaluate_hessian(const CellOperator& op, const CVec& psi, const std::vector<CVec>& pt,
                               const std::vector<CVec>& px) {
  const int N = op.disc().dimension;
  HessianBlocks b;
  b.tt.resize(N, N);
  b.xt.resize(N, N);
  b.xx.resize(N, N);
  RMat tt_raw(N, N), xx_raw(N, N);
  for (int p = 0; p < N; ++p)
    for (int q = 0; q < N; ++q) {
      cplx base = mean_inner(op.apply_theta2(p, q, psi), psi);
      cplx pq = mean_inner(op.apply_theta(p, pt[q]), psi);
      cplx qp = mean_inner(op.apply_theta(q, pt[p]), psi);
      tt_raw(p, q) = base.real() + 2 * pq.real();
      b.imag = std::max({b.imag, std::abs(base.imag()), std::abs((pq + qp).imag())});

      cplx xbase = mean_inner(op.apply_xx(p, q, psi), psi);
      cplx xpq = mean_inner(op.apply_x(p, px[q]), psi);
      cplx xqp = mean_inner(op.apply_x(q, px[p]), psi);
      xx_raw(p, q) = xbase.real() + 2 * xpq.real();
      b.imag = std::max({b.imag, std::abs(xbase.imag()), std::abs((xpq + xqp).imag())});

      // (h, k) = (p, q): d^2 / dx_h dtheta_k
      cplx mixed = mean_inner(op.apply_x_theta(p, q, psi), psi) + mean_inner(op.apply_theta(q, px[p]), psi) +
                   mean_inner(op.apply_x(p, pt[q]), psi);
      b.xt(p, q) = mixed.real();
      b.imag = std::max(b.imag, std::abs(mixed.imag()));
    }
  b.asym = std::max((tt_raw - tt_raw.transpose()).cwiseAbs().maxCoeff(),
                    (xx_raw - xx_raw.transpose()).cwiseAbs().maxCoeff());
  b.tt = 0.5 * (tt_raw + tt_raw.transpose());
  b.xx = 0.5 * (xx_raw + xx_raw.transpose());
  return b;
}

double relative_delta(const RMat& a, const RMat& b) {
  double d = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    d = std::max(d, std::abs(a(i) - b(i)) / (1 + std::abs(a(i))));
  return d;
}

}  // namespace

void hessian_lambda(const CellOperator& op, const BlochEigenpair& pair, BandDerivatives& derivs,
                    const HessianOptions& options) {
  const int N = op.disc().dimension;
  if (int(derivs.corr_theta.size()) != N || int(derivs.corr_x.size()) != N)
    throw MissingCorrectors("Hessian needs both corrector families");
  require_simple(op, pair);
  HessianBlocks b = evaluate_hessian(op, pair.psi, derivs.corr_theta, derivs.corr_x);
  derivs.hess_tt = b.tt;
  derivs.hess_xt = b.xt;
  derivs.hess_xx = b.xx;
  derivs.asymmetry_residual = b.asym;
  derivs.imaginary_residual = std::max(derivs.imaginary_residual, b.imag);
  derivs.quadrature_delta = std::numeric_limits<double>::quiet_NaN();

  const int M = op.disc().points;
  if (!options.check_quadrature || 2 * M > 512) return;
  // Spectral quadrature of the same identities on the M grid and on the 2M grid.
  CellDiscretization fine = op.disc();
  fine.points = 2 * M;
  fine.scheme = Scheme::pseudo_spectral;
  fine.method = EigenMethod::dense;
  CellDiscretization coarse = op.disc();
  coarse.scheme = Scheme::pseudo_spectral;
  CellOperator fine_op(op.field(), op.point(), fine);
  std::optional<CellOperator> coarse_spectral;
  if (op.disc().scheme != Scheme::pseudo_spectral) coarse_spectral.emplace(op.field(), op.point(), coarse);
  const CellOperator& cop = coarse_spectral ? *coarse_spectral : op;

  auto up = [&](const CVec& v) { return TrigInterpolant(N, M, v).resample(2 * M); };
  std::vector<CVec> pt2, px2;
  for (int k = 0; k < N; ++k) {
    pt2.push_back(up(derivs.corr_theta[k]));
    px2.push_back(up(derivs.corr_x[k]));
  }
  HessianBlocks bc = coarse_spectral ? evaluate_hessian(cop, pair.psi, derivs.corr_theta, derivs.corr_x) : b;
  HessianBlocks bf = evaluate_hessian(fine_op, up(pair.psi), pt2, px2);
  double delta = std::max({relative_delta(bc.tt, bf.tt), relative_delta(bc.xt, bf.xt), relative_delta(bc.xx, bf.xx)});
  derivs.quadrature_delta = delta;
  if (delta > options.quadrature_tol)
    throw QuadratureInconsistency("Hessian quadrature changes by " + std::to_string(delta) + " under M doubling");
}

BandDerivatives band_derivatives(const CellOperator& op, int n, const HessianOptions& options) {
  auto pairs = solve_bands(op, n + 1);
  return band_derivatives(op, pairs[n - 1], options);
}

BandDerivatives band_derivatives(const CellOperator& op, const BlochEigenpair& pair, const HessianOptions& options) {
  auto pairs = solve_bands(op, pair.n + 1);
  BandDerivatives d;
  d.n = pair.n;
  d.gap = spectral_gap(pairs, pair.n);
  d.lambda = pair.lambda;
  BandGradient g = grad_lambda(op, pair);
  d.grad_theta = g.grad_theta;
  d.grad_x = g.grad_x;
  d.imaginary_residual = g.imaginary_residual;
  const int N = op.disc().dimension;
  for (int k = 0; k < N; ++k) {
    double res = 0;
    d.corr_theta.push_back(solve_deflated(op, pair, theta_rhs(op, pair, k, g.grad_theta(k)), &res));
    d.corrector_residual = std::max(d.corrector_residual, res);
    d.corr_x.push_back(solve_deflated(op, pair, x_rhs(op, pair, k, g.grad_x(k)), &res));
    d.corrector_residual = std::max(d.corrector_residual, res);
  }
  hessian_lambda(op, pair, d, options);
  return d;
}

double band_value(const CoefficientField& field, const BlochPoint& point, const CellDiscretization& disc, int n) {
  CellOperator op(field, point, disc);
  return op.spectrum(n)->values(n - 1);
}

}  // namespace twoscale
