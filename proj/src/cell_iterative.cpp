#include <cmath>
#include <random>

#include "cell_internal.hpp"
#include "twoscale/errors.hpp"

namespace twoscale::detail {

namespace {

double rdot(const CVec& a, const CVec& b) { return mean_inner(a, b).real(); }

}  // namespace

CVec cg_shifted(const CellOperator& op, double shift, const CVec& rhs, double tol, int max_iter, int* iterations) {
  CVec x = CVec::Zero(rhs.size());
  CVec r = rhs;
  CVec z = op.precondition(r, shift);
  CVec p = z;
  double rz = rdot(r, z);
  const double bnorm = mean_norm(rhs);
  if (bnorm == 0) return x;
  int it = 0;
  for (; it < max_iter; ++it) {
    CVec Ap = op.apply(p) - shift * p;
    double alpha = rz / rdot(Ap, p);
    x += alpha * p;
    r -= alpha * Ap;
    if (mean_norm(r) < tol * bnorm) break;
    z = op.precondition(r, shift);
    double rz_new = rdot(r, z);
    p = z + (rz_new / rz) * p;
    rz = rz_new;
  }
  if (iterations) *iterations = it + 1;
  if (it == max_iter) throw NoConvergence("preconditioned CG did not converge");
  return x;
}

std::shared_ptr<CellOperator::Spectrum> lanczos_spectrum(const CellOperator& op, int count) {
  const int n = op.size();
  const double sigma = op.potential_min() - 1.0;
  std::mt19937_64 rng(0x5eed);
  std::normal_distribution<double> gauss;
  CVec q(n);
  for (int j = 0; j < n; ++j) q(j) = cplx(gauss(rng), gauss(rng));
  q /= mean_norm(q);

  std::vector<CVec> Q{q};
  std::vector<CVec> HQ;
  const int max_steps = std::min(n, 400);
  int target = std::min(max_steps, std::max(2 * count + 20, 40));
  auto spec = std::make_shared<CellOperator::Spectrum>();
  while (true) {
    while (int(Q.size()) < target) {
      CVec w = cg_shifted(op, sigma, Q.back(), 1e-13, 5000, nullptr);
      for (int pass = 0; pass < 2; ++pass)
        for (const auto& v : Q) w -= mean_inner(w, v) * v;
      double b = mean_norm(w);
      if (b < 1e-12) break;  // invariant subspace
      Q.push_back(w / b);
    }
    const int m = int(Q.size());
    while (int(HQ.size()) < m) HQ.push_back(op.apply(Q[HQ.size()]));
    CMat G(m, m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) G(i, j) = mean_inner(HQ[j], Q[i]);
    Eigen::SelfAdjointEigenSolver<CMat> es(0.5 * (G + G.adjoint()));
    spec->values = es.eigenvalues().head(count);
    spec->vectors.resize(n, count);
    spec->anchors.assign(count, 0);
    bool converged = true;
    for (int c = 0; c < count; ++c) {
      CVec v = CVec::Zero(n), hv = CVec::Zero(n);
      for (int i = 0; i < m; ++i) {
        v += es.eigenvectors()(i, c) * Q[i];
        hv += es.eigenvectors()(i, c) * HQ[i];
      }
      double nv = mean_norm(v);
      v /= nv;
      hv /= nv;
      double lam = spec->values(c);
      if (mean_norm(hv - lam * v) / (std::abs(lam) + 1) > 1e-10) converged = false;
      spec->anchors[c] = fix_gauge(v);
      spec->vectors.col(c) = v;
    }
    if (converged) break;
    if (m >= max_steps || m < target)
      throw EigensolverFailure("Lanczos did not reach the residual tolerance");
    target = std::min(max_steps, m + 20);
  }
  spec->complete = false;
  return spec;
}

CVec minres_deflated(const CellOperator& op, double lambda, const CVec& psi, const CVec& rhs, double tol, int max_iter,
                     int* iterations) {
  const double sigma = op.potential_min() - 1.0;
  auto proj = [&](const CVec& v) { return CVec(v - mean_inner(v, psi) * psi); };
  auto A = [&](const CVec& v) { return proj(op.apply(v) - lambda * v); };
  auto Minv = [&](const CVec& v) { return proj(op.precondition(proj(v), sigma)); };

  const int n = int(rhs.size());
  CVec x = CVec::Zero(n);
  CVec r1 = proj(rhs);
  CVec y = Minv(r1);
  double beta1 = std::sqrt(std::max(rdot(r1, y), 0.0));
  if (beta1 == 0) return x;
  double oldb = 0, beta = beta1, dbar = 0, epsln = 0, phibar = beta1, cs = -1, sn = 0;
  CVec w = CVec::Zero(n), w2 = CVec::Zero(n), r2 = r1;
  int it = 0;
  for (; it < max_iter; ++it) {
    CVec v = y / beta;
    y = A(v);
    if (it >= 1) y -= (beta / oldb) * r1;
    double alfa = rdot(v, y);
    y -= (alfa / beta) * r2;
    r1 = r2;
    r2 = y;
    y = Minv(r2);
    oldb = beta;
    beta = std::sqrt(std::max(rdot(r2, y), 0.0));
    double oldeps = epsln;
    double delta = cs * dbar + sn * alfa;
    double gbar = sn * dbar - cs * alfa;
    epsln = sn * beta;
    dbar = -cs * beta;
    double gamma = std::max(std::hypot(gbar, beta), 1e-300);
    cs = gbar / gamma;
    sn = beta / gamma;
    double phi = cs * phibar;
    phibar = sn * phibar;
    CVec w1 = w2;
    w2 = w;
    w = (v - oldeps * w1 - delta * w2) / gamma;
    x += phi * w;
    if (phibar < tol * beta1 || beta == 0) break;
  }
  if (iterations) *iterations = it + 1;
  if (it == max_iter) throw SingularSolve("deflated MINRES did not converge");
  return proj(x);
}

}  // namespace twoscale::detail
