#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "twoscale/linalg.hpp"

namespace twoscale::detail {

struct GmresResult {
  CVec x;
  int iterations = 0;
  double relative_residual = 0;
  bool converged = false;
};

/// Restarted right-preconditioned GMRES for A x = b.
inline GmresResult gmres(const std::function<CVec(const CVec&)>& A, const std::function<CVec(const CVec&)>& Minv,
                         const CVec& b, const CVec& x0, double tol, int restart = 40, int max_iter = 2000) {
  GmresResult out;
  out.x = x0;
  const double bnorm = b.norm();
  if (bnorm == 0) {
    out.x.setZero();
    out.converged = true;
    return out;
  }
  const int n = int(b.size());
  while (out.iterations < max_iter) {
    CVec r = b - A(out.x);
    double beta = r.norm();
    out.relative_residual = beta / bnorm;
    if (out.relative_residual <= tol) {
      out.converged = true;
      return out;
    }
    const int m = restart;
    CMat V(n, m + 1), Z(n, m);
    CMat Hm = CMat::Zero(m + 1, m);
    std::vector<cplx> cs(m), sn(m);
    CVec g = CVec::Zero(m + 1);
    g(0) = beta;
    V.col(0) = r / beta;
    int j = 0;
    for (; j < m && out.iterations < max_iter; ++j) {
      ++out.iterations;
      Z.col(j) = Minv(V.col(j));
      CVec w = A(Z.col(j));
      for (int i = 0; i <= j; ++i) {
        Hm(i, j) = V.col(i).dot(w);
        w -= Hm(i, j) * V.col(i);
      }
      for (int i = 0; i <= j; ++i) {  // second pass keeps the basis orthogonal
        cplx c = V.col(i).dot(w);
        Hm(i, j) += c;
        w -= c * V.col(i);
      }
      double hn = w.norm();
      Hm(j + 1, j) = hn;
      if (hn > 0) V.col(j + 1) = w / hn;
      for (int i = 0; i < j; ++i) {
        cplx t = std::conj(cs[i]) * Hm(i, j) + std::conj(sn[i]) * Hm(i + 1, j);
        Hm(i + 1, j) = -sn[i] * Hm(i, j) + cs[i] * Hm(i + 1, j);
        Hm(i, j) = t;
      }
      cplx a = Hm(j, j), bb = Hm(j + 1, j);
      double den = std::sqrt(std::norm(a) + std::norm(bb));
      cs[j] = den == 0 ? 1.0 : a / den;
      sn[j] = den == 0 ? 0.0 : bb / den;
      Hm(j, j) = den;
      Hm(j + 1, j) = 0;
      g(j + 1) = -sn[j] * g(j);
      g(j) = std::conj(cs[j]) * g(j);
      out.relative_residual = std::abs(g(j + 1)) / bnorm;
      if (out.relative_residual <= tol || hn == 0) {
        ++j;
        break;
      }
    }
    CVec y = Hm.topLeftCorner(j, j).triangularView<Eigen::Upper>().solve(g.head(j));
    out.x += Z.leftCols(j) * y;
  }
  out.relative_residual = (b - A(out.x)).norm() / bnorm;
  out.converged = out.relative_residual <= tol;
  return out;
}

}  // namespace twoscale::detail
