#pragma once

#include "twoscale/cell_spectral.hpp"

namespace twoscale::detail {

/// Lowest `count` eigenpairs by shift-invert Lanczos with full reorthogonalization.
std::shared_ptr<CellOperator::Spectrum> lanczos_spectrum(const CellOperator& op, int count);

/// Preconditioned MINRES for (H - lambda) u = rhs on span{psi}^perp.
CVec minres_deflated(const CellOperator& op, double lambda, const CVec& psi, const CVec& rhs, double tol,
                     int max_iter, int* iterations);

/// Preconditioned CG for (H - shift) u = rhs, H - shift positive definite.
CVec cg_shifted(const CellOperator& op, double shift, const CVec& rhs, double tol, int max_iter,
                int* iterations);

}  // namespace twoscale::detail
