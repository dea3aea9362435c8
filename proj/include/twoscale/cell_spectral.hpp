#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "twoscale/coefficients.hpp"
#include "twoscale/linalg.hpp"

namespace twoscale {

enum class Scheme { pseudo_spectral, finite_difference_2 };
enum class EigenMethod { automatic, dense, iterative };

const char* scheme_name(Scheme s);
Scheme parse_scheme(const std::string& s);

struct CellDiscretization {
  int dimension = 1;
  int points = 64;  // M per axis
  Scheme scheme = Scheme::pseudo_spectral;
  EigenMethod method = EigenMethod::automatic;

  int size() const noexcept { return dimension == 1 ? points : points * points; }
  bool uses_dense() const noexcept {
    return method == EigenMethod::dense || (method == EigenMethod::automatic && size() <= 4096);
  }
  /// Throws DiscretizationTooCoarse for M < 16, InvalidArgument for other violations.
  void check() const;
};

/// Reduces every component to the canonical representative in [-1/2, 1/2).
SmallVec wrap_theta(const SmallVec& theta);

struct BlochPoint {
  SmallVec x;
  SmallVec theta;

  BlochPoint() = default;
  BlochPoint(SmallVec x_, SmallVec theta_) : x(std::move(x_)), theta(wrap_theta(theta_)) {}
  int dimension() const { return int(x.size()); }
};

struct BlochEigenpair {
  int n = 1;  // 1-based band index
  double lambda = 0;
  CVec psi;   // grid values, mean |psi|^2 = 1
  int gauge_anchor = 0;
  double residual = 0;  // ||H psi - lambda psi|| / (|lambda| + 1)
};

struct BandDerivatives {
  int n = 1;
  double lambda = 0;
  RVec grad_theta;
  RVec grad_x;
  RMat hess_tt;
  RMat hess_xt;  // (h, k) = d^2 lambda / dx_h dtheta_k
  RMat hess_xx;
  std::vector<CVec> corr_theta;
  std::vector<CVec> corr_x;

  double gap = 0;
  double asymmetry_residual = 0;   // before symmetrization
  double imaginary_residual = 0;   // max |Im| over gradient and Hessian quadratures
  double quadrature_delta = 0;     // max M vs 2M difference (relative), NaN if not checked
  double corrector_residual = 0;   // max relative residual of the corrector equations

  /// Joint 2N x 2N Hessian [[xx, xt], [xt^T, tt]].
  RMat joint_hessian() const;
};

/// Which x-derivative of the coefficients enters a form: 0 = A, c; 1 = A_{1,h}, c_{1,h};
/// 2 = A_{2,lh}, c_{2,lh}.
struct FormVariant {
  int order = 0;
  int l = 0;
  int h = 0;
};

/// Discrete cell operator H(x, theta) = -(div + 2i pi theta) A (grad + 2i pi theta) + c
/// written as a sum of terms L^H diag(w) R + diag(c), where L, R are shifted derivative
/// operators. The same term list with derivative coefficients gives H_x and H_xx, and
/// differentiating L and R in theta gives H_theta and H_theta theta exactly at the
/// discrete level.
class CellOperator {
 public:
  CellOperator(const CoefficientField& field, const BlochPoint& point, const CellDiscretization& disc);
  ~CellOperator();
  CellOperator(CellOperator&&) noexcept;
  CellOperator& operator=(CellOperator&&) noexcept;

  const CoefficientField& field() const noexcept { return field_; }
  const BlochPoint& point() const noexcept { return point_; }
  const CellDiscretization& disc() const noexcept { return disc_; }
  int size() const noexcept { return disc_.size(); }

  CVec apply(const CVec& u) const { return apply_form({}, u, -1, -1); }
  /// theta-derivatives of the variant's form: k, l = -1 for none.
  CVec apply_form(const FormVariant& v, const CVec& u, int k = -1, int l = -1) const;
  CVec apply_x(int h, const CVec& u) const { return apply_form({1, h, h}, u); }
  CVec apply_xx(int l, int h, const CVec& u) const { return apply_form({2, l, h}, u); }
  CVec apply_theta(int k, const CVec& u) const { return apply_form({}, u, k); }
  CVec apply_theta2(int k, int l, const CVec& u) const { return apply_form({}, u, k, l); }
  CVec apply_x_theta(int h, int k, const CVec& u) const { return apply_form({1, h, h}, u, k); }

  /// sum_t <w_t R_t u, (d/dtheta_k L_t) v> for the variant's weights.
  cplx left_derivative_pairing(const FormVariant& v, int k, const CVec& u, const CVec& w) const;

  /// Dense matrix in the grid basis (mean inner product is proportional to the dot).
  CMat dense_grid() const;
  /// ||H - H^H|| of the dense grid matrix relative to max |entry|.
  double hermitian_residual() const;

  /// Grid samples of A_ab and c of the given variant at the nodes.
  const RVec& coefficient_samples(const FormVariant& v, int a, int b) const;
  const RVec& potential_samples(const FormVariant& v) const;

  double potential_min() const;
  /// Fourier-diagonal SPD approximation of H - shift (mean coefficients), used as a
  /// preconditioner; returns P^{-1} u.
  CVec precondition(const CVec& u, double shift) const;

  struct Spectrum;
  /// Lowest `count` eigenpairs (cached; exact dense decomposition or Lanczos).
  std::shared_ptr<const Spectrum> spectrum(int count) const;

  struct Impl;

 private:
  CoefficientField field_;
  BlochPoint point_;
  CellDiscretization disc_;
  std::unique_ptr<Impl> impl_;
};

struct CellOperator::Spectrum {
  RVec values;             // ascending
  CMat vectors;            // grid functions, mean-normalized, gauge-fixed columns
  std::vector<int> anchors;
  bool complete = false;   // true for the full dense decomposition
};

CellOperator assemble_cell_operator(const CoefficientField& field, const BlochPoint& point,
                                    const CellDiscretization& disc);

/// Lowest n_max bands, ascending with multiplicity, normalized and gauge-fixed.
std::vector<BlochEigenpair> solve_bands(const CellOperator& op, int n_max);

double default_gap_tol(double lambda);
/// Distance from band n to its neighbours; throws DegenerateBand below gap_tol.
double spectral_gap(const std::vector<BlochEigenpair>& pairs, int n, std::optional<double> gap_tol = {});
/// Same without the certificate.
double gap_value(const std::vector<BlochEigenpair>& pairs, int n);

/// Rotates psi so its largest-modulus component is real and positive; returns the anchor.
int fix_gauge(CVec& psi);

/// Solves (H - lambda) u = r on span{psi}^perp and returns u with <u, psi> = 0.
CVec solve_deflated(const CellOperator& op, const BlochEigenpair& pair, const CVec& rhs,
                    double* residual = nullptr);

CVec solve_theta_corrector(const CellOperator& op, const BlochEigenpair& pair, int k);
CVec solve_x_corrector(const CellOperator& op, const BlochEigenpair& pair, int l);

struct BandGradient {
  RVec grad_x;
  RVec grad_theta;
  double imaginary_residual = 0;
};
BandGradient grad_lambda(const CellOperator& op, const BlochEigenpair& pair);

struct HessianOptions {
  bool check_quadrature = true;
  double quadrature_tol = 1e-6;
};

/// Second derivatives from the corrector identities; `derivs` must hold gradient and
/// correctors. Fills hess_* and diagnostics.
void hessian_lambda(const CellOperator& op, const BlochEigenpair& pair, BandDerivatives& derivs,
                    const HessianOptions& options = {});

/// Gap certificate, gradient, both corrector families and Hessian for band n.
BandDerivatives band_derivatives(const CellOperator& op, int n, const HessianOptions& options = {});
/// Same for a given (possibly regauged) eigenpair.
BandDerivatives band_derivatives(const CellOperator& op, const BlochEigenpair& pair,
                                 const HessianOptions& options = {});

/// Convenience: lambda_n at (x, theta).
double band_value(const CoefficientField& field, const BlochPoint& point, const CellDiscretization& disc, int n);

}  // namespace twoscale
