#pragma once

#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "twoscale/linalg.hpp"

namespace twoscale {

/// Locally periodic coefficients A(x, y) (symmetric, coercive) and c(x, y), with
/// optional analytic x-derivatives. Immutable once built; safe to share across threads.
class CoefficientField {
 public:
  using MatrixFn = std::function<SmallMat(const SmallVec& x, const SmallVec& y)>;
  using ScalarFn = std::function<double(const SmallVec& x, const SmallVec& y)>;
  // First derivative in x_h: (h, x, y); second derivative in x_l x_h: (l, h, x, y).
  using MatrixD1 = std::function<SmallMat(int h, const SmallVec& x, const SmallVec& y)>;
  using MatrixD2 = std::function<SmallMat(int l, int h, const SmallVec& x, const SmallVec& y)>;
  using ScalarD1 = std::function<double(int h, const SmallVec& x, const SmallVec& y)>;
  using ScalarD2 = std::function<double(int l, int h, const SmallVec& x, const SmallVec& y)>;

  struct Spec {
    std::string name;
    int dimension = 1;
    MatrixFn A;
    ScalarFn c;
    MatrixD1 A_dx;
    MatrixD2 A_dxx;
    ScalarD1 c_dx;
    ScalarD2 c_dxx;
    double coercivity_floor = 1.0;
    double fd_step = 1e-4;
  };

  explicit CoefficientField(Spec spec);

  const std::string& name() const noexcept { return spec_.name; }
  int dimension() const noexcept { return spec_.dimension; }
  double coercivity_floor() const noexcept { return spec_.coercivity_floor; }
  double fd_step() const noexcept { return spec_.fd_step; }
  bool has_analytic_A_derivatives() const noexcept { return bool(spec_.A_dx) && bool(spec_.A_dxx); }
  bool has_analytic_c_derivatives() const noexcept { return bool(spec_.c_dx) && bool(spec_.c_dxx); }

  SmallMat A(const SmallVec& x, const SmallVec& y) const { return spec_.A(x, y); }
  double c(const SmallVec& x, const SmallVec& y) const { return spec_.c(x, y); }

  /// A_{1,h} and A_{2,lh}, analytic when supplied, otherwise Richardson-checked FD.
  SmallMat A_dx(int h, const SmallVec& x, const SmallVec& y) const;
  SmallMat A_dxx(int l, int h, const SmallVec& x, const SmallVec& y) const;
  double c_dx(int h, const SmallVec& x, const SmallVec& y) const;
  double c_dxx(int l, int h, const SmallVec& x, const SmallVec& y) const;

  const Spec& spec() const noexcept { return spec_; }

  /// Same field with analytic derivatives stripped (forces the FD path).
  CoefficientField without_analytic_derivatives() const;
  /// A and c multiplied by s.
  CoefficientField scaled(double s) const;
  /// c shifted by a constant.
  CoefficientField shifted(double dc) const;

 private:
  Spec spec_;
};

enum class Coefficient { A, c };

using DerivativeValue = std::variant<double, SmallMat>;

/// x-derivative of A or c of order 1 (index h) or 2 (indices l, h), 0-based indices.
DerivativeValue derivative(const CoefficientField& field, Coefficient which, int order, int l, int h,
                           const SmallVec& x, const SmallVec& y);

/// Centered finite differences of order 1 or 2 with Richardson extrapolation over steps
/// (step, step/2). Throws DerivativeUnavailable when the two levels disagree.
SmallMat fd_derivative_A(const CoefficientField& field, int order, int l, int h, const SmallVec& x,
                         const SmallVec& y, double step);
double fd_derivative_c(const CoefficientField& field, int order, int l, int h, const SmallVec& x,
                       const SmallVec& y, double step);

struct ValidationSampling {
  int points_per_dim = 16;       // y samples per axis (>= 8)
  SmallVec x_center;             // designated point x°; defaults to origin
  double x_radius = 0.5;         // x samples on a 5^N grid in x° + [-r, r]^N
  double fd_step = 1e-4;
};

struct ValidationReport {
  double symmetry_residual = 0;    // max |A - A^T|
  double coercivity_min = 0;       // min eigenvalue of A over samples
  double periodicity_residual = 0; // max relative |f(y + e_k) - f(y)|
  double smoothness_probe = 0;     // max |second centered x-difference| / h^2 at x°
  std::optional<double> derivative_agreement;  // max |analytic - FD| / (1 + |analytic|)
  bool periodic = true;
  int samples = 0;
};

/// Checks symmetry, coercivity, y-periodicity and x-smoothness on a sample grid.
/// Throws CoercivityViolation or AsymmetryError.
ValidationReport validate(const CoefficientField& field, const ValidationSampling& sampling = {});

// Preset catalog ------------------------------------------------------------

std::vector<std::string> preset_names();
bool preset_supports(const std::string& name, int dimension);
/// Named preset in dimension 1 or 2. Throws InvalidArgument for unknown names.
CoefficientField make_preset(const std::string& name, int dimension);

/// Field tabulated on a tensor grid: x nodes per axis (any spacing, interpolated by natural
/// cubic splines) and y nodes j/ny (trigonometric interpolation). CSV columns are
/// x_1..x_N, y_1..y_N, then A (N=1) or A11, A12, A22 (N=2), then c.
CoefficientField load_tabulated_field(const std::string& path, int dimension, double coercivity_floor);
CoefficientField tabulated_field_from_text(const std::string& csv_text, int dimension,
                                           double coercivity_floor, std::string name = "table");

}  // namespace twoscale
