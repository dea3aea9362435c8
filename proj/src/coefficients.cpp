#include "twoscale/coefficients.hpp"

#include <algorithm>
#include <cmath>

#include "twoscale/errors.hpp"

namespace twoscale {

namespace {

double base_step(const SmallVec& x, int l, int h, double fd_step) {
  return fd_step * (1.0 + std::max(std::abs(x(l)), std::abs(x(h))));
}

SmallVec shifted_point(const SmallVec& x, int axis, double delta) {
  SmallVec out = x;
  out(axis) += delta;
  return out;
}

// Centered difference of f at one step size; F must return an Eigen-compatible value.
template <class F>
auto centered(const F& f, int order, int l, int h, const SmallVec& x, double s) {
  if (order == 1) {
    return ((f(shifted_point(x, h, s)) - f(shifted_point(x, h, -s))) / (2.0 * s)).eval();
  }
  if (l == h) {
    return ((f(shifted_point(x, h, s)) - 2.0 * f(x) + f(shifted_point(x, h, -s))) / (s * s)).eval();
  }
  auto pp = f(shifted_point(shifted_point(x, l, s), h, s));
  auto pm = f(shifted_point(shifted_point(x, l, s), h, -s));
  auto mp = f(shifted_point(shifted_point(x, l, -s), h, s));
  auto mm = f(shifted_point(shifted_point(x, l, -s), h, -s));
  return ((pp - pm - mp + mm) / (4.0 * s * s)).eval();
}

template <class F>
SmallMat richardson(const F& f, int order, int l, int h, const SmallVec& x, double step) {
  // Second derivatives use a larger step to keep roundoff below the truncation error.
  const double s = order == 1 ? step : 10.0 * step;
  SmallMat coarse = centered(f, order, l, h, x, s);
  SmallMat fine = centered(f, order, l, h, x, 0.5 * s);
  SmallMat extrapolated = (4.0 * fine - coarse) / 3.0;
  const double scale = 1.0 + extrapolated.cwiseAbs().maxCoeff();
  const double mismatch = (coarse - fine).cwiseAbs().maxCoeff();
  if (!std::isfinite(mismatch) || mismatch > 1e-4 * scale) {
    throw DerivativeUnavailable("finite-difference levels disagree (" + std::to_string(mismatch) +
                                "); coefficient is not smooth in x here");
  }
  return extrapolated;
}

void check_indices(const CoefficientField& field, int order, int l, int h) {
  const int n = field.dimension();
  if (order != 1 && order != 2) throw InvalidArgument("derivative order must be 1 or 2");
  if (h < 0 || h >= n || (order == 2 && (l < 0 || l >= n)))
    throw InvalidArgument("derivative index out of range");
}

}  // namespace

CoefficientField::CoefficientField(Spec spec) : spec_(std::move(spec)) {
  if (spec_.dimension != 1 && spec_.dimension != 2) throw InvalidArgument("dimension must be 1 or 2");
  if (!spec_.A || !spec_.c) throw InvalidArgument("coefficient field needs both A and c");
  if (!(spec_.coercivity_floor > 0)) throw InvalidArgument("coercivity floor must be positive");
  if (!(spec_.fd_step > 0)) throw InvalidArgument("fd step must be positive");
}

SmallMat CoefficientField::A_dx(int h, const SmallVec& x, const SmallVec& y) const {
  check_indices(*this, 1, h, h);
  if (spec_.A_dx) return spec_.A_dx(h, x, y);
  return fd_derivative_A(*this, 1, h, h, x, y, spec_.fd_step);
}

SmallMat CoefficientField::A_dxx(int l, int h, const SmallVec& x, const SmallVec& y) const {
  check_indices(*this, 2, l, h);
  if (spec_.A_dxx) return spec_.A_dxx(l, h, x, y);
  return fd_derivative_A(*this, 2, l, h, x, y, spec_.fd_step);
}

double CoefficientField::c_dx(int h, const SmallVec& x, const SmallVec& y) const {
  check_indices(*this, 1, h, h);
  if (spec_.c_dx) return spec_.c_dx(h, x, y);
  return fd_derivative_c(*this, 1, h, h, x, y, spec_.fd_step);
}

double CoefficientField::c_dxx(int l, int h, const SmallVec& x, const SmallVec& y) const {
  check_indices(*this, 2, l, h);
  if (spec_.c_dxx) return spec_.c_dxx(l, h, x, y);
  return fd_derivative_c(*this, 2, l, h, x, y, spec_.fd_step);
}

CoefficientField CoefficientField::without_analytic_derivatives() const {
  Spec s = spec_;
  s.A_dx = nullptr;
  s.A_dxx = nullptr;
  s.c_dx = nullptr;
  s.c_dxx = nullptr;
  s.name += "/fd";
  return CoefficientField(std::move(s));
}

CoefficientField CoefficientField::scaled(double factor) const {
  Spec s = spec_;
  auto base = spec_;
  s.A = [base, factor](const SmallVec& x, const SmallVec& y) -> SmallMat { return factor * base.A(x, y); };
  s.c = [base, factor](const SmallVec& x, const SmallVec& y) { return factor * base.c(x, y); };
  if (base.A_dx)
    s.A_dx = [base, factor](int h, const SmallVec& x, const SmallVec& y) -> SmallMat {
      return factor * base.A_dx(h, x, y);
    };
  if (base.A_dxx)
    s.A_dxx = [base, factor](int l, int h, const SmallVec& x, const SmallVec& y) -> SmallMat {
      return factor * base.A_dxx(l, h, x, y);
    };
  if (base.c_dx)
    s.c_dx = [base, factor](int h, const SmallVec& x, const SmallVec& y) { return factor * base.c_dx(h, x, y); };
  if (base.c_dxx)
    s.c_dxx = [base, factor](int l, int h, const SmallVec& x, const SmallVec& y) {
      return factor * base.c_dxx(l, h, x, y);
    };
  s.coercivity_floor = spec_.coercivity_floor * std::abs(factor);
  s.name += "*" + std::to_string(factor);
  return CoefficientField(std::move(s));
}

CoefficientField CoefficientField::shifted(double dc) const {
  Spec s = spec_;
  auto c = spec_.c;
  s.c = [c, dc](const SmallVec& x, const SmallVec& y) { return c(x, y) + dc; };
  s.name += "+" + std::to_string(dc);
  return CoefficientField(std::move(s));
}

SmallMat fd_derivative_A(const CoefficientField& field, int order, int l, int h, const SmallVec& x,
                         const SmallVec& y, double step) {
  check_indices(field, order, l, h);
  auto f = [&](const SmallVec& xp) -> SmallMat { return field.A(xp, y); };
  return richardson(f, order, l, h, x, base_step(x, order == 2 ? l : h, h, step));
}

double fd_derivative_c(const CoefficientField& field, int order, int l, int h, const SmallVec& x,
                       const SmallVec& y, double step) {
  check_indices(field, order, l, h);
  auto f = [&](const SmallVec& xp) -> SmallMat {
    SmallMat m(1, 1);
    m(0, 0) = field.c(xp, y);
    return m;
  };
  return richardson(f, order, l, h, x, base_step(x, order == 2 ? l : h, h, step))(0, 0);
}

DerivativeValue derivative(const CoefficientField& field, Coefficient which, int order, int l, int h,
                           const SmallVec& x, const SmallVec& y) {
  check_indices(field, order, l, h);
  if (which == Coefficient::A) {
    return order == 1 ? field.A_dx(h, x, y) : field.A_dxx(l, h, x, y);
  }
  return order == 1 ? field.c_dx(h, x, y) : field.c_dxx(l, h, x, y);
}

namespace {

std::vector<SmallVec> tensor_points(int dimension, const std::vector<double>& axis) {
  std::vector<SmallVec> pts;
  if (dimension == 1) {
    for (double a : axis) pts.push_back(small_vec({a}));
  } else {
    for (double a : axis)
      for (double b : axis) pts.push_back(small_vec({a, b}));
  }
  return pts;
}

double rel_diff(const SmallMat& a, const SmallMat& b) {
  return (a - b).cwiseAbs().maxCoeff() / (1.0 + a.cwiseAbs().maxCoeff());
}

}  // namespace

ValidationReport validate(const CoefficientField& field, const ValidationSampling& sampling) {
  const int n = field.dimension();
  if (sampling.points_per_dim < 8) throw InvalidArgument("validation needs >= 8 samples per dimension");
  SmallVec x0 = sampling.x_center.size() == n ? sampling.x_center : SmallVec(SmallVec::Zero(n));

  std::vector<double> yaxis;
  for (int j = 0; j < sampling.points_per_dim; ++j) yaxis.push_back(double(j) / sampling.points_per_dim);
  std::vector<double> xoffsets;
  for (int j = 0; j < 5; ++j) xoffsets.push_back(sampling.x_radius * (-1.0 + 0.5 * j));
  auto ys = tensor_points(n, yaxis);
  auto dxs = tensor_points(n, xoffsets);

  ValidationReport report;
  report.coercivity_min = std::numeric_limits<double>::infinity();
  double deriv = 0;
  const bool analytic = field.has_analytic_A_derivatives() || field.has_analytic_c_derivatives();

  for (const auto& dx : dxs) {
    SmallVec x = x0 + dx;
    for (const auto& y : ys) {
      ++report.samples;
      SmallMat a = field.A(x, y);
      report.symmetry_residual = std::max(report.symmetry_residual, (a - a.transpose()).cwiseAbs().maxCoeff());
      Eigen::SelfAdjointEigenSolver<SmallMat> es(0.5 * (a + a.transpose()), Eigen::EigenvaluesOnly);
      report.coercivity_min = std::min(report.coercivity_min, es.eigenvalues().minCoeff());
      const double cv = field.c(x, y);
      for (int k = 0; k < n; ++k) {
        SmallVec yk = y;
        yk(k) += 1.0;
        report.periodicity_residual = std::max(report.periodicity_residual, rel_diff(a, field.A(x, yk)));
        report.periodicity_residual =
            std::max(report.periodicity_residual, std::abs(field.c(x, yk) - cv) / (1.0 + std::abs(cv)));
      }
      if (analytic) {
        for (int h = 0; h < n; ++h) {
          if (field.spec().A_dx)
            deriv = std::max(deriv, rel_diff(field.spec().A_dx(h, x, y),
                                             fd_derivative_A(field, 1, h, h, x, y, sampling.fd_step)));
          if (field.spec().c_dx) {
            double an = field.spec().c_dx(h, x, y);
            deriv = std::max(deriv, std::abs(an - fd_derivative_c(field, 1, h, h, x, y, sampling.fd_step)) /
                                        (1.0 + std::abs(an)));
          }
          for (int l = 0; l < n; ++l) {
            if (field.spec().A_dxx)
              deriv = std::max(deriv, rel_diff(field.spec().A_dxx(l, h, x, y),
                                               fd_derivative_A(field, 2, l, h, x, y, sampling.fd_step)));
            if (field.spec().c_dxx) {
              double an = field.spec().c_dxx(l, h, x, y);
              deriv = std::max(deriv, std::abs(an - fd_derivative_c(field, 2, l, h, x, y, sampling.fd_step)) /
                                          (1.0 + std::abs(an)));
            }
          }
        }
      }
    }
  }

  // Smoothness probe: raw second differences at x°.
  const double s = 10.0 * sampling.fd_step * (1.0 + x0.cwiseAbs().maxCoeff());
  for (const auto& y : ys) {
    for (int h = 0; h < n; ++h) {
      SmallVec xp = x0, xm = x0;
      xp(h) += s;
      xm(h) -= s;
      SmallMat d2a = (field.A(xp, y) - 2.0 * field.A(x0, y) + field.A(xm, y)) / (s * s);
      double d2c = (field.c(xp, y) - 2.0 * field.c(x0, y) + field.c(xm, y)) / (s * s);
      report.smoothness_probe = std::max({report.smoothness_probe, d2a.cwiseAbs().maxCoeff(), std::abs(d2c)});
    }
  }

  if (analytic) report.derivative_agreement = deriv;
  report.periodic = report.periodicity_residual <= 1e-12;

  if (report.symmetry_residual > 1e-10)
    throw AsymmetryError("symmetry residual " + std::to_string(report.symmetry_residual) + " exceeds 1e-10");
  if (report.coercivity_min < field.coercivity_floor())
    throw CoercivityViolation("min eigenvalue " + std::to_string(report.coercivity_min) + " below floor " +
                              std::to_string(field.coercivity_floor()));
  return report;
}

}  // namespace twoscale
