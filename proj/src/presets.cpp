#include <cmath>

#include "twoscale/coefficients.hpp"
#include "twoscale/errors.hpp"

namespace twoscale {

namespace {

constexpr double k2Pi = 2.0 * kPi;

SmallMat scalar_matrix(int n, double s) { return SmallMat::Identity(n, n) * s; }
SmallMat zero_matrix(int n) { return SmallMat::Zero(n, n); }

double cos_sum(const SmallVec& y) {
  double s = 0;
  for (Eigen::Index k = 0; k < y.size(); ++k) s += std::cos(k2Pi * y(k));
  return s;
}

double cos_product(const SmallVec& y) {
  double p = 1;
  for (Eigen::Index k = 0; k < y.size(); ++k) p *= std::cos(k2Pi * y(k));
  return p;
}

// 2 + prod_k cos(2 pi y_k): oscillating metric factor, between 1 and 3.
double metric_profile(const SmallVec& y) { return 2.0 + cos_product(y); }

double delta(int l, int h) { return l == h ? 1.0 : 0.0; }

CoefficientField::Spec base_spec(std::string name, int n) {
  CoefficientField::Spec s;
  s.name = std::move(name);
  s.dimension = n;
  s.A = [n](const SmallVec&, const SmallVec&) { return scalar_matrix(n, 1.0); };
  s.c = [](const SmallVec&, const SmallVec&) { return 0.0; };
  s.A_dx = [n](int, const SmallVec&, const SmallVec&) { return zero_matrix(n); };
  s.A_dxx = [n](int, int, const SmallVec&, const SmallVec&) { return zero_matrix(n); };
  s.c_dx = [](int, const SmallVec&, const SmallVec&) { return 0.0; };
  s.c_dxx = [](int, int, const SmallVec&, const SmallVec&) { return 0.0; };
  return s;
}

// A = (1 + |x|^2 / 2) (2 + prod cos 2 pi y_k) I.
void modulated_metric(CoefficientField::Spec& s, int n) {
  s.A = [n](const SmallVec& x, const SmallVec& y) {
    return scalar_matrix(n, (1.0 + 0.5 * x.squaredNorm()) * metric_profile(y));
  };
  s.A_dx = [n](int h, const SmallVec& x, const SmallVec& y) { return scalar_matrix(n, x(h) * metric_profile(y)); };
  s.A_dxx = [n](int l, int h, const SmallVec&, const SmallVec& y) {
    return scalar_matrix(n, delta(l, h) * metric_profile(y));
  };
  s.coercivity_floor = 1.0;
}

CoefficientField anisotropic() {
  auto s = base_spec("anisotropic", 2);
  auto a12_profile = [](const SmallVec& y) { return 0.4 * std::cos(k2Pi * (y(0) - y(1))); };
  s.A = [a12_profile](const SmallVec& x, const SmallVec& y) {
    SmallMat a(2, 2);
    a(0, 0) = 2.0 + std::cos(k2Pi * y(0)) + 0.2 * x(0) * x(0);
    a(1, 1) = 2.0 + std::cos(k2Pi * y(1)) + 0.1 * x(1) * x(1);
    a(0, 1) = a(1, 0) = a12_profile(y) * (1.0 + 0.25 * x(0) * x(1));
    return a;
  };
  s.A_dx = [a12_profile](int h, const SmallVec& x, const SmallVec& y) {
    SmallMat a = SmallMat::Zero(2, 2);
    if (h == 0) {
      a(0, 0) = 0.4 * x(0);
      a(0, 1) = a(1, 0) = a12_profile(y) * 0.25 * x(1);
    } else {
      a(1, 1) = 0.2 * x(1);
      a(0, 1) = a(1, 0) = a12_profile(y) * 0.25 * x(0);
    }
    return a;
  };
  s.A_dxx = [a12_profile](int l, int h, const SmallVec&, const SmallVec& y) {
    SmallMat a = SmallMat::Zero(2, 2);
    if (l == h) {
      if (h == 0) a(0, 0) = 0.4;
      else a(1, 1) = 0.2;
    } else {
      a(0, 1) = a(1, 0) = a12_profile(y) * 0.25;
    }
    return a;
  };
  s.c = [](const SmallVec& x, const SmallVec& y) {
    return x.squaredNorm() + 0.5 * std::cos(k2Pi * y(0)) + 0.5 * std::cos(k2Pi * y(1)) +
           0.3 * x(0) * std::sin(k2Pi * y(1));
  };
  s.c_dx = [](int h, const SmallVec& x, const SmallVec& y) {
    return 2.0 * x(h) + (h == 0 ? 0.3 * std::sin(k2Pi * y(1)) : 0.0);
  };
  s.c_dxx = [](int l, int h, const SmallVec&, const SmallVec&) { return 2.0 * delta(l, h); };
  s.coercivity_floor = 0.5;
  return CoefficientField(std::move(s));
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"free", "mathieu", "scalar_positive", "separable", "coupled", "tilted", "inverted", "anisotropic"};
}

bool preset_supports(const std::string& name, int dimension) {
  if (name == "anisotropic") return dimension == 2;
  for (const auto& p : preset_names())
    if (p == name) return dimension == 1 || dimension == 2;
  return false;
}

CoefficientField make_preset(const std::string& name, int n) {
  if (!preset_supports(name, n))
    throw InvalidArgument("unknown preset '" + name + "' for dimension " + std::to_string(n));

  if (name == "anisotropic") return anisotropic();

  auto s = base_spec(name, n);
  if (name == "free") {
    // A = I, c = 0
  } else if (name == "mathieu") {
    s.c = [](const SmallVec&, const SmallVec& y) { return 2.0 + cos_sum(y); };
  } else if (name == "scalar_positive") {
    s.A = [n](const SmallVec&, const SmallVec& y) { return scalar_matrix(n, metric_profile(y)); };
  } else if (name == "separable") {
    s.c = [](const SmallVec& x, const SmallVec& y) { return x.squaredNorm() + cos_sum(y); };
    s.c_dx = [](int h, const SmallVec& x, const SmallVec&) { return 2.0 * x(h); };
    s.c_dxx = [](int l, int h, const SmallVec&, const SmallVec&) { return 2.0 * delta(l, h); };
  } else if (name == "coupled") {
    modulated_metric(s, n);
    s.c = [](const SmallVec& x, const SmallVec& y) { return x.squaredNorm() + cos_sum(y); };
    s.c_dx = [](int h, const SmallVec& x, const SmallVec&) { return 2.0 * x(h); };
    s.c_dxx = [](int l, int h, const SmallVec&, const SmallVec&) { return 2.0 * delta(l, h); };
  } else if (name == "tilted") {
    // The x_1-linear modulation of the cosine moves the critical point off x = 0.
    modulated_metric(s, n);
    s.c = [](const SmallVec& x, const SmallVec& y) { return x.squaredNorm() + (1.0 + 0.5 * x(0)) * cos_sum(y); };
    s.c_dx = [](int h, const SmallVec& x, const SmallVec& y) {
      return 2.0 * x(h) + (h == 0 ? 0.5 * cos_sum(y) : 0.0);
    };
    s.c_dxx = [](int l, int h, const SmallVec&, const SmallVec&) { return 2.0 * delta(l, h); };
  } else if (name == "inverted") {
    s.A = [n](const SmallVec&, const SmallVec& y) { return scalar_matrix(n, metric_profile(y)); };
    s.c = [](const SmallVec& x, const SmallVec& y) { return -x.squaredNorm() + cos_sum(y); };
    s.c_dx = [](int h, const SmallVec& x, const SmallVec&) { return -2.0 * x(h); };
    s.c_dxx = [](int l, int h, const SmallVec&, const SmallVec&) { return -2.0 * delta(l, h); };
  }
  return CoefficientField(std::move(s));
}

}  // namespace twoscale
