#pragma once

#include <Eigen/Dense>
#include <complex>
#include <numbers>

namespace twoscale {

using cplx = std::complex<double>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr cplx kTwoPiI{0.0, 2.0 * std::numbers::pi};

using RVec = Eigen::VectorXd;
using CVec = Eigen::VectorXcd;
using RMat = Eigen::MatrixXd;
using CMat = Eigen::MatrixXcd;

// Points and tensors in R^N with N <= 2; fixed capacity, no heap traffic.
using SmallVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 2, 1>;
using SmallMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 2, 2>;

inline SmallVec small_vec(std::initializer_list<double> values) {
  SmallVec v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v(i++) = x;
  return v;
}

/// Mean-weighted inner product <u, v> = mean(u * conj(v)), i.e. the L2 product on a
/// uniform grid of a unit-measure domain.
inline cplx mean_inner(const CVec& u, const CVec& v) {
  return v.dot(u) / static_cast<double>(u.size());
}

inline double mean_norm(const CVec& u) {
  return std::sqrt(u.squaredNorm() / static_cast<double>(u.size()));
}

}  // namespace twoscale
