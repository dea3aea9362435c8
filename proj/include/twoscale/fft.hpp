#pragma once

#include <array>
#include <memory>
#include <vector>
#include <span>

#include "twoscale/linalg.hpp"

namespace twoscale {

/// Complex FFT over a periodic tensor grid with `points` samples along each of
/// `dimension` axes (row-major, last axis contiguous). Transforms are unnormalized in
/// both directions. Plans are shared and cached; execution is thread-safe.
class FftGrid {
 public:
  FftGrid(int dimension, int points);

  int dimension() const noexcept { return dimension_; }
  int points() const noexcept { return points_; }
  int size() const noexcept { return size_; }

  void forward(const CVec& in, CVec& out) const;
  void backward(const CVec& in, CVec& out) const;
  CVec forward(const CVec& in) const;
  CVec backward(const CVec& in) const;

  /// Signed integer wavenumber of grid index j along one axis, in [-points/2, points/2).
  int wavenumber(int j) const noexcept { return j < points_ / 2 ? j : j - points_; }

  /// Multi-index of flat position `flat` (axis 0 first).
  std::array<int, 2> multi_index(int flat) const noexcept;

 private:
  struct Plans;
  int dimension_;
  int points_;
  int size_;
  std::shared_ptr<const Plans> plans_;
};

/// Cached grid shared by all callers asking for the same shape.
const FftGrid& fft_grid(int dimension, int points);

/// Trigonometric interpolant of samples on the uniform periodic grid j/points of the
/// unit torus. The Nyquist mode is split symmetrically so real data stays real.
class TrigInterpolant {
 public:
  TrigInterpolant(int dimension, int points, const CVec& samples);

  cplx operator()(const SmallVec& y) const;

  /// Values at y = base + j * step for j = 0..count-1 along a 1D line (dimension 1 only);
  /// uses phase recursion, much faster than repeated point evaluation.
  CVec sample_line(double base, double step, int count) const;

  /// Resample onto a finer (or equal) grid with `points` per axis by zero padding.
  CVec resample(int points) const;

 private:
  int dimension_;
  int points_;
  CVec coefficients_;  // normalized DFT coefficients
};

}  // namespace twoscale
