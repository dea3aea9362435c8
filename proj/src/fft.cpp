#include "twoscale/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>

#include "twoscale/errors.hpp"

namespace twoscale {

namespace {
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

fftw_complex* as_fftw(cplx* p) { return reinterpret_cast<fftw_complex*>(p); }
fftw_complex* as_fftw(const cplx* p) { return reinterpret_cast<fftw_complex*>(const_cast<cplx*>(p)); }
}  // namespace

struct FftGrid::Plans {
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;

  Plans(int dimension, int points) {
    std::lock_guard lock(planner_mutex());
    int dims[2] = {points, points};
    int total = dimension == 1 ? points : points * points;
    fftw_complex* a = fftw_alloc_complex(total);
    fftw_complex* b = fftw_alloc_complex(total);
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    forward = fftw_plan_dft(dimension, dims, a, b, FFTW_FORWARD, flags);
    backward = fftw_plan_dft(dimension, dims, a, b, FFTW_BACKWARD, flags);
    fftw_free(a);
    fftw_free(b);
  }
  ~Plans() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(forward);
    fftw_destroy_plan(backward);
  }
  Plans(const Plans&) = delete;
  Plans& operator=(const Plans&) = delete;
};

FftGrid::FftGrid(int dimension, int points)
    : dimension_(dimension), points_(points), size_(dimension == 1 ? points : points * points) {
  if (dimension != 1 && dimension != 2) throw InvalidArgument("FFT grid dimension must be 1 or 2");
  if (points < 1) throw InvalidArgument("FFT grid needs at least one point");
  plans_ = std::make_shared<const Plans>(dimension, points);
}

void FftGrid::forward(const CVec& in, CVec& out) const {
  out.resize(size_);
  if (in.data() == out.data()) {
    CVec tmp = in;
    fftw_execute_dft(plans_->forward, as_fftw(tmp.data()), as_fftw(out.data()));
  } else {
    fftw_execute_dft(plans_->forward, as_fftw(in.data()), as_fftw(out.data()));
  }
}

void FftGrid::backward(const CVec& in, CVec& out) const {
  out.resize(size_);
  if (in.data() == out.data()) {
    CVec tmp = in;
    fftw_execute_dft(plans_->backward, as_fftw(tmp.data()), as_fftw(out.data()));
  } else {
    fftw_execute_dft(plans_->backward, as_fftw(in.data()), as_fftw(out.data()));
  }
}

CVec FftGrid::forward(const CVec& in) const {
  CVec out(size_);
  forward(in, out);
  return out;
}

CVec FftGrid::backward(const CVec& in) const {
  CVec out(size_);
  backward(in, out);
  return out;
}

std::array<int, 2> FftGrid::multi_index(int flat) const noexcept {
  if (dimension_ == 1) return {flat, 0};
  return {flat / points_, flat % points_};
}

const FftGrid& fft_grid(int dimension, int points) {
  static std::mutex m;
  static std::map<std::pair<int, int>, std::unique_ptr<FftGrid>> cache;
  std::lock_guard lock(m);
  auto& slot = cache[{dimension, points}];
  if (!slot) slot = std::make_unique<FftGrid>(dimension, points);
  return *slot;
}

TrigInterpolant::TrigInterpolant(int dimension, int points, const CVec& samples)
    : dimension_(dimension), points_(points) {
  const auto& grid = fft_grid(dimension, points);
  if (samples.size() != grid.size()) throw InvalidArgument("TrigInterpolant: sample count mismatch");
  coefficients_ = grid.forward(samples) / static_cast<double>(grid.size());
}

namespace {
// Weight and frequency pairs for one axis; the Nyquist entry contributes a cosine.
struct AxisModes {
  std::vector<cplx> phase;  // e^{2 pi i kappa y} for each index, Nyquist as cos
};

AxisModes axis_modes(int points, double y) {
  AxisModes m;
  m.phase.resize(points);
  for (int j = 0; j < points; ++j) {
    int kappa = j < points / 2 ? j : j - points;
    if (points % 2 == 0 && j == points / 2) {
      m.phase[j] = std::cos(kPi * points * y);
    } else {
      m.phase[j] = std::polar(1.0, 2.0 * kPi * kappa * y);
    }
  }
  return m;
}
}  // namespace

cplx TrigInterpolant::operator()(const SmallVec& y) const {
  if (dimension_ == 1) {
    auto m = axis_modes(points_, y(0));
    cplx s = 0;
    for (int j = 0; j < points_; ++j) s += coefficients_(j) * m.phase[j];
    return s;
  }
  auto m0 = axis_modes(points_, y(0));
  auto m1 = axis_modes(points_, y(1));
  cplx s = 0;
  for (int i = 0; i < points_; ++i) {
    cplx row = 0;
    for (int j = 0; j < points_; ++j) row += coefficients_(i * points_ + j) * m1.phase[j];
    s += row * m0.phase[i];
  }
  return s;
}

CVec TrigInterpolant::sample_line(double base, double step, int count) const {
  if (dimension_ != 1) throw InvalidArgument("sample_line is one-dimensional");
  CVec out = CVec::Zero(count);
  const int half = points_ / 2;
  const bool even = points_ % 2 == 0;
  // Accumulate mode by mode; each mode's phase advances by a fixed rotation per sample.
  for (int j = 0; j < points_; ++j) {
    int kappa = j < half ? j : j - points_;
    if (even && j == half) {
      for (int s = 0; s < count; ++s) out(s) += coefficients_(j) * std::cos(kPi * points_ * (base + s * step));
      continue;
    }
    const double w = 2.0 * kPi * kappa;
    cplx phase = std::polar(1.0, w * base);
    const cplx rot = std::polar(1.0, w * step);
    for (int s = 0; s < count; ++s) {
      // Re-seed periodically to keep the recursion from drifting.
      if (s % 64 == 0) phase = std::polar(1.0, w * (base + s * step));
      out(s) += coefficients_(j) * phase;
      phase *= rot;
    }
  }
  return out;
}

CVec TrigInterpolant::resample(int points) const {
  if (points < points_) throw InvalidArgument("resample only refines");
  const auto& fine = fft_grid(dimension_, points);
  CVec spec = CVec::Zero(fine.size());
  const int half = points_ / 2;
  const bool even = points_ % 2 == 0;
  auto place = [&](int j) -> std::pair<int, int> {
    // returns fine index for kappa and, for the split Nyquist mode, its mirror
    int kappa = j < half ? j : j - points_;
    int idx = kappa >= 0 ? kappa : kappa + points;
    if (even && j == half) return {(half) % points, (points - half) % points};
    return {idx, -1};
  };
  if (dimension_ == 1) {
    for (int j = 0; j < points_; ++j) {
      auto [a, b] = place(j);
      if (b >= 0 && a != b) {
        spec(a) += 0.5 * coefficients_(j);
        spec(b) += 0.5 * coefficients_(j);
      } else {
        spec(a) += coefficients_(j);
      }
    }
  } else {
    for (int i = 0; i < points_; ++i) {
      auto [ia, ib] = place(i);
      for (int j = 0; j < points_; ++j) {
        auto [ja, jb] = place(j);
        cplx c = coefficients_(i * points_ + j);
        std::vector<std::pair<int, double>> rows{{ia, 1.0}}, cols{{ja, 1.0}};
        if (ib >= 0 && ib != ia) rows = {{ia, 0.5}, {ib, 0.5}};
        if (jb >= 0 && jb != ja) cols = {{ja, 0.5}, {jb, 0.5}};
        for (auto [r, wr] : rows)
          for (auto [q, wq] : cols) spec(r * points + q) += c * wr * wq;
      }
    }
  }
  return fine.backward(spec);
}

}  // namespace twoscale
