#include <cmath>
#include <random>

#include "doctest.h"
#include "twoscale/cell_spectral.hpp"
#include "twoscale/errors.hpp"

using namespace twoscale;

namespace {

CellDiscretization disc1(int M, Scheme s = Scheme::pseudo_spectral) {
  CellDiscretization d;
  d.dimension = 1;
  d.points = M;
  d.scheme = s;
  return d;
}

BlochPoint pt1(double x, double theta) { return BlochPoint(small_vec({x}), small_vec({theta})); }

double lam(const CoefficientField& f, double x, double theta, int n, const CellDiscretization& d) {
  return band_value(f, pt1(x, theta), d, n);
}

// Eigenvector of band n with its phase aligned to `ref`.
CVec aligned_psi(const CoefficientField& f, double x, double theta, int n, const CellDiscretization& d,
                 const CVec& ref) {
  CellOperator op(f, pt1(x, theta), d);
  CVec psi = solve_bands(op, n)[n - 1].psi;
  cplx ov = mean_inner(ref, psi);
  return psi * (ov / std::abs(ov));
}

// Independent oracle: dense Fourier-basis matrix of -d/dy (A d/dy) + c for y-only A, c,
// assembled from analytic Fourier coefficients of cos(2 pi y).
double mathieu_oracle(double theta, int K, int n) {
  const int size = 2 * K + 1;
  RMat H = RMat::Zero(size, size);
  for (int i = 0; i < size; ++i) {
    double k = i - K + theta;
    H(i, i) = 4 * kPi * kPi * k * k + 2.0;
    if (i + 1 < size) H(i, i + 1) = H(i + 1, i) = 0.5;
  }
  Eigen::SelfAdjointEigenSolver<RMat> es(H);
  return es.eigenvalues()(n - 1);
}

}  // namespace

TEST_CASE("discretization validation") {
  CHECK_THROWS_AS(disc1(8).check(), DiscretizationTooCoarse);
  CHECK_THROWS_AS(disc1(48).check(), InvalidArgument);
  CHECK_THROWS_AS(disc1(1024).check(), InvalidArgument);
  CHECK_NOTHROW(disc1(16).check());
  auto f = make_preset("free", 1);
  CHECK_THROWS_AS(CellOperator(f, pt1(0, 0), disc1(8)), DiscretizationTooCoarse);
}

TEST_CASE("theta is wrapped into the canonical cell") {
  auto t = wrap_theta(small_vec({0.75, -0.5}));
  CHECK(t(0) == doctest::Approx(-0.25));
  CHECK(t(1) == doctest::Approx(-0.5));
  CHECK(wrap_theta(small_vec({0.5}))(0) == doctest::Approx(-0.5));
  CHECK(BlochPoint(small_vec({0.0}), small_vec({1.2})).theta(0) == doctest::Approx(0.2));
}

TEST_CASE("free operator: constants and plane waves") {
  auto f = make_preset("free", 1);
  for (Scheme s : {Scheme::pseudo_spectral, Scheme::finite_difference_2}) {
    CellOperator op(f, pt1(0, 0), disc1(32, s));
    CHECK(mean_norm(op.apply(CVec::Ones(32))) < 1e-12);
    CHECK(op.hermitian_residual() < 1e-12);
  }
  CellOperator op(f, pt1(0.0, 0.3), disc1(32));
  for (int k : {-3, 0, 2, 7}) {
    CVec e(32);
    for (int j = 0; j < 32; ++j) e(j) = std::exp(kTwoPiI * double(k * j) / 32.0);
    double expected = 4 * kPi * kPi * (k + 0.3) * (k + 0.3);
    CHECK(mean_norm(op.apply(e) - expected * e) < 1e-9 * expected);
  }
}

TEST_CASE("free bands at theta = 0.25") {
  auto f = make_preset("free", 1);
  CellOperator op(f, pt1(0, 0.25), disc1(64));
  auto pairs = solve_bands(op, 4);
  const double expected[] = {0.25, 0.75, 1.25, 1.75};
  for (int i = 0; i < 4; ++i) {
    double e = 4 * kPi * kPi * expected[i] * expected[i];
    CHECK(std::abs(pairs[i].lambda - e) < 1e-9 * (1 + e));
    CHECK(std::abs(mean_norm(pairs[i].psi) - 1) < 1e-12);
    CHECK(pairs[i].psi(pairs[i].gauge_anchor).imag() == 0.0);
    CHECK(pairs[i].psi(pairs[i].gauge_anchor).real() > 0);
    CHECK(pairs[i].residual < 1e-9);
  }
  CHECK(spectral_gap(pairs, 1) == doctest::Approx(4 * kPi * kPi * 0.5).epsilon(1e-12));
}

TEST_CASE("free bands at the zone edge are degenerate") {
  auto f = make_preset("free", 1);
  CellOperator op(f, pt1(0, 0.5), disc1(64));
  auto pairs = solve_bands(op, 3);
  CHECK(gap_value(pairs, 1) < 1e-9);
  CHECK_THROWS_AS(spectral_gap(pairs, 1), DegenerateBand);
  CHECK_THROWS_AS(solve_theta_corrector(op, pairs[0], 0), DegenerateBand);
  CHECK_THROWS_AS(band_derivatives(op, 1), DegenerateBand);
}

TEST_CASE("potential shift moves every band and keeps eigenfunctions") {
  auto f = make_preset("mathieu", 1);
  auto g = f.shifted(5.0);
  CellOperator a(f, pt1(0, 0.1), disc1(64)), b(g, pt1(0, 0.1), disc1(64));
  auto pa = solve_bands(a, 4), pb = solve_bands(b, 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(std::abs(pb[i].lambda - pa[i].lambda - 5.0) < 1e-9);
    CHECK(mean_norm(pb[i].psi - pa[i].psi) < 1e-8);
  }
}

TEST_CASE("Mathieu bands match an independent oracle and resolution doubling") {
  auto f = make_preset("mathieu", 1);
  double l128 = lam(f, 0, 0, 1, disc1(128));
  double l256 = lam(f, 0, 0, 1, disc1(256));
  double l512 = lam(f, 0, 0, 1, disc1(512));
  CHECK(std::abs(l128 - l256) < 1e-10);
  CHECK(std::abs(l512 - mathieu_oracle(0.0, 60, 1)) < 1e-8);
  for (int n = 1; n <= 4; ++n) {
    CHECK(std::abs(lam(f, 0, 0.2, n, disc1(64)) - lam(f, 0, 0.2, n, disc1(128))) < 1e-8);
    CHECK(std::abs(lam(f, 0, 0.2, n, disc1(64)) - mathieu_oracle(0.2, 60, n)) < 1e-8);
  }
  CellOperator edge(f, pt1(0, 0.5), disc1(64));
  auto pairs = solve_bands(edge, 3);
  double g_oracle = mathieu_oracle(0.5, 60, 2) - mathieu_oracle(0.5, 60, 1);
  CHECK(spectral_gap(pairs, 1) > 0.1);
  CHECK(std::abs(gap_value(pairs, 1) - g_oracle) < 1e-8);
}

TEST_CASE("finite-difference scheme converges at second order") {
  auto f = make_preset("mathieu", 1);
  double exact = mathieu_oracle(0.2, 60, 1);
  double e32 = std::abs(lam(f, 0, 0.2, 1, disc1(32, Scheme::finite_difference_2)) - exact);
  double e64 = std::abs(lam(f, 0, 0.2, 1, disc1(64, Scheme::finite_difference_2)) - exact);
  double ratio = e32 / e64;
  CHECK(ratio > 3.5);
  CHECK(ratio < 4.5);
}

TEST_CASE("time reversal symmetry of bands") {
  auto f = make_preset("coupled", 1);
  for (double t : {0.05, 0.17, 0.33, 0.41})
    for (int n = 1; n <= 3; ++n) CHECK(std::abs(lam(f, 0.4, t, n, disc1(64)) - lam(f, 0.4, -t, n, disc1(64))) < 1e-9);
}

TEST_CASE("free lowest band derivatives") {
  auto f = make_preset("free", 1);
  CellOperator op(f, pt1(0.3, 0.2), disc1(32));
  auto d = band_derivatives(op, 1);
  CHECK(std::abs(d.grad_theta(0) - 8 * kPi * kPi * 0.2) < 1e-9);
  CHECK(std::abs(d.grad_x(0)) < 1e-12);
  CHECK(std::abs(d.hess_tt(0, 0) - 8 * kPi * kPi) < 1e-8);
  CHECK(std::abs(d.hess_xt(0, 0)) < 1e-12);
  CHECK(std::abs(d.hess_xx(0, 0)) < 1e-12);
  CHECK(mean_norm(d.corr_theta[0]) < 1e-10);
  CHECK(mean_norm(d.corr_x[0]) < 1e-12);
}

TEST_CASE("separable preset: x corrector vanishes, D-block is 2") {
  auto f = make_preset("separable", 1);
  CellOperator op(f, pt1(0.7, 0.15), disc1(64));
  auto d = band_derivatives(op, 1);
  CHECK(mean_norm(d.corr_x[0]) < 1e-10);
  CHECK(std::abs(d.hess_xx(0, 0) - 2.0) < 1e-9);
  CHECK(std::abs(d.hess_xt(0, 0)) < 1e-9);
  CHECK(std::abs(d.grad_x(0) - 1.4) < 1e-9);
}

TEST_CASE("theta corrector matches a finite difference of gauge-aligned eigenfunctions") {
  auto f = make_preset("mathieu", 1);
  auto d = disc1(64);
  CellOperator op(f, pt1(0, 0.2), d);
  auto pairs = solve_bands(op, 2);
  CVec corr = solve_theta_corrector(op, pairs[0], 0);
  CHECK(std::abs(mean_inner(corr, pairs[0].psi)) < 1e-10);
  const double delta = 1e-4;
  CVec fd = (aligned_psi(f, 0, 0.2 + delta, 1, d, pairs[0].psi) - aligned_psi(f, 0, 0.2 - delta, 1, d, pairs[0].psi)) /
            (2 * delta);
  fd -= mean_inner(fd, pairs[0].psi) * pairs[0].psi;
  CHECK(mean_norm(fd - corr) < 1e-5);
}

TEST_CASE("x corrector matches a finite difference of gauge-aligned eigenfunctions") {
  CoefficientField::Spec s;
  s.name = "modulated";
  s.dimension = 1;
  s.A = [](const SmallVec&, const SmallVec&) { return SmallMat::Identity(1, 1); };
  s.c = [](const SmallVec& x, const SmallVec& y) { return (1 + x(0) * x(0) / 2) * (2 + std::cos(2 * kPi * y(0))); };
  s.c_dx = [](int, const SmallVec& x, const SmallVec& y) { return x(0) * (2 + std::cos(2 * kPi * y(0))); };
  s.c_dxx = [](int, int, const SmallVec&, const SmallVec& y) { return 2 + std::cos(2 * kPi * y(0)); };
  CoefficientField f(std::move(s));
  auto d = disc1(64);
  CellOperator op(f, pt1(0.5, 0.1), d);
  auto pairs = solve_bands(op, 2);
  CVec corr = solve_x_corrector(op, pairs[0], 0);
  CHECK(mean_norm(corr) > 1e-3);
  const double delta = 1e-4;
  CVec fd = (aligned_psi(f, 0.5 + delta, 0.1, 1, d, pairs[0].psi) -
             aligned_psi(f, 0.5 - delta, 0.1, 1, d, pairs[0].psi)) /
            (2 * delta);
  fd -= mean_inner(fd, pairs[0].psi) * pairs[0].psi;
  CHECK(mean_norm(fd - corr) < 1e-5);
}

TEST_CASE("gradient and Hessian match finite differences of the band on the coupled preset") {
  auto f = make_preset("coupled", 1);
  for (Scheme scheme : {Scheme::pseudo_spectral, Scheme::finite_difference_2}) {
    auto d = disc1(64, scheme);
    for (auto [x, t] : {std::pair{0.5, 0.2}, std::pair{-0.3, 0.37}, std::pair{0.1, -0.12}}) {
      CellOperator op(f, pt1(x, t), d);
      auto bd = band_derivatives(op, 1);
      const double h = 1e-4;
      double fdt = (lam(f, x, t + h, 1, d) - lam(f, x, t - h, 1, d)) / (2 * h);
      double fdx = (lam(f, x + h, t, 1, d) - lam(f, x - h, t, 1, d)) / (2 * h);
      INFO("scheme " << scheme_name(scheme) << " x " << x << " theta " << t);
      CHECK(std::abs(fdt - bd.grad_theta(0)) < 1e-6 * (1 + std::abs(fdt)));
      CHECK(std::abs(fdx - bd.grad_x(0)) < 1e-6 * (1 + std::abs(fdx)));
      // Richardson-extrapolated second differences with step 5e-3.
      auto second = [&](auto g, double s) { return (g(s) - 2 * g(0.0) + g(-s)) / (s * s); };
      auto rich = [&](auto g) {
        double H = 5e-3;
        return (4 * second(g, H / 2) - second(g, H)) / 3;
      };
      double ltt = rich([&](double s) { return lam(f, x, t + s, 1, d); });
      double lxx = rich([&](double s) { return lam(f, x + s, t, 1, d); });
      auto mixed = [&](double s) {
        return (lam(f, x + s, t + s, 1, d) - lam(f, x + s, t - s, 1, d) - lam(f, x - s, t + s, 1, d) +
                lam(f, x - s, t - s, 1, d)) /
               (4 * s * s);
      };
      double lxt = (4 * mixed(2.5e-3) - mixed(5e-3)) / 3;
      CHECK(std::abs(ltt - bd.hess_tt(0, 0)) < 1e-4 * std::abs(ltt));
      CHECK(std::abs(lxx - bd.hess_xx(0, 0)) < 1e-4 * std::abs(lxx));
      CHECK(std::abs(lxt - bd.hess_xt(0, 0)) < 1e-4 * (std::abs(lxt) + 1e-2));
      CHECK(bd.imaginary_residual < 1e-8);
      CHECK(std::abs(mean_inner(bd.corr_theta[0], op.spectrum(2)->vectors.col(0))) < 1e-10);
      CHECK(std::abs(mean_inner(bd.corr_x[0], op.spectrum(2)->vectors.col(0))) < 1e-10);
      CHECK(bd.quadrature_delta < 1e-6);
    }
  }
}

TEST_CASE("derivatives are invariant under a unit phase on psi") {
  auto f = make_preset("coupled", 1);
  CellOperator op(f, pt1(0.5, 0.2), disc1(64));
  auto pairs = solve_bands(op, 2);
  auto ref = band_derivatives(op, pairs[0]);
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(0, 2 * kPi);
  for (int trial = 0; trial < 3; ++trial) {
    BlochEigenpair p = pairs[0];
    p.psi *= std::exp(cplx(0, u(rng)));
    auto d = band_derivatives(op, p);
    CHECK(std::abs(d.grad_theta(0) - ref.grad_theta(0)) < 1e-9);
    CHECK(std::abs(d.hess_tt(0, 0) - ref.hess_tt(0, 0)) < 1e-9);
    CHECK(std::abs(d.hess_xt(0, 0) - ref.hess_xt(0, 0)) < 1e-9);
    CHECK(std::abs(d.hess_xx(0, 0) - ref.hess_xx(0, 0)) < 1e-9);
  }
}

TEST_CASE("two-dimensional operator: symmetry, free Hessian and dense versus iterative") {
  auto f = make_preset("anisotropic", 2);
  CellDiscretization d;
  d.dimension = 2;
  d.points = 16;
  for (Scheme s : {Scheme::pseudo_spectral, Scheme::finite_difference_2}) {
    d.scheme = s;
    CellOperator op(f, BlochPoint(small_vec({0.2, -0.1}), small_vec({0.1, 0.3})), d);
    CHECK(op.hermitian_residual() < 1e-12);
  }
  d.scheme = Scheme::pseudo_spectral;
  auto free2 = make_preset("free", 2);
  CellOperator fop(free2, BlochPoint(small_vec({0.0, 0.0}), small_vec({0.1, -0.2})), d);
  auto bd = band_derivatives(fop, 1);
  CHECK((bd.hess_tt - 8 * kPi * kPi * RMat::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-8);

  BlochPoint p(small_vec({0.2, -0.1}), small_vec({0.1, 0.3}));
  CellDiscretization dd = d, di = d;
  dd.points = di.points = 32;
  dd.method = EigenMethod::dense;
  di.method = EigenMethod::iterative;
  CellOperator a(f, p, dd), b(f, p, di);
  auto pa = solve_bands(a, 4), pb = solve_bands(b, 4);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(pa[i].lambda - pb[i].lambda) < 1e-9 * (1 + std::abs(pa[i].lambda)));
  auto da = band_derivatives(a, 1), db = band_derivatives(b, 1);
  CHECK((da.joint_hessian() - db.joint_hessian()).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(mean_norm(da.corr_x[1] - db.corr_x[1]) < 1e-7);
}
