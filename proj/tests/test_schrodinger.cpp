#include <cmath>
#include <random>

#include "doctest.h"
#include "twoscale/errors.hpp"
#include "twoscale/fft.hpp"
#include "twoscale/schrodinger.hpp"

using namespace twoscale;

namespace {

RMat m1(double a) { return RMat::Constant(1, 1, a); }
CMat c1(cplx b) { return CMat::Constant(1, 1, b); }

CellDiscretization disc1(int M, Scheme s = Scheme::pseudo_spectral) {
  CellDiscretization d;
  d.points = M;
  d.scheme = s;
  return d;
}

BlochPoint pt1(double x, double theta) { return BlochPoint(small_vec({x}), small_vec({theta})); }

struct Setup {
  CoefficientField field;
  CriticalPoint cp;
  BlochEigenpair pair;
  BandDerivatives derivs;
  HomogenizedTensors tensors;
};

Setup make_setup(const std::string& preset, const BlochPoint& guess, int M = 64) {
  auto f = make_preset(preset, 1);
  auto d = disc1(M);
  auto cp = find_critical_point(f, 1, guess, d);
  CellOperator op(f, cp.location, d);
  auto pair = solve_bands(op, 2)[0];
  auto bd = band_derivatives(op, pair);
  auto t = assemble_tensors(op, cp, bd, pair);
  return {f, cp, pair, bd, t};
}

const Setup& coupled() {
  static Setup s = make_setup("coupled", pt1(0.0, 0.0));
  return s;
}

struct Run {
  EvolutionResult u, v;
};

// Plain data carries O(sqrt(eps)) mass in other bands that crosses the periodic box within
// t = 0.5, so sweeps with it relax the snapshot boundary guard.
constexpr double kSweepBoundaryTol = 1e-4;

Run run_pair(const Setup& s, double eps, double T, double dt, Scheme scheme = Scheme::pseudo_spectral,
             const BandDerivatives* first_order = nullptr, double boundary_tol = kSweepBoundaryTol,
             std::vector<double> times = {}) {
  auto box = commensurate_box(eps, 6.0);
  auto v0 = gaussian_profile(1, box.L_z, box.P);
  InitialDataOptions io;
  io.correctors = first_order;
  auto u0 = build_initial_data(eps, s.pair, s.cp, v0, io);
  EpsilonOptions eo;
  eo.scheme = scheme;
  eo.energy_shift = s.pair.lambda;
  eo.band_energy = s.pair.lambda;
  eo.boundary_tol = boundary_tol;
  eo.snapshot_times = times;
  HomogenizedOptions ho;
  ho.snapshot_times = times;
  return {evolve_epsilon(s.field, u0, eps, T, dt, eo), evolve_homogenized(s.tensors, v0, T, dt, ho)};
}

}  // namespace

TEST_CASE("commensurate box") {
  auto b = commensurate_box(1.0 / 16, 6.0);
  CHECK(b.cells == 64);
  CHECK(b.P == 1024);
  CHECK(b.L_z == doctest::Approx(8.0));
  CHECK(b.L_x == doctest::Approx(2.0));
  CHECK(2 * b.L_x / (1.0 / 16) == doctest::Approx(b.cells));
}

TEST_CASE("harmonic oscillator spectrum") {
  auto t = make_tensors(m1(1), c1(0), 0, m1(1));
  auto rep = homogenized_eigs(t, 6, 1, 8.0, 128);
  for (int m = 1; m <= 6; ++m) CHECK(std::abs(rep.pairs[m - 1].sigma - (2 * m - 1)) < 1e-6);
  CHECK(rep.orthonormality_residual < 1e-9);
  CHECK(rep.hermitian_residual < 1e-12);
  for (const auto& p : rep.pairs) {
    CHECK(p.residual < 1e-8);
    CHECK(p.decay.gamma > 0);
  }
}

TEST_CASE("2D harmonic oscillator multiplicities") {
  RMat I = RMat::Identity(2, 2);
  auto t = make_tensors(I, CMat::Zero(2, 2), 0, I);
  auto rep = homogenized_eigs(t, 6, 2, 6.0, 32);
  const double expect[6] = {2, 4, 4, 6, 6, 6};
  for (int m = 0; m < 6; ++m) CHECK(std::abs(rep.pairs[m].sigma - expect[m]) < 1e-6);
  CHECK(rep.orthonormality_residual < 1e-9);
}

TEST_CASE("drift-coupled oscillator oracle") {
  const double A = 1.5, D = 0.8, beta = 0.9, cr = 0.25;
  auto t = make_tensors(m1(A), c1(cplx(0, beta)), cplx(cr, -beta / 2), m1(D));
  CHECK(check_selfadjoint_identity(t) < 1e-15);
  auto rep = homogenized_eigs(t, 5, 1, 10.0, 256);
  const double w = std::sqrt(A * D - beta * beta / 4);
  for (int m = 1; m <= 5; ++m) CHECK(std::abs(rep.pairs[m - 1].sigma - ((2 * m - 1) * w + cr)) < 1e-6);
  CHECK(rep.hermitian_residual < 1e-12);
}

TEST_CASE("eigensolver certificates") {
  CHECK_THROWS_AS(homogenized_eigs(make_tensors(m1(1), c1(0), 0, m1(-1)), 2, 1, 8.0, 64), NotPositiveDefinite);
  CHECK_THROWS_AS(homogenized_eigs(make_tensors(m1(1), c1(0), 0, m1(1)), 2, 1, 2.0, 64), BoxTooSmall);
  auto strong = make_tensors(m1(1), c1(cplx(0, 3)), cplx(0, -1.5), m1(1));
  CHECK_THROWS_AS(homogenized_eigs(strong, 2, 1, 8.0, 64), NotPositiveDefinite);
}

TEST_CASE("coupled preset homogenized eigenpairs") {
  const auto& s = coupled();
  auto rep = homogenized_eigs(s.tensors, 4, 1, 8.0, 128);
  const double w = std::sqrt(s.tensors.A_star(0, 0) * s.tensors.D_star(0, 0));
  for (int m = 1; m <= 4; ++m) CHECK(std::abs(rep.pairs[m - 1].sigma - (2 * m - 1) * w) < 1e-6);
  for (const auto& p : rep.pairs) CHECK(p.decay.gamma > 0);
}

TEST_CASE("decay rate estimates") {
  auto g = gaussian_profile(1, 8.0, 256);
  auto dg = decay_rate(g);
  CHECK(dg.gamma > 1);
  CHECK_FALSE(dg.underflow);

  WaveField e(1, 8.0, 256, small_vec({0.0}), Frame::z_frame);
  for (int j = 0; j < e.size(); ++j) e.values(j) = std::exp(-std::abs(e.node(j)(0)));
  CHECK(std::abs(decay_rate(e).gamma - 1.0) < 0.05);

  WaveField sharp = e;
  for (int j = 0; j < sharp.size(); ++j) sharp.values(j) = std::exp(-10 * std::pow(sharp.node(j)(0), 2));
  auto ds = decay_rate(sharp);
  CHECK(ds.underflow);
  CHECK(std::isinf(ds.gamma));
  CHECK_THROWS_AS(decay_rate_strict(sharp), WindowUnderflow);

  WaveField e2(2, 8.0, 64, small_vec({0.0, 0.0}), Frame::z_frame);
  for (int j = 0; j < e2.size(); ++j) e2.values(j) = std::exp(-2 * e2.node(j).norm());
  CHECK(std::abs(decay_rate(e2).gamma - 2.0) < 0.1);
}

TEST_CASE("ground state evolves by a phase") {
  auto t = make_tensors(m1(1), c1(0), 0, m1(1));
  auto rep = homogenized_eigs(t, 1, 1, 8.0, 128);
  const auto& phi = rep.pairs[0].phi;
  HomogenizedOptions o;
  o.snapshot_times = {0.5};
  auto r = evolve_homogenized(t, phi, 1.0, 1e-3, o);
  for (double tt : {0.5, 1.0}) {
    CVec expect = phi.values * std::polar(1.0, rep.pairs[0].sigma * tt);
    double err = std::sqrt((r.at(tt).field.values - expect).squaredNorm() * phi.cell_volume());
    CHECK(err < 1e-6);
    CVec exact = phi.values * std::polar(1.0, tt);
    CHECK(std::sqrt((r.at(tt).field.values - exact).squaredNorm() * phi.cell_volume()) < 1e-6);
  }
  CHECK(r.max_norm_drift < 1e-8);
}

TEST_CASE("hom and asym forms agree when the identity holds") {
  const double beta = 0.6;
  auto t = make_tensors(m1(1.2), c1(cplx(0, beta)), cplx(0.1, -beta / 2), m1(0.9));
  auto v0 = gaussian_profile(1, 10.0, 256);
  HomogenizedOptions o;
  auto hom = evolve_homogenized(t, v0, 1.0, 1e-3, o);
  o.form = DriftForm::asym;
  auto asym = evolve_homogenized(t, v0, 1.0, 1e-3, o);
  double d = std::sqrt((hom.at(1.0).field.values - asym.at(1.0).field.values).squaredNorm() * v0.cell_volume());
  CHECK(d < 1e-7);
  CHECK(hom.max_norm_drift < 1e-8);
}

TEST_CASE("2D homogenized evolution conserves the norm") {
  RMat A(2, 2), D(2, 2);
  A << 1.0, 0.2, 0.2, 0.8;
  D << 1.0, -0.1, -0.1, 1.3;
  CMat B = CMat::Zero(2, 2);
  B(0, 1) = cplx(0, 0.3);
  B(1, 0) = cplx(0, -0.2);
  auto t = make_tensors(A, B, 0, D);
  auto v0 = gaussian_profile(2, 8.0, 64);
  auto r = evolve_homogenized(t, v0, 0.2, 1e-2);
  CHECK(r.max_norm_drift < 1e-8);
}

TEST_CASE("free epsilon problem matches the Fourier solution") {
  const double eps = 1.0 / 16;
  auto f = make_preset("free", 1);
  auto box = commensurate_box(eps, 6.0);
  auto v0 = gaussian_profile(1, box.L_z, box.P);
  BlochEigenpair pair;
  pair.psi = CVec::Ones(32);
  CriticalPoint cp;
  cp.location = pt1(0.0, 0.0);
  auto u0 = build_initial_data(eps, pair, cp, v0);
  CHECK(std::abs(u0.norm() * std::pow(eps, -0.25) - v0.norm()) < 1e-12);
  auto u = evolve_epsilon(f, u0, eps, 0.1, 1e-3);
  const auto& fft = fft_grid(1, u0.P);
  CVec hat = fft.forward(u0.values);
  for (int q = 0; q < u0.P; ++q) {
    double k = kPi * fft.wavenumber(q) / u0.L;
    hat(q) *= std::polar(1.0, eps * k * k * 0.1) / double(u0.P);
  }
  CVec exact = fft.backward(hat);
  CHECK((u.at(0.1).field.values - exact).norm() / exact.norm() < 1e-6);
  CHECK(u.max_norm_drift < 1e-8);
}

TEST_CASE("free two-scale error vanishes") {
  auto s = make_setup("free", pt1(0.0, 0.1), 32);
  auto r = run_pair(s, 1.0 / 16, 0.2, 1e-3);
  CHECK(two_scale_error(r.u, r.v, s.pair, s.cp, 1.0 / 16, 0.2) < 1e-8);
}

TEST_CASE("initial data normalization approaches the profile norm") {
  const auto& s = coupled();
  double prev = 1e9;
  for (double eps : {1.0 / 16, 1.0 / 64, 1.0 / 256}) {
    auto box = commensurate_box(eps, 6.0);
    auto v0 = gaussian_profile(1, box.L_z, box.P);
    auto u0 = build_initial_data(eps, s.pair, s.cp, v0);
    double zn = u0.norm() * std::pow(eps, -0.25);
    double gap = std::abs(zn - v0.norm());
    CHECK(gap < prev + 1e-12);
    prev = gap;
  }
  CHECK(prev < 1e-3);
}

TEST_CASE("initial data preconditions") {
  const auto& s = coupled();
  auto v0 = gaussian_profile(1, 7.3, 1024);
  CHECK_THROWS_AS(build_initial_data(1.0 / 16, s.pair, s.cp, v0), CommensurabilityError);
  auto box = commensurate_box(1.0 / 16, 6.0);
  auto coarse = gaussian_profile(1, box.L_z, box.P / 2);
  CHECK_THROWS_AS(build_initial_data(1.0 / 16, s.pair, s.cp, coarse), ResolutionError);
  auto xf = build_initial_data(1.0 / 16, s.pair, s.cp, gaussian_profile(1, box.L_z, box.P));
  CHECK_THROWS_AS(build_initial_data(1.0 / 16, s.pair, s.cp, xf), FrameMismatch);
}

TEST_CASE("epsilon sweep converges") {
  const auto& s = coupled();
  const double ref[2][3] = {{4.46e-4, 1.66e-4, 6.6e-5}, {7.1e-4, 2.25e-4, 9.96e-5}};
  double prev[2] = {1, 1};
  int i = 0;
  for (double eps : {1.0 / 16, 1.0 / 32, 1.0 / 64}) {
    auto r = run_pair(s, eps, 0.5, 1e-3, Scheme::pseudo_spectral, nullptr, kSweepBoundaryTol, {0.25});
    CHECK(two_scale_error(r.u, r.v, s.pair, s.cp, eps, 0.0) < 1e-12);
    int k = 0;
    for (double t : {0.25, 0.5}) {
      double err = two_scale_error(r.u, r.v, s.pair, s.cp, eps, t);
      CHECK(err < prev[k]);
      CHECK(err == doctest::Approx(ref[k][i]).epsilon(0.05));
      prev[k++] = err;
    }
    CHECK(r.u.max_norm_drift < 1e-8);
    CHECK(r.v.max_norm_drift < 1e-8);
    ++i;
  }
}

TEST_CASE("fast non-band mass reaches the boundary of the default box") {
  const auto& s = coupled();
  CHECK_THROWS_AS(run_pair(s, 1.0 / 16, 0.5, 1e-3, Scheme::pseudo_spectral, nullptr, 1e-6), BoundaryContamination);
  auto r = run_pair(s, 1.0 / 16, 0.5, 1e-3, Scheme::pseudo_spectral, &s.derivs, 1e-6);
  CHECK(r.u.snapshots.back().field.boundary_mass() < 1e-6);
}

TEST_CASE("Crank-Nicolson is second order in dt") {
  auto t = make_tensors(m1(1.3), c1(0), 0.2, m1(0.7));
  auto v0 = gaussian_profile(1, 8.0, 128);
  for (int j = 0; j < v0.size(); ++j) v0.values(j) *= std::polar(1.0, 0.8 * v0.node(j)(0));
  auto ref = evolve_homogenized(t, v0, 0.5, 0.5 / 800).at(0.5).field.values;
  auto e = [&](int steps) { return (evolve_homogenized(t, v0, 0.5, 0.5 / steps).at(0.5).field.values - ref).norm(); };
  double e1 = e(50), e2 = e(100);
  CHECK(e1 / e2 == doctest::Approx(4.0).epsilon(0.1));

  const auto& s = coupled();
  const double eps = 1.0 / 16;
  auto box = commensurate_box(eps, 6.0);
  auto u0 = build_initial_data(eps, s.pair, s.cp, gaussian_profile(1, box.L_z, box.P));
  EpsilonOptions eo;
  eo.energy_shift = s.pair.lambda;
  eo.boundary_tol = 1;
  // Interband frequencies are O(1 / eps), so the asymptotic regime needs dt well below eps / 100.
  const double T = 4e-3;
  auto run = [&](int n) { return evolve_epsilon(s.field, u0, eps, T, T / n, eo).at(T).field.values; };
  CVec uref = run(320);
  double f1 = (run(20) - uref).norm(), f2 = (run(40) - uref).norm();
  CHECK(f1 / f2 == doctest::Approx(4.0).epsilon(0.15));
}

TEST_CASE("coupled eigenpairs are stable under refinement") {
  const auto& s = coupled();
  auto base = homogenized_eigs(s.tensors, 4, 1, 8.0, 128);
  auto wide = homogenized_eigs(s.tensors, 4, 1, 16.0, 256);
  auto fine = homogenized_eigs(s.tensors, 4, 1, 8.0, 256);
  for (int m = 0; m < 4; ++m) {
    CHECK(std::abs(base.pairs[m].sigma - wide.pairs[m].sigma) < 1e-7);
    CHECK(std::abs(base.pairs[m].sigma - fine.pairs[m].sigma) < 1e-6);
  }
}

TEST_CASE("coupled hom and asym evolutions agree") {
  const auto& s = coupled();
  auto v0 = gaussian_profile(1, 8.0, 128);
  HomogenizedOptions o;
  auto hom = evolve_homogenized(s.tensors, v0, 1.0, 1e-3, o);
  o.form = DriftForm::asym;
  auto asym = evolve_homogenized(s.tensors, v0, 1.0, 1e-3, o);
  double d = std::sqrt((hom.at(1.0).field.values - asym.at(1.0).field.values).squaredNorm() * v0.cell_volume());
  CHECK(d < 1e-7);
}

TEST_CASE("finite-difference epsilon solver") {
  const auto& s = coupled();
  auto r = run_pair(s, 1.0 / 16, 0.25, 1e-3, Scheme::finite_difference_2);
  CHECK(r.u.max_norm_drift < 1e-8);
  double err = two_scale_error(r.u, r.v, s.pair, s.cp, 1.0 / 16, 0.25);
  CHECK(err < 5e-2);
}

TEST_CASE("two-scale error is gauge invariant") {
  Setup s = coupled();
  const double eps = 1.0 / 16;
  auto r = run_pair(s, eps, 0.25, 1e-3);
  double e0 = two_scale_error(r.u, r.v, s.pair, s.cp, eps, 0.25);
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> phase(0, 2 * kPi);
  for (int trial = 0; trial < 2; ++trial) {
    Setup g = s;
    g.pair.psi *= std::polar(1.0, phase(rng));
    auto r2 = run_pair(g, eps, 0.25, 1e-3);
    CHECK(std::abs(e0 - two_scale_error(r2.u, r2.v, g.pair, g.cp, eps, 0.25)) < 1e-9);
  }
}

TEST_CASE("first-order corrector reduces the reconstruction residual") {
  const auto& s = coupled();
  for (double eps : {1.0 / 16, 1.0 / 32}) {
    auto r = run_pair(s, eps, 0.5, 1e-3, Scheme::pseudo_spectral, &s.derivs);
    auto w = transformed_solution(r.u, s.pair.lambda, eps, 0.5);
    auto plain = corrector_reconstruction(r.v, s.pair, nullptr, s.cp, eps, 0.5);
    auto first = corrector_reconstruction(r.v, s.pair, &s.derivs, s.cp, eps, 0.5);
    double rp = std::sqrt((w.values - plain.values).squaredNorm() * w.cell_volume());
    double rf = std::sqrt((w.values - first.values).squaredNorm() * w.cell_volume());
    CHECK(rf < rp);
  }
}

TEST_CASE("two-scale error frame checks") {
  const auto& s = coupled();
  auto r = run_pair(s, 1.0 / 16, 0.01, 1e-3);
  CHECK_THROWS_AS(two_scale_error(r.v, r.u, s.pair, s.cp, 1.0 / 16, 0.01), FrameMismatch);
  CHECK_THROWS_AS(two_scale_error(r.u, r.v, s.pair, s.cp, 1.0 / 32, 0.01), FrameMismatch);
  CHECK_THROWS_AS(two_scale_error(r.u, r.v, s.pair, s.cp, 1.0 / 16, 0.005), FrameMismatch);
}

TEST_CASE("boundary contamination is reported") {
  auto t = make_tensors(m1(1), c1(0), 0, m1(0));
  auto v0 = gaussian_profile(1, 6.0, 128);
  CHECK_THROWS_AS(evolve_homogenized(t, v0, 4.0, 1e-2), BoundaryContamination);
  auto wide = gaussian_profile(1, 3.0, 1024);
  const auto& s = coupled();
  CHECK_THROWS_AS(build_initial_data(1.0 / 16, s.pair, s.cp, wide), BoundaryContamination);
}

TEST_CASE("dt precondition") {
  const auto& s = coupled();
  auto box = commensurate_box(1.0 / 16, 6.0);
  auto v0 = gaussian_profile(1, box.L_z, box.P);
  auto u0 = build_initial_data(1.0 / 16, s.pair, s.cp, v0);
  EpsilonOptions eo;
  eo.band_energy = 1.0;
  CHECK_THROWS_AS(evolve_epsilon(s.field, u0, 1.0 / 16, 0.1, 1e-2, eo), InvalidArgument);
}
