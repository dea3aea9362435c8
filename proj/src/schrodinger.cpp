#include "twoscale/schrodinger.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

#include "krylov.hpp"
#include "twoscale/errors.hpp"
#include "twoscale/fft.hpp"

namespace twoscale {

const char* frame_name(Frame f) { return f == Frame::x_frame ? "x" : "z"; }

WaveField::WaveField(int dimension_, double L_, int P_, SmallVec center_, Frame frame_)
    : dimension(dimension_), L(L_), P(P_), center(std::move(center_)), frame(frame_) {
  if (dimension != 1 && dimension != 2) throw InvalidArgument("dimension must be 1 or 2");
  if (!(L > 0)) throw InvalidArgument("box half-width must be positive");
  if (P < 4 || (P & (P - 1)) != 0) throw InvalidArgument("grid points must be a power of two");
  if (center.size() == 0) center = SmallVec::Zero(dimension);
  if (center.size() != dimension) throw InvalidArgument("box center has the wrong dimension");
  values = CVec::Zero(size());
}

SmallVec WaveField::node(int j) const {
  SmallVec z(dimension);
  const double h = spacing();
  if (dimension == 1) {
    z(0) = center(0) - L + h * j;
  } else {
    z(0) = center(0) - L + h * (j / P);
    z(1) = center(1) - L + h * (j % P);
  }
  return z;
}

double WaveField::norm() const { return std::sqrt(values.squaredNorm() * cell_volume()); }

double WaveField::boundary_mass() const {
  double total = values.squaredNorm();
  if (total == 0) return 0;
  double edge = 0;
  for (int j = 0; j < size(); ++j) {
    SmallVec d = node(j) - center;
    if (d.cwiseAbs().maxCoeff() > 0.95 * L) edge += std::norm(values(j));
  }
  return edge / total;
}

bool WaveField::same_grid(const WaveField& o, double tol) const {
  return dimension == o.dimension && P == o.P && std::abs(L - o.L) <= tol * (1 + L) &&
         (center - o.center).cwiseAbs().maxCoeff() <= tol * (1 + L);
}

WaveField gaussian_profile(int dimension, double L, int P) {
  WaveField f(dimension, L, P, SmallVec::Zero(dimension), Frame::z_frame);
  const double c = std::pow(kPi, -0.25 * dimension);
  for (int j = 0; j < f.size(); ++j) f.values(j) = c * std::exp(-0.5 * f.node(j).squaredNorm());
  return f;
}

const Snapshot& EvolutionResult::at(double t) const {
  for (const auto& s : snapshots)
    if (std::abs(s.t - t) <= 1e-9 * (1 + std::abs(t))) return s;
  throw FrameMismatch("no snapshot at t = " + std::to_string(t));
}

BoxChoice commensurate_box(double eps, double L_min, int points_per_cell) {
  if (!(eps > 0) || !(L_min > 0)) throw InvalidArgument("eps and L_min must be positive");
  BoxChoice b;
  const double se = std::sqrt(eps);
  b.cells = 1;
  while (b.cells * se / 2 < L_min) b.cells *= 2;
  b.P = b.cells * points_per_cell;
  b.L_z = b.cells * se / 2;
  b.L_x = se * b.L_z;
  return b;
}

namespace {

// Spectral calculus on a periodic box.
struct Box {
  int N = 1, P = 0, n = 0;
  double L = 1, h = 1;
  const FftGrid* fft = nullptr;
  RVec kappa;  // physical wavenumber per axis index

  explicit Box(const WaveField& f) : N(f.dimension), P(f.P), n(f.size()), L(f.L), h(f.spacing()) {
    fft = &fft_grid(N, P);
    kappa.resize(P);
    for (int j = 0; j < P; ++j) kappa(j) = kPi * fft->wavenumber(j) / L;
  }

  double k(int flat, int axis) const { return kappa(fft->multi_index(flat)[axis]); }

  CVec derivative(const CVec& v, int axis) const {
    CVec hat = fft->forward(v);
    for (int q = 0; q < n; ++q) hat(q) *= cplx(0, k(q, axis)) / double(n);
    return fft->backward(hat);
  }

  // P^{-1} u for the Fourier multiplier symbol(q).
  template <class F>
  CVec multiplier(const CVec& u, F&& symbol) const {
    CVec hat = fft->forward(u);
    for (int q = 0; q < n; ++q) hat(q) *= symbol(q) / double(n);
    return fft->backward(hat);
  }
};

// Snapshot bookkeeping shared by both propagators.
std::vector<int> snapshot_steps(const std::vector<double>& times, double T, double dt, int nsteps) {
  std::vector<int> steps{0, nsteps};
  for (double t : times) {
    if (t < 0 || t > T + 1e-12) throw InvalidArgument("snapshot time outside [0, T]");
    int s = int(std::lround(t / dt));
    if (std::abs(s * dt - t) > 1e-9 * (1 + t)) throw InvalidArgument("snapshot time is not a multiple of dt");
    steps.push_back(s);
  }
  std::sort(steps.begin(), steps.end());
  steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
  return steps;
}

int step_count(double T, double dt) {
  if (!(dt > 0) || !(T >= 0)) throw InvalidArgument("need dt > 0 and T >= 0");
  int s = int(std::lround(T / dt));
  if (std::abs(s * dt - T) > 1e-9 * (1 + T)) throw InvalidArgument("T must be a multiple of dt");
  return s;
}

using Apply = std::function<CVec(const CVec&)>;

// Crank-Nicolson for du/dt = i alpha_scale H u, i.e. (I - i a H) u+ = (I + i a H) u, a = dt alpha_scale / 2.
EvolutionResult crank_nicolson(const WaveField& start, const Apply& H, const Apply& precond, double a, double T,
                               double dt, const std::vector<double>& times, double tol, double boundary_tol,
                               int norm_every, const std::function<cplx(double)>& phase) {
  const int nsteps = step_count(T, dt);
  const auto snaps = snapshot_steps(times, T, dt, nsteps);
  EvolutionResult out;
  WaveField cur = start;
  const double n0 = cur.norm();
  if (!(n0 > 0)) throw InvalidArgument("initial data vanishes");
  auto record_norm = [&](int s) {
    double nn = cur.norm();
    out.norm_history.emplace_back(s * dt, nn);
    out.max_norm_drift = std::max(out.max_norm_drift, std::abs(nn - n0) / n0);
    out.max_boundary_mass = std::max(out.max_boundary_mass, cur.boundary_mass());
  };
  auto record_snapshot = [&](int s) {
    double bm = cur.boundary_mass();
    if (bm > boundary_tol)
      throw BoundaryContamination("boundary mass " + std::to_string(bm) + " at snapshot t = " +
                                  std::to_string(s * dt));
    Snapshot snap{s * dt, cur};
    snap.field.values *= phase(s * dt);
    out.snapshots.push_back(std::move(snap));
  };
  record_norm(0);
  record_snapshot(0);
  const cplx ia(0, a);
  Apply lhs = [&](const CVec& u) -> CVec { return u - ia * H(u); };
  size_t next = 1;
  for (int s = 1; s <= nsteps; ++s) {
    CVec rhs = cur.values + ia * H(cur.values);
    auto res = detail::gmres(lhs, precond, rhs, cur.values, tol);
    if (!res.converged)
      throw LinearSolveFailure("Crank-Nicolson solve stalled at residual " + std::to_string(res.relative_residual));
    cur.values = std::move(res.x);
    out.linear_iterations += res.iterations;
    out.max_linear_iterations = std::max(out.max_linear_iterations, res.iterations);
    ++out.steps;
    if (s % norm_every == 0 || s == nsteps) record_norm(s);
    if (next < snaps.size() && snaps[next] == s) {
      record_snapshot(s);
      ++next;
    }
  }
  return out;
}

}  // namespace

CVec sample_cell_function(const CVec& cell_values, int dimension, int M, const WaveField& g, double eps) {
  TrigInterpolant ti(dimension, M, cell_values);
  if (dimension == 1) return ti.sample_line(g.node(0)(0) / eps, g.spacing() / eps, g.size());
  CVec out(g.size());
  for (int j = 0; j < g.size(); ++j) out(j) = ti(g.node(j) / eps);
  return out;
}

namespace {

int cell_points(const BlochEigenpair& pair, int dimension) {
  int M = dimension == 1 ? int(pair.psi.size()) : int(std::lround(std::sqrt(double(pair.psi.size()))));
  if ((dimension == 1 ? M : M * M) != pair.psi.size()) throw InvalidArgument("eigenvector size is not a cell grid");
  return M;
}

// x-frame grid matching a z-frame profile.
WaveField x_grid_for(const WaveField& v, double eps, const SmallVec& xn) {
  return WaveField(v.dimension, std::sqrt(eps) * v.L, v.P, xn, Frame::x_frame);
}

CVec bloch_phase(const WaveField& xg, const SmallVec& theta, double eps) {
  CVec out(xg.size());
  for (int j = 0; j < xg.size(); ++j) out(j) = std::polar(1.0, 2 * kPi * theta.dot(xg.node(j)) / eps);
  return out;
}

// psi v + sqrt(eps) sum_k ((1/2 i pi) psi_theta_k d_k v + z_k psi_x_k v) on the x grid.
CVec two_scale_ansatz(const WaveField& v, const WaveField& xg, const BlochEigenpair& pair,
                      const BandDerivatives* derivs, double eps) {
  const int N = v.dimension;
  const int M = cell_points(pair, N);
  CVec psi = sample_cell_function(pair.psi, N, M, xg, eps);
  CVec out = psi.cwiseProduct(v.values);
  if (!derivs) return out;
  if (int(derivs->corr_theta.size()) != N || int(derivs->corr_x.size()) != N)
    throw MissingCorrectors("first-order ansatz needs both corrector families");
  Box box(v);
  const double se = std::sqrt(eps);
  const cplx inv2ipi = 1.0 / kTwoPiI;
  for (int k = 0; k < N; ++k) {
    CVec pt = sample_cell_function(derivs->corr_theta[k], N, M, xg, eps);
    CVec px = sample_cell_function(derivs->corr_x[k], N, M, xg, eps);
    CVec dv = box.derivative(v.values, k);
    for (int j = 0; j < v.size(); ++j) {
      double zk = v.node(j)(k);
      out(j) += se * (inv2ipi * pt(j) * dv(j) + zk * px(j) * v.values(j));
    }
  }
  return out;
}

void require_z_frame(const WaveField& v, const char* what) {
  if (v.frame != Frame::z_frame) throw FrameMismatch(std::string(what) + " must be given in the z frame");
}

}  // namespace

WaveField build_initial_data(double eps, const BlochEigenpair& pair, const CriticalPoint& cp, const WaveField& v0,
                             const InitialDataOptions& options) {
  require_z_frame(v0, "initial profile");
  if (!(eps > 0)) throw InvalidArgument("eps must be positive");
  if (cp.location.dimension() != v0.dimension) throw InvalidArgument("critical point and profile dimensions differ");
  WaveField xg = x_grid_for(v0, eps, cp.location.x);
  const double periods = 2 * xg.L / eps;
  if (std::abs(periods - std::round(periods)) > 1e-8 * (1 + periods) || std::round(periods) < 1)
    throw CommensurabilityError("box width " + std::to_string(2 * xg.L) + " is not a whole number of periods " +
                                std::to_string(eps));
  const double ppc = xg.P / std::round(periods);
  if (ppc < options.min_points_per_cell)
    throw ResolutionError(std::to_string(ppc) + " points per period, need " +
                          std::to_string(options.min_points_per_cell));
  if (v0.boundary_mass() > 1e-10)
    throw BoundaryContamination("initial profile carries boundary mass " + std::to_string(v0.boundary_mass()));
  xg.values = bloch_phase(xg, cp.location.theta, eps).cwiseProduct(two_scale_ansatz(v0, xg, pair, options.correctors, eps));
  return xg;
}

namespace {

struct EpsilonOperator {
  Box box;
  Scheme scheme;
  int N;
  std::vector<std::vector<RVec>> A;  // A[a][b] at nodes
  std::vector<std::vector<RVec>> Aplus;  // FD2 diagonal flux averages A[a][a] at j + e_a/2
  RVec V;
  double Amean[2][2] = {{0, 0}, {0, 0}};
  double Vmean = 0;

  EpsilonOperator(const CoefficientField& field, const WaveField& g, double eps, double shift, Scheme s)
      : box(g), scheme(s), N(g.dimension) {
    const int n = g.size();
    A.assign(N, std::vector<RVec>(N, RVec(n)));
    V.resize(n);
    for (int j = 0; j < n; ++j) {
      SmallVec x = g.node(j);
      SmallVec y = x / eps;
      SmallMat a = field.A(x, y);
      for (int p = 0; p < N; ++p)
        for (int q = 0; q < N; ++q) A[p][q](j) = a(p, q);
      V(j) = (field.c(x, y) - shift) / (eps * eps);
    }
    for (int p = 0; p < N; ++p)
      for (int q = 0; q < N; ++q) Amean[p][q] = A[p][q].mean();
    Vmean = V.mean();
    if (scheme == Scheme::finite_difference_2) {
      Aplus.assign(N, {});
      for (int p = 0; p < N; ++p) {
        RVec avg(n);
        for (int j = 0; j < n; ++j) avg(j) = 0.5 * (A[p][p](j) + A[p][p](shift_index(j, p, +1)));
        Aplus[p].push_back(avg);
      }
    }
  }

  int shift_index(int j, int axis, int d) const {
    const int P = box.P;
    if (N == 1) return ((j + d) % P + P) % P;
    int i0 = j / P, i1 = j % P;
    if (axis == 0) i0 = ((i0 + d) % P + P) % P;
    else i1 = ((i1 + d) % P + P) % P;
    return i0 * P + i1;
  }

  // D+ u = (u(j + e) - u(j)) / h, D- u = (u(j) - u(j - e)) / h, and their adjoints.
  CVec dplus(const CVec& u, int a) const {
    CVec o(u.size());
    for (int j = 0; j < u.size(); ++j) o(j) = (u(shift_index(j, a, 1)) - u(j)) / box.h;
    return o;
  }
  CVec dminus(const CVec& u, int a) const {
    CVec o(u.size());
    for (int j = 0; j < u.size(); ++j) o(j) = (u(j) - u(shift_index(j, a, -1))) / box.h;
    return o;
  }
  CVec dplus_adj(const CVec& w, int a) const {
    CVec o(w.size());
    for (int j = 0; j < w.size(); ++j) o(j) = (w(shift_index(j, a, -1)) - w(j)) / box.h;
    return o;
  }
  CVec dminus_adj(const CVec& w, int a) const {
    CVec o(w.size());
    for (int j = 0; j < w.size(); ++j) o(j) = (w(j) - w(shift_index(j, a, 1))) / box.h;
    return o;
  }

  CVec apply(const CVec& u) const {
    CVec out = V.cwiseProduct(u);
    if (scheme == Scheme::pseudo_spectral) {
      std::vector<CVec> g;
      for (int b = 0; b < N; ++b) g.push_back(box.derivative(u, b));
      for (int a = 0; a < N; ++a) {
        CVec flux = CVec::Zero(u.size());
        for (int b = 0; b < N; ++b) flux += A[a][b].cwiseProduct(g[b]);
        out -= box.derivative(flux, a);
      }
      return out;
    }
    for (int a = 0; a < N; ++a) {
      out += dplus_adj(Aplus[a][0].cwiseProduct(dplus(u, a)), a);
      for (int b = 0; b < N; ++b) {
        if (a == b) continue;
        RVec w = 0.5 * A[a][b];
        out += dplus_adj(w.cwiseProduct(dplus(u, b)), a);
        out += dminus_adj(w.cwiseProduct(dminus(u, b)), a);
      }
    }
    return out;
  }

  double symbol(int q) const {
    double s = Vmean;
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b) {
        double ka = box.k(q, a), kb = box.k(q, b);
        if (scheme == Scheme::finite_difference_2) {
          if (a == b) {
            double sa = 2 * std::sin(0.5 * ka * box.h) / box.h;
            s += Amean[a][a] * sa * sa;
          } else {
            s += Amean[a][b] * std::sin(ka * box.h) * std::sin(kb * box.h) / (box.h * box.h);
          }
        } else {
          s += Amean[a][b] * ka * kb;
        }
      }
    return s;
  }
};

}  // namespace

EvolutionResult evolve_epsilon(const CoefficientField& field, const WaveField& u0, double eps, double T, double dt,
                               const EpsilonOptions& options) {
  if (u0.frame != Frame::x_frame) throw FrameMismatch("epsilon problem runs in the x frame");
  if (field.dimension() != u0.dimension) throw InvalidArgument("field and data dimensions differ");
  if (!(eps > 0)) throw InvalidArgument("eps must be positive");
  if (options.band_energy) {
    double rem = std::abs(*options.band_energy - options.energy_shift);
    if (rem > 0 && dt > eps * options.dt_factor_scale / rem)
      throw InvalidArgument("dt exceeds eps * " + std::to_string(options.dt_factor_scale) + " / |lambda - shift|");
  }
  EpsilonOperator op(field, u0, eps, options.energy_shift, options.scheme);
  const double a = eps * dt / 2;
  Apply H = [&](const CVec& u) { return op.apply(u); };
  Apply pre = [&](const CVec& u) {
    return op.box.multiplier(u, [&](int q) { return 1.0 / cplx(1.0, -a * op.symbol(q)); });
  };
  const double shift = options.energy_shift;
  auto phase = [&](double t) { return std::polar(1.0, shift * t / eps); };
  auto out = crank_nicolson(u0, H, pre, a, T, dt, options.snapshot_times, options.solve_tol, options.boundary_tol,
                            std::max(1, options.norm_every), phase);
  out.energy_shift = shift;
  return out;
}

CVec apply_homogenized(const HomogenizedTensors& t, const WaveField& like, const CVec& v, DriftForm form) {
  const int N = like.dimension;
  if (t.dimension != N) throw InvalidArgument("tensor and grid dimensions differ");
  Box box(like);
  const int n = like.size();
  std::vector<RVec> z(N, RVec(n));
  for (int j = 0; j < n; ++j) {
    SmallVec zz = like.node(j);
    for (int k = 0; k < N; ++k) z[k](j) = zz(k);
  }
  CVec out = box.multiplier(v, [&](int q) {
    double s = 0;
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b) s += t.A_star(a, b) * box.k(q, a) * box.k(q, b);
    return cplx(s, 0);
  });
  std::vector<CVec> g;
  for (int k = 0; k < N; ++k) g.push_back(box.derivative(v, k));
  for (int k = 0; k < N; ++k)
    for (int h = 0; h < N; ++h) {
      const cplx b = t.B_star(k, h);
      if (b == cplx(0)) continue;
      CVec zg = z[h].cwiseProduct(g[k]);
      if (form == DriftForm::hom) {
        CVec zv = z[h].cwiseProduct(v);
        out += 0.5 * b * (box.derivative(zv, k) + zg);
      } else {
        out += b * zg;
      }
    }
  const cplx z0 = form == DriftForm::hom ? zero_order_coefficient(t, DriftForm::hom) : std::conj(t.c_star);
  for (int j = 0; j < n; ++j) {
    double q = 0;
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b) q += t.D_star(a, b) * z[a](j) * z[b](j);
    out(j) += (z0 + q) * v(j);
  }
  return out;
}

EvolutionResult evolve_homogenized(const HomogenizedTensors& t, const WaveField& v0, double T, double dt,
                                   const HomogenizedOptions& options) {
  require_z_frame(v0, "homogenized data");
  if (t.dimension != v0.dimension) throw InvalidArgument("tensor and data dimensions differ");
  Box box(v0);
  const double a = dt / 2;
  const double base = zero_order_coefficient(t, options.form).real();
  Apply H = [&](const CVec& u) { return apply_homogenized(t, v0, u, options.form); };
  Apply pre = [&](const CVec& u) {
    return box.multiplier(u, [&](int q) {
      double s = base;
      for (int i = 0; i < t.dimension; ++i)
        for (int j = 0; j < t.dimension; ++j) s += t.A_star(i, j) * box.k(q, i) * box.k(q, j);
      return 1.0 / cplx(1.0, -a * s);
    });
  };
  auto phase = [](double) { return cplx(1, 0); };
  return crank_nicolson(v0, H, pre, a, T, dt, options.snapshot_times, options.solve_tol, options.boundary_tol,
                        std::max(1, options.norm_every), phase);
}

DecayEstimate decay_rate(const WaveField& phi) {
  DecayEstimate d;
  d.r_min = 0.5 * phi.L;
  d.r_max = 0.8 * phi.L;
  const int bins = 12;
  std::vector<double> sum(bins, 0), rsum(bins, 0);
  std::vector<int> count(bins, 0);
  double peak = 0;
  for (int j = 0; j < phi.size(); ++j) {
    double rho = std::norm(phi.values(j));
    peak = std::max(peak, rho);
    double r = (phi.node(j) - phi.center).norm();
    if (r < d.r_min || r > d.r_max) continue;
    int b = std::min(bins - 1, int((r - d.r_min) / (d.r_max - d.r_min) * bins));
    sum[b] += rho;
    rsum[b] += r;
    ++count[b];
  }
  const double floor = 1e-26 * peak;
  std::vector<double> rs, ls;
  for (int b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    double mean = sum[b] / count[b];
    if (!(mean > floor)) {
      d.underflow = true;
      break;
    }
    rs.push_back(rsum[b] / count[b]);
    ls.push_back(std::log(mean));
  }
  auto fit = [&]() {
    const int m = int(rs.size());
    if (m < 2) return std::numeric_limits<double>::quiet_NaN();
    double mr = 0, ml = 0;
    for (int i = 0; i < m; ++i) mr += rs[i], ml += ls[i];
    mr /= m;
    ml /= m;
    double num = 0, den = 0;
    for (int i = 0; i < m; ++i) num += (rs[i] - mr) * (ls[i] - ml), den += (rs[i] - mr) * (rs[i] - mr);
    return -0.5 * num / den;
  };
  d.resolvable_gamma = fit();
  d.gamma = d.underflow ? std::numeric_limits<double>::infinity() : d.resolvable_gamma;
  return d;
}

double decay_rate_strict(const WaveField& phi) {
  auto d = decay_rate(phi);
  if (d.underflow)
    throw WindowUnderflow("shell density reaches the floor inside the window; resolvable rate " +
                          std::to_string(d.resolvable_gamma));
  return d.gamma;
}

namespace {

RMat implied_joint_hessian(const HomogenizedTensors& t) {
  const int N = t.dimension;
  RMat J(2 * N, 2 * N);
  RMat xt = (kTwoPiI * t.B_star.transpose()).real();
  J.topLeftCorner(N, N) = 2 * t.D_star;
  J.topRightCorner(N, N) = xt;
  J.bottomLeftCorner(N, N) = xt.transpose();
  J.bottomRightCorner(N, N) = 8 * kPi * kPi * t.A_star;
  return J;
}

}  // namespace

EigsReport homogenized_eigs(const HomogenizedTensors& t, int m_max, int dimension, double L, int P) {
  if (t.dimension != dimension) throw InvalidArgument("tensor and box dimensions differ");
  WaveField g(dimension, L, P, SmallVec::Zero(dimension), Frame::z_frame);
  if (m_max < 1 || m_max > g.size()) throw InvalidArgument("m_max out of range");
  RMat J = t.provenance.certified ? t.provenance.joint_hessian : implied_joint_hessian(t);
  auto cls = classify_hessian(J);
  if (cls.definiteness != Definiteness::positive_definite)
    throw NotPositiveDefinite(std::string("joint Hessian is ") + definiteness_name(cls.definiteness));

  const int n = g.size();
  CMat H(n, n);
  CVec e = CVec::Zero(n);
  for (int j = 0; j < n; ++j) {
    e(j) = 1;
    H.col(j) = apply_homogenized(t, g, e, DriftForm::hom);
    e(j) = 0;
  }
  EigsReport rep;
  rep.hermitian_residual = (H - H.adjoint()).cwiseAbs().maxCoeff() / std::max(1.0, H.cwiseAbs().maxCoeff());
  CMat Hs = 0.5 * (H + H.adjoint());
  Eigen::SelfAdjointEigenSolver<CMat> es(Hs);
  if (es.info() != Eigen::Success) throw EigensolverFailure("dense homogenized eigensolver failed");
  const double scale = 1 / std::sqrt(g.cell_volume());
  for (int m = 0; m < m_max; ++m) {
    HomogenizedEigenpair p;
    p.m = m + 1;
    p.sigma = es.eigenvalues()(m);
    p.phi = g;
    p.phi.values = es.eigenvectors().col(m) * scale;
    fix_gauge(p.phi.values);
    CVec r = H * p.phi.values - p.sigma * p.phi.values;
    p.residual = std::sqrt(r.squaredNorm() * g.cell_volume());
    p.decay = decay_rate(p.phi);
    rep.pairs.push_back(std::move(p));
  }
  for (int a = 0; a < m_max; ++a)
    for (int b = 0; b < m_max; ++b) {
      cplx ip = rep.pairs[b].phi.values.dot(rep.pairs[a].phi.values) * g.cell_volume();
      rep.orthonormality_residual = std::max(rep.orthonormality_residual, std::abs(ip - (a == b ? 1.0 : 0.0)));
    }
  rep.boundary_mass = rep.pairs[0].phi.boundary_mass();
  if (rep.boundary_mass > 1e-10)
    throw BoxTooSmall("lowest eigenfunction has boundary mass " + std::to_string(rep.boundary_mass));
  return rep;
}

namespace {

void check_frames(const WaveField& u, const WaveField& v, double eps, const CriticalPoint& cp) {
  if (u.frame != Frame::x_frame || v.frame != Frame::z_frame)
    throw FrameMismatch("expected an x-frame epsilon solution and a z-frame homogenized solution");
  WaveField expect = x_grid_for(v, eps, cp.location.x);
  if (!u.same_grid(expect, 1e-10))
    throw FrameMismatch("x grid is not the image of the z grid under x = x^n + sqrt(eps) z");
}

}  // namespace

WaveField transformed_solution(const EvolutionResult& u, double lambda, double eps, double t) {
  const WaveField& uf = u.at(t).field;
  if (uf.frame != Frame::x_frame) throw FrameMismatch("transformed solution needs an x-frame field");
  WaveField w(uf.dimension, uf.L / std::sqrt(eps), uf.P, SmallVec::Zero(uf.dimension), Frame::z_frame);
  w.values = uf.values * std::polar(1.0, -lambda * t / eps);
  return w;
}

double two_scale_error(const EvolutionResult& u, const EvolutionResult& v, const BlochEigenpair& pair,
                       const CriticalPoint& cp, double eps, double t) {
  const WaveField& uf = u.at(t).field;
  const WaveField& vf = v.at(t).field;
  check_frames(uf, vf, eps, cp);
  const WaveField& v0 = v.at(0).field;
  CVec phase = bloch_phase(uf, cp.location.theta, eps).conjugate() * std::polar(1.0, -pair.lambda * t / eps);
  CVec ve = phase.cwiseProduct(uf.values);
  CVec lead = two_scale_ansatz(vf, uf, pair, nullptr, eps);
  return (ve - lead).squaredNorm() / v0.values.squaredNorm();
}

WaveField corrector_reconstruction(const EvolutionResult& v, const BlochEigenpair& pair,
                                   const BandDerivatives* derivs, const CriticalPoint& cp, double eps, double t) {
  const WaveField& vf = v.at(t).field;
  require_z_frame(vf, "homogenized solution");
  WaveField xg = x_grid_for(vf, eps, cp.location.x);
  WaveField out = vf;
  out.values = bloch_phase(xg, cp.location.theta, eps).cwiseProduct(two_scale_ansatz(vf, xg, pair, derivs, eps));
  return out;
}

}  // namespace twoscale
