#include <algorithm>
#include <cmath>
#include <future>
#include <thread>

#include "twoscale/band_geometry.hpp"
#include "twoscale/errors.hpp"

namespace twoscale {

const char* definiteness_name(Definiteness d) {
  switch (d) {
    case Definiteness::positive_definite: return "positive_definite";
    case Definiteness::negative_definite: return "negative_definite";
    case Definiteness::indefinite: return "indefinite";
    default: return "semidefinite";
  }
}

HessianClassification classify_hessian(const RMat& hessian) {
  HessianClassification c;
  RMat sym = 0.5 * (hessian + hessian.transpose());
  Eigen::SelfAdjointEigenSolver<RMat> es(sym);
  c.eigenvalues = es.eigenvalues();
  c.pd_tol = 1e-8 * (1 + hessian.cwiseAbs().maxCoeff());
  double lo = c.eigenvalues.minCoeff(), hi = c.eigenvalues.maxCoeff();
  if (lo > c.pd_tol) {
    c.definiteness = Definiteness::positive_definite;
  } else if (hi < -c.pd_tol) {
    c.definiteness = Definiteness::negative_definite;
  } else if (lo < -c.pd_tol && hi > c.pd_tol) {
    c.definiteness = Definiteness::indefinite;
  } else {
    c.definiteness = Definiteness::semidefinite;
  }
  return c;
}

HessianClassification classify_hessian(const CriticalPoint& cp) { return classify_hessian(cp.hessian); }

namespace {

struct Evaluation {
  BandDerivatives d;
  RVec F;
};

Evaluation evaluate(const CoefficientField& field, int n, const BlochPoint& p, const CellDiscretization& disc,
                    const HessianOptions& hopt) {
  CellOperator op(field, p, disc);
  Evaluation e{band_derivatives(op, n, hopt), RVec()};
  const int N = p.dimension();
  e.F.resize(2 * N);
  e.F << e.d.grad_x, e.d.grad_theta;
  return e;
}

BlochPoint step(const BlochPoint& p, const RVec& dz, double alpha) {
  const int N = p.dimension();
  SmallVec x = p.x, t = p.theta;
  for (int k = 0; k < N; ++k) {
    x(k) += alpha * dz(k);
    t(k) += alpha * dz(N + k);
  }
  return BlochPoint(x, t);
}

}  // namespace

CriticalPoint find_critical_point(const CoefficientField& field, int n, const BlochPoint& guess,
                                  const CellDiscretization& disc, const NewtonOptions& options) {
  HessianOptions fast = options.hessian;
  fast.check_quadrature = false;
  BlochPoint p(guess.x, guess.theta);
  auto check_domain = [&](const BlochPoint& q) {
    if (q.x.cwiseAbs().maxCoeff() > options.x_bound)
      throw LeftSearchDomain("Newton iterate left |x| <= " + std::to_string(options.x_bound));
  };
  check_domain(p);
  Evaluation cur = evaluate(field, n, p, disc, fast);
  int it = 0;
  bool converged = cur.F.norm() < options.critical_tol;
  // Past the tolerance, keep polishing while Newton still gains (quadratic regime).
  int polish = 0;
  while (it < options.max_iter && polish < 3) {
    if (converged) ++polish;
    RMat J = cur.d.joint_hessian();
    Eigen::CompleteOrthogonalDecomposition<RMat> cod(J);
    cod.setThreshold(1e-10);
    RVec dz = -cod.solve(cur.F);
    double f0 = cur.F.norm();
    double alpha = 1.0;
    std::optional<Evaluation> next;
    BlochPoint trial;
    while (true) {
      trial = step(p, dz, alpha);
      check_domain(trial);
      Evaluation e = evaluate(field, n, trial, disc, fast);
      if (e.F.norm() < (1 - 1e-4 * alpha) * f0 || alpha < 1.0 / 64) {
        next = std::move(e);
        break;
      }
      alpha *= 0.5;
    }
    ++it;
    if (converged && !(next->F.norm() < 0.5 * f0)) break;
    p = trial;
    cur = std::move(*next);
    if (cur.F.norm() < options.critical_tol) converged = true;
  }
  if (!converged)
    throw NoConvergence("Newton did not reach |grad lambda| < " + std::to_string(options.critical_tol) + " in " +
                        std::to_string(options.max_iter) + " iterations");

  // Final certificate with the quadrature consistency check.
  Evaluation fin = evaluate(field, n, p, disc, options.hessian);
  CriticalPoint cp;
  cp.n = n;
  cp.location = p;
  cp.lambda = fin.d.lambda;
  cp.grad_norm = fin.F.norm();
  cp.hessian = fin.d.joint_hessian();
  auto cls = classify_hessian(cp.hessian);
  cp.definiteness = cls.definiteness;
  cp.hessian_eigenvalues = cls.eigenvalues;
  cp.iterations = it;
  return cp;
}

std::vector<SearchOutcome> multi_start_search(const CoefficientField& field, int n,
                                              const std::vector<BlochPoint>& guesses,
                                              const CellDiscretization& disc, const NewtonOptions& options,
                                              int workers) {
  if (workers <= 0) workers = std::max(1u, std::thread::hardware_concurrency());
  std::vector<SearchOutcome> out(guesses.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < guesses.size(); i = next++) {
      out[i].guess = guesses[i];
      try {
        out[i].point = find_critical_point(field, n, guesses[i], disc, options);
      } catch (const Error& e) {
        out[i].error = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < std::min<int>(workers, int(guesses.size())); ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return out;
}

namespace {

struct Phase {
  RVec x, t;
};

Phase velocity(const CoefficientField& field, int n, const Phase& s, const CellDiscretization& disc, double* lam) {
  BlochPoint p(SmallVec(s.x), SmallVec(s.t));
  CellOperator op(field, p, disc);
  auto pairs = solve_bands(op, n + 1);
  spectral_gap(pairs, n);
  BandGradient g = grad_lambda(op, pairs[n - 1]);
  if (lam) *lam = pairs[n - 1].lambda;
  return {g.grad_theta, -g.grad_x};
}

}  // namespace

PhaseTrajectory hamiltonian_flow(const CoefficientField& field, int n, const BlochPoint& start, double T, double dt,
                                 const CellDiscretization& disc) {
  if (!(dt > 0) || !(T >= 0)) throw InvalidArgument("flow needs dt > 0 and T >= 0");
  PhaseTrajectory traj;
  Phase s{RVec(start.x), RVec(start.theta)};
  const int steps = int(std::llround(T / dt));
  auto record = [&](double t, double lam) {
    traj.times.push_back(t);
    traj.states.emplace_back(SmallVec(s.x), SmallVec(s.t));
    traj.lambda.push_back(lam);
  };
  try {
    double lam = 0;
    Phase k1 = velocity(field, n, s, disc, &lam);
    record(0.0, lam);
    for (int i = 0; i < steps; ++i) {
      auto shifted = [&](const Phase& k, double a) { return Phase{s.x + a * k.x, s.t + a * k.t}; };
      Phase k2 = velocity(field, n, shifted(k1, dt / 2), disc, nullptr);
      Phase k3 = velocity(field, n, shifted(k2, dt / 2), disc, nullptr);
      Phase k4 = velocity(field, n, shifted(k3, dt), disc, nullptr);
      s.x += dt / 6 * (k1.x + 2 * k2.x + 2 * k3.x + k4.x);
      s.t += dt / 6 * (k1.t + 2 * k2.t + 2 * k3.t + k4.t);
      s.t = RVec(wrap_theta(SmallVec(s.t)));
      k1 = velocity(field, n, s, disc, &lam);
      record((i + 1) * dt, lam);
    }
  } catch (const DegenerateBand& e) {
    traj.complete = false;
    traj.abort_reason = e.what();
  }
  return traj;
}

}  // namespace twoscale
