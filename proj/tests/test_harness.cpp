#include <cmath>

#include "doctest.h"
#include "json.hpp"
#include "twoscale/harness.hpp"

using namespace twoscale;

namespace {

RunConfig cfg_from(const std::string& text) { return parse_config(text); }

// Lowest eigenvalues of the Fourier matrix of -(d + 2 i pi theta)^2 + 2 + cos(2 pi y).
RVec mathieu_oracle(double theta, int K = 40) {
  const int n = 2 * K + 1;
  RMat H = RMat::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    double k = i - K + theta;
    H(i, i) = 4 * kPi * kPi * k * k + 2;
    if (i + 1 < n) H(i, i + 1) = H(i + 1, i) = 0.5;
  }
  return Eigen::SelfAdjointEigenSolver<RMat>(H).eigenvalues();
}

}  // namespace

TEST_CASE("config parsing") {
  auto c = cfg_from(
      "# experiment\n"
      "schema = 1\n"
      "preset = separable   # trailing comment\n"
      "eps = 1/8, 1/16\n"
      "times = 0.1, 0.2\n"
      "T = 0.2\n"
      "guesses = 0.3, 0.1; -0.2, 0.05\n"
      "scheme = fd2\n"
      "tol.identity = 1e-9\n");
  CHECK(c.preset == "separable");
  CHECK(c.eps.size() == 2);
  CHECK(c.eps[1] == doctest::Approx(1.0 / 16));
  CHECK(c.guesses.size() == 2);
  CHECK(c.guesses[1][0] == doctest::Approx(-0.2));
  CHECK(c.scheme == Scheme::finite_difference_2);
  CHECK(c.tol_identity == 1e-9);
  CHECK(c.guess_points().size() == 2);

  CHECK_THROWS_AS(cfg_from("bogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(cfg_from("eps = 1/16, 1/8\n"), ConfigError);
  CHECK_THROWS_AS(cfg_from("eps = 1/16, 1/16\n"), ConfigError);
  CHECK_THROWS_AS(cfg_from("tol.boundary = 0\n"), ConfigError);
  CHECK_THROWS_AS(cfg_from("preset = nowhere\n"), ConfigError);
  CHECK_THROWS_AS(cfg_from("schema = 2\n"), ConfigError);
  CHECK_THROWS_AS(cfg_from("dt = abc\n"), ConfigError);
  CHECK_THROWS_AS(cfg_from("just a line\n"), ConfigError);
  CHECK_THROWS_AS(cfg_from("preset = anisotropic\n"), ConfigError);
}

TEST_CASE("config hash") {
  auto a = cfg_from("preset = coupled\nT = 0.5\n");
  auto b = cfg_from("T = 0.5\npreset = coupled\n");
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 16);
  b.output_dir = "elsewhere";
  b.workers = 3;
  CHECK(a.hash() == b.hash());
  b.set("dt", "2e-3");
  CHECK(a.hash() != b.hash());
  CHECK(a.hash() == RunConfig{}.hash());
  CHECK(csv_provenance(a).find(a.hash()) != std::string::npos);
}

TEST_CASE("exit codes") {
  CHECK(exit_code(ErrorClass::input) == 1);
  CHECK(exit_code(ErrorClass::certificate) == 2);
  CHECK(exit_code(ErrorClass::numerical) == 3);
}

TEST_CASE("free bands") {
  auto c = cfg_from("preset = free\ncell_points = 32\nbands = 4\ntheta_points = 64\n");
  auto t = run_bands(c);
  double worst = 0;
  for (size_t j = 0; j < t.theta.size(); ++j) {
    std::vector<double> exact;
    for (int k = -4; k <= 4; ++k) exact.push_back(4 * kPi * kPi * std::pow(t.theta[j] + k, 2));
    std::sort(exact.begin(), exact.end());
    for (int b = 0; b < 4; ++b) worst = std::max(worst, std::abs(t.lambda[j][b] - exact[b]));
  }
  CHECK(worst < 1e-9);
  CHECK(run_bands(c).csv == t.csv);
  c.workers = 1;
  CHECK(run_bands(c).csv == t.csv);
}

TEST_CASE("Mathieu band edge") {
  auto c = cfg_from("preset = mathieu\nbands = 2\ntheta_points = 8\n");
  auto t = run_bands(c);
  CHECK(t.theta[0] == -0.5);
  RVec oracle = mathieu_oracle(0.5);
  double gap = t.lambda[0][1] - t.lambda[0][0];
  CHECK(gap > 0);
  CHECK(std::abs(t.lambda[0][0] - oracle(0)) < 1e-8);
  CHECK(std::abs(gap - (oracle(1) - oracle(0))) < 1e-8);
}

TEST_CASE("separable pipeline") {
  auto c = cfg_from("preset = separable\nguesses = 0.3, 0.1\n");
  auto p = run_pipeline(c);
  REQUIRE_FALSE(p.failure);
  auto j = nlohmann::json::parse(p.tensors_json);
  CHECK(j["config_hash"] == c.hash());
  CHECK(j["tensors"]["identity_residual"].get<double>() < 1e-12);
  CHECK(j["tensors"]["D_star"][0][0].get<double>() == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(p.eigs->pairs.size() == 6);
  CHECK(p.eigs_csv.find("m,sigma,gamma_hat") != std::string::npos);
}

TEST_CASE("indefinite preset stops before the eigenmodes") {
  auto p = run_pipeline(cfg_from("preset = inverted\n"));
  REQUIRE(p.failure);
  CHECK(p.failure->stage == "eigs");
  CHECK(p.failure->code == "NotPositiveDefinite");
  CHECK(exit_code(p.failure->error_class) == 2);
  CHECK_FALSE(p.eigs);
  CHECK_FALSE(p.tensors_json.empty());
  auto j = nlohmann::json::parse(failure_json(*p.failure, RunConfig{}));
  CHECK(j["stage"] == "eigs");
  CHECK(j["class"] == "certificate");
}

TEST_CASE("coupled pipeline produces every artifact") {
  auto c = cfg_from("preset = coupled\n");
  auto p = run_pipeline(c);
  REQUIRE_FALSE(p.failure);
  CHECK(p.cp->definiteness == Definiteness::positive_definite);
  CHECK_FALSE(p.critical_json.empty());
  CHECK_FALSE(p.tensors_json.empty());
  CHECK_FALSE(p.eigs_csv.empty());
  for (const auto& e : p.eigs->pairs) CHECK(e.decay.gamma > 0);
  CHECK(run_pipeline(c).tensors_json == p.tensors_json);
}

TEST_CASE("search failure carries a stage tag") {
  auto p = run_pipeline(cfg_from("preset = coupled\nguesses = 40, 0.1\n"));
  REQUIRE(p.failure);
  CHECK(p.failure->stage == "search");
  CHECK(p.failure->error_class == ErrorClass::numerical);
}

TEST_CASE("free convergence sweep is exact") {
  auto c = cfg_from("preset = free\ncell_points = 32\nguesses = 0, 0.1\neps = 1/16, 1/32\ntimes = 0.1, 0.2\nT = 0.2\n");
  auto r = run_convergence(c);
  REQUIRE_FALSE(r.failure);
  REQUIRE(r.rows.size() == 2);
  for (const auto& row : r.rows) {
    for (double e : row.errors) CHECK(e < 1e-8);
    CHECK(row.norm_drift_eps < 1e-8);
    CHECK(row.norm_drift_hom < 1e-8);
  }
}

TEST_CASE("coupled convergence sweep") {
  auto c = cfg_from("preset = coupled\neps = 1/16, 1/32\ntimes = 0.25\nT = 0.25\ntol.boundary = 1e-4\nworkers = 2\n");
  auto r = run_convergence(c);
  REQUIRE_FALSE(r.failure);
  CHECK(r.rows[1].errors[0] < r.rows[0].errors[0]);
  CHECK(r.slopes[0] > 0);
  for (const auto& row : r.rows) CHECK(row.norm_drift_eps < 1e-8);
  CHECK(r.csv.find(c.hash()) != std::string::npos);
  auto j = nlohmann::json::parse(r.json);
  CHECK(j["rows"].size() == 2);
  c.workers = 1;
  CHECK(run_convergence(c).csv == r.csv);
}

TEST_CASE("sweep rejects eps that do not tile the box") {
  auto r = run_convergence(cfg_from("preset = free\ncell_points = 32\neps = 0.07\ntimes = 0.1\nT = 0.1\n"));
  REQUIRE(r.failure);
  CHECK(r.failure->code == "CommensurabilityError");
}

TEST_CASE("flow from the certified point") {
  auto a = run_flow(cfg_from("preset = coupled\nflow_T = 1\nflow_dt = 0.1\n"));
  REQUIRE_FALSE(a.failure);
  CHECK(a.trajectory.complete);
  CHECK((a.trajectory.states.back().x - a.trajectory.states.front().x).norm() < 1e-10);
  CHECK(a.csv.find("t,x_1,theta_1,lambda") != std::string::npos);
}

TEST_CASE("validate report") {
  auto a = run_validate(cfg_from("preset = coupled\n"));
  REQUIRE_FALSE(a.failure);
  auto j = nlohmann::json::parse(a.json);
  CHECK(j["coercivity_min"].get<double>() > 0);
  CHECK(j["periodic"].get<bool>());
}

TEST_CASE("evolve artifacts") {
  auto a = run_evolve(cfg_from("preset = coupled\neps = 1/16\ntimes = 0.02\nT = 0.02\n"));
  REQUIRE_FALSE(a.failure);
  CHECK(a.errors.front() < 1e-12);
  CHECK(a.eps_snapshots_csv.find("t,index,re,im") != std::string::npos);
  CHECK(a.hom_norms_csv.find("t,norm") != std::string::npos);
  auto j = nlohmann::json::parse(a.summary_json);
  CHECK(j["snapshots"].size() == 2);
}
