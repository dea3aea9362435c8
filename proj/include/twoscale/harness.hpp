#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "twoscale/band_geometry.hpp"
#include "twoscale/errors.hpp"
#include "twoscale/homogenization.hpp"
#include "twoscale/schrodinger.hpp"

namespace twoscale {

/// Experiment configuration read from `key = value` lines ('#' starts a comment).
struct RunConfig {
  int schema = 1;
  std::string preset = "coupled";
  std::string table;           // tabulated field path; overrides preset when set
  double table_floor = 1.0;
  int dimension = 1;
  int cell_points = 64;
  Scheme scheme = Scheme::pseudo_spectral;
  EigenMethod method = EigenMethod::automatic;
  int band = 1;
  int bands = 4;
  std::vector<double> x;       // fixed x for band sweeps (defaults to the origin)
  int theta_points = 64;
  std::vector<std::vector<double>> guesses;  // each: x_1..x_N, theta_1..theta_N
  double box_L = 8.0;
  int box_P = 128;
  int m_max = 6;
  double T = 0.5;
  double dt = 1e-3;
  std::vector<double> eps{1.0 / 16, 1.0 / 32, 1.0 / 64};
  std::vector<double> times{0.25, 0.5};
  double eps_box_min = 6.0;    // z half-width lower bound for the epsilon box
  int points_per_cell = 16;
  DriftForm form = DriftForm::hom;
  bool first_order_data = false;
  double flow_T = 10.0;
  double flow_dt = 1e-2;
  std::vector<double> flow_start;  // x..., theta...; defaults to the certified critical point
  int workers = 0;
  std::string output_dir = "out";

  double tol_critical = 1e-8;
  double tol_identity = 1e-7;
  double tol_quadrature = 1e-6;
  double tol_boundary = 1e-6;
  double tol_norm = 1e-8;

  /// Applies one `key = value` assignment; throws ConfigError.
  void set(const std::string& key, const std::string& value);
  /// Checks the invariants (positive tolerances, decreasing eps, known preset, schema).
  void check() const;

  /// Every key with its normalized value, sorted by key.
  std::map<std::string, std::string> entries() const;
  std::string canonical() const;
  /// FNV-1a 64 of the canonical text, as 16 hex digits.
  std::string hash() const;
  /// `tol.* = value` pairs joined by ';'.
  std::string tolerance_set() const;

  CellDiscretization discretization() const;
  CoefficientField field() const;
  std::vector<BlochPoint> guess_points() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

/// '#'-prefixed provenance lines for CSV outputs.
std::string csv_provenance(const RunConfig& cfg);

/// Formats a double with round-trip precision.
std::string format_number(double v);

/// An error tagged with the pipeline stage that raised it.
struct StageFailure {
  std::string stage;
  std::string code;
  ErrorClass error_class = ErrorClass::numerical;
  std::string message;
};

std::string failure_json(const StageFailure& f, const RunConfig& cfg);
int exit_code(ErrorClass c);

struct BandTable {
  std::vector<double> theta;
  std::vector<std::vector<double>> lambda;  // [theta index][band]
  std::string csv;
};

/// lambda_1..lambda_bands over theta_j = -1/2 + j / theta_points (first axis) at fixed x.
BandTable run_bands(const RunConfig& cfg);

struct PipelineResult {
  std::vector<SearchOutcome> search;
  std::optional<CriticalPoint> cp;
  std::optional<BlochEigenpair> pair;
  std::optional<BandDerivatives> derivs;
  std::optional<HomogenizedTensors> tensors;
  std::optional<EigsReport> eigs;
  std::optional<StageFailure> failure;  // first failed stage; later stages did not run

  std::string critical_json;
  std::string tensors_json;
  std::string eigs_csv;
};

enum class PipelineDepth { critical, tensors, eigs };

/// search -> certify -> assemble -> identity -> eigs, stopping at the first failure.
PipelineResult run_pipeline(const RunConfig& cfg, PipelineDepth depth = PipelineDepth::eigs);

struct ConvergenceRow {
  double eps = 0;
  int P = 0;
  double L_z = 0;
  std::vector<double> errors;  // one per requested time
  double norm_drift_eps = 0;
  double norm_drift_hom = 0;
  double boundary_mass = 0;    // max over the epsilon run
  double runtime_seconds = 0;  // informational, never written to files
};

struct ConvergenceReport {
  std::vector<double> times;
  std::vector<ConvergenceRow> rows;  // decreasing eps
  std::vector<double> slopes;        // log-log slope of error vs eps, per time
  std::optional<StageFailure> failure;
  std::string csv;
  std::string json;
};

/// Builds well-prepared data, evolves both problems and measures the two-scale error for
/// every eps; runs fan out over `workers` threads with order-stable aggregation.
ConvergenceReport run_convergence(const RunConfig& cfg);

struct EvolveArtifacts {
  PipelineResult pipeline;
  std::optional<EvolutionResult> eps_run;
  std::optional<EvolutionResult> hom_run;
  std::vector<double> errors;  // two-scale error at every snapshot time
  std::optional<StageFailure> failure;
  std::string eps_snapshots_csv, hom_snapshots_csv, eps_norms_csv, hom_norms_csv, summary_json;
};

/// Single evolution at eps = cfg.eps.front().
EvolveArtifacts run_evolve(const RunConfig& cfg);

struct FlowArtifacts {
  PhaseTrajectory trajectory;
  std::optional<StageFailure> failure;
  std::string csv;
};

FlowArtifacts run_flow(const RunConfig& cfg);

struct ValidateArtifacts {
  std::optional<ValidationReport> report;
  std::optional<StageFailure> failure;
  std::string json;
};

ValidateArtifacts run_validate(const RunConfig& cfg);

std::string snapshots_csv(const EvolutionResult& r, const RunConfig& cfg);
std::string norms_csv(const EvolutionResult& r, const RunConfig& cfg);
std::string eigs_csv(const EigsReport& r, const RunConfig& cfg);

}  // namespace twoscale
