#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "twoscale/harness.hpp"

using namespace twoscale;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::vector<std::string> sets;
};

RunConfig resolve(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
  for (const auto& s : o.sets) {
    auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (const char* env = std::getenv("TWOSCALE_OUTPUT_DIR"); env && *env) cfg.output_dir = env;
  cfg.check();
  return cfg;
}

void write(const RunConfig& cfg, const std::string& name, const std::string& content) {
  if (content.empty()) return;
  fs::create_directories(cfg.output_dir);
  fs::path p = fs::path(cfg.output_dir) / name;
  std::ofstream out(p, std::ios::binary);
  out << content;
  if (!out) throw std::runtime_error("cannot write " + p.string());
  std::cout << "wrote " << p.string() << "\n";
}

int fail(const RunConfig& cfg, const StageFailure& f) {
  write(cfg, "error.json", failure_json(f, cfg));
  std::cerr << "stage " << f.stage << " failed: " << f.message << "\n";
  return exit_code(f.error_class);
}

int run(const std::string& cmd, const RunConfig& cfg) {
  std::cout << "config " << cfg.hash() << "\n";
  if (cmd == "bands") {
    auto t = run_bands(cfg);
    write(cfg, "bands.csv", t.csv);
    return 0;
  }
  if (cmd == "critical" || cmd == "tensors" || cmd == "eigs") {
    auto depth = cmd == "critical" ? PipelineDepth::critical
                 : cmd == "tensors" ? PipelineDepth::tensors
                                    : PipelineDepth::eigs;
    auto p = run_pipeline(cfg, depth);
    write(cfg, "critical.json", p.critical_json);
    if (depth != PipelineDepth::critical) write(cfg, "tensors.json", p.tensors_json);
    if (depth == PipelineDepth::eigs) write(cfg, "eigenpairs.csv", p.eigs_csv);
    if (p.failure) return fail(cfg, *p.failure);
    if (p.cp)
      std::cout << "critical point lambda = " << format_number(p.cp->lambda) << " ("
                << definiteness_name(p.cp->definiteness) << ")\n";
    if (p.tensors) std::cout << "identity residual " << format_number(p.tensors->identity_residual) << "\n";
    if (p.eigs)
      for (const auto& e : p.eigs->pairs)
        std::cout << "sigma_" << e.m << " = " << format_number(e.sigma) << "\n";
    return 0;
  }
  if (cmd == "evolve") {
    auto a = run_evolve(cfg);
    write(cfg, "critical.json", a.pipeline.critical_json);
    write(cfg, "tensors.json", a.pipeline.tensors_json);
    if (a.failure) return fail(cfg, *a.failure);
    write(cfg, "snapshots_eps.csv", a.eps_snapshots_csv);
    write(cfg, "snapshots_hom.csv", a.hom_snapshots_csv);
    write(cfg, "norms_eps.csv", a.eps_norms_csv);
    write(cfg, "norms_hom.csv", a.hom_norms_csv);
    write(cfg, "evolve.json", a.summary_json);
    return 0;
  }
  if (cmd == "converge") {
    auto r = run_convergence(cfg);
    if (r.failure) return fail(cfg, *r.failure);
    write(cfg, "convergence.csv", r.csv);
    write(cfg, "convergence.json", r.json);
    for (const auto& row : r.rows) {
      std::cout << "eps " << format_number(row.eps);
      for (double e : row.errors) std::cout << " " << format_number(e);
      std::printf("  (%.1f s)\n", row.runtime_seconds);
    }
    return 0;
  }
  if (cmd == "validate") {
    auto a = run_validate(cfg);
    write(cfg, "validation.json", a.json);
    if (a.failure) return fail(cfg, *a.failure);
    return 0;
  }
  if (cmd == "flow") {
    auto a = run_flow(cfg);
    write(cfg, "flow.csv", a.csv);
    if (a.failure) return fail(cfg, *a.failure);
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Band-edge homogenization experiments"};
  app.require_subcommand(1);
  Options o;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"bands", "band functions over a theta grid"},
      {"critical", "critical-point search and certification"},
      {"tensors", "homogenized tensors at the certified point"},
      {"evolve", "epsilon and homogenized evolutions at the first eps"},
      {"eigs", "eigenmodes of the homogenized operator"},
      {"converge", "two-scale error sweep over the eps list"},
      {"validate", "coefficient checks"},
      {"flow", "Hamiltonian flow of the band function"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", o.config, "key = value config file");
    sub->add_option("-s,--set", o.sets, "override key=value (repeatable)");
  }
  CLI11_PARSE(app, argc, argv);
  const std::string cmd = app.get_subcommands().front()->get_name();
  RunConfig cfg;
  try {
    cfg = resolve(o);
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return exit_code(e.error_class());
  }
  try {
    return run(cmd, cfg);
  } catch (const Error& e) {
    return fail(cfg, StageFailure{cmd, e.code(), e.error_class(), e.what()});
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 3;
  }
}
