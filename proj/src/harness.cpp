#include "twoscale/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace twoscale {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

double parse_number(const std::string& key, const std::string& s) {
  auto slash = s.find('/');
  try {
    if (slash != std::string::npos) {
      double a = parse_number(key, trim(s.substr(0, slash)));
      double b = parse_number(key, trim(s.substr(slash + 1)));
      if (b == 0) throw ConfigError(key + ": division by zero");
      return a / b;
    }
    size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + s + "' is not a number");
  }
}

int parse_int(const std::string& key, const std::string& s) {
  double v = parse_number(key, s);
  if (v != std::floor(v) || std::abs(v) > 1e9) throw ConfigError(key + ": '" + s + "' is not an integer");
  return int(v);
}

std::vector<double> parse_list(const std::string& key, const std::string& s) {
  std::vector<double> out;
  if (trim(s).empty()) return out;
  for (const auto& p : split(s, ',')) out.push_back(parse_number(key, p));
  return out;
}

std::string join(const std::vector<double>& v, const char* sep = ",") {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + format_number(v[i]);
  return out;
}

const char* method_name(EigenMethod m) {
  switch (m) {
    case EigenMethod::dense: return "dense";
    case EigenMethod::iterative: return "iterative";
    default: return "auto";
  }
}

ErrorClass class_of_code(const std::string& code) {
  static const std::map<std::string, ErrorClass> table = {
      {"InvalidArgument", ErrorClass::input},         {"CoercivityViolation", ErrorClass::certificate},
      {"AsymmetryError", ErrorClass::certificate},    {"DerivativeUnavailable", ErrorClass::numerical},
      {"DiscretizationTooCoarse", ErrorClass::input}, {"EigensolverFailure", ErrorClass::numerical},
      {"DegenerateBand", ErrorClass::certificate},    {"SingularSolve", ErrorClass::numerical},
      {"QuadratureInconsistency", ErrorClass::certificate}, {"NoConvergence", ErrorClass::numerical},
      {"LeftSearchDomain", ErrorClass::numerical},    {"MissingCorrectors", ErrorClass::input},
      {"IdentityViolation", ErrorClass::certificate}, {"ResolutionError", ErrorClass::input},
      {"CommensurabilityError", ErrorClass::input},   {"BoundaryContamination", ErrorClass::certificate},
      {"LinearSolveFailure", ErrorClass::numerical},  {"NotPositiveDefinite", ErrorClass::certificate},
      {"BoxTooSmall", ErrorClass::certificate},       {"WindowUnderflow", ErrorClass::numerical},
      {"FrameMismatch", ErrorClass::input},           {"ConfigError", ErrorClass::input},
  };
  auto it = table.find(code);
  return it == table.end() ? ErrorClass::numerical : it->second;
}

const char* class_name(ErrorClass c) {
  switch (c) {
    case ErrorClass::input: return "input";
    case ErrorClass::certificate: return "certificate";
    default: return "numerical";
  }
}

// Runs fn on every stage, recording the first failure.
template <class F>
bool stage(std::optional<StageFailure>& failure, const std::string& name, F&& fn) {
  if (failure) return false;
  try {
    fn();
    return true;
  } catch (const Error& e) {
    failure = StageFailure{name, e.code(), e.error_class(), e.what()};
  } catch (const std::exception& e) {
    failure = StageFailure{name, "InternalError", ErrorClass::numerical, e.what()};
  }
  return false;
}

void parallel_for(int count, int workers, const std::function<void(int)>& fn) {
  int w = workers > 0 ? workers : int(std::max(1u, std::thread::hardware_concurrency()));
  w = std::min(w, count);
  if (w <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < w; ++t)
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) fn(i);
    });
  for (auto& th : pool) th.join();
}

json matrix_json(const RMat& m) {
  json a = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    a.push_back(row);
  }
  return a;
}

json complex_json(cplx z) { return json::array({z.real(), z.imag()}); }

json cmatrix_json(const CMat& m) {
  json a = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(complex_json(m(i, j)));
    a.push_back(row);
  }
  return a;
}

json vec_json(const Eigen::Ref<const RVec>& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json provenance(const RunConfig& cfg) {
  json p;
  p["config_hash"] = cfg.hash();
  p["tolerances"] = cfg.tolerance_set();
  p["schema"] = cfg.schema;
  return p;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

void RunConfig::set(const std::string& raw_key, const std::string& raw_value) {
  const std::string key = trim(raw_key), v = trim(raw_value);
  if (key == "schema") schema = parse_int(key, v);
  else if (key == "preset") preset = v;
  else if (key == "table") table = v;
  else if (key == "table_floor") table_floor = parse_number(key, v);
  else if (key == "dimension") dimension = parse_int(key, v);
  else if (key == "cell_points") cell_points = parse_int(key, v);
  else if (key == "scheme") {
    try {
      scheme = parse_scheme(v);
    } catch (const Error&) {
      throw ConfigError("scheme: unknown value '" + v + "'");
    }
  } else if (key == "method") {
    if (v == "auto") method = EigenMethod::automatic;
    else if (v == "dense") method = EigenMethod::dense;
    else if (v == "iterative") method = EigenMethod::iterative;
    else throw ConfigError("method: expected auto, dense or iterative");
  } else if (key == "band") band = parse_int(key, v);
  else if (key == "bands") bands = parse_int(key, v);
  else if (key == "x") x = parse_list(key, v);
  else if (key == "theta_points") theta_points = parse_int(key, v);
  else if (key == "guesses") {
    guesses.clear();
    for (const auto& g : split(v, ';'))
      if (!g.empty()) guesses.push_back(parse_list(key, g));
  } else if (key == "box_L") box_L = parse_number(key, v);
  else if (key == "box_P") box_P = parse_int(key, v);
  else if (key == "m_max") m_max = parse_int(key, v);
  else if (key == "T") T = parse_number(key, v);
  else if (key == "dt") dt = parse_number(key, v);
  else if (key == "eps") eps = parse_list(key, v);
  else if (key == "times") times = parse_list(key, v);
  else if (key == "eps_box_min") eps_box_min = parse_number(key, v);
  else if (key == "points_per_cell") points_per_cell = parse_int(key, v);
  else if (key == "form") {
    if (v == "hom") form = DriftForm::hom;
    else if (v == "asym") form = DriftForm::asym;
    else throw ConfigError("form: expected hom or asym");
  } else if (key == "initial_data") {
    if (v == "plain") first_order_data = false;
    else if (v == "first_order") first_order_data = true;
    else throw ConfigError("initial_data: expected plain or first_order");
  } else if (key == "flow_T") flow_T = parse_number(key, v);
  else if (key == "flow_dt") flow_dt = parse_number(key, v);
  else if (key == "flow_start") flow_start = parse_list(key, v);
  else if (key == "workers") workers = parse_int(key, v);
  else if (key == "output_dir") output_dir = v;
  else if (key == "tol.critical") tol_critical = parse_number(key, v);
  else if (key == "tol.identity") tol_identity = parse_number(key, v);
  else if (key == "tol.quadrature") tol_quadrature = parse_number(key, v);
  else if (key == "tol.boundary") tol_boundary = parse_number(key, v);
  else if (key == "tol.norm") tol_norm = parse_number(key, v);
  else throw ConfigError("unknown key '" + key + "'");
}

void RunConfig::check() const {
  if (schema != 1) throw ConfigError("unsupported schema " + std::to_string(schema));
  if (dimension != 1 && dimension != 2) throw ConfigError("dimension must be 1 or 2");
  if (table.empty() && !preset_supports(preset, dimension))
    throw ConfigError("unknown preset '" + preset + "' for dimension " + std::to_string(dimension));
  for (double t : {tol_critical, tol_identity, tol_quadrature, tol_boundary, tol_norm, table_floor})
    if (!(t > 0)) throw ConfigError("tolerances and the coercivity floor must be positive");
  if (band < 1 || bands < band || bands > 32) throw ConfigError("need 1 <= band <= bands <= 32");
  if (theta_points < 1) throw ConfigError("theta_points must be positive");
  if (!x.empty() && int(x.size()) != dimension) throw ConfigError("x has the wrong dimension");
  for (const auto& g : guesses)
    if (int(g.size()) != 2 * dimension) throw ConfigError("each guess needs x and theta components");
  if (!flow_start.empty() && int(flow_start.size()) != 2 * dimension)
    throw ConfigError("flow_start needs x and theta components");
  if (eps.empty()) throw ConfigError("eps list is empty");
  for (size_t i = 0; i < eps.size(); ++i) {
    if (!(eps[i] > 0)) throw ConfigError("eps must be positive");
    if (i && !(eps[i] < eps[i - 1])) throw ConfigError("eps list must be strictly decreasing");
  }
  for (size_t i = 0; i < times.size(); ++i) {
    if (!(times[i] > 0) || times[i] > T + 1e-12) throw ConfigError("times must lie in (0, T]");
    if (i && !(times[i] > times[i - 1])) throw ConfigError("times must be increasing");
  }
  if (!(dt > 0) || !(T > 0) || !(flow_dt > 0) || !(flow_T > 0)) throw ConfigError("time steps must be positive");
  if (!(box_L > 0) || box_P < 4) throw ConfigError("invalid eigenmode box");
  if (m_max < 1) throw ConfigError("m_max must be positive");
  if (!(eps_box_min > 0) || points_per_cell < 1) throw ConfigError("invalid epsilon box settings");
}

std::map<std::string, std::string> RunConfig::entries() const {
  std::map<std::string, std::string> e;
  e["schema"] = std::to_string(schema);
  e["preset"] = preset;
  e["table"] = table;
  e["table_floor"] = format_number(table_floor);
  e["dimension"] = std::to_string(dimension);
  e["cell_points"] = std::to_string(cell_points);
  e["scheme"] = scheme_name(scheme);
  e["method"] = method_name(method);
  e["band"] = std::to_string(band);
  e["bands"] = std::to_string(bands);
  e["x"] = join(x);
  e["theta_points"] = std::to_string(theta_points);
  std::string g;
  for (size_t i = 0; i < guesses.size(); ++i) g += (i ? ";" : "") + join(guesses[i]);
  e["guesses"] = g;
  e["box_L"] = format_number(box_L);
  e["box_P"] = std::to_string(box_P);
  e["m_max"] = std::to_string(m_max);
  e["T"] = format_number(T);
  e["dt"] = format_number(dt);
  e["eps"] = join(eps);
  e["times"] = join(times);
  e["eps_box_min"] = format_number(eps_box_min);
  e["points_per_cell"] = std::to_string(points_per_cell);
  e["form"] = form == DriftForm::hom ? "hom" : "asym";
  e["initial_data"] = first_order_data ? "first_order" : "plain";
  e["flow_T"] = format_number(flow_T);
  e["flow_dt"] = format_number(flow_dt);
  e["flow_start"] = join(flow_start);
  e["tol.critical"] = format_number(tol_critical);
  e["tol.identity"] = format_number(tol_identity);
  e["tol.quadrature"] = format_number(tol_quadrature);
  e["tol.boundary"] = format_number(tol_boundary);
  e["tol.norm"] = format_number(tol_norm);
  return e;
}

std::string RunConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : entries()) out += k + "=" + v + "\n";
  return out;
}

std::string RunConfig::hash() const {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : canonical()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string RunConfig::tolerance_set() const {
  std::string out;
  for (const auto& [k, v] : entries())
    if (k.rfind("tol.", 0) == 0) out += (out.empty() ? "" : ";") + k + "=" + v;
  return out;
}

CellDiscretization RunConfig::discretization() const {
  CellDiscretization d;
  d.dimension = dimension;
  d.points = cell_points;
  d.scheme = scheme;
  d.method = method;
  return d;
}

CoefficientField RunConfig::field() const {
  if (!table.empty()) return load_tabulated_field(table, dimension, table_floor);
  return make_preset(preset, dimension);
}

std::vector<BlochPoint> RunConfig::guess_points() const {
  std::vector<BlochPoint> out;
  if (guesses.empty()) {
    out.emplace_back(SmallVec::Zero(dimension), SmallVec::Zero(dimension));
    return out;
  }
  for (const auto& g : guesses) {
    SmallVec xv(dimension), tv(dimension);
    for (int k = 0; k < dimension; ++k) {
      xv(k) = g[k];
      tv(k) = g[dimension + k];
    }
    out.emplace_back(xv, tv);
  }
  return out;
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    cfg.set(line.substr(0, eq), line.substr(eq + 1));
  }
  cfg.check();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string csv_provenance(const RunConfig& cfg) {
  return "# config_hash=" + cfg.hash() + "\n# tolerances=" + cfg.tolerance_set() + "\n";
}

std::string failure_json(const StageFailure& f, const RunConfig& cfg) {
  json j = provenance(cfg);
  j["stage"] = f.stage;
  j["code"] = f.code;
  j["class"] = class_name(f.error_class);
  j["message"] = f.message;
  return dump(j);
}

int exit_code(ErrorClass c) {
  switch (c) {
    case ErrorClass::input: return 1;
    case ErrorClass::certificate: return 2;
    default: return 3;
  }
}

BandTable run_bands(const RunConfig& cfg) {
  cfg.check();
  BandTable t;
  auto field = cfg.field();
  auto disc = cfg.discretization();
  SmallVec x = cfg.x.empty() ? SmallVec::Zero(cfg.dimension) : SmallVec(Eigen::Map<const RVec>(cfg.x.data(), cfg.dimension));
  const int n = cfg.theta_points;
  t.theta.resize(n);
  t.lambda.assign(n, {});
  for (int j = 0; j < n; ++j) t.theta[j] = -0.5 + double(j) / n;
  parallel_for(n, cfg.workers, [&](int j) {
    SmallVec th = SmallVec::Zero(cfg.dimension);
    th(0) = t.theta[j];
    CellOperator op(field, BlochPoint(x, th), disc);
    auto spec = op.spectrum(cfg.bands);
    for (int b = 0; b < cfg.bands; ++b) t.lambda[j].push_back(spec->values(b));
  });
  std::string csv = csv_provenance(cfg) + "theta";
  for (int b = 1; b <= cfg.bands; ++b) csv += ",lambda_" + std::to_string(b);
  csv += "\n";
  for (int j = 0; j < n; ++j) {
    csv += format_number(t.theta[j]);
    for (double l : t.lambda[j]) csv += "," + format_number(l);
    csv += "\n";
  }
  t.csv = std::move(csv);
  return t;
}

namespace {

json critical_point_json(const CriticalPoint& cp) {
  json j;
  j["n"] = cp.n;
  j["x"] = vec_json(cp.location.x);
  j["theta"] = vec_json(cp.location.theta);
  j["lambda"] = cp.lambda;
  j["grad_norm"] = cp.grad_norm;
  j["hessian"] = matrix_json(cp.hessian);
  j["hessian_eigenvalues"] = vec_json(cp.hessian_eigenvalues);
  j["definiteness"] = definiteness_name(cp.definiteness);
  j["iterations"] = cp.iterations;
  return j;
}

json tensors_json(const HomogenizedTensors& t, const BandDerivatives* d) {
  json j;
  j["dimension"] = t.dimension;
  j["A_star"] = matrix_json(t.A_star);
  j["B_star"] = cmatrix_json(t.B_star);
  j["c_star"] = complex_json(t.c_star);
  j["D_star"] = matrix_json(t.D_star);
  j["zero_order_hom"] = complex_json(zero_order_coefficient(t, DriftForm::hom));
  j["zero_order_asym"] = complex_json(zero_order_coefficient(t, DriftForm::asym));
  j["identity_residual"] = t.identity_residual;
  j["c_star_route_delta"] = t.c_star_route_delta;
  j["c_star_gauge_sensitivity"] = t.c_star_gauge_sensitivity;
  j["quadrature_delta"] = std::isnan(t.quadrature_delta) ? json(nullptr) : json(t.quadrature_delta);
  j["drift_realness_residual"] = drift_realness_residual(t);
  if (d) {
    j["gap"] = d->gap;
    j["corrector_residual"] = d->corrector_residual;
    j["hessian_asymmetry"] = d->asymmetry_residual;
    j["hessian_imaginary_residual"] = d->imaginary_residual;
  }
  return j;
}

}  // namespace

std::string eigs_csv(const EigsReport& r, const RunConfig& cfg) {
  std::string csv = csv_provenance(cfg) + "m,sigma,gamma_hat\n";
  for (const auto& p : r.pairs)
    csv += std::to_string(p.m) + "," + format_number(p.sigma) + "," + format_number(p.decay.gamma) + "\n";
  return csv;
}

std::string snapshots_csv(const EvolutionResult& r, const RunConfig& cfg) {
  std::string csv = csv_provenance(cfg) + "t,index,re,im\n";
  for (const auto& s : r.snapshots)
    for (int j = 0; j < s.field.size(); ++j)
      csv += format_number(s.t) + "," + std::to_string(j) + "," + format_number(s.field.values(j).real()) + "," +
             format_number(s.field.values(j).imag()) + "\n";
  return csv;
}

std::string norms_csv(const EvolutionResult& r, const RunConfig& cfg) {
  std::string csv = csv_provenance(cfg) + "t,norm\n";
  for (const auto& [t, n] : r.norm_history) csv += format_number(t) + "," + format_number(n) + "\n";
  return csv;
}

PipelineResult run_pipeline(const RunConfig& cfg, PipelineDepth depth) {
  PipelineResult r;
  std::optional<CoefficientField> field;
  const auto disc = cfg.discretization();
  stage(r.failure, "config", [&] {
    cfg.check();
    disc.check();
    field.emplace(cfg.field());
  });
  stage(r.failure, "search", [&] {
    NewtonOptions no;
    no.critical_tol = cfg.tol_critical;
    no.hessian.quadrature_tol = cfg.tol_quadrature;
    r.search = multi_start_search(*field, cfg.band, cfg.guess_points(), disc, no, cfg.workers);
    for (const auto& o : r.search)
      if (o.point) {
        r.cp = *o.point;
        break;
      }
    if (!r.cp) {
      const std::string& msg = r.search.front().error;
      std::string code = msg.substr(0, msg.find(':'));
      throw Error(code, class_of_code(code), "no guess converged; first: " + msg);
    }
  });
  std::optional<CellOperator> op;
  stage(r.failure, "certify", [&] {
    op.emplace(*field, r.cp->location, disc);
    auto pairs = solve_bands(*op, cfg.band + 1);
    spectral_gap(pairs, cfg.band);
    r.pair = pairs[cfg.band - 1];
    HessianOptions ho;
    ho.quadrature_tol = cfg.tol_quadrature;
    r.derivs = band_derivatives(*op, *r.pair, ho);
  });
  if (r.cp) {
    json j = provenance(cfg);
    j["critical_point"] = critical_point_json(*r.cp);
    if (r.derivs) j["gap"] = r.derivs->gap;
    json g = json::array();
    for (const auto& o : r.search) {
      json e;
      e["x"] = vec_json(o.guess.x);
      e["theta"] = vec_json(o.guess.theta);
      e["converged"] = bool(o.point);
      if (!o.error.empty()) e["error"] = o.error;
      g.push_back(e);
    }
    j["guesses"] = g;
    r.critical_json = dump(j);
  }
  if (depth == PipelineDepth::critical) return r;
  stage(r.failure, "assemble", [&] {
    AssemblyOptions ao;
    ao.quadrature_tol = cfg.tol_quadrature;
    r.tensors = assemble_tensors(*op, *r.cp, *r.derivs, *r.pair, ao);
  });
  if (r.tensors) {
    json j = provenance(cfg);
    j["critical_point"] = critical_point_json(*r.cp);
    j["tensors"] = tensors_json(*r.tensors, r.derivs ? &*r.derivs : nullptr);
    r.tensors_json = dump(j);
  }
  stage(r.failure, "identity", [&] {
    double res = check_selfadjoint_identity(*r.tensors);
    if (!(res < cfg.tol_identity))
      throw IdentityViolation("|tr(B*)/2i + Im c*| = " + format_number(res) + " exceeds " +
                              format_number(cfg.tol_identity));
  });
  if (depth == PipelineDepth::tensors) return r;
  stage(r.failure, "eigs", [&] {
    r.eigs = homogenized_eigs(*r.tensors, cfg.m_max, cfg.dimension, cfg.box_L, cfg.box_P);
    r.eigs_csv = eigs_csv(*r.eigs, cfg);
  });
  return r;
}

namespace {

struct PairRun {
  BoxChoice box;
  EvolutionResult u, v;
};

PairRun evolve_pair(const RunConfig& cfg, const CoefficientField& field, const PipelineResult& p, double eps) {
  if (std::abs(1 / eps - std::round(1 / eps)) > 1e-9 * (1 / eps))
    throw CommensurabilityError("eps = " + format_number(eps) + " is not 1/K for an integer K");
  PairRun r;
  r.box = commensurate_box(eps, cfg.eps_box_min, cfg.points_per_cell);
  auto v0 = gaussian_profile(cfg.dimension, r.box.L_z, r.box.P);
  InitialDataOptions io;
  io.min_points_per_cell = 16;
  if (cfg.first_order_data) io.correctors = &*p.derivs;
  auto u0 = build_initial_data(eps, *p.pair, *p.cp, v0, io);
  EpsilonOptions eo;
  eo.scheme = cfg.scheme;
  eo.energy_shift = p.pair->lambda;
  eo.band_energy = p.pair->lambda;
  eo.snapshot_times = cfg.times;
  eo.boundary_tol = cfg.tol_boundary;
  r.u = evolve_epsilon(field, u0, eps, cfg.T, cfg.dt, eo);
  HomogenizedOptions ho;
  ho.form = cfg.form;
  ho.snapshot_times = cfg.times;
  ho.boundary_tol = cfg.tol_boundary;
  r.v = evolve_homogenized(*p.tensors, v0, cfg.T, cfg.dt, ho);
  return r;
}

std::vector<double> slopes(const std::vector<ConvergenceRow>& rows, size_t nt) {
  std::vector<double> out;
  for (size_t k = 0; k < nt; ++k) {
    double mx = 0, my = 0;
    const int n = int(rows.size());
    for (const auto& r : rows) mx += std::log(r.eps), my += std::log(r.errors[k]);
    mx /= n;
    my /= n;
    double num = 0, den = 0;
    for (const auto& r : rows) {
      double dx = std::log(r.eps) - mx;
      num += dx * (std::log(r.errors[k]) - my);
      den += dx * dx;
    }
    out.push_back(den > 0 ? num / den : std::nan(""));
  }
  return out;
}

}  // namespace

ConvergenceReport run_convergence(const RunConfig& cfg) {
  ConvergenceReport rep;
  rep.times = cfg.times;
  if (rep.times.empty()) rep.times = {cfg.T};
  RunConfig run = cfg;
  run.times = rep.times;
  PipelineResult p = run_pipeline(run, PipelineDepth::tensors);
  if (p.failure) {
    rep.failure = p.failure;
    return rep;
  }
  auto field = run.field();
  const int n = int(run.eps.size());
  std::vector<ConvergenceRow> rows(n);
  std::vector<std::optional<StageFailure>> failures(n);
  parallel_for(n, run.workers, [&](int i) {
    const double eps = run.eps[i];
    stage(failures[i], "sweep eps=" + format_number(eps), [&] {
      auto start = std::chrono::steady_clock::now();
      auto pr = evolve_pair(run, field, p, eps);
      ConvergenceRow& row = rows[i];
      row.eps = eps;
      row.P = pr.box.P;
      row.L_z = pr.box.L_z;
      for (double t : rep.times) row.errors.push_back(two_scale_error(pr.u, pr.v, *p.pair, *p.cp, eps, t));
      row.norm_drift_eps = pr.u.max_norm_drift;
      row.norm_drift_hom = pr.v.max_norm_drift;
      row.boundary_mass = pr.u.max_boundary_mass;
      row.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    });
  });
  for (auto& f : failures)
    if (f) {
      rep.failure = f;
      return rep;
    }
  rep.rows = std::move(rows);
  rep.slopes = slopes(rep.rows, rep.times.size());

  std::string csv = csv_provenance(run) + "eps,P,L_z";
  for (double t : rep.times) csv += ",error_t" + format_number(t);
  csv += ",norm_drift_eps,norm_drift_hom,boundary_mass\n";
  json j = provenance(run);
  j["times"] = rep.times;
  j["rows"] = json::array();
  for (const auto& r : rep.rows) {
    csv += format_number(r.eps) + "," + std::to_string(r.P) + "," + format_number(r.L_z);
    for (double e : r.errors) csv += "," + format_number(e);
    csv += "," + format_number(r.norm_drift_eps) + "," + format_number(r.norm_drift_hom) + "," +
           format_number(r.boundary_mass) + "\n";
    json row;
    row["eps"] = r.eps;
    row["P"] = r.P;
    row["L_z"] = r.L_z;
    row["errors"] = r.errors;
    row["norm_drift_eps"] = r.norm_drift_eps;
    row["norm_drift_hom"] = r.norm_drift_hom;
    row["boundary_mass"] = r.boundary_mass;
    j["rows"].push_back(row);
  }
  json sl = json::array();
  for (double s : rep.slopes) sl.push_back(std::isnan(s) ? json(nullptr) : json(s));
  j["slopes"] = sl;
  rep.csv = std::move(csv);
  rep.json = dump(j);
  return rep;
}

EvolveArtifacts run_evolve(const RunConfig& cfg) {
  EvolveArtifacts a;
  a.pipeline = run_pipeline(cfg, PipelineDepth::tensors);
  a.failure = a.pipeline.failure;
  if (a.failure) return a;
  const double eps = cfg.eps.front();
  stage(a.failure, "evolve", [&] {
    auto pr = evolve_pair(cfg, cfg.field(), a.pipeline, eps);
    for (const auto& s : pr.u.snapshots)
      a.errors.push_back(two_scale_error(pr.u, pr.v, *a.pipeline.pair, *a.pipeline.cp, eps, s.t));
    a.eps_run = std::move(pr.u);
    a.hom_run = std::move(pr.v);
  });
  if (a.failure) return a;
  a.eps_snapshots_csv = snapshots_csv(*a.eps_run, cfg);
  a.hom_snapshots_csv = snapshots_csv(*a.hom_run, cfg);
  a.eps_norms_csv = norms_csv(*a.eps_run, cfg);
  a.hom_norms_csv = norms_csv(*a.hom_run, cfg);
  json j = provenance(cfg);
  j["eps"] = eps;
  json snaps = json::array();
  for (size_t i = 0; i < a.eps_run->snapshots.size(); ++i) {
    json s;
    s["t"] = a.eps_run->snapshots[i].t;
    s["two_scale_error"] = a.errors[i];
    s["boundary_mass_eps"] = a.eps_run->snapshots[i].field.boundary_mass();
    s["boundary_mass_hom"] = a.hom_run->snapshots[i].field.boundary_mass();
    snaps.push_back(s);
  }
  j["snapshots"] = snaps;
  j["norm_drift_eps"] = a.eps_run->max_norm_drift;
  j["norm_drift_hom"] = a.hom_run->max_norm_drift;
  j["steps"] = a.eps_run->steps;
  j["linear_iterations_eps"] = a.eps_run->linear_iterations;
  j["linear_iterations_hom"] = a.hom_run->linear_iterations;
  a.summary_json = dump(j);
  return a;
}

FlowArtifacts run_flow(const RunConfig& cfg) {
  FlowArtifacts a;
  std::optional<BlochPoint> start;
  if (!cfg.flow_start.empty()) {
    stage(a.failure, "config", [&] { cfg.check(); });
    const int N = cfg.dimension;
    SmallVec x(N), t(N);
    for (int k = 0; k < N; ++k) {
      x(k) = cfg.flow_start[k];
      t(k) = cfg.flow_start[N + k];
    }
    start.emplace(x, t);
  } else {
    auto p = run_pipeline(cfg, PipelineDepth::critical);
    if (p.failure) {
      a.failure = p.failure;
      return a;
    }
    start = p.cp->location;
  }
  if (a.failure) return a;
  stage(a.failure, "flow", [&] {
    a.trajectory = hamiltonian_flow(cfg.field(), cfg.band, *start, cfg.flow_T, cfg.flow_dt, cfg.discretization());
    if (!a.trajectory.complete) throw DegenerateBand(a.trajectory.abort_reason);
  });
  const int N = cfg.dimension;
  std::string csv = csv_provenance(cfg) + "t";
  for (int k = 1; k <= N; ++k) csv += ",x_" + std::to_string(k);
  for (int k = 1; k <= N; ++k) csv += ",theta_" + std::to_string(k);
  csv += ",lambda\n";
  for (size_t i = 0; i < a.trajectory.times.size(); ++i) {
    csv += format_number(a.trajectory.times[i]);
    const auto& s = a.trajectory.states[i];
    for (int k = 0; k < N; ++k) csv += "," + format_number(s.x(k));
    for (int k = 0; k < N; ++k) csv += "," + format_number(s.theta(k));
    csv += "," + format_number(a.trajectory.lambda[i]) + "\n";
  }
  a.csv = std::move(csv);
  return a;
}

ValidateArtifacts run_validate(const RunConfig& cfg) {
  ValidateArtifacts a;
  stage(a.failure, "validate", [&] {
    cfg.check();
    ValidationSampling s;
    s.x_center = cfg.x.empty() ? SmallVec::Zero(cfg.dimension) : SmallVec(Eigen::Map<const RVec>(cfg.x.data(), cfg.dimension));
    a.report = validate(cfg.field(), s);
  });
  json j = provenance(cfg);
  if (a.report) {
    const auto& r = *a.report;
    j["symmetry_residual"] = r.symmetry_residual;
    j["coercivity_min"] = r.coercivity_min;
    j["periodicity_residual"] = r.periodicity_residual;
    j["smoothness_probe"] = r.smoothness_probe;
    j["derivative_agreement"] = r.derivative_agreement ? json(*r.derivative_agreement) : json(nullptr);
    j["periodic"] = r.periodic;
    j["samples"] = r.samples;
  }
  a.json = dump(j);
  return a;
}

}  // namespace twoscale
