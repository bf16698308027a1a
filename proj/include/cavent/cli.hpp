#pragma once
// Run configuration, command execution and report writers behind the cavent
// executable. Configs are flat JSON objects; command-line flags are merged on
// top before validation.

#include "cavent/protocols.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace cavent::cli {

using nlohmann::json;

/// Bad or incomplete configuration; maps to exit code 1.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct SweepSpec {
  std::string param;
  double from = 0.0;
  double to = 0.0;
  int steps = 0;

  std::vector<double> values() const {
    std::vector<double> v;
    for (int i = 0; i < steps; ++i) v.push_back(from + (to - from) * double(i) / double(steps - 1));
    return v;
  }
};

struct RunConfig {
  std::string system = "cavity";  // cavity | ion
  std::string protocol;
  std::optional<int> n;
  std::optional<int> atom_dim;
  std::string engine = "effective";  // effective | full | lindblad

  std::optional<double> g, delta, omega, eta;
  double nu = 0.0;
  int lamb_dicke_order = 2;
  std::optional<int> omega_k, omega_k2;

  double nbar = 0.0;
  int initial_fock = 0;
  std::optional<int> fock_cutoff;
  double kappa = 0.0;
  double nbar_bath = 0.0;
  IntegratorConfig integrator;

  std::string measure = "enumerate";  // enumerate | postselect | sample
  std::uint64_t seed = 0;

  std::optional<SweepSpec> sweep;
  std::optional<std::string> out;
  std::optional<std::string> format;  // json | csv; sweep defaults to csv, the rest to json
  bool force = false;
};

inline const std::vector<std::string>& sweepable_params() {
  static const std::vector<std::string> p = {"g", "delta", "omega", "eta", "nu", "nbar", "kappa", "nbar_bath"};
  return p;
}

// ---------------------------------------------------------------------------
// JSON <-> RunConfig

namespace detail {

template <class T>
void read(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}
template <class T>
void read(const json& j, const char* key, std::optional<T>& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}

inline const std::set<std::string>& known_keys() {
  static const std::set<std::string> k = {
      "system", "protocol", "N", "atom_dim", "engine", "g", "delta", "omega", "eta", "nu", "lamb_dicke_order",
      "omega_k", "omega_k2", "nbar", "initial_fock", "fock_cutoff", "kappa", "nbar_bath", "rel_tol", "abs_tol",
      "max_step", "leakage_limit", "measure", "seed", "sweep_param", "sweep_from", "sweep_to", "sweep_steps",
      "out", "format", "force"};
  return k;
}

template <class T>
void put(json& j, const char* key, const std::optional<T>& v) {
  j[key] = v ? json(*v) : json(nullptr);
}

}  // namespace detail

inline RunConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!detail::known_keys().count(key)) throw ConfigError("unknown config field '" + key + "'");
  RunConfig c;
  try {
    detail::read(j, "system", c.system);
    detail::read(j, "protocol", c.protocol);
    detail::read(j, "N", c.n);
    detail::read(j, "atom_dim", c.atom_dim);
    detail::read(j, "engine", c.engine);
    detail::read(j, "g", c.g);
    detail::read(j, "delta", c.delta);
    detail::read(j, "omega", c.omega);
    detail::read(j, "eta", c.eta);
    detail::read(j, "nu", c.nu);
    detail::read(j, "lamb_dicke_order", c.lamb_dicke_order);
    detail::read(j, "omega_k", c.omega_k);
    detail::read(j, "omega_k2", c.omega_k2);
    detail::read(j, "nbar", c.nbar);
    detail::read(j, "initial_fock", c.initial_fock);
    detail::read(j, "fock_cutoff", c.fock_cutoff);
    detail::read(j, "kappa", c.kappa);
    detail::read(j, "nbar_bath", c.nbar_bath);
    detail::read(j, "rel_tol", c.integrator.rel_tol);
    detail::read(j, "abs_tol", c.integrator.abs_tol);
    detail::read(j, "max_step", c.integrator.max_step);
    detail::read(j, "leakage_limit", c.integrator.leakage_limit);
    detail::read(j, "measure", c.measure);
    detail::read(j, "seed", c.seed);
    detail::read(j, "out", c.out);
    detail::read(j, "format", c.format);
    detail::read(j, "force", c.force);
    if (j.contains("sweep_param") && !j["sweep_param"].is_null()) {
      SweepSpec s;
      detail::read(j, "sweep_param", s.param);
      detail::read(j, "sweep_from", s.from);
      detail::read(j, "sweep_to", s.to);
      detail::read(j, "sweep_steps", s.steps);
      c.sweep = s;
    } else if (j.contains("sweep_from") || j.contains("sweep_to") || j.contains("sweep_steps")) {
      throw ConfigError("sweep bounds given without sweep_param");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field has the wrong type: ") + e.what());
  }
  return c;
}

inline json config_to_json(const RunConfig& c) {
  json j;
  j["system"] = c.system;
  j["protocol"] = c.protocol;
  detail::put(j, "N", c.n);
  detail::put(j, "atom_dim", c.atom_dim);
  j["engine"] = c.engine;
  detail::put(j, "g", c.g);
  detail::put(j, "delta", c.delta);
  detail::put(j, "omega", c.omega);
  detail::put(j, "eta", c.eta);
  j["nu"] = c.nu;
  j["lamb_dicke_order"] = c.lamb_dicke_order;
  detail::put(j, "omega_k", c.omega_k);
  detail::put(j, "omega_k2", c.omega_k2);
  j["nbar"] = c.nbar;
  j["initial_fock"] = c.initial_fock;
  detail::put(j, "fock_cutoff", c.fock_cutoff);
  j["kappa"] = c.kappa;
  j["nbar_bath"] = c.nbar_bath;
  j["rel_tol"] = c.integrator.rel_tol;
  j["abs_tol"] = c.integrator.abs_tol;
  detail::put(j, "max_step", c.integrator.max_step);
  j["leakage_limit"] = c.integrator.leakage_limit;
  j["measure"] = c.measure;
  j["seed"] = c.seed;
  if (c.sweep) {
    j["sweep_param"] = c.sweep->param;
    j["sweep_from"] = c.sweep->from;
    j["sweep_to"] = c.sweep->to;
    j["sweep_steps"] = c.sweep->steps;
  }
  detail::put(j, "out", c.out);
  detail::put(j, "format", c.format);
  return j;
}

inline json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Resolution of a config into plan, engine and initial state.

/// Coupling parameters that may be left out together. Supplying some but not
/// all of them is an error; supplying none selects these reference values.
inline constexpr double kRefG = 1.0, kRefDelta = 10.0;                     // cavity
inline constexpr double kRefOmega = 1.0, kRefEta = 0.05, kRefIonDelta = 1.0;  // ion

inline RunConfig resolve_defaults(RunConfig c) {
  if (c.system != "cavity" && c.system != "ion") throw ConfigError("system must be 'cavity' or 'ion'");
  if (c.protocol.empty()) throw ConfigError("missing protocol name");
  if (c.engine != "effective" && c.engine != "full" && c.engine != "lindblad")
    throw ConfigError("engine must be effective, full or lindblad");
  if (c.format && *c.format != "json" && *c.format != "csv") throw ConfigError("format must be json or csv");
  if (c.measure != "enumerate" && c.measure != "postselect" && c.measure != "sample")
    throw ConfigError("measure must be enumerate, postselect or sample");
  if (c.system == "cavity") {
    if (c.eta) throw ConfigError("eta applies to the ion system only");
    if (!c.g && !c.delta) {
      c.g = kRefG;
      c.delta = kRefDelta;
    } else if (!c.delta) {
      throw ConfigError("missing delta: the cavity detuning is required once g is given");
    } else if (!c.g) {
      throw ConfigError("missing g: the atom-cavity coupling is required once delta is given");
    }
    if (c.omega) throw ConfigError("the cavity carrier is set through omega_k, not omega");
  } else {
    if (c.g) throw ConfigError("g applies to the cavity system only");
    if (!c.omega && !c.eta && !c.delta) {
      c.omega = kRefOmega;
      c.eta = kRefEta;
      c.delta = kRefIonDelta;
    } else if (!c.delta) {
      throw ConfigError("missing delta: the sideband detuning is required once omega or eta is given");
    } else if (!c.omega || !c.eta) {
      throw ConfigError("ion couplings need omega, eta and delta together");
    }
  }
  if (!(*c.delta != 0.0)) throw ConfigError("delta = 0 leaves the effective coupling undefined");
  if (c.nbar < 0.0 || c.kappa < 0.0 || c.nbar_bath < 0.0) throw ConfigError("nbar, kappa and nbar_bath must be non-negative");
  if (c.initial_fock < 0) throw ConfigError("initial_fock must be non-negative");
  if (c.nbar > 0.0 && c.initial_fock > 0) throw ConfigError("nbar and initial_fock are mutually exclusive");
  if (c.fock_cutoff && *c.fock_cutoff < 0) throw ConfigError("fock_cutoff must be non-negative");
  if (c.engine != "lindblad" && (c.kappa > 0.0 || c.nbar_bath > 0.0))
    throw ConfigError("kappa / nbar_bath need the lindblad engine");
  if (c.sweep) {
    const auto& p = sweepable_params();
    if (std::find(p.begin(), p.end(), c.sweep->param) == p.end())
      throw ConfigError("unknown sweep parameter '" + c.sweep->param + "'");
    if (c.sweep->steps < 2) throw ConfigError("sweep steps must be at least 2");
  }
  try {
    c.integrator.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline Coupling coupling_of(const RunConfig& c) {
  if (c.system == "cavity") {
    Coupling k = cavity_coupling(*c.g, *c.delta);
    k.params.nu = c.nu;
    return k;
  }
  Coupling k = ion_coupling(*c.omega, *c.eta, *c.delta, c.lamb_dicke_order);
  k.params.nu = c.nu;
  return k;
}

inline Engine engine_of(const RunConfig& c) {
  Engine e;
  if (c.engine == "effective") e.kind = EngineKind::Effective;
  else if (c.engine == "lindblad") e.kind = EngineKind::Lindblad;
  else e.kind = c.system == "cavity" ? EngineKind::FullCavity : EngineKind::FullIon;
  e.decay = {c.kappa, c.nbar_bath};
  e.integrator = c.integrator;
  return e;
}

inline MeasureMode measure_mode_of(const RunConfig& c) {
  if (c.measure == "postselect") return MeasureMode::PostSelect;
  if (c.measure == "sample") return MeasureMode::Sample;
  return MeasureMode::EnumerateAll;
}

inline ProtocolPlan plan_of(const RunConfig& c) {
  PlanRequest req;
  req.protocol = c.protocol;
  req.n_atoms = c.n;
  req.atom_dim = c.atom_dim;
  req.k = c.omega_k;
  req.k_prime = c.omega_k2;
  req.carrier_floor = c.engine != "effective";
  req.mode = measure_mode_of(c);
  req.seed = c.seed;
  return make_plan(req, coupling_of(c));
}

/// Mode cutoff: explicit, else six levels of headroom above the occupied ones.
inline int fock_cutoff_of(const RunConfig& c) {
  if (c.fock_cutoff) return *c.fock_cutoff;
  return (c.nbar > 0.0 ? thermal_cutoff_for(c.nbar) : c.initial_fock) + 6;
}

/// Initial state for one run: atoms in |g..g> (mode-free for the effective
/// engine), otherwise with the mode in |initial_fock> or thermal at nbar.
struct InitialState {
  std::optional<StateVector> pure;
  std::optional<DensityMatrix> mixed;
};

inline InitialState initial_state_of(const RunConfig& c, const ProtocolPlan& plan, bool with_mode) {
  const StateVector atoms = plan.initial();
  if (!with_mode) return {atoms, std::nullopt};
  const int cutoff = fock_cutoff_of(c);
  const SpaceDescriptor space = plan.space.with_mode(cutoff);
  if (c.nbar > 0.0) {
    const int tc = thermal_cutoff_for(c.nbar);
    if (tc > cutoff)
      throw ConfigError("fock_cutoff " + std::to_string(cutoff) + " cannot hold the thermal state (needs >= " +
                        std::to_string(tc) + ")");
    return {std::nullopt, thermal_state(space, make_thermal_spec(c.nbar, tc), atoms)};
  }
  if (c.initial_fock > cutoff) throw ConfigError("initial_fock exceeds fock_cutoff");
  std::string label;
  for (int i = 0; i < plan.space.atom_count; ++i) label += 'g';
  return {StateVector::basis(space, label + "," + std::to_string(c.initial_fock)), std::nullopt};
}

inline ProtocolResult run_config(const RunConfig& c, const ProtocolPlan& plan, const Engine& engine) {
  const InitialState init = initial_state_of(c, plan, engine.kind != EngineKind::Effective);
  return init.pure ? run_plan(plan, *init.pure, engine) : run_plan(plan, *init.mixed, engine);
}

// ---------------------------------------------------------------------------
// Formatting: 12 significant digits everywhere.

inline std::string fmt12(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

inline json num12(double x) {
  if (!std::isfinite(x)) return nullptr;
  return std::stod(fmt12(x));
}

inline json num12(const std::optional<double>& x) { return x ? num12(*x) : json(nullptr); }

inline json timings_json(const Timings& t) {
  json j;
  j["t1"] = num12(t.t1);
  j["t2"] = num12(t.t2);
  j["omega"] = num12(t.omega);
  j["omega_prime"] = num12(t.omega_prime);
  j["k"] = t.k ? json(*t.k) : json(nullptr);
  j["k_prime"] = t.k_prime ? json(*t.k_prime) : json(nullptr);
  return j;
}

/// Writes to `out` (refusing to clobber an existing file without --force) or stdout.
inline void emit(const RunConfig& c, const std::string& text) {
  if (!c.out) {
    std::cout << text;
    return;
  }
  if (std::filesystem::exists(*c.out) && !c.force)
    throw ConfigError("output file '" + *c.out + "' exists; pass --force to overwrite");
  std::ofstream f(*c.out, std::ios::trunc);
  if (!f) throw ConfigError("cannot write output file '" + *c.out + "'");
  f << text;
}

inline void check_output_target(const RunConfig& c) {
  if (c.out && std::filesystem::exists(*c.out) && !c.force)
    throw ConfigError("output file '" + *c.out + "' exists; pass --force to overwrite");
}

// ---------------------------------------------------------------------------
// Commands. Each returns the report text; errors propagate as exceptions.

inline std::string cmd_list_protocols() {
  std::ostringstream os;
  os << "two-atom-qutrit\ttwo qutrits into an equal three-leg superposition (N = 2)\n";
  os << "ghz-two-level\tN-atom GHZ on g/e\n";
  os << "ghz-three-level\tN-atom (even) three-leg GHZ on g/e/f\n";
  os << "measure-reduce\tthree-level GHZ, reduce + measure last atom, f branch (N even >= 4)\n";
  os << "ghz-four-level\tN-atom (even) four-leg GHZ on g/e/f/h\n";
  return os.str();
}

inline std::string cmd_protocol(const RunConfig& raw) {
  const RunConfig c = resolve_defaults(raw);
  check_output_target(c);
  const ProtocolPlan plan = plan_of(c);
  const Engine engine = engine_of(c);
  const ProtocolResult r = run_config(c, plan, engine);

  if (c.format.value_or("json") == "csv") {
    std::ostringstream os;
    os << "outcome,probability,fidelity\n";
    for (const auto& b : r.branches)
      os << b.outcome << ',' << fmt12(b.probability) << ',' << (b.fidelity ? fmt12(*b.fidelity) : "") << '\n';
    return os.str();
  }
  json rep;
  rep["protocol"] = plan.name;
  rep["system"] = c.system;
  rep["engine"] = engine_name(engine.kind);
  rep["lambda"] = num12(coupling_of(c).lambda());
  rep["timings"] = timings_json(r.timings);
  rep["branches"] = json::array();
  rep["leg_populations"] = json::array();
  for (const auto& b : r.branches) {
    rep["branches"].push_back({{"outcome", b.outcome}, {"probability", num12(b.probability)},
                               {"fidelity", num12(b.fidelity)}});
    // Legs are defined on the post-measurement space; only meaningful where a target exists.
    if (!plan.targets.count(b.outcome)) continue;
    const auto pops = leg_populations(b.atoms, plan.legs);
    for (size_t i = 0; i < pops.size(); ++i)
      rep["leg_populations"].push_back({{"branch", b.outcome}, {"leg", plan.legs[i]}, {"population", num12(pops[i])}});
  }
  rep["total_probability"] = num12(r.total_probability());
  rep["config_echo"] = config_to_json(c);
  return rep.dump(2) + "\n";
}

inline void set_sweep_param(RunConfig& c, const std::string& p, double v) {
  if (p == "g") c.g = v;
  else if (p == "delta") c.delta = v;
  else if (p == "omega") c.omega = v;
  else if (p == "eta") c.eta = v;
  else if (p == "nu") c.nu = v;
  else if (p == "nbar") c.nbar = v;
  else if (p == "kappa") c.kappa = v;
  else if (p == "nbar_bath") c.nbar_bath = v;
  else throw ConfigError("unknown sweep parameter '" + p + "'");
}

inline std::string cmd_sweep(const RunConfig& raw) {
  if (!raw.sweep) throw ConfigError("sweep needs sweep_param, sweep_from, sweep_to and sweep_steps");
  const RunConfig base = resolve_defaults(raw);
  check_output_target(base);

  struct Row {
    double value;
    std::string branch;
    double probability;
    std::optional<double> fidelity;
  };
  std::vector<Row> rows;
  for (double v : base.sweep->values()) {
    RunConfig point = raw;
    set_sweep_param(point, base.sweep->param, v);
    point = resolve_defaults(point);
    // Re-planned per point: timings follow lambda when g, delta, omega or eta move.
    const ProtocolResult r = run_config(point, plan_of(point), engine_of(point));
    for (const auto& b : r.branches) rows.push_back({v, b.outcome, b.probability, b.fidelity});
  }

  if (base.format.value_or("csv") == "json") {
    json rep;
    rep["sweep_param"] = base.sweep->param;
    rep["rows"] = json::array();
    for (const auto& row : rows)
      rep["rows"].push_back({{"value", num12(row.value)}, {"branch", row.branch},
                             {"probability", num12(row.probability)}, {"fidelity", num12(row.fidelity)}});
    rep["config_echo"] = config_to_json(base);
    return rep.dump(2) + "\n";
  }
  std::ostringstream os;
  os << "sweep_param,value,branch,probability,fidelity\n";
  for (const auto& row : rows)
    os << base.sweep->param << ',' << fmt12(row.value) << ',' << row.branch << ',' << fmt12(row.probability) << ','
       << (row.fidelity ? fmt12(*row.fidelity) : "") << '\n';
  return os.str();
}

/// Frames compared for each system; "effective" always last.
inline std::vector<FrameTag> frames_for(const std::string& system) {
  if (system == "cavity")
    return {FrameTag::InteractionPicture, FrameTag::PlusMinusRotated, FrameTag::SlowFrame, FrameTag::Effective};
  return {FrameTag::IonInteraction, FrameTag::IonLambDicke, FrameTag::Effective};
}

inline std::string cmd_compare_frames(const RunConfig& raw) {
  RunConfig c = raw;
  if (c.engine == "effective") c.engine = "full";  // the comparison itself needs full dynamics
  c = resolve_defaults(c);
  if (c.engine == "lindblad") throw ConfigError("compare-frames runs closed-system engines only");
  check_output_target(c);
  const ProtocolPlan plan = plan_of(c);
  const InitialState init = initial_state_of(c, plan, true);
  const std::string branch = plan.targets.begin()->first;

  struct FrameResult {
    FrameTag frame;
    DensityMatrix atoms;
    double probability;
    std::optional<double> fidelity;
  };
  std::vector<FrameResult> results;
  for (FrameTag f : frames_for(c.system)) {
    Engine e = engine_of(c);
    if (f == FrameTag::Effective) e.kind = EngineKind::Effective;
    else e.frame = f;
    const ProtocolResult r = init.pure ? run_plan(plan, *init.pure, e) : run_plan(plan, *init.mixed, e);
    const Branch* b = r.find(branch);
    if (!b) throw PhysicsCheckError("branch '" + branch + "' missing from the " + frame_name(f) + " run");
    results.push_back({f, b->atoms, b->probability, b->fidelity});
  }

  if (c.format.value_or("json") == "csv") {
    std::ostringstream os;
    os << "quantity,frame_a,frame_b,value\n";
    for (const auto& r : results) {
      os << "fidelity," << frame_name(r.frame) << ",," << (r.fidelity ? fmt12(*r.fidelity) : "") << '\n';
      os << "probability," << frame_name(r.frame) << ",," << fmt12(r.probability) << '\n';
    }
    for (size_t i = 0; i < results.size(); ++i)
      for (size_t j = i + 1; j < results.size(); ++j)
        os << "trace_distance," << frame_name(results[i].frame) << ',' << frame_name(results[j].frame) << ','
           << fmt12(trace_distance(results[i].atoms, results[j].atoms)) << '\n';
    return os.str();
  }
  json rep;
  rep["protocol"] = plan.name;
  rep["system"] = c.system;
  rep["branch"] = branch;
  rep["lambda"] = num12(coupling_of(c).lambda());
  rep["timings"] = timings_json(plan.timings);
  rep["frames"] = json::array();
  for (const auto& r : results)
    rep["frames"].push_back({{"frame", frame_name(r.frame)}, {"probability", num12(r.probability)},
                             {"fidelity", num12(r.fidelity)}});
  rep["trace_distances"] = json::array();
  for (size_t i = 0; i < results.size(); ++i)
    for (size_t j = i + 1; j < results.size(); ++j)
      rep["trace_distances"].push_back({{"a", frame_name(results[i].frame)}, {"b", frame_name(results[j].frame)},
                                        {"value", num12(trace_distance(results[i].atoms, results[j].atoms))}});
  rep["config_echo"] = config_to_json(c);
  return rep.dump(2) + "\n";
}

/// Runs `command` and writes its report; returns the process exit code.
inline int run_command(const std::string& command, const RunConfig& c, std::ostream& err) {
  try {
    if (command == "list-protocols") {
      std::cout << cmd_list_protocols();
      return 0;
    }
    std::string text;
    if (command == "protocol") text = cmd_protocol(c);
    else if (command == "sweep") text = cmd_sweep(c);
    else if (command == "compare-frames") text = cmd_compare_frames(c);
    else throw ConfigError("unknown command '" + command + "'");
    emit(c, text);
    return 0;
  } catch (const PhysicsCheckError& e) {
    err << "physics check failed: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace cavent::cli
