#pragma once
// Staged entanglement protocols: collective dispersive drives, instantaneous
// local transfers between atomic levels and projective measurement of a single
// atom, executed under the effective propagator or the full atom-mode dynamics.

#include "cavent/algebra.hpp"
#include "cavent/analysis.hpp"
#include "cavent/dynamics.hpp"
#include "cavent/errors.hpp"
#include "cavent/hamiltonians.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace cavent {

enum class System { Cavity, Ion };

/// Physical couplings shared by all drive stages of a plan.
struct Coupling {
  System system = System::Cavity;
  DriveParams params;

  double lambda() const {
    return system == System::Cavity ? lambda_cavity(params.g, params.delta)
                                    : lambda_ion(params.omega, params.eta, params.delta);
  }
};

inline Coupling ion_coupling(double omega, double eta, double delta, int lamb_dicke_order = 2) {
  DriveParams p;
  p.omega = omega;
  p.eta = eta;
  p.delta = delta;
  p.phi = std::numbers::pi / 2;
  p.lamb_dicke_order = lamb_dicke_order;
  return {System::Ion, p};
}

inline Coupling cavity_coupling(double g, double delta) {
  DriveParams p;
  p.g = g;
  p.delta = delta;
  return {System::Cavity, p};
}

struct CollectiveDrive {
  /// Cavity: params.omega is the classical carrier. Ion: the sideband laser
  /// Rabi frequency; there is no carrier.
  DriveParams params;
  double duration = 0.0;
  FrameTag frame = FrameTag::InteractionPicture;
};

struct LocalTransfer {
  std::string name;
  DenseMat matrix;
  std::optional<int> atom;  // empty: every atom
};

enum class MeasureMode { EnumerateAll, PostSelect, Sample };

struct Measurement {
  int atom_index = 0;
  MeasureMode mode = MeasureMode::EnumerateAll;
  int outcome = static_cast<int>(Level::f);  // PostSelect only
  std::uint64_t seed = 0;                    // Sample only
};

using PulseStage = std::variant<CollectiveDrive, LocalTransfer, Measurement>;

struct Timings {
  std::optional<double> t1, t2, omega, omega_prime;
  std::optional<int> k, k_prime;
};

struct ProtocolPlan {
  std::string name;
  System system = System::Cavity;
  SpaceDescriptor space;  // atoms only
  std::vector<PulseStage> stages;
  /// Closed-form final state per measurement outcome ("all" when unmeasured).
  std::map<std::string, StateVector> targets;
  std::vector<std::string> legs;
  Timings timings;

  StateVector initial() const { return StateVector::uniform(space, static_cast<int>(Level::g)); }
};

// ---------------------------------------------------------------------------
// Local transfers.

inline LocalTransfer transfer_e_to_f(int d) {
  if (d < 3) throw std::invalid_argument("e->f transfer needs at least three levels");
  return {"e->f", local_swap(d, {{1, 2}}), std::nullopt};
}

inline LocalTransfer transfer_gf_eh(int d) {
  if (d < 4) throw std::invalid_argument("g<->f, e<->h transfer needs four levels");
  return {"g<->f,e<->h", local_swap(d, {{0, 2}, {1, 3}}), std::nullopt};
}

/// Columns are the images of |g>, |e>, |f>; rows g, e, f.
inline DenseMat reduction_unitary() {
  const double s2 = std::sqrt(2.0), s10 = std::sqrt(10.0), s5 = std::sqrt(5.0), r25 = std::sqrt(0.4);
  DenseMat u(3, 3);
  u << 1.0 / s2, -1.0 / s2, 0.0,
       1.0 / s10, 1.0 / s10, 2.0 / s5,
       -r25, -r25, std::sqrt(0.2);
  return u;
}

inline double unitarity_defect(const DenseMat& u) {
  return max_norm(DenseMat(u.adjoint() * u - DenseMat::Identity(u.rows(), u.cols())));
}

// ---------------------------------------------------------------------------
// Planning helpers.

/// Smallest integer m (optionally restricted to even m) with m * unit / t >= omega_min.
inline int smallest_multiple(double unit_phase, double duration, double omega_min, bool even) {
  int m = std::max(0, static_cast<int>(std::ceil(omega_min * duration / unit_phase - 1e-9)));
  if (even && m % 2) ++m;
  return m;
}

/// Carrier floor used by default in full engines: 2 Omega >= 20 |delta|.
inline double carrier_floor(const Coupling& c) { return 10.0 * std::abs(c.params.delta); }

namespace detail {

inline CollectiveDrive drive_stage(const Coupling& c, double duration, double carrier) {
  CollectiveDrive d;
  d.params = c.params;
  d.duration = duration;
  if (c.system == System::Cavity) {
    d.params.omega = carrier;
    d.frame = FrameTag::InteractionPicture;
  } else {
    d.params.phi = std::numbers::pi / 2;
    d.frame = FrameTag::IonInteraction;
  }
  return d;
}

inline Vec ghz_vector(const SpaceDescriptor& space, std::initializer_list<std::pair<int, cplx>> legs) {
  Vec v = Vec::Zero(space.dimension());
  for (auto [level, amp] : legs) v(space.encode(std::vector<int>(space.atom_count, level))) += amp;
  return v;
}

inline double checked_lambda(const Coupling& c) {
  c.params.validate();
  const double lambda = c.lambda();
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument("effective coupling lambda must be positive and finite");
  return lambda;
}

inline std::vector<std::string> uniform_legs(int n, int levels) {
  std::vector<std::string> legs;
  for (int l = 0; l < levels; ++l) legs.push_back(uniform_label(n, l));
  return legs;
}

}  // namespace detail

/// Two qutrits: drive for sin(lambda t1) = 1/sqrt(3) with Omega t1 = k pi, move
/// e -> f, drive for lambda t2 = pi/4 with Omega' t2 = 2 k' pi.
inline ProtocolPlan plan_two_atom_qutrit(const Coupling& c, int k, int k_prime) {
  const double lambda = detail::checked_lambda(c);
  const double t1 = std::asin(1.0 / std::sqrt(3.0)) / lambda;
  const double t2 = std::numbers::pi / (4.0 * lambda);
  double omega = 0.0, omega_prime = 0.0;
  if (c.system == System::Cavity) {
    // Odd k flips the sign of each cos(Omega t1) factor; only even k is accepted.
    if (k <= 0 || k % 2) throw std::invalid_argument("k must be an even positive integer");
    if (k_prime <= 0) throw std::invalid_argument("k' must be a positive integer");
    omega = k * std::numbers::pi / t1;
    omega_prime = 2.0 * k_prime * std::numbers::pi / t2;
  } else {
    k = k_prime = 0;
  }

  ProtocolPlan plan;
  plan.name = "two-atom-qutrit";
  plan.system = c.system;
  plan.space = make_space(2, 3, 0, true);
  plan.stages = {detail::drive_stage(c, t1, omega), transfer_e_to_f(3), detail::drive_stage(c, t2, omega_prime)};
  const cplx p1 = std::exp(-kI * lambda * t1), p2 = std::exp(-kI * lambda * t2);
  const double r3 = 1.0 / std::sqrt(3.0);
  plan.targets.emplace("all", StateVector(plan.space, detail::ghz_vector(plan.space, {{0, p1 * r3 * p2},
                                                                                   {1, -kI * p1 * r3 * p2},
                                                                                   {2, -kI * p1 * r3}})));
  plan.legs = detail::uniform_legs(2, 3);
  plan.timings = {t1, t2, omega, omega_prime, k, k_prime};
  return plan;
}

/// State after the first drive of the two-qutrit plan, up to the global e^{-i lambda t1}:
/// sqrt(2/3)|gg> - i/sqrt(3)|ee>.
inline StateVector two_atom_first_stage_target() {
  const SpaceDescriptor s = make_space(2, 3, 0, true);
  return {s, detail::ghz_vector(s, {{0, std::sqrt(2.0 / 3.0)}, {1, -kI / std::sqrt(3.0)}})};
}

namespace detail {

/// Carrier for a lambda t = pi/4 drive: Omega t = n pi (even N) or (2n + 3/4) pi (odd N).
inline double ghz_carrier(int n_atoms, int n_choice, double t) {
  const double phase = (n_atoms % 2 == 0) ? n_choice * std::numbers::pi : (2.0 * n_choice + 0.75) * std::numbers::pi;
  return phase / t;
}

inline Vec ghz_two_level_vector(const SpaceDescriptor& space) {
  const int n = space.atom_count;
  const double r2 = 1.0 / std::sqrt(2.0);
  const double pi = std::numbers::pi;
  if (n % 2 == 0) {
    const double sign = (n / 2) % 2 ? -1.0 : 1.0;
    return ghz_vector(space, {{0, r2 * std::exp(-kI * pi / 4.0)}, {1, r2 * sign * std::exp(kI * pi / 4.0)}});
  }
  // Odd N: relative phase e^{i pi/2} (-1)^{(N-1)/2}; global phase e^{i 7 pi/8}.
  const double sign = ((n - 1) / 2) % 2 ? -1.0 : 1.0;
  const cplx global = std::exp(kI * 7.0 * pi / 8.0);
  return ghz_vector(space, {{0, r2 * global}, {1, r2 * global * kI * sign}});
}

inline void check_ghz_inputs(const Coupling& c, int n_atoms, int n_choice) {
  if (n_atoms < 2) throw std::invalid_argument("GHZ plans need at least two atoms");
  if (n_choice < 0) throw std::invalid_argument("carrier index n must be non-negative");
  if (c.system == System::Ion && n_atoms % 2)
    throw std::invalid_argument("odd-N GHZ needs a carrier drive, which the ion scheme lacks");
}

}  // namespace detail

inline ProtocolPlan plan_ghz_two_level(int n_atoms, const Coupling& c, int n_choice, int atom_dim = 2) {
  detail::check_ghz_inputs(c, n_atoms, n_choice);
  const double lambda = detail::checked_lambda(c);
  const double t = std::numbers::pi / (4.0 * lambda);
  const double omega = c.system == System::Cavity ? detail::ghz_carrier(n_atoms, n_choice, t) : 0.0;
  ProtocolPlan plan;
  plan.name = "ghz-two-level";
  plan.system = c.system;
  plan.space = make_space(n_atoms, atom_dim, 0, true);
  plan.stages = {detail::drive_stage(c, t, omega)};
  plan.targets.emplace("all", StateVector(plan.space, detail::ghz_two_level_vector(plan.space)));
  plan.legs = detail::uniform_legs(n_atoms, 2);
  plan.timings.t1 = t;
  plan.timings.omega = omega;
  plan.timings.k = c.system == System::Cavity ? n_choice : 0;
  return plan;
}

namespace detail {

/// (1/2) e^{-i pi/4} (e^{-i pi/4}|g..g> + e^{i pi/4} s |e..e>) + (1/sqrt 2) e^{i pi/4} s |f..f>, s = (-1)^{N/2}.
inline Vec ghz_three_level_vector(const SpaceDescriptor& space) {
  const double pi = std::numbers::pi;
  const double s = (space.atom_count / 2) % 2 ? -1.0 : 1.0;
  const cplx q = std::exp(kI * pi / 4.0);
  return ghz_vector(space, {{0, 0.5 / q / q}, {1, 0.5 * s}, {2, s * q / std::sqrt(2.0)}});
}

inline void require_even(int n_atoms) {
  if (n_atoms < 2 || n_atoms % 2) throw std::invalid_argument("this plan needs an even number of atoms");
}

}  // namespace detail

inline ProtocolPlan plan_ghz_three_level(int n_atoms, const Coupling& c, int n_choice, int atom_dim = 3) {
  detail::require_even(n_atoms);
  detail::check_ghz_inputs(c, n_atoms, n_choice);
  if (atom_dim < 3) throw std::invalid_argument("three-level GHZ needs atom_dim >= 3");
  const double lambda = detail::checked_lambda(c);
  const double t = std::numbers::pi / (4.0 * lambda);
  const double omega = c.system == System::Cavity ? detail::ghz_carrier(n_atoms, n_choice, t) : 0.0;
  ProtocolPlan plan;
  plan.name = "ghz-three-level";
  plan.system = c.system;
  plan.space = make_space(n_atoms, atom_dim, 0, true);
  plan.stages = {detail::drive_stage(c, t, omega), transfer_e_to_f(atom_dim), detail::drive_stage(c, t, omega)};
  plan.targets.emplace("all", StateVector(plan.space, detail::ghz_three_level_vector(plan.space)));
  plan.legs = detail::uniform_legs(n_atoms, 3);
  plan.timings = {t, t, omega, omega, c.system == System::Cavity ? n_choice : 0,
                  c.system == System::Cavity ? n_choice : 0};
  return plan;
}

/// Three-level GHZ, then the reduction unitary on the last atom and a
/// measurement of that atom. The f outcome leaves the other N-1 atoms in
/// (e^{-i pi/2}|g..g> + s|e..e> - e^{i pi/4} s|f..f>)/sqrt(3), probability 0.3.
inline ProtocolPlan plan_measure_reduce(int n_atoms, const Coupling& c, int n_choice,
                                        MeasureMode mode = MeasureMode::EnumerateAll, std::uint64_t seed = 0) {
  detail::require_even(n_atoms);
  if (n_atoms < 4) throw std::invalid_argument("measure-reduce needs N >= 4");
  const DenseMat u = reduction_unitary();
  if (unitarity_defect(u) > 1e-12) throw std::logic_error("reduction matrix is not unitary");

  ProtocolPlan plan = plan_ghz_three_level(n_atoms, c, n_choice, 3);
  plan.name = "measure-reduce";
  const int last = n_atoms - 1;
  plan.stages.push_back(LocalTransfer{"reduce", u, last});
  plan.stages.push_back(Measurement{last, mode, static_cast<int>(Level::f), seed});

  const double pi = std::numbers::pi;
  const double s = (n_atoms / 2) % 2 ? -1.0 : 1.0;
  const double r3 = 1.0 / std::sqrt(3.0);
  Vec v = Vec::Zero(plan.space.dimension());
  auto leg = [&](int level) {
    std::vector<int> levels(n_atoms, level);
    levels[last] = static_cast<int>(Level::f);
    return plan.space.encode(levels);
  };
  v(leg(0)) = r3 * std::exp(-kI * pi / 2.0);
  v(leg(1)) = r3 * s;
  v(leg(2)) = -r3 * std::exp(kI * pi / 4.0) * s;
  plan.targets.clear();
  plan.targets.emplace("f", StateVector(plan.space, v));
  plan.legs.clear();
  for (int l = 0; l < 3; ++l) {
    std::string label = uniform_label(n_atoms - 1, l) + "f";
    plan.legs.push_back(label);
  }
  return plan;
}

/// Three-level GHZ, swap g<->f and e<->h, drive once more:
/// (1/2)[s|g..g> + e^{i pi/2}|e..e> + e^{-i pi/2}|f..f> + s|h..h>].
inline ProtocolPlan plan_ghz_four_level(int n_atoms, const Coupling& c, int n_choice, int atom_dim = 4) {
  if (atom_dim < 4) throw std::invalid_argument("four-level GHZ needs atom_dim = 4");
  ProtocolPlan plan = plan_ghz_three_level(n_atoms, c, n_choice, atom_dim);
  plan.name = "ghz-four-level";
  const CollectiveDrive first = std::get<CollectiveDrive>(plan.stages.front());
  plan.stages.push_back(transfer_gf_eh(atom_dim));
  plan.stages.push_back(first);
  const double s = (n_atoms / 2) % 2 ? -1.0 : 1.0;
  plan.targets.clear();
  plan.targets.emplace("all", StateVector(plan.space, detail::ghz_vector(plan.space, {{0, 0.5 * s},
                                                                                   {1, 0.5 * kI},
                                                                                   {2, -0.5 * kI},
                                                                                   {3, 0.5 * s}})));
  plan.legs = detail::uniform_legs(n_atoms, 4);
  return plan;
}

/// Names accepted by make_plan and the command line.
inline const std::vector<std::string>& protocol_names() {
  static const std::vector<std::string> names = {"two-atom-qutrit", "ghz-two-level", "ghz-three-level",
                                                 "measure-reduce", "ghz-four-level"};
  return names;
}

/// Plan selection by name. Unset carrier indices are chosen as the smallest
/// admissible ones; with `carrier_floor` also 2 Omega >= 20 |delta|.
struct PlanRequest {
  std::string protocol;
  std::optional<int> n_atoms;
  std::optional<int> atom_dim;
  std::optional<int> k;        // k, or n for the GHZ carriers
  std::optional<int> k_prime;  // two-atom-qutrit only
  bool carrier_floor = false;
  MeasureMode mode = MeasureMode::EnumerateAll;
  std::uint64_t seed = 0;
};

inline int default_atom_count(const std::string& protocol) { return protocol == "measure-reduce" ? 4 : 2; }

namespace detail {

inline int ghz_default_index(const Coupling& c, int n_atoms, bool floor) {
  if (c.system != System::Cavity || !floor) return 0;
  const double t = std::numbers::pi / (4.0 * checked_lambda(c));
  const double need = carrier_floor(c) * t / std::numbers::pi;  // phase/pi needed
  const double n = n_atoms % 2 == 0 ? need : 0.5 * (need - 0.75);
  return std::max(0, static_cast<int>(std::ceil(n - 1e-9)));
}

}  // namespace detail

inline ProtocolPlan make_plan(const PlanRequest& req, const Coupling& c) {
  const auto& names = protocol_names();
  if (std::find(names.begin(), names.end(), req.protocol) == names.end())
    throw std::invalid_argument("unknown protocol '" + req.protocol + "'");
  const int n = req.n_atoms.value_or(default_atom_count(req.protocol));
  if (req.protocol == "two-atom-qutrit") {
    if (n != 2) throw std::invalid_argument("two-atom-qutrit needs N = 2");
    if (req.atom_dim && *req.atom_dim != 3) throw std::invalid_argument("two-atom-qutrit needs atom_dim = 3");
    int k = req.k.value_or(2), kp = req.k_prime.value_or(1);
    if (c.system == System::Cavity && req.carrier_floor) {
      const double lambda = detail::checked_lambda(c);
      const double t1 = std::asin(1.0 / std::sqrt(3.0)) / lambda, t2 = std::numbers::pi / (4.0 * lambda);
      if (!req.k) k = std::max(2, smallest_multiple(std::numbers::pi, t1, carrier_floor(c), true));
      if (!req.k_prime) kp = std::max(1, smallest_multiple(2.0 * std::numbers::pi, t2, carrier_floor(c), false));
    }
    return plan_two_atom_qutrit(c, k, kp);
  }
  if (req.k_prime) throw std::invalid_argument("k' applies to two-atom-qutrit only");
  const int idx = req.k.value_or(detail::ghz_default_index(c, n, req.carrier_floor));
  if (req.protocol == "ghz-two-level") return plan_ghz_two_level(n, c, idx, req.atom_dim.value_or(2));
  if (req.protocol == "ghz-three-level") return plan_ghz_three_level(n, c, idx, req.atom_dim.value_or(3));
  if (req.protocol == "ghz-four-level") return plan_ghz_four_level(n, c, idx, req.atom_dim.value_or(4));
  if (req.atom_dim && *req.atom_dim != 3) throw std::invalid_argument("measure-reduce needs atom_dim = 3");
  return plan_measure_reduce(n, c, idx, req.mode, req.seed);
}

// ---------------------------------------------------------------------------
// Execution.

enum class EngineKind { Effective, FullCavity, FullIon, Lindblad };

struct Engine {
  EngineKind kind = EngineKind::Effective;
  DecaySpec decay;  // Lindblad only
  IntegratorConfig integrator;
  /// Replaces every drive stage's frame (full engines) when set.
  std::optional<FrameTag> frame;
};

inline const char* engine_name(EngineKind k) {
  switch (k) {
    case EngineKind::Effective: return "effective";
    case EngineKind::FullCavity: return "full-cavity";
    case EngineKind::FullIon: return "full-ion";
    case EngineKind::Lindblad: return "lindblad";
  }
  return "?";
}

struct Branch {
  std::string outcome;
  double probability = 0.0;
  DensityMatrix atoms;               // reduced over the mode, normalized
  std::optional<StateVector> state;  // full normalized state when pure
  std::optional<double> fidelity;    // vs the plan's target for this outcome
};

struct ProtocolResult {
  std::vector<Branch> branches;
  Timings timings;

  const Branch* find(const std::string& outcome) const {
    for (const auto& b : branches)
      if (b.outcome == outcome) return &b;
    return nullptr;
  }
  double total_probability() const {
    double p = 0.0;
    for (const auto& b : branches) p += b.probability;
    return p;
  }
};

inline double effective_lambda(const CollectiveDrive& d, System system) {
  return system == System::Cavity ? lambda_cavity(d.params.g, d.params.delta)
                                  : lambda_ion(d.params.omega, d.params.eta, d.params.delta);
}

inline double carrier_omega(const CollectiveDrive& d, System system) {
  return system == System::Cavity ? d.params.omega : 0.0;
}

/// Product of every stage's atomic unitary under the effective propagator, up
/// to the first measurement.
inline Operator plan_unitary(const ProtocolPlan& plan) {
  Operator u = Operator::identity(plan.space);
  for (const auto& stage : plan.stages) {
    if (const auto* d = std::get_if<CollectiveDrive>(&stage)) {
      u = propagator_u(plan.space, effective_lambda(*d, plan.system), carrier_omega(*d, plan.system), d->duration) * u;
    } else if (const auto* t = std::get_if<LocalTransfer>(&stage)) {
      u = (t->atom ? embed_atom_op(plan.space, *t->atom, t->matrix) : uniform_atom_op(plan.space, t->matrix)) * u;
    } else {
      break;
    }
  }
  return u;
}

namespace detail {

template <class S>
struct Running {
  std::string label;
  double weight;  // unnormalized branch probability
  S state;        // Vec (pure) or DenseMat (mixed), normalized to `weight`
};

inline Operator transfer_operator(const LocalTransfer& t, const SpaceDescriptor& space) {
  if (unitarity_defect(t.matrix) > 1e-12) throw std::invalid_argument("local transfer is not unitary");
  const SpaceDescriptor atoms = space.atoms_only();
  const Operator u = t.atom ? embed_atom_op(atoms, *t.atom, t.matrix) : uniform_atom_op(atoms, t.matrix);
  return lift_atomic(u, space);
}

inline FrameTag full_frame(const Engine& engine, const CollectiveDrive& d, System system) {
  if (engine.frame) return *engine.frame;
  // H0 acts on the atoms only, so the exactly rotated frame commutes with the
  // cavity jump operators; it removes the carrier and takes ~3x fewer steps.
  if (system == System::Cavity && engine.kind == EngineKind::Lindblad && d.frame == FrameTag::InteractionPicture)
    return FrameTag::PlusMinusRotated;
  if (system == System::Cavity) return is_ion_frame(d.frame) || d.frame == FrameTag::Effective ? FrameTag::InteractionPicture : d.frame;
  return is_ion_frame(d.frame) ? d.frame : FrameTag::IonInteraction;
}

inline void check_frame(FrameTag f, System system) {
  if (f == FrameTag::Effective) return;
  if (is_ion_frame(f) != (system == System::Ion))
    throw std::invalid_argument("frame does not belong to the plan's physical system");
}

/// Time-dependent generator for one drive stage on the global clock, plus the
/// frame map that brings the final state back to the interaction picture.
struct StageGenerator {
  TimeDependentOperator h;
  std::optional<Operator> back_to_lab;
  double omega_max;
};

inline StageGenerator stage_generator(const CollectiveDrive& d, FrameTag frame, System system,
                                      const SpaceDescriptor& space, double clock) {
  const double scale = system == System::Cavity ? cavity_frequency_scale(d.params) : ion_frequency_scale(d.params);
  StageGenerator g{frame_terms(space, d.params, frame, clock).shifted(clock), std::nullopt, scale};
  if (frame == FrameTag::PlusMinusRotated || frame == FrameTag::SlowFrame) {
    const SpaceDescriptor atoms = space.atoms_only();
    g.back_to_lab = lift_atomic(Operator(atoms, unitary_ti(h0_drive(atoms, d.params.omega).dense(), d.duration)), space);
  }
  return g;
}

}  // namespace detail

/// Runs `plan` from a pure initial state. The initial state may be atoms-only
/// (effective engine) or carry a mode (any engine).
inline ProtocolResult run_plan(const ProtocolPlan& plan, const StateVector& initial, const Engine& engine);
inline ProtocolResult run_plan(const ProtocolPlan& plan, const DensityMatrix& initial, const Engine& engine);

namespace detail {

inline void check_engine(const ProtocolPlan& plan, const SpaceDescriptor& space, const Engine& engine) {
  if (!space.same_atoms(plan.space))
    throw std::invalid_argument("initial state does not match the plan's atoms");
  if (engine.kind != EngineKind::Effective && !space.has_mode())
    throw std::invalid_argument(std::string(engine_name(engine.kind)) + " engine needs a mode factor");
  if (engine.kind == EngineKind::FullCavity && plan.system != System::Cavity)
    throw std::invalid_argument("full-cavity engine cannot run an ion plan");
  if (engine.kind == EngineKind::FullIon && plan.system != System::Ion)
    throw std::invalid_argument("full-ion engine cannot run a cavity plan");
  if (engine.frame && engine.kind != EngineKind::Effective) check_frame(*engine.frame, plan.system);
}

inline bool uses_effective(const Engine& engine) {
  return engine.kind == EngineKind::Effective || (engine.frame && *engine.frame == FrameTag::Effective);
}

inline std::vector<double> measurement_weights(const SpaceDescriptor& space, int atom, const Vec& psi) {
  std::vector<double> w(space.atom_dim, 0.0);
  for (Index i = 0; i < psi.size(); ++i) w[space.decode(i).first[atom]] += std::norm(psi(i));
  return w;
}

inline std::vector<double> measurement_weights(const SpaceDescriptor& space, int atom, const DenseMat& rho) {
  std::vector<double> w(space.atom_dim, 0.0);
  for (Index i = 0; i < rho.rows(); ++i) w[space.decode(i).first[atom]] += rho(i, i).real();
  return w;
}

inline Vec project(const SpaceDescriptor& space, int atom, int level, const Vec& psi) {
  Vec out = psi;
  for (Index i = 0; i < psi.size(); ++i)
    if (space.decode(i).first[atom] != level) out(i) = 0.0;
  return out;
}

inline DenseMat project(const SpaceDescriptor& space, int atom, int level, const DenseMat& rho) {
  DenseMat out = rho;
  for (Index i = 0; i < rho.rows(); ++i) {
    if (space.decode(i).first[atom] != level) {
      out.row(i).setZero();
      out.col(i).setZero();
    }
  }
  return out;
}

inline double state_weight(const Vec& psi) { return psi.squaredNorm(); }
inline double state_weight(const DenseMat& rho) { return rho.trace().real(); }

/// Applies a measurement stage to every running branch.
template <class S>
std::vector<Running<S>> measure(const std::vector<Running<S>>& in, const Measurement& m,
                                const SpaceDescriptor& space) {
  if (m.atom_index < 0 || m.atom_index >= space.atom_count)
    throw std::invalid_argument("measured atom index out of range");
  std::vector<Running<S>> out;
  for (const auto& r : in) {
    const auto w = measurement_weights(space, m.atom_index, r.state);
    int chosen = -1;
    if (m.mode == MeasureMode::PostSelect) {
      if (m.outcome < 0 || m.outcome >= space.atom_dim) throw std::invalid_argument("post-selected level out of range");
      chosen = m.outcome;
    } else if (m.mode == MeasureMode::Sample) {
      std::mt19937_64 rng(m.seed);
      std::discrete_distribution<int> pick(w.begin(), w.end());
      chosen = pick(rng);
    }
    for (int level = 0; level < space.atom_dim; ++level) {
      if (chosen >= 0 && level != chosen) continue;
      if (chosen < 0 && w[level] <= 0.0) continue;
      S projected = project(space, m.atom_index, level, r.state);
      const std::string label = r.label.empty() ? std::string(1, level_char(level))
                                                : r.label + "/" + level_char(level);
      out.push_back({label, state_weight(projected), std::move(projected)});
    }
  }
  return out;
}

}  // namespace detail

inline ProtocolResult run_plan(const ProtocolPlan& plan, const StateVector& initial, const Engine& engine) {
  const SpaceDescriptor& space = initial.space();
  detail::check_engine(plan, space, engine);
  if (engine.kind == EngineKind::Lindblad) return run_plan(plan, DensityMatrix::from_pure(initial), engine);

  std::vector<detail::Running<Vec>> running{{"", initial.amplitudes().squaredNorm(), initial.amplitudes()}};
  double clock = 0.0;
  for (const auto& stage : plan.stages) {
    if (const auto* d = std::get_if<CollectiveDrive>(&stage)) {
      if (detail::uses_effective(engine)) {
        const Operator u = propagator_u(space, effective_lambda(*d, plan.system), carrier_omega(*d, plan.system), d->duration);
        for (auto& r : running) r.state = u.apply(r.state);
      } else {
        const FrameTag frame = detail::full_frame(engine, *d, plan.system);
        detail::check_frame(frame, plan.system);
        const auto gen = detail::stage_generator(*d, frame, plan.system, space, clock);
        for (auto& r : running) {
          const double w = r.state.norm();
          StateVector psi(space, r.state / w);
          psi = evolve_td(gen.h, psi, 0.0, d->duration, engine.integrator, gen.omega_max);
          if (gen.back_to_lab) psi = *gen.back_to_lab * psi;
          r.state = w * psi.amplitudes();
        }
      }
      clock += d->duration;
    } else if (const auto* t = std::get_if<LocalTransfer>(&stage)) {
      const Operator u = detail::transfer_operator(*t, space);
      for (auto& r : running) r.state = u.apply(r.state);
    } else {
      running = detail::measure(running, std::get<Measurement>(stage), space);
    }
  }

  ProtocolResult result;
  result.timings = plan.timings;
  for (auto& r : running) {
    Branch b;
    b.outcome = r.label.empty() ? "all" : r.label;
    b.probability = r.weight;
    StateVector psi(space, r.state / std::sqrt(r.weight));
    b.atoms = atomic_state(psi);
    if (auto it = plan.targets.find(b.outcome); it != plan.targets.end()) b.fidelity = fidelity(b.atoms, it->second);
    b.state = std::move(psi);
    result.branches.push_back(std::move(b));
  }
  return result;
}

inline ProtocolResult run_plan(const ProtocolPlan& plan, const DensityMatrix& initial, const Engine& engine) {
  const SpaceDescriptor& space = initial.space();
  detail::check_engine(plan, space, engine);

  // Full Schrodinger engines: propagate the eigen-ensemble of the initial state.
  if (engine.kind == EngineKind::FullCavity || engine.kind == EngineKind::FullIon) {
    if (detail::uses_effective(engine)) {
      // falls through to the density-matrix path below
    } else {
      Eigen::SelfAdjointEigenSolver<DenseMat> es(DenseMat(0.5 * (initial.matrix() + initial.matrix().adjoint())));
      std::map<std::string, Branch> merged;
      std::vector<std::string> order;
      double top = 0.0;
      for (Index i = es.eigenvalues().size() - 1; i >= 0; --i) {
        const double p = es.eigenvalues()(i);
        if (p < 1e-14) continue;
        // Leakage is judged on the mixture: a component is only held to its share.
        Engine part_engine = engine;
        part_engine.integrator.leakage_limit = std::min(1.0, engine.integrator.leakage_limit / p);
        const ProtocolResult part = run_plan(plan, StateVector(space, es.eigenvectors().col(i)), part_engine);
        for (const auto& b : part.branches) {
          if (b.state) top += p * b.probability * top_fock_population(b.state->amplitudes(), b.state->space());
          auto [it, fresh] = merged.try_emplace(b.outcome);
          Branch& m = it->second;
          if (fresh) {
            order.push_back(b.outcome);
            m.outcome = b.outcome;
            m.atoms = DensityMatrix(b.atoms.space(), DenseMat::Zero(b.atoms.matrix().rows(), b.atoms.matrix().cols()));
          }
          m.probability += p * b.probability;
          m.atoms.matrix() += p * b.probability * b.atoms.matrix();
        }
      }
      check_leakage(top, engine.integrator.leakage_limit);
      ProtocolResult result;
      result.timings = plan.timings;
      for (const auto& key : order) {
        Branch b = merged[key];
        if (b.probability > 0.0) b.atoms.matrix() /= b.probability;
        if (auto it = plan.targets.find(b.outcome); it != plan.targets.end()) b.fidelity = fidelity(b.atoms, it->second);
        result.branches.push_back(std::move(b));
      }
      return result;
    }
  }

  std::vector<detail::Running<DenseMat>> running{{"", initial.trace().real(), initial.matrix()}};
  double clock = 0.0;
  for (const auto& stage : plan.stages) {
    if (const auto* d = std::get_if<CollectiveDrive>(&stage)) {
      if (detail::uses_effective(engine)) {
        const DenseMat u = propagator_u(space, effective_lambda(*d, plan.system), carrier_omega(*d, plan.system), d->duration).dense();
        for (auto& r : running) r.state = u * r.state * u.adjoint();
      } else {
        const FrameTag frame = detail::full_frame(engine, *d, plan.system);
        detail::check_frame(frame, plan.system);
        const auto gen = detail::stage_generator(*d, frame, plan.system, space, clock);
        for (auto& r : running) {
          const double w = r.state.trace().real();
          DensityMatrix rho(space, r.state / w);
          rho = evolve_lindblad(gen.h, engine.decay, rho, 0.0, d->duration, engine.integrator, gen.omega_max);
          DenseMat m = rho.matrix();
          if (gen.back_to_lab) {
            const DenseMat u = gen.back_to_lab->dense();
            m = u * m * u.adjoint();
          }
          r.state = w * m;
        }
      }
      clock += d->duration;
    } else if (const auto* t = std::get_if<LocalTransfer>(&stage)) {
      const DenseMat u = detail::transfer_operator(*t, space).dense();
      for (auto& r : running) r.state = u * r.state * u.adjoint();
    } else {
      running = detail::measure(running, std::get<Measurement>(stage), space);
    }
  }

  ProtocolResult result;
  result.timings = plan.timings;
  for (auto& r : running) {
    Branch b;
    b.outcome = r.label.empty() ? "all" : r.label;
    b.probability = r.weight;
    b.atoms = atomic_state(DensityMatrix(space, r.state / r.weight));
    if (auto it = plan.targets.find(b.outcome); it != plan.targets.end()) b.fidelity = fidelity(b.atoms, it->second);
    result.branches.push_back(std::move(b));
  }
  return result;
}

}  // namespace cavent
