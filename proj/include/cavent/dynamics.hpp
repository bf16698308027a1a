#pragma once
// Propagators: adaptive Dormand-Prince integration of the Schrodinger and
// Lindblad equations, exact exponentials of time-independent generators, the
// factored effective propagator, and thermal mode states.

#include "cavent/algebra.hpp"
#include "cavent/errors.hpp"
#include "cavent/hamiltonians.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <vector>

namespace cavent {

struct IntegratorConfig {
  double rel_tol = 1e-10;
  double abs_tol = 1e-12;
  /// Unset: 2 pi / (20 omega_max) from the active stage.
  std::optional<double> max_step;
  /// Allowed population in the two highest Fock levels.
  double leakage_limit = 1e-6;

  void validate() const {
    if (!(rel_tol > 0.0) || !(abs_tol > 0.0)) throw std::invalid_argument("tolerances must be positive");
    if (max_step && !(*max_step > 0.0)) throw std::invalid_argument("max_step must be positive");
  }
};

inline double default_max_step(double omega_max) {
  if (!(omega_max > 0.0)) return std::numeric_limits<double>::infinity();
  return 2.0 * std::numbers::pi / (20.0 * omega_max);
}

/// omega_max = max(2 Omega, |delta|, g, nu) for a cavity stage.
inline double cavity_frequency_scale(const DriveParams& p) {
  return std::max({2.0 * p.omega, std::abs(p.delta), p.g, p.nu});
}

/// Ion stages have no carrier; the sideband coupling 2 eta Omega plays the role of g.
inline double ion_frequency_scale(const DriveParams& p) {
  return std::max({std::abs(p.delta), 2.0 * p.eta * p.omega, p.nu});
}

struct ThermalSpec {
  double nbar = 0.0;
  int cutoff = 0;
};

struct DecaySpec {
  double kappa = 0.0;
  double nbar_bath = 0.0;

  void validate() const {
    if (!(kappa >= 0.0) || !(nbar_bath >= 0.0))
      throw std::invalid_argument("kappa and nbar_bath must be non-negative");
  }
};

/// Bose-Einstein weight beyond `cutoff`: (nbar/(1+nbar))^(cutoff+1).
inline double thermal_tail(double nbar, int cutoff) {
  if (nbar == 0.0) return 0.0;
  return std::pow(nbar / (1.0 + nbar), cutoff + 1);
}

/// Smallest cutoff whose tail mass is below `tail`.
inline int thermal_cutoff_for(double nbar, double tail = 1e-8) {
  int c = 0;
  while (thermal_tail(nbar, c) >= tail) ++c;
  return c;
}

inline ThermalSpec make_thermal_spec(double nbar, int cutoff) {
  if (!(nbar >= 0.0)) throw std::invalid_argument("nbar must be non-negative");
  if (cutoff < 0) throw std::invalid_argument("thermal cutoff must be non-negative");
  if (thermal_tail(nbar, cutoff) >= 1e-8) {
    std::ostringstream msg;
    msg << "thermal tail mass beyond cutoff " << cutoff << " is " << thermal_tail(nbar, cutoff)
        << " (needs < 1e-8)";
    throw std::invalid_argument(msg.str());
  }
  return {nbar, cutoff};
}

/// p_n = nbar^n / (1+nbar)^(n+1) for n <= cutoff; not renormalized.
inline std::vector<double> thermal_probabilities(const ThermalSpec& spec) {
  std::vector<double> p(spec.cutoff + 1);
  const double r = spec.nbar / (1.0 + spec.nbar);
  double w = 1.0 / (1.0 + spec.nbar);
  for (int n = 0; n <= spec.cutoff; ++n, w *= r) p[n] = w;
  return p;
}

/// |atoms><atoms| x sum_n p_n |n><n|.
inline DensityMatrix thermal_state(const SpaceDescriptor& space, const ThermalSpec& spec,
                                   const StateVector& atoms) {
  require_mode(space, "thermal_state");
  make_thermal_spec(spec.nbar, spec.cutoff);
  if (spec.cutoff > space.fock_cutoff) throw std::invalid_argument("thermal cutoff exceeds space cutoff");
  if (atoms.space() != space.atoms_only()) throw std::invalid_argument("atomic state must be atoms-only");
  const auto p = thermal_probabilities(spec);
  DenseMat mode = DenseMat::Zero(space.mode_dim(), space.mode_dim());
  for (int n = 0; n <= spec.cutoff; ++n) mode(n, n) = p[n];
  const DenseMat atomic = atoms.amplitudes() * atoms.amplitudes().adjoint();
  return {space, Eigen::kroneckerProduct(atomic, mode).eval()};
}

// ---------------------------------------------------------------------------
// Dormand-Prince 5(4) with FSAL and a hard step cap. State may be a vector or
// a matrix.

namespace detail {

/// max|err| / (atol + rtol * max|y|): the tolerance is relative to the size of
/// the whole state, so near-zero amplitudes do not force tiny steps.
template <class State>
double scaled_error(const State& err, const State& y0, const State& y1, double atol, double rtol) {
  const double scale = atol + rtol * std::max(y0.cwiseAbs().maxCoeff(), y1.cwiseAbs().maxCoeff());
  return err.cwiseAbs().maxCoeff() / scale;
}

}  // namespace detail

/// Integrates y' = rhs(t, y) from t0 through every time in `stops` (ascending,
/// last one = final time) and calls on_stop(index, y) at each.
template <class State, class Rhs, class OnStop>
void dopri5(Rhs&& rhs, State& y, double t0, std::span<const double> stops, double rtol, double atol,
            double max_step, OnStop&& on_stop) {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                          b6 = 11.0 / 84;
  // b - b* (embedded 4th order)
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                          e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

  State k1, k2, k3, k4, k5, k6, k7, y_new, err;
  double t = t0;
  rhs(t, y, k1);
  const double span_total = stops.empty() ? 0.0 : stops.back() - t0;
  double h = std::min(max_step, std::max(1e-6 * span_total, 1e-3 * std::min(max_step, span_total)));
  if (!(h > 0.0)) h = 1e-3;
  long rejected_in_row = 0;

  for (size_t s = 0; s < stops.size(); ++s) {
    const double target = stops[s];
    while (t < target) {
      const bool last = t + h >= target;
      const double step = last ? target - t : h;
      rhs(t + c2 * step, (y + step * a21 * k1).eval(), k2);
      rhs(t + c3 * step, (y + step * (a31 * k1 + a32 * k2)).eval(), k3);
      rhs(t + c4 * step, (y + step * (a41 * k1 + a42 * k2 + a43 * k3)).eval(), k4);
      rhs(t + c5 * step, (y + step * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4)).eval(), k5);
      rhs(t + step, (y + step * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5)).eval(), k6);
      y_new = y + step * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
      rhs(t + step, y_new, k7);
      err = step * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
      const double en = detail::scaled_error(err, y, y_new, atol, rtol);
      const double factor = en == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 5.0);
      if (en <= 1.0) {
        t = last ? target : t + step;
        y.swap(y_new);
        k1.swap(k7);
        rejected_in_row = 0;
        // A shortened final step says nothing about the natural step size.
        if (!last) h = std::min(max_step, step * factor);
      } else {
        h = step * std::max(factor, 0.1);
        if (++rejected_in_row > 60 || h < 1e-14 * std::max(1.0, std::abs(t)))
          throw IntegratorError("step size underflow in adaptive integrator");
      }
    }
    on_stop(s, y);
  }
}

// ---------------------------------------------------------------------------

inline double top_fock_population(const Vec& psi, const SpaceDescriptor& space) {
  if (!space.has_mode() || space.fock_cutoff < 2) return 0.0;
  const Index md = space.mode_dim();
  double p = 0.0;
  for (Index i = 0; i < psi.size(); ++i)
    if (i % md >= md - 2) p += std::norm(psi(i));
  return p;
}

inline double top_fock_population(const DenseMat& rho, const SpaceDescriptor& space) {
  if (!space.has_mode() || space.fock_cutoff < 2) return 0.0;
  const Index md = space.mode_dim();
  double p = 0.0;
  for (Index i = 0; i < rho.rows(); ++i)
    if (i % md >= md - 2) p += rho(i, i).real();
  return p;
}

inline void check_leakage(double top_population, double limit) {
  if (top_population > limit) {
    std::ostringstream msg;
    msg << "Fock truncation leakage: population " << top_population
        << " in the two highest levels exceeds " << limit;
    throw TruncationError(msg.str());
  }
}

namespace detail {

inline void settle_norm(Vec& psi, double reference_norm) {
  const double n = psi.norm();
  const double drift = std::abs(n - reference_norm);
  if (drift > 1e-6) {
    std::ostringstream msg;
    msg << "norm drift " << drift << " exceeds 1e-6";
    throw IntegratorError(msg.str());
  }
  if (drift < 1e-8) psi *= reference_norm / n;
}

inline double resolve_max_step(const IntegratorConfig& config, double omega_max) {
  return config.max_step ? *config.max_step : default_max_step(omega_max);
}

}  // namespace detail

/// Schrodinger evolution sampled at `times` (ascending, all >= t0). The clock of
/// `h` is absolute.
inline std::vector<StateVector> evolve_td_sampled(const TimeDependentOperator& h, const StateVector& state,
                                                  double t0, std::span<const double> times,
                                                  const IntegratorConfig& config,
                                                  std::optional<double> omega_max = std::nullopt) {
  config.validate();
  if (!(h.space() == state.space())) throw std::invalid_argument("Hamiltonian/state space mismatch");
  for (size_t i = 0; i < times.size(); ++i)
    if (times[i] < t0 || (i > 0 && times[i] < times[i - 1]))
      throw std::invalid_argument("sample times must be ascending and not before t0");
  const double max_step = detail::resolve_max_step(config, omega_max.value_or(h.fastest_scale()));
  const double ref = state.norm();
  Vec y = state.amplitudes();
  std::vector<StateVector> out;
  out.reserve(times.size());
  auto rhs = [&h](double t, const Vec& v, Vec& dv) {
    h.apply(t, v, dv);
    dv *= -kI;
  };
  dopri5(rhs, y, t0, times, config.rel_tol, config.abs_tol, max_step, [&](size_t, Vec& yy) {
    detail::settle_norm(yy, ref);
    check_leakage(top_fock_population(yy, state.space()), config.leakage_limit);
    out.emplace_back(state.space(), yy);
  });
  return out;
}

inline StateVector evolve_td(const TimeDependentOperator& h, const StateVector& state, double t0, double t1,
                             const IntegratorConfig& config = {},
                             std::optional<double> omega_max = std::nullopt) {
  if (t1 < t0) throw std::invalid_argument("t1 must not precede t0");
  if (t1 == t0) return state;
  const double stops[] = {t1};
  return evolve_td_sampled(h, state, t0, stops, config, omega_max).back();
}

// ---------------------------------------------------------------------------

enum class ExpMethod { Eigen, Squaring };

inline void require_hermitian(const DenseMat& h) {
  const double scale = std::max(1.0, max_norm(h));
  if (max_norm(DenseMat(h - h.adjoint())) > 1e-10 * scale)
    throw std::invalid_argument("generator is not Hermitian");
}

/// exp(-i H t) for Hermitian H.
inline DenseMat unitary_ti(const DenseMat& h, double duration, ExpMethod method = ExpMethod::Eigen) {
  require_hermitian(h);
  if (method == ExpMethod::Squaring) return DenseMat((-kI * duration * h).exp());
  Eigen::SelfAdjointEigenSolver<DenseMat> es(DenseMat(0.5 * (h + h.adjoint())));
  const Vec phases = (-kI * duration * es.eigenvalues().cast<cplx>()).array().exp();
  return es.eigenvectors() * phases.asDiagonal() * es.eigenvectors().adjoint();
}

inline StateVector evolve_ti(const Operator& h, const StateVector& state, double duration,
                             ExpMethod method = ExpMethod::Eigen) {
  if (!(h.space() == state.space())) throw std::invalid_argument("Hamiltonian/state space mismatch");
  if (duration == 0.0) {
    require_hermitian(h.dense());
    return state;
  }
  return {state.space(), unitary_ti(h.dense(), duration, method) * state.amplitudes()};
}

/// U(t) = exp(-i H0 t) exp(-i He t), built on the atoms and lifted as U x I_mode.
/// H0 and He commute (both are functions of Sx).
inline Operator propagator_u(const SpaceDescriptor& space, double lambda, double omega, double t) {
  // Both factors are functions of Sx, a sum of single-atom terms: diagonalize
  // one atom ((|g> +- |e>)/sqrt 2 at +-1/2, other levels at 0) and take products.
  const SpaceDescriptor atoms = space.atoms_only();
  const int d = atoms.atom_dim;
  DenseMat v = DenseMat::Identity(d, d);
  const double r = std::sqrt(0.5);
  v(0, 0) = r, v(1, 0) = r, v(0, 1) = r, v(1, 1) = -r;
  std::vector<double> local(d, 0.0);
  local[0] = 0.5, local[1] = -0.5;

  DenseMat basis = DenseMat::Ones(1, 1);
  std::vector<double> sx{0.0};
  for (int j = 0; j < atoms.atom_count; ++j) {
    basis = Eigen::kroneckerProduct(basis, v).eval();
    std::vector<double> next;
    next.reserve(sx.size() * d);
    for (double s : sx)
      for (double l : local) next.push_back(s + l);
    sx = std::move(next);
  }
  Vec phase(basis.rows());
  for (Index i = 0; i < phase.size(); ++i)
    phase(i) = std::exp(-kI * t * (2.0 * omega * sx[i] + 2.0 * lambda * sx[i] * sx[i]));
  const DenseMat u = basis * phase.asDiagonal() * basis.adjoint();
  return lift_atomic(Operator(atoms, u), space);
}

// ---------------------------------------------------------------------------

/// drho/dt = -i[H, rho] + sum_k (L_k rho L_k^+ - {L_k^+ L_k, rho}/2) with
/// L_1 = sqrt(kappa (1+nb)) a, L_2 = sqrt(kappa nb) a^+.
inline DensityMatrix evolve_lindblad(const TimeDependentOperator& h, const DecaySpec& decay,
                                     const DensityMatrix& rho, double t0, double t1,
                                     const IntegratorConfig& config = {},
                                     std::optional<double> omega_max = std::nullopt) {
  config.validate();
  decay.validate();
  if (!(h.space() == rho.space())) throw std::invalid_argument("Hamiltonian/state space mismatch");
  if (t1 < t0) throw std::invalid_argument("t1 must not precede t0");
  const SpaceDescriptor& space = rho.space();
  std::vector<SparseMat> jumps;
  if (decay.kappa > 0.0) {
    const auto [a, ad] = boson_ops(space);
    jumps.push_back(std::sqrt(decay.kappa * (1.0 + decay.nbar_bath)) * a.sparse());
    if (decay.nbar_bath > 0.0) jumps.push_back(std::sqrt(decay.kappa * decay.nbar_bath) * ad.sparse());
  }
  std::vector<SparseMat> jumps_dag;
  SparseMat damping(space.dimension(), space.dimension());  // sum L^+ L / 2
  for (const auto& l : jumps) {
    jumps_dag.emplace_back(l.adjoint());
    damping += 0.5 * SparseMat(jumps_dag.back() * l);
  }

  DenseMat y = rho.matrix();
  if (t1 == t0) return rho;
  const double ref_trace = y.trace().real();
  DenseMat hy;
  SparseMat ht;
  auto rhs = [&](double t, const DenseMat& r, DenseMat& dr) {
    // One sparse sum then a single product beats per-term dense temporaries here.
    ht = h.at(t).sparse();
    hy.noalias() = ht * r;
    // -i(H r - r H) with r H = (H r)^+ for Hermitian r
    dr = -kI * (hy - hy.adjoint());
    if (!jumps.empty()) {
      const DenseMat dampr = damping * r;
      dr -= dampr + dampr.adjoint();
      for (const auto& l : jumps) dr += l * DenseMat((l * r).adjoint());
    }
  };
  const double max_step = detail::resolve_max_step(config, omega_max.value_or(h.fastest_scale()));
  const double stops[] = {t1};
  dopri5(rhs, y, t0, stops, config.rel_tol, config.abs_tol, max_step, [](size_t, DenseMat&) {});

  const double drift = std::abs(y.trace().real() - ref_trace);
  if (drift > 1e-6) {
    std::ostringstream msg;
    msg << "trace drift " << drift << " exceeds 1e-6";
    throw IntegratorError(msg.str());
  }
  y = 0.5 * (y + y.adjoint()).eval();
  if (drift < 1e-8) y *= ref_trace / y.trace().real();
  check_leakage(top_fock_population(y, space), config.leakage_limit);
  return {space, std::move(y)};
}

}  // namespace cavent
