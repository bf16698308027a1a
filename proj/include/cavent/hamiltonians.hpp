#pragma once
// Hamiltonians for driven atoms in a detuned cavity and for sideband-driven
// trapped ions, across the chain of frames used to derive the
// photon-number-independent effective coupling.
//
// Time-dependent operators are stored as sums of harmonic terms
//   H(t) = sum_k c_k exp(i w_k t) O_k
// so integrators never rebuild sparse matrices.

#include "cavent/algebra.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace cavent {

struct DriveParams {
  double g = 0.0;      // atom-cavity coupling
  double delta = 0.0;  // detuning
  double omega = 0.0;  // classical-field (cavity) or laser (ion) Rabi frequency
  double phi = 0.0;    // laser phase (ion)
  double eta = 0.0;    // Lamb-Dicke parameter (ion)
  double nu = 0.0;     // trap frequency (ion)
  int lamb_dicke_order = 2;

  void validate() const {
    if (!(g >= 0.0)) throw std::invalid_argument("g must be non-negative");
    if (!(omega >= 0.0)) throw std::invalid_argument("omega must be non-negative");
    if (!(eta >= 0.0 && eta < 1.0)) throw std::invalid_argument("eta must lie in [0, 1)");
    if (!(nu >= 0.0)) throw std::invalid_argument("nu must be non-negative");
    if (lamb_dicke_order < 0) throw std::invalid_argument("lamb_dicke_order must be non-negative");
    if (!std::isfinite(delta)) throw std::invalid_argument("delta must be finite");
  }
};

enum class FrameTag {
  InteractionPicture,  // driven Tavis-Cummings, interaction picture
  PlusMinusRotated,    // rotating frame of H0 = 2 Omega sum sigma_z, dressed basis
  SlowFrame,           // fast e^{+-2i Omega t} terms dropped
  Effective,           // lambda [..] = 2 lambda Sx^2
  IonInteraction,      // resolved-sideband series with e^{-eta^2/2}
  IonLambDicke,        // first order in eta
};

inline bool is_ion_frame(FrameTag f) {
  return f == FrameTag::IonInteraction || f == FrameTag::IonLambDicke;
}

inline const char* frame_name(FrameTag f) {
  switch (f) {
    case FrameTag::InteractionPicture: return "interaction";
    case FrameTag::PlusMinusRotated: return "rotated";
    case FrameTag::SlowFrame: return "slow";
    case FrameTag::Effective: return "effective";
    case FrameTag::IonInteraction: return "ion-interaction";
    case FrameTag::IonLambDicke: return "ion-lamb-dicke";
  }
  return "?";
}

struct HarmonicTerm {
  cplx amplitude;
  double frequency;
  SparseMat op;
};

class TimeDependentOperator {
 public:
  explicit TimeDependentOperator(SpaceDescriptor space) : space_(space) {}

  void add(cplx amplitude, double frequency, const Operator& op) {
    if (!(op.space() == space_)) throw std::invalid_argument("term lives on a different space");
    if (amplitude == cplx(0.0) || op.sparse().nonZeros() == 0) return;
    terms_.push_back({amplitude, frequency, op.sparse()});
  }

  const SpaceDescriptor& space() const { return space_; }
  const std::vector<HarmonicTerm>& terms() const { return terms_; }

  Operator at(double t) const {
    SparseMat m(space_.dimension(), space_.dimension());
    for (const auto& term : terms_) m += coefficient(term, t) * term.op;
    return {space_, std::move(m)};
  }

  /// out = H(t) v
  template <class Mat>
  void apply(double t, const Mat& v, Mat& out) const {
    out.setZero(v.rows(), v.cols());
    for (const auto& term : terms_) out.noalias() += coefficient(term, t) * (term.op * v);
  }

  /// Largest |w_k| together with the largest static coupling scale; used for step caps.
  double fastest_scale() const {
    double w = 0.0;
    for (const auto& term : terms_)
      w = std::max({w, std::abs(term.frequency), std::abs(term.amplitude) * max_norm(term.op)});
    return w;
  }

  /// Same operator expressed on a clock started `offset` later: H'(tau) = H(offset + tau).
  TimeDependentOperator shifted(double offset) const {
    TimeDependentOperator out(space_);
    out.terms_ = terms_;
    for (auto& term : out.terms_) term.amplitude *= std::exp(kI * term.frequency * offset);
    return out;
  }

  static cplx coefficient(const HarmonicTerm& term, double t) {
    return term.frequency == 0.0 ? term.amplitude : term.amplitude * std::exp(kI * term.frequency * t);
  }

 private:
  SpaceDescriptor space_;
  std::vector<HarmonicTerm> terms_;
};

// ---------------------------------------------------------------------------
// Local matrices in the dressed basis |+-> = (|g> +- |e>)/sqrt(2), written in
// the bare g/e basis.

inline DenseMat local_dressed_sz(int d) {  // (|+><+| - |-><-|)/2 = (S+ + S-)/2
  return 0.5 * (local_raise(d) + local_lower(d));
}
inline DenseMat local_dressed_raise(int d) {  // |+><-|
  DenseMat m = DenseMat::Zero(d, d);
  m(0, 0) = 0.5;
  m(0, 1) = -0.5;
  m(1, 0) = 0.5;
  m(1, 1) = -0.5;
  return m;
}

inline void require_mode(const SpaceDescriptor& space, const char* who) {
  if (!space.has_mode()) throw std::invalid_argument(std::string(who) + " needs a space with a mode");
}

// ---------------------------------------------------------------------------

inline double lambda_cavity(double g, double delta) {
  if (delta == 0.0) throw std::invalid_argument("lambda undefined at zero detuning");
  return g * g / (2.0 * delta);
}

inline double lambda_ion(double omega, double eta, double delta) {
  if (delta == 0.0) throw std::invalid_argument("lambda undefined at zero detuning");
  return 2.0 * omega * omega * eta * eta / delta;
}

/// H0 = 2 Omega sum_j sigma_z,j = Omega sum_j (S_j^+ + S_j^-).
inline Operator h0_drive(const SpaceDescriptor& space, double omega) {
  const int d = space.atom_dim;
  return omega * collective(space, local_raise(d) + local_lower(d));
}

inline TimeDependentOperator interaction_terms(const SpaceDescriptor& space, const DriveParams& p) {
  require_mode(space, "h_interaction");
  const int d = space.atom_dim;
  const auto [a, ad] = boson_ops(space);
  const Operator sp = collective(space, local_raise(d));
  const Operator sm = collective(space, local_lower(d));
  TimeDependentOperator h(space);
  h.add(p.g, -p.delta, ad * sm);
  h.add(p.g, p.delta, a * sp);
  h.add(p.omega, 0.0, sp + sm);
  return h;
}

inline Operator h_interaction(const SpaceDescriptor& space, const DriveParams& p, double t) {
  return interaction_terms(space, p).at(t);
}

/// Exact image of the interaction-picture coupling in the rotating frame of H0.
/// `drive_origin` is the time at which that frame was attached; the cavity phases
/// keep running on the global clock.
inline TimeDependentOperator rotated_terms(const SpaceDescriptor& space, const DriveParams& p,
                                           double drive_origin = 0.0) {
  require_mode(space, "h_rotated");
  const int d = space.atom_dim;
  const auto [a, ad] = boson_ops(space);
  const Operator sz = collective(space, local_dressed_sz(d));
  const Operator sp = collective(space, local_dressed_raise(d));
  const Operator sm = sp.adjoint();
  const double w = 2.0 * p.omega;
  const cplx shift = std::exp(-kI * w * drive_origin);
  // S^- = sz - sp/2 + sm/2 and S^+ = sz + sp/2 - sm/2 in the dressed basis.
  TimeDependentOperator h(space);
  h.add(p.g, -p.delta, ad * sz);
  h.add(-0.5 * p.g * shift, w - p.delta, ad * sp);
  h.add(0.5 * p.g / shift, -w - p.delta, ad * sm);
  h.add(p.g, p.delta, a * sz);
  h.add(0.5 * p.g * shift, w + p.delta, a * sp);
  h.add(-0.5 * p.g / shift, p.delta - w, a * sm);
  return h;
}

inline Operator h_rotated(const SpaceDescriptor& space, const DriveParams& p, double t) {
  return rotated_terms(space, p).at(t);
}

/// (g/2)(e^{-i delta t} a^+ + e^{i delta t} a) sum_j (S_j^+ + S_j^-).
inline TimeDependentOperator slow_terms(const SpaceDescriptor& space, const DriveParams& p) {
  require_mode(space, "h_slow");
  const int d = space.atom_dim;
  const auto [a, ad] = boson_ops(space);
  const Operator sx2 = collective(space, local_raise(d) + local_lower(d));
  TimeDependentOperator h(space);
  h.add(0.5 * p.g, -p.delta, ad * sx2);
  h.add(0.5 * p.g, p.delta, a * sx2);
  return h;
}

inline Operator h_slow(const SpaceDescriptor& space, const DriveParams& p, double t) {
  return slow_terms(space, p).at(t);
}

/// lambda [ 1/2 sum_j (|e_j><e_j| + |g_j><g_j|) + sum_{j<k} (S_j^+ S_k^+ + S_j^+ S_k^- + H.c.) ],
/// identity on any mode factor.
inline Operator h_effective(const SpaceDescriptor& space, double lambda) {
  if (!std::isfinite(lambda)) throw std::invalid_argument("lambda must be finite");
  const int d = space.atom_dim;
  Operator h = 0.5 * collective(space, local_ge_identity(d));
  std::vector<Operator> sp, sm;
  for (int j = 0; j < space.atom_count; ++j) {
    sp.push_back(embed_atom_op(space, j, local_raise(d)));
    sm.push_back(embed_atom_op(space, j, local_lower(d)));
  }
  for (int j = 0; j < space.atom_count; ++j) {
    for (int k = j + 1; k < space.atom_count; ++k) {
      const Operator pair = sp[j] * sp[k] + sp[j] * sm[k];
      h += pair + pair.adjoint();
    }
  }
  return lambda * h;
}

/// Mode matrices A = sum_j c_j a^+^{j+1} a^j and B = sum_j c_j a^+^j a^{j+1}
/// with c_j = (i eta)^{2j+1} / (j! (j+1)!).
inline std::pair<DenseMat, DenseMat> sideband_mode_matrices(int cutoff, double eta, int order) {
  const DenseMat a = mode_annihilation(cutoff);
  const DenseMat ad = a.adjoint();
  const Index md = cutoff + 1;
  DenseMat A = DenseMat::Zero(md, md), B = DenseMat::Zero(md, md);
  DenseMat ad_pow = DenseMat::Identity(md, md), a_pow = DenseMat::Identity(md, md);
  double fact = 1.0;
  for (int j = 0; j <= order; ++j) {
    if (j > 0) {
      ad_pow = ad_pow * ad;
      a_pow = a_pow * a;
      fact *= j;
    }
    const cplx c = std::pow(kI * eta, 2 * j + 1) / (fact * fact * (j + 1));
    A += c * (ad * ad_pow * a_pow);
    B += c * (ad_pow * a_pow * a);
  }
  return {A, B};
}

/// Ion Hamiltonians. IonInteraction keeps `lamb_dicke_order`+1 series terms and
/// the e^{-eta^2/2} prefactor; IonLambDicke is the first-order form without it.
inline TimeDependentOperator ion_terms(const SpaceDescriptor& space, const DriveParams& p,
                                       FrameTag frame) {
  require_mode(space, "h_ion");
  if (!is_ion_frame(frame)) throw std::invalid_argument("h_ion needs an ion frame");
  if (p.eta < 0.0) throw std::invalid_argument("eta must be non-negative");
  const int d = space.atom_dim;
  const bool series = frame == FrameTag::IonInteraction;
  const auto [A, B] = sideband_mode_matrices(space.fock_cutoff, p.eta, series ? p.lamb_dicke_order : 0);
  const Operator sp = collective(space, local_raise(d));
  const Operator up = sp * embed_mode_op(space, A);    // carries e^{-i delta t}
  const Operator down = sp * embed_mode_op(space, B);  // carries e^{+i delta t}
  const cplx amp = p.omega * std::exp(-kI * p.phi) * (series ? std::exp(-p.eta * p.eta / 2.0) : 1.0);
  TimeDependentOperator h(space);
  h.add(amp, -p.delta, up);
  h.add(amp, p.delta, down);
  h.add(std::conj(amp), p.delta, up.adjoint());
  h.add(std::conj(amp), -p.delta, down.adjoint());
  return h;
}

inline Operator h_ion(const SpaceDescriptor& space, const DriveParams& p, double t, FrameTag frame) {
  return ion_terms(space, p, frame).at(t);
}

/// Hamiltonian of one drive stage in the requested frame. Effective frames are
/// time independent and returned as a single static term.
inline TimeDependentOperator frame_terms(const SpaceDescriptor& space, const DriveParams& p,
                                         FrameTag frame, double drive_origin = 0.0) {
  switch (frame) {
    case FrameTag::InteractionPicture: return interaction_terms(space, p);
    case FrameTag::PlusMinusRotated: return rotated_terms(space, p, drive_origin);
    case FrameTag::SlowFrame: return slow_terms(space, p);
    case FrameTag::IonInteraction:
    case FrameTag::IonLambDicke: return ion_terms(space, p, frame);
    case FrameTag::Effective: {
      TimeDependentOperator h(space);
      h.add(1.0, 0.0, h_effective(space, lambda_cavity(p.g, p.delta)));
      return h;
    }
  }
  throw std::invalid_argument("unknown frame");
}

}  // namespace cavent
