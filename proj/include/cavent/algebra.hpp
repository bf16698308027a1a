#pragma once
// Composite Hilbert space of N multi-level atoms and an optional bosonic mode,
// plus the operator and state carriers the rest of the library works with.
//
// Basis ordering: flat index = (((l_1*d + l_2)*d + ...)*d + l_N)*(n_max+1) + n,
// atom 0 is the most significant digit and the Fock index is the fastest.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>
#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <complex>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cavent {

using cplx = std::complex<double>;
using SparseMat = Eigen::SparseMatrix<cplx>;
using DenseMat = Eigen::MatrixXcd;
using Vec = Eigen::VectorXcd;
using Index = Eigen::Index;

inline constexpr cplx kI{0.0, 1.0};

/// Atomic level labels; the numeric value is the local basis index.
enum class Level : int { g = 0, e = 1, f = 2, h = 3 };

inline char level_char(int level) {
  static constexpr char names[] = {'g', 'e', 'f', 'h'};
  if (level < 0 || level > 3) throw std::invalid_argument("level index out of range");
  return names[level];
}

inline int level_from_char(char c) {
  switch (c) {
    case 'g': return 0;
    case 'e': return 1;
    case 'f': return 2;
    case 'h': return 3;
    // The opening of the scheme calls the third level |i>; same level as |f>.
    case 'i': return 2;
    default: throw std::invalid_argument(std::string("unknown level label '") + c + "'");
  }
}

struct SpaceDescriptor {
  int atom_count = 1;
  int atom_dim = 2;
  int fock_cutoff = 0;
  bool no_mode = true;

  bool has_mode() const { return !no_mode; }
  Index mode_dim() const { return no_mode ? 1 : Index(fock_cutoff) + 1; }
  Index atom_block_dim() const {
    Index d = 1;
    for (int i = 0; i < atom_count; ++i) d *= atom_dim;
    return d;
  }
  Index dimension() const { return atom_block_dim() * mode_dim(); }

  SpaceDescriptor atoms_only() const { return {atom_count, atom_dim, 0, true}; }
  SpaceDescriptor with_mode(int cutoff) const { return {atom_count, atom_dim, cutoff, false}; }

  /// Same atoms (count and levels); mode factor may differ.
  bool same_atoms(const SpaceDescriptor& o) const {
    return atom_count == o.atom_count && atom_dim == o.atom_dim;
  }

  Index encode(std::span<const int> levels, int n = 0) const {
    if (static_cast<int>(levels.size()) != atom_count)
      throw std::invalid_argument("level list length does not match atom count");
    Index idx = 0;
    for (int l : levels) {
      if (l < 0 || l >= atom_dim) throw std::invalid_argument("level outside atom dimension");
      idx = idx * atom_dim + l;
    }
    if (n < 0 || Index(n) >= mode_dim()) throw std::invalid_argument("Fock index outside cutoff");
    return idx * mode_dim() + n;
  }

  std::pair<std::vector<int>, int> decode(Index flat) const {
    if (flat < 0 || flat >= dimension()) throw std::invalid_argument("flat index out of range");
    const int n = static_cast<int>(flat % mode_dim());
    Index atoms = flat / mode_dim();
    std::vector<int> levels(atom_count);
    for (int j = atom_count - 1; j >= 0; --j) {
      levels[j] = static_cast<int>(atoms % atom_dim);
      atoms /= atom_dim;
    }
    return {std::move(levels), n};
  }

  friend bool operator==(const SpaceDescriptor&, const SpaceDescriptor&) = default;
};

inline SpaceDescriptor make_space(int atom_count, int atom_dim, int fock_cutoff, bool no_mode) {
  if (atom_count < 1) throw std::invalid_argument("atom_count must be at least 1");
  if (atom_dim < 2 || atom_dim > 4) throw std::invalid_argument("atom_dim must be 2, 3 or 4");
  if (fock_cutoff < 0) throw std::invalid_argument("fock_cutoff must be non-negative");
  return SpaceDescriptor{atom_count, atom_dim, no_mode ? 0 : fock_cutoff, no_mode};
}

/// Parses a product-basis label such as "gge" (atoms only) or "gge,3".
inline std::pair<std::vector<int>, int> parse_label(const SpaceDescriptor& space,
                                                    const std::string& label) {
  std::string atoms = label;
  int n = 0;
  if (auto comma = label.find(','); comma != std::string::npos) {
    atoms = label.substr(0, comma);
    n = std::stoi(label.substr(comma + 1));
  }
  if (static_cast<int>(atoms.size()) != space.atom_count)
    throw std::invalid_argument("label '" + label + "' does not name every atom");
  std::vector<int> levels;
  for (char c : atoms) levels.push_back(level_from_char(c));
  return {levels, n};
}

inline std::string uniform_label(int atom_count, int level) {
  return std::string(static_cast<size_t>(atom_count), level_char(level));
}

class Operator {
 public:
  Operator() = default;
  Operator(SpaceDescriptor space, SparseMat m) : space_(space), m_(std::move(m)) {
    if (m_.rows() != space_.dimension() || m_.cols() != space_.dimension())
      throw std::invalid_argument("operator matrix does not match space dimension");
    m_.makeCompressed();
  }
  Operator(SpaceDescriptor space, const DenseMat& m) : Operator(space, SparseMat(m.sparseView(0.0, 0.0))) {}

  static Operator zero(SpaceDescriptor s) { return {s, SparseMat(s.dimension(), s.dimension())}; }
  static Operator identity(SpaceDescriptor s) {
    SparseMat id(s.dimension(), s.dimension());
    id.setIdentity();
    return {s, std::move(id)};
  }

  const SpaceDescriptor& space() const { return space_; }
  const SparseMat& sparse() const { return m_; }
  DenseMat dense() const { return DenseMat(m_); }
  Index dimension() const { return m_.rows(); }

  Operator adjoint() const { return {space_, SparseMat(m_.adjoint())}; }

  Vec apply(const Vec& v) const { return m_ * v; }

  Operator& operator+=(const Operator& o) {
    check(o);
    m_ += o.m_;
    return *this;
  }
  Operator& operator-=(const Operator& o) {
    check(o);
    m_ -= o.m_;
    return *this;
  }
  friend Operator operator+(Operator a, const Operator& b) { return a += b; }
  friend Operator operator-(Operator a, const Operator& b) { return a -= b; }
  friend Operator operator*(const Operator& a, const Operator& b) {
    a.check(b);
    return {a.space_, SparseMat(a.m_ * b.m_)};
  }
  friend Operator operator*(cplx s, const Operator& a) { return {a.space_, SparseMat(s * a.m_)}; }
  friend Operator operator*(double s, const Operator& a) { return cplx(s) * a; }

 private:
  void check(const Operator& o) const {
    if (!(space_ == o.space_)) throw std::invalid_argument("operators live on different spaces");
  }

  SpaceDescriptor space_;
  SparseMat m_;
};

inline Operator commutator(const Operator& a, const Operator& b) { return a * b - b * a; }

/// Largest absolute entry; all tolerances in this library use this norm.
inline double max_norm(const SparseMat& m) {
  double r = 0.0;
  for (Index k = 0; k < m.outerSize(); ++k)
    for (SparseMat::InnerIterator it(m, k); it; ++it) r = std::max(r, std::abs(it.value()));
  return r;
}
inline double max_norm(const DenseMat& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }
inline double max_norm(const Operator& op) { return max_norm(op.sparse()); }

inline double hermiticity_defect(const Operator& op) {
  return max_norm(SparseMat(op.sparse() - SparseMat(op.sparse().adjoint())));
}

class StateVector {
 public:
  StateVector() = default;
  StateVector(SpaceDescriptor space, Vec amplitudes) : space_(space), amps_(std::move(amplitudes)) {
    if (amps_.size() != space_.dimension())
      throw std::invalid_argument("amplitude vector does not match space dimension");
  }

  static StateVector basis(SpaceDescriptor space, std::span<const int> levels, int n = 0) {
    Vec v = Vec::Zero(space.dimension());
    v(space.encode(levels, n)) = 1.0;
    return {space, std::move(v)};
  }
  static StateVector basis(SpaceDescriptor space, const std::string& label) {
    auto [levels, n] = parse_label(space, label);
    return basis(space, levels, n);
  }
  /// Every atom in `level`, mode in |n>.
  static StateVector uniform(SpaceDescriptor space, int level, int n = 0) {
    std::vector<int> levels(space.atom_count, level);
    return basis(space, levels, n);
  }

  const SpaceDescriptor& space() const { return space_; }
  const Vec& amplitudes() const { return amps_; }
  Vec& amplitudes() { return amps_; }
  cplx operator[](Index i) const { return amps_(i); }
  double norm() const { return amps_.norm(); }
  StateVector normalized() const { return {space_, amps_ / amps_.norm()}; }

  friend StateVector operator*(const Operator& op, const StateVector& s) {
    if (!(op.space() == s.space_)) throw std::invalid_argument("operator/state space mismatch");
    return {s.space_, op.apply(s.amps_)};
  }

 private:
  SpaceDescriptor space_;
  Vec amps_;
};

class DensityMatrix {
 public:
  DensityMatrix() = default;
  DensityMatrix(SpaceDescriptor space, DenseMat m) : space_(space), m_(std::move(m)) {
    if (m_.rows() != space_.dimension() || m_.cols() != space_.dimension())
      throw std::invalid_argument("density matrix does not match space dimension");
  }

  static DensityMatrix from_pure(const StateVector& s) {
    return {s.space(), s.amplitudes() * s.amplitudes().adjoint()};
  }

  const SpaceDescriptor& space() const { return space_; }
  const DenseMat& matrix() const { return m_; }
  DenseMat& matrix() { return m_; }
  cplx trace() const { return m_.trace(); }
  double purity() const { return (m_ * m_).trace().real(); }

  /// Hermitian within 1e-10, unit trace within 1e-9, eigenvalues >= -1e-9.
  bool is_valid(double herm_tol = 1e-10, double trace_tol = 1e-9, double eig_tol = 1e-9) const {
    if (max_norm(DenseMat(m_ - m_.adjoint())) > herm_tol) return false;
    if (std::abs(m_.trace() - 1.0) > trace_tol) return false;
    Eigen::SelfAdjointEigenSolver<DenseMat> es(DenseMat(0.5 * (m_ + m_.adjoint())),
                                               Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff() >= -eig_tol;
  }

 private:
  SpaceDescriptor space_;
  DenseMat m_;
};

// ---------------------------------------------------------------------------
// Local (single-atom) matrices on the d-level ladder. Only the g<->e block
// couples to fields; f and h rows/columns stay zero.

inline DenseMat local_raise(int d) {  // S+ = |e><g|
  DenseMat m = DenseMat::Zero(d, d);
  m(1, 0) = 1.0;
  return m;
}
inline DenseMat local_lower(int d) { return local_raise(d).adjoint(); }
inline DenseMat local_sz(int d) {  // (|e><e| - |g><g|)/2
  DenseMat m = DenseMat::Zero(d, d);
  m(1, 1) = 0.5;
  m(0, 0) = -0.5;
  return m;
}
inline DenseMat local_projector(int d, int level) {
  DenseMat m = DenseMat::Zero(d, d);
  m(level, level) = 1.0;
  return m;
}
/// Projector onto the g/e block.
inline DenseMat local_ge_identity(int d) { return local_projector(d, 0) + local_projector(d, 1); }

/// Permutation matrix sending |from_i> to |to_i> (and vice versa); other levels fixed.
inline DenseMat local_swap(int d, std::initializer_list<std::pair<int, int>> swaps) {
  std::vector<int> image(d);
  std::iota(image.begin(), image.end(), 0);
  for (auto [a, b] : swaps) {
    if (a >= d || b >= d) throw std::invalid_argument("swap names a level outside the atom");
    std::swap(image[a], image[b]);
  }
  DenseMat m = DenseMat::Zero(d, d);
  for (int c = 0; c < d; ++c) m(image[c], c) = 1.0;
  return m;
}

// ---------------------------------------------------------------------------

/// I x ... x local x ... x I x I_mode with `local` on atom `atom_index`.
inline Operator embed_atom_op(const SpaceDescriptor& space, int atom_index, const DenseMat& local) {
  if (atom_index < 0 || atom_index >= space.atom_count)
    throw std::invalid_argument("atom index out of range");
  const int d = space.atom_dim;
  if (local.rows() != d || local.cols() != d)
    throw std::invalid_argument("local matrix shape does not match atom dimension");

  // Stride of atom j's digit in the flat index.
  Index stride = space.mode_dim();
  for (int j = space.atom_count - 1; j > atom_index; --j) stride *= d;

  const Index dim = space.dimension();
  std::vector<Eigen::Triplet<cplx>> trip;
  trip.reserve(static_cast<size_t>(dim) * 2);
  for (Index col = 0; col < dim; ++col) {
    const int l = static_cast<int>((col / stride) % d);
    const Index base = col - Index(l) * stride;
    for (int r = 0; r < d; ++r) {
      const cplx v = local(r, l);
      if (v != cplx(0.0)) trip.emplace_back(base + Index(r) * stride, col, v);
    }
  }
  SparseMat m(dim, dim);
  m.setFromTriplets(trip.begin(), trip.end());
  return {space, std::move(m)};
}

/// I_atoms x mode_matrix.
inline Operator embed_mode_op(const SpaceDescriptor& space, const DenseMat& mode_matrix) {
  const Index md = space.mode_dim();
  if (mode_matrix.rows() != md || mode_matrix.cols() != md)
    throw std::invalid_argument("mode matrix shape does not match Fock cutoff");
  const Index dim = space.dimension();
  std::vector<Eigen::Triplet<cplx>> trip;
  for (Index col = 0; col < dim; ++col) {
    const Index n = col % md;
    const Index base = col - n;
    for (Index r = 0; r < md; ++r)
      if (mode_matrix(r, n) != cplx(0.0)) trip.emplace_back(base + r, col, mode_matrix(r, n));
  }
  SparseMat m(dim, dim);
  m.setFromTriplets(trip.begin(), trip.end());
  return {space, std::move(m)};
}

/// Sum over atoms of the same local matrix.
inline Operator collective(const SpaceDescriptor& space, const DenseMat& local) {
  Operator sum = Operator::zero(space);
  for (int j = 0; j < space.atom_count; ++j) sum += embed_atom_op(space, j, local);
  return sum;
}

/// Same local unitary on every atom (the global, non-addressed pulse).
inline Operator uniform_atom_op(const SpaceDescriptor& space, const DenseMat& local) {
  Operator u = Operator::identity(space);
  for (int j = 0; j < space.atom_count; ++j) u = embed_atom_op(space, j, local) * u;
  return u;
}

/// Sx = (1/2) sum_j (S_j^+ + S_j^-).
inline Operator collective_sx(const SpaceDescriptor& space) {
  const int d = space.atom_dim;
  return collective(space, 0.5 * (local_raise(d) + local_lower(d)));
}

inline DenseMat mode_annihilation(int cutoff) {
  DenseMat a = DenseMat::Zero(cutoff + 1, cutoff + 1);
  for (int n = 1; n <= cutoff; ++n) a(n - 1, n) = std::sqrt(double(n));
  return a;
}

struct BosonOps {
  Operator a;
  Operator a_dagger;
};

/// Hard-truncated ladder operators; a^+ annihilates |n_max>.
inline BosonOps boson_ops(const SpaceDescriptor& space) {
  if (!space.has_mode()) throw std::invalid_argument("boson_ops needs a space with a mode");
  const DenseMat a = mode_annihilation(space.fock_cutoff);
  return {embed_mode_op(space, a), embed_mode_op(space, a.adjoint())};
}

/// Mode-only coefficient matrix of the first-sideband series
///   e^{-eta^2/2} sum_{j=0}^{order} (i eta)^{2j+1}/(j!(j+1)!) (a^+^{j+1} a^j + a^+^j a^{j+1})
/// or, when `order` is empty, the exact exp(i eta (a + a^+)) on the truncated mode.
inline DenseMat displacement_mode_matrix(int cutoff, double eta, std::optional<int> order) {
  if (eta < 0.0) throw std::invalid_argument("eta must be non-negative");
  const DenseMat a = mode_annihilation(cutoff);
  const DenseMat ad = a.adjoint();
  if (!order) {
    const DenseMat gen = kI * eta * (a + ad);
    return gen.exp();
  }
  if (*order < 0) throw std::invalid_argument("series order must be non-negative");
  DenseMat sum = DenseMat::Zero(cutoff + 1, cutoff + 1);
  DenseMat ad_pow = DenseMat::Identity(cutoff + 1, cutoff + 1);  // a^+^j
  DenseMat a_pow = DenseMat::Identity(cutoff + 1, cutoff + 1);   // a^j
  double fact_j = 1.0;
  for (int j = 0; j <= *order; ++j) {
    if (j > 0) {
      ad_pow = ad_pow * ad;
      a_pow = a_pow * a;
      fact_j *= j;
    }
    const cplx coeff = std::pow(kI * eta, 2 * j + 1) / (fact_j * fact_j * (j + 1));
    sum += coeff * (ad * ad_pow * a_pow + ad_pow * a_pow * a);
  }
  return std::exp(-eta * eta / 2.0) * sum;
}

inline Operator displacement_series(const SpaceDescriptor& space, double eta,
                                    std::optional<int> order) {
  if (!space.has_mode()) throw std::invalid_argument("displacement needs a space with a mode");
  return embed_mode_op(space, displacement_mode_matrix(space.fock_cutoff, eta, order));
}

/// Operator relabelling atoms: atom j's state moves to slot perm[j].
inline Operator permutation_operator(const SpaceDescriptor& space, std::span<const int> perm) {
  if (static_cast<int>(perm.size()) != space.atom_count)
    throw std::invalid_argument("permutation length does not match atom count");
  std::vector<bool> seen(perm.size(), false);
  for (int p : perm) {
    if (p < 0 || p >= space.atom_count || seen[p]) throw std::invalid_argument("not a permutation");
    seen[p] = true;
  }
  const Index dim = space.dimension();
  std::vector<Eigen::Triplet<cplx>> trip;
  trip.reserve(dim);
  std::vector<int> moved(space.atom_count);
  for (Index col = 0; col < dim; ++col) {
    auto [levels, n] = space.decode(col);
    for (int j = 0; j < space.atom_count; ++j) moved[perm[j]] = levels[j];
    trip.emplace_back(space.encode(moved, n), col, 1.0);
  }
  SparseMat m(dim, dim);
  m.setFromTriplets(trip.begin(), trip.end());
  return {space, std::move(m)};
}

/// Embeds an atoms-only operator into `space` as op x I_mode.
inline Operator lift_atomic(const Operator& atomic, const SpaceDescriptor& space) {
  if (!atomic.space().same_atoms(space) || atomic.space().has_mode())
    throw std::invalid_argument("lift_atomic expects an atoms-only operator for the same atoms");
  if (!space.has_mode()) return {space, atomic.sparse()};
  SparseMat id(space.mode_dim(), space.mode_dim());
  id.setIdentity();
  return {space, SparseMat(Eigen::kroneckerProduct(atomic.sparse(), id))};
}

}  // namespace cavent
