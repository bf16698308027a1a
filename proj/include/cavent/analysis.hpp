#pragma once
// State metrics (fidelity, partial trace over the mode, trace distance, GHZ leg
// weights) and dominant-frequency extraction from sampled observables.

#include "cavent/algebra.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace cavent {

inline void require_same_space(const SpaceDescriptor& a, const SpaceDescriptor& b) {
  if (!(a == b)) throw std::invalid_argument("states live on different spaces");
}

/// |<b|a>|^2
inline double fidelity(const StateVector& a, const StateVector& b) {
  require_same_space(a.space(), b.space());
  return std::norm(b.amplitudes().dot(a.amplitudes()));
}

/// <b|rho|b>
inline double fidelity(const DensityMatrix& rho, const StateVector& b) {
  require_same_space(rho.space(), b.space());
  return std::real(b.amplitudes().dot(rho.matrix() * b.amplitudes()));
}

/// Partial trace over the mode factor.
inline DensityMatrix reduce_to_atoms(const DensityMatrix& rho) {
  const SpaceDescriptor& space = rho.space();
  if (!space.has_mode()) throw std::invalid_argument("reduce_to_atoms needs a space with a mode");
  const Index na = space.atom_block_dim(), md = space.mode_dim();
  DenseMat out = DenseMat::Zero(na, na);
  for (Index i = 0; i < na; ++i)
    for (Index j = 0; j < na; ++j)
      out(i, j) = rho.matrix().block(i * md, j * md, md, md).trace();
  return {space.atoms_only(), std::move(out)};
}

inline DensityMatrix reduce_to_atoms(const StateVector& psi) {
  const SpaceDescriptor& space = psi.space();
  if (!space.has_mode()) throw std::invalid_argument("reduce_to_atoms needs a space with a mode");
  const Index na = space.atom_block_dim(), md = space.mode_dim();
  // Row i of M holds the mode amplitudes for atomic basis state i.
  const Eigen::Map<const Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
      psi.amplitudes().data(), na, md);
  return {space.atoms_only(), DenseMat(m * m.adjoint())};
}

/// Atoms-only density matrix whether or not a mode is attached.
inline DensityMatrix atomic_state(const DensityMatrix& rho) {
  return rho.space().has_mode() ? reduce_to_atoms(rho) : rho;
}
inline DensityMatrix atomic_state(const StateVector& psi) {
  return psi.space().has_mode() ? reduce_to_atoms(psi) : DensityMatrix::from_pure(psi);
}

/// (1/2) sum |eig(rho - sigma)|
inline double trace_distance(const DensityMatrix& a, const DensityMatrix& b) {
  require_same_space(a.space(), b.space());
  const DenseMat diff = a.matrix() - b.matrix();
  Eigen::SelfAdjointEigenSolver<DenseMat> es(DenseMat(0.5 * (diff + diff.adjoint())), Eigen::EigenvaluesOnly);
  return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

/// Squared amplitude on each product-basis label ("ggg", "eee,0", ...). For
/// states carrying a mode, a label without ",n" sums over the mode.
inline std::vector<double> leg_populations(const DensityMatrix& rho, const std::vector<std::string>& legs) {
  const SpaceDescriptor& space = rho.space();
  std::vector<double> out;
  for (const auto& leg : legs) {
    const bool sum_mode = leg.find(',') == std::string::npos && space.has_mode();
    auto [levels, n] = parse_label(space, leg);
    if (!sum_mode) {
      const Index i = space.encode(levels, n);
      out.push_back(rho.matrix()(i, i).real());
    } else {
      double p = 0.0;
      for (int m = 0; m < space.mode_dim(); ++m) {
        const Index i = space.encode(levels, m);
        p += rho.matrix()(i, i).real();
      }
      out.push_back(p);
    }
  }
  return out;
}

inline std::vector<double> leg_populations(const StateVector& psi, const std::vector<std::string>& legs) {
  const SpaceDescriptor& space = psi.space();
  std::vector<double> out;
  for (const auto& leg : legs) {
    const bool sum_mode = leg.find(',') == std::string::npos && space.has_mode();
    auto [levels, n] = parse_label(space, leg);
    double p = 0.0;
    for (int m = sum_mode ? 0 : n; m <= (sum_mode ? int(space.mode_dim()) - 1 : n); ++m)
      p += std::norm(psi[space.encode(levels, m)]);
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct TimeSeries {
  std::vector<double> times;
  std::vector<double> values;

  void validate() const {
    if (times.size() != values.size()) throw std::invalid_argument("time series lengths differ");
    if (times.size() < 4) throw std::invalid_argument("time series too short");
    for (size_t i = 1; i < times.size(); ++i)
      if (!(times[i] > times[i - 1])) throw std::invalid_argument("times must be strictly increasing");
  }
};

namespace detail {

/// Residual sum of squares of the best fit c0 + c1 cos(w t) + c2 sin(w t).
inline double sinusoid_residual(const TimeSeries& s, double w) {
  const Index n = static_cast<Index>(s.times.size());
  Eigen::MatrixXd design(n, 3);
  Eigen::VectorXd rhs(n);
  for (Index i = 0; i < n; ++i) {
    design(i, 0) = 1.0;
    design(i, 1) = std::cos(w * s.times[i]);
    design(i, 2) = std::sin(w * s.times[i]);
    rhs(i) = s.values[i];
  }
  const Eigen::VectorXd coef = design.colPivHouseholderQr().solve(rhs);
  return (design * coef - rhs).squaredNorm();
}

}  // namespace detail

/// Dominant angular frequency of a near-sinusoidal series: periodogram peak on
/// an 8x oversampled grid, refined by successive local quadratic fits of the
/// least-squares sinusoid residual around that peak.
inline double extract_frequency(const TimeSeries& series) {
  series.validate();
  const auto& t = series.times;
  const size_t n = t.size();
  double mean = 0.0;
  for (double v : series.values) mean += v;
  mean /= double(n);
  double var = 0.0;
  for (double v : series.values) var += (v - mean) * (v - mean);
  const double span = t.back() - t.front();
  if (!(var / double(n) > 1e-24)) throw std::invalid_argument("flat signal has no frequency");

  const double dt_mean = span / double(n - 1);
  const double w_nyquist = std::numbers::pi / dt_mean;
  const double dw = 2.0 * std::numbers::pi / (8.0 * span);
  double best_w = 0.0, best_p = -1.0;
  for (double w = dw; w <= w_nyquist; w += dw) {
    cplx acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += (series.values[i] - mean) * std::exp(-kI * (w * (t[i] - t.front())));
    const double p = std::norm(acc);
    if (p > best_p) {
      best_p = p;
      best_w = w;
    }
  }

  // Minimize the residual over [best_w - dw, best_w + dw] by parabolic steps.
  double lo = std::max(best_w - dw, 0.5 * dw), hi = best_w + dw, mid = best_w;
  double r_lo = detail::sinusoid_residual(series, lo), r_mid = detail::sinusoid_residual(series, mid),
         r_hi = detail::sinusoid_residual(series, hi);
  for (int it = 0; it < 60 && hi - lo > 1e-13 * mid; ++it) {
    const double num = (mid - lo) * (mid - lo) * (r_mid - r_hi) - (mid - hi) * (mid - hi) * (r_mid - r_lo);
    const double den = (mid - lo) * (r_mid - r_hi) - (mid - hi) * (r_mid - r_lo);
    double x = den != 0.0 ? mid - 0.5 * num / den : 0.5 * (lo + mid);
    if (!(x > lo && x < hi) || std::abs(x - mid) < 1e-15 * mid)
      x = (mid - lo > hi - mid) ? 0.5 * (lo + mid) : 0.5 * (mid + hi);
    const double r_x = detail::sinusoid_residual(series, x);
    if (r_x < r_mid) {
      if (x < mid) { hi = mid; r_hi = r_mid; } else { lo = mid; r_lo = r_mid; }
      mid = x;
      r_mid = r_x;
    } else {
      if (x < mid) { lo = x; r_lo = r_x; } else { hi = x; r_hi = r_x; }
    }
  }

  if (mid * span / (2.0 * std::numbers::pi) < 2.0)
    throw std::invalid_argument("series covers fewer than two oscillation periods");
  return mid;
}

}  // namespace cavent
