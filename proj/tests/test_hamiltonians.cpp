#include <gtest/gtest.h>

#include "cavent/dynamics.hpp"
#include "cavent/hamiltonians.hpp"
#include "oracle.hpp"

#include <numbers>

using namespace cavent;

namespace {

DriveParams cavity(double g, double delta, double omega) {
  DriveParams p;
  p.g = g;
  p.delta = delta;
  p.omega = omega;
  return p;
}

}  // namespace

TEST(Effective, EqualsTwoLambdaSxSquared) {
  for (int d : {2, 3}) {
    for (int n = 2; n <= 5; ++n) {
      const auto s = make_space(n, d, 0, true);
      const double lambda = 0.37;
      const oracle::Mat sx = oracle::sx(n, d);
      // On levels outside g/e, Sx^2 vanishes while the 1/2 sum P_ge term does too.
      const double diff = oracle::max_abs(h_effective(s, lambda).dense() - 2.0 * lambda * sx * sx);
      EXPECT_LE(diff, 1e-12) << "N=" << n << " d=" << d;
    }
  }
}

TEST(Effective, CommutesWithCarrierAndIsInertOnMode) {
  const auto s = make_space(3, 3, 2, false);
  EXPECT_LT(max_norm(commutator(h_effective(s, 0.1), h0_drive(s, 7.0))), 1e-12);
  const auto [a, ad] = boson_ops(s);
  EXPECT_LT(max_norm(commutator(h_effective(s, 0.1), ad * a)), 1e-14);
}

TEST(Couplings, LambdaValues) {
  EXPECT_DOUBLE_EQ(lambda_cavity(1.0, 10.0), 0.05);
  EXPECT_DOUBLE_EQ(lambda_ion(1.0, 0.05, 1.0), 2.0 * 0.05 * 0.05);
  EXPECT_THROW(lambda_cavity(1.0, 0.0), std::invalid_argument);
  EXPECT_THROW(lambda_ion(1.0, 0.1, 0.0), std::invalid_argument);
  DriveParams p;
  p.eta = 1.5;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p.eta = 0.1;
  p.g = -1.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(Interaction, MatchesHandBuiltMatrix) {
  const int n = 2, d = 2, cutoff = 3;
  const auto s = make_space(n, d, cutoff, false);
  const auto p = cavity(0.7, 3.0, 5.0);
  const double t = 0.41;
  const oracle::Mat a = oracle::kron(oracle::eye(4), oracle::annihilation(cutoff));
  oracle::Mat sp = oracle::Mat::Zero(16, 16);
  for (int j = 0; j < n; ++j) sp += oracle::on_atom(n, d, j, oracle::ket_bra(d, 1, 0), cutoff + 1);
  const oracle::Mat sm = sp.adjoint();
  const oracle::Mat ref = p.g * (std::exp(-oracle::I * p.delta * t) * a.adjoint() * sm +
                                 std::exp(oracle::I * p.delta * t) * a * sp) +
                          p.omega * (sp + sm);
  EXPECT_LT(oracle::max_abs(h_interaction(s, p, t).dense() - ref), 1e-14);
  EXPECT_THROW(h_interaction(s.atoms_only(), p, t), std::invalid_argument);
}

TEST(Rotated, IsTheExactFrameTransform) {
  // e^{i H0 t} (H_int(t) - H0) e^{-i H0 t} with H0 = Omega sum (S+ + S-).
  const auto s = make_space(2, 3, 2, false);
  const auto p = cavity(0.9, 4.0, 6.5);
  const oracle::Mat h0 = h0_drive(s, p.omega).dense();
  for (double t : {0.0, 0.13, 1.7}) {
    const oracle::Mat u = oracle::expm(h0, t);
    const oracle::Mat ref = u.adjoint() * (h_interaction(s, p, t).dense() - h0) * u;
    EXPECT_LT(oracle::max_abs(h_rotated(s, p, t).dense() - ref), 1e-12) << "t=" << t;
  }
}

TEST(Rotated, DriveOriginShiftsTheFrame) {
  const auto s = make_space(2, 2, 2, false);
  const auto p = cavity(0.9, 4.0, 6.5);
  const double t0 = 0.8, tau = 0.3;
  // Frame attached at t0: e^{i H0 tau} (H_int(t0 + tau) - H0) e^{-i H0 tau}.
  const oracle::Mat h0 = h0_drive(s, p.omega).dense();
  const oracle::Mat u = oracle::expm(h0, tau);
  const oracle::Mat ref = u.adjoint() * (h_interaction(s, p, t0 + tau).dense() - h0) * u;
  const Operator got = rotated_terms(s, p, t0).at(t0 + tau);
  EXPECT_LT(oracle::max_abs(got.dense() - ref), 1e-12);
}

TEST(Slow, KeepsOnlyTheDetunedTerms) {
  // Time average of the rotated Hamiltonian over a carrier period at fixed delta phase.
  const auto s = make_space(2, 2, 3, false);
  const auto p = cavity(1.0, 0.0, 3.0);  // delta = 0 isolates the carrier dependence
  const int samples = 64;
  const double period = std::numbers::pi / p.omega;  // e^{+-2 i Omega t}
  oracle::Mat avg = oracle::Mat::Zero(s.dimension(), s.dimension());
  for (int k = 0; k < samples; ++k) avg += h_rotated(s, p, period * k / samples).dense() / double(samples);
  EXPECT_LT(oracle::max_abs(avg - h_slow(s, p, 0.0).dense()), 1e-12);
}

TEST(Frames, AllHermitian) {
  const auto s = make_space(3, 3, 3, false);
  const auto p = cavity(1.0, 10.0, 100.0);
  DriveParams ion;
  ion.omega = 1.2;
  ion.eta = 0.1;
  ion.delta = 0.8;
  ion.phi = 0.3;
  for (double t : {0.0, 0.77, 12.5}) {
    EXPECT_LT(hermiticity_defect(h_interaction(s, p, t)), 1e-14);
    EXPECT_LT(hermiticity_defect(h_rotated(s, p, t)), 1e-14);
    EXPECT_LT(hermiticity_defect(h_slow(s, p, t)), 1e-14);
    EXPECT_LT(hermiticity_defect(h_ion(s, ion, t, FrameTag::IonInteraction)), 1e-14);
    EXPECT_LT(hermiticity_defect(h_ion(s, ion, t, FrameTag::IonLambDicke)), 1e-14);
  }
  EXPECT_LT(hermiticity_defect(h_effective(s, 0.05)), 1e-14);
}

TEST(Ion, FirstOrderEqualsSlowCavityForm) {
  const auto s = make_space(2, 3, 5, false);
  DriveParams ion;
  ion.omega = 1.3;
  ion.eta = 0.07;
  ion.delta = 0.9;
  ion.phi = std::numbers::pi / 2;
  DriveParams cav = cavity(2.0 * ion.eta * ion.omega, ion.delta, 0.0);
  for (double t : {0.0, 0.4, 3.3}) {
    const double diff = max_norm(h_ion(s, ion, t, FrameTag::IonLambDicke) - h_slow(s, cav, t));
    EXPECT_LE(diff, 1e-12) << "t=" << t;
  }
}

TEST(Ion, SeriesMatchesResolvedDisplacement) {
  // The e^{-i delta t} sideband operator is the n -> n+1 part of e^{i eta (a + a+)}.
  const int cutoff = 25;
  const double eta = 0.2;
  const auto [A, B] = sideband_mode_matrices(cutoff, eta, 10);
  const oracle::Mat a = oracle::annihilation(cutoff);
  const oracle::Mat disp = oracle::Mat(oracle::I * eta * (a + a.adjoint())).exp();
  for (int n = 0; n < 5; ++n) {
    EXPECT_NEAR(std::abs(std::exp(-eta * eta / 2) * A(n + 1, n) - disp(n + 1, n)), 0.0, 1e-13);
    EXPECT_NEAR(std::abs(std::exp(-eta * eta / 2) * B(n, n + 1) - disp(n, n + 1)), 0.0, 1e-13);
  }
  const auto s = make_space(1, 2, 2, true);
  EXPECT_THROW(ion_terms(s, DriveParams{}, FrameTag::IonInteraction), std::invalid_argument);
  EXPECT_THROW(ion_terms(make_space(1, 2, 2, false), DriveParams{}, FrameTag::SlowFrame), std::invalid_argument);
}

TEST(TimeDependent, ShiftAndScale) {
  const auto s = make_space(1, 2, 2, false);
  const auto p = cavity(1.0, 3.0, 2.0);
  const auto h = interaction_terms(s, p);
  const auto hs = h.shifted(0.7);
  EXPECT_LT(max_norm(hs.at(0.2) - h.at(0.9)), 1e-14);
  EXPECT_DOUBLE_EQ(h.fastest_scale(), 3.0);
  Vec v = Vec::Random(s.dimension()), out;
  h.apply(0.3, v, out);
  EXPECT_LT((out - h.at(0.3).apply(v)).cwiseAbs().maxCoeff(), 1e-14);
}
