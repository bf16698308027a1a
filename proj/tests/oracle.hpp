#pragma once
// Brute-force reference constructions for the tests: explicit dense Kronecker
// products and matrix exponentials, with no use of the library's embedding code.

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <complex>
#include <vector>

namespace oracle {

using cplx = std::complex<double>;
using Mat = Eigen::MatrixXcd;
using Vec = Eigen::VectorXcd;
inline const cplx I{0.0, 1.0};

inline Mat kron(const Mat& a, const Mat& b) {
  Mat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

inline Mat eye(Eigen::Index n) { return Mat::Identity(n, n); }

/// |r><c| on a d-level atom
inline Mat ket_bra(int d, int r, int c) {
  Mat m = Mat::Zero(d, d);
  m(r, c) = 1.0;
  return m;
}

/// local on atom j of n atoms, identity elsewhere, then x I_mode (mode_dim 1 = no mode).
inline Mat on_atom(int n, int d, int j, const Mat& local, Eigen::Index mode_dim = 1) {
  Mat out = eye(1);
  for (int k = 0; k < n; ++k) out = kron(out, k == j ? local : eye(d));
  return kron(out, eye(mode_dim));
}

/// (1/2) sum_j (|e><g| + |g><e|)_j
inline Mat sx(int n, int d, Eigen::Index mode_dim = 1) {
  Mat local = 0.5 * (ket_bra(d, 1, 0) + ket_bra(d, 0, 1));
  Mat s = Mat::Zero(Eigen::Index(std::pow(d, n)) * mode_dim, Eigen::Index(std::pow(d, n)) * mode_dim);
  for (int j = 0; j < n; ++j) s += on_atom(n, d, j, local, mode_dim);
  return s;
}

inline Mat annihilation(int cutoff) {
  Mat a = Mat::Zero(cutoff + 1, cutoff + 1);
  for (int k = 1; k <= cutoff; ++k) a(k - 1, k) = std::sqrt(double(k));
  return a;
}

/// exp(-i H t) by the Pade/squaring routine.
inline Mat expm(const Mat& h, double t) { return Mat(-I * t * h).exp(); }

/// Product ket from level digits (atom 0 most significant), optional mode level.
inline Vec product(int d, const std::vector<int>& levels, int mode_dim = 1, int n = 0) {
  Eigen::Index idx = 0;
  for (int l : levels) idx = idx * d + l;
  idx = idx * mode_dim + n;
  Vec v = Vec::Zero(Eigen::Index(std::pow(d, levels.size())) * mode_dim);
  v(idx) = 1.0;
  return v;
}

inline double max_abs(const Mat& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace oracle
