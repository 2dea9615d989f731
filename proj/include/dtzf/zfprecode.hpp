#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "dtzf/common.hpp"

// Zero-forcing precoding at the CPU: right-inverse precoder from the CSI
// snapshot, per-AP power control, precoded-symbol generation.
namespace dtzf::zfprecode {

inline constexpr double kRcondFloor = 1e-12;  // gram condition guard, 1/1e12

// rcond alone misses exactly rank-deficient grams: LDLT::solve applies a
// pseudo-inverse of D, so the condition estimate stays finite. The pivot
// ratio catches those (and NaN poisoning, since the comparisons fail).
template <class Ldlt>
inline bool gram_degenerate(const Ldlt& ldlt) {
  if (ldlt.info() != Eigen::Success) return true;
  const Eigen::VectorXd d = ldlt.vectorD().real();
  const double dmax = d.maxCoeff();
  if (!(dmax > 0)) return true;
  if (!(d.minCoeff() > kRcondFloor * dmax)) return true;
  return !(ldlt.rcond() > kRcondFloor);
}

// A = G^H (G G^H)^{-1} for a fat K x M snapshot. The K x K gram is factored
// with LDLT; a degenerate factorization is treated as a singular channel.
inline Eigen::MatrixXcd zf_matrix(const Eigen::MatrixXcd& G) {
  const Eigen::Index K = G.rows();
  if (K < 1 || G.cols() < K)
    throw invalid_parameter("zf_matrix: need a K x M snapshot with M >= K");
  const Eigen::MatrixXcd gram = G * G.adjoint();
  Eigen::LDLT<Eigen::MatrixXcd> ldlt(gram);
  if (gram_degenerate(ldlt))
    throw singular_channel("zf_matrix: gram matrix singular or ill conditioned");
  return G.adjoint() * ldlt.solve(Eigen::MatrixXcd::Identity(K, K));
}

struct PowerControl {
  Eigen::VectorXd psi;     // common per-user amplitude
  double power = 0.0;      // psi^2, i.e. 1 / max_m sum_k delta_km
  Eigen::MatrixXd delta;   // K x M ensemble averages of |[(GG^H)^{-1} g_m]_k|^2
  int skipped = 0;         // singular draws dropped from the ensemble
};

// Ensemble power control: delta_km is averaged over CSI draws at fixed
// large-scale gains; the binding AP's mean radiated power sets the common
// level, so every AP satisfies a unit average-power budget.
inline PowerControl power_control(const std::vector<Eigen::MatrixXcd>& ensemble) {
  if (ensemble.empty()) throw invalid_parameter("power_control: empty ensemble");
  const Eigen::Index K = ensemble.front().rows();
  const Eigen::Index M = ensemble.front().cols();
  PowerControl pc;
  pc.delta = Eigen::MatrixXd::Zero(K, M);
  int used = 0;
  for (const auto& G : ensemble) {
    if (G.rows() != K || G.cols() != M)
      throw invalid_parameter("power_control: inconsistent draw shapes");
    const Eigen::MatrixXcd gram = G * G.adjoint();
    Eigen::LDLT<Eigen::MatrixXcd> ldlt(gram);
    if (gram_degenerate(ldlt)) {
      ++pc.skipped;
      continue;
    }
    const Eigen::MatrixXcd B = ldlt.solve(G);  // column m = (GG^H)^{-1} g_m
    pc.delta += B.cwiseAbs2();
    ++used;
  }
  if (used == 0)
    throw singular_channel("power_control: every ensemble draw was singular");
  pc.delta /= static_cast<double>(used);
  const double worst_ap = pc.delta.colwise().sum().maxCoeff();
  pc.power = 1.0 / worst_ap;
  pc.psi = Eigen::VectorXd::Constant(K, std::sqrt(pc.power));
  return pc;
}

struct PrecodeMatrix {
  Eigen::MatrixXcd A;
  Eigen::VectorXd psi;
  std::string source_csi_tag;
};

// Unit-power information symbols; QPSK by default (unit modulus keeps the
// per-AP power free of constellation tails), circular gaussian selectable.
inline Eigen::MatrixXcd draw_symbols(int K, int N, Substream& rng,
                                     bool gaussian = false) {
  if (K < 1 || N < 1) throw invalid_parameter("draw_symbols: empty symbol block");
  Eigen::MatrixXcd S(K, N);
  constexpr double half = 0.7071067811865476;
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < K; ++k) {
      if (gaussian) {
        S(k, n) = rng.cnormal();
      } else {
        const std::uint64_t bits = rng.bits();
        S(k, n) = cplx{(bits & 1) ? half : -half, (bits & 2) ? half : -half};
      }
    }
  return S;
}

// X = A diag(psi) S; with the snapshot that built A, G X = diag(psi) S.
inline Eigen::MatrixXcd precode_frame(const Eigen::MatrixXcd& A,
                                      const Eigen::VectorXd& psi,
                                      const Eigen::MatrixXcd& S) {
  if (A.cols() != S.rows() || psi.size() != S.rows())
    throw invalid_parameter("precode_frame: dimension mismatch");
  return A * psi.asDiagonal() * S;
}

}  // namespace dtzf::zfprecode
