#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "dtzf/common.hpp"

// Uplink pilot training and per-AP linear MMSE channel estimation.
namespace dtzf::chest {

// tau_p x K, orthonormal columns (DFT construction).
struct PilotBook {
  Eigen::MatrixXcd seq;
  int users() const { return static_cast<int>(seq.cols()); }
  int length() const { return static_cast<int>(seq.rows()); }
};

inline PilotBook make_pilots(int K, int tau_p) {
  if (K < 1) throw invalid_parameter("make_pilots: need at least one user");
  if (tau_p < K)
    throw invalid_parameter("make_pilots: pilot length below user count");
  PilotBook pb;
  pb.seq.resize(tau_p, K);
  constexpr double two_pi = 6.283185307179586476925286766559;
  const double scale = 1.0 / std::sqrt(static_cast<double>(tau_p));
  for (int t = 0; t < tau_p; ++t)
    for (int k = 0; k < K; ++k) {
      const double arg = -two_pi * t * k / tau_p;
      pb.seq(t, k) = cplx{std::cos(arg) * scale, std::sin(arg) * scale};
    }
  return pb;
}

// Received pilot block, one column per AP:
// y_m = sqrt(p_u) sum_k g_mk i_k + noise.
inline Eigen::MatrixXcd uplink_observe(const Eigen::MatrixXcd& G_true,
                                       const PilotBook& pb, double p_u,
                                       double sigma2, Substream& rng) {
  if (G_true.rows() != pb.users())
    throw invalid_parameter("uplink_observe: user count mismatch");
  if (p_u < 0 || sigma2 < 0)
    throw invalid_parameter("uplink_observe: negative power");
  Eigen::MatrixXcd Y = std::sqrt(p_u) * (pb.seq * G_true);
  if (sigma2 > 0) {
    const double sd = std::sqrt(sigma2);
    for (Eigen::Index j = 0; j < Y.cols(); ++j)
      for (Eigen::Index i = 0; i < Y.rows(); ++i) Y(i, j) += sd * rng.cnormal();
  }
  return Y;
}

// Rows are users, columns APs (matches the channel matrix orientation).
struct EstimateSet {
  Eigen::MatrixXcd ghat;
  Eigen::MatrixXd alpha;
};

inline double mmse_alpha(double beta, double p_u, double sigma2) {
  return p_u * beta * beta / (p_u * beta + sigma2);
}

// Single-AP estimate: project onto each pilot, scale by the MMSE coefficient
// sqrt(p_u) beta / (p_u beta + sigma2). beta_row is the AP's gain row.
inline Eigen::VectorXcd mmse_estimate(const Eigen::VectorXcd& y_m,
                                      const PilotBook& pb,
                                      const Eigen::VectorXd& beta_row,
                                      double p_u, double sigma2) {
  if (y_m.size() != pb.length())
    throw invalid_parameter("mmse_estimate: observation length mismatch");
  if (beta_row.size() != pb.users())
    throw invalid_parameter("mmse_estimate: gain row length mismatch");
  const int K = pb.users();
  Eigen::VectorXcd ghat(K);
  for (int k = 0; k < K; ++k) {
    const double b = beta_row(k);
    const double coeff = std::sqrt(p_u) * b / (p_u * b + sigma2);
    ghat(k) = coeff * (pb.seq.col(k).adjoint() * y_m).value();
  }
  return ghat;
}

// All APs at once. beta is M x K as produced by the geometry stage.
inline EstimateSet mmse_estimate_all(const Eigen::MatrixXcd& Y,
                                     const PilotBook& pb,
                                     const Eigen::MatrixXd& beta, double p_u,
                                     double sigma2) {
  const int M = static_cast<int>(Y.cols());
  const int K = pb.users();
  if (beta.rows() != M || beta.cols() != K)
    throw invalid_parameter("mmse_estimate_all: gain map shape mismatch");
  EstimateSet est;
  est.ghat.resize(K, M);
  est.alpha.resize(K, M);
  const Eigen::MatrixXcd proj = pb.seq.adjoint() * Y;  // K x M
  for (int m = 0; m < M; ++m)
    for (int k = 0; k < K; ++k) {
      const double b = beta(m, k);
      const double coeff = std::sqrt(p_u) * b / (p_u * b + sigma2);
      est.ghat(k, m) = coeff * proj(k, m);
      est.alpha(k, m) = mmse_alpha(b, p_u, sigma2);
    }
  return est;
}

// Pilot quality expressed as a single SNR figure applied in the normalized
// domain: hhat = h + e with Var(e) = 10^(-snr/10).
inline double normalized_estimate_snr(double snr_db) {
  return std::pow(10.0, -snr_db / 10.0);
}

inline Eigen::MatrixXcd add_estimate_noise(const Eigen::MatrixXcd& H,
                                           double eps2, Substream& rng) {
  if (eps2 < 0) throw invalid_parameter("add_estimate_noise: negative variance");
  Eigen::MatrixXcd out = H;
  if (eps2 > 0) {
    const double sd = std::sqrt(eps2);
    for (Eigen::Index i = 0; i < out.rows(); ++i)
      for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) += sd * rng.cnormal();
  }
  return out;
}

}  // namespace dtzf::chest
