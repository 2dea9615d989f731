#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "dtzf/common.hpp"
#include "dtzf/netgeom.hpp"

// Temporally correlated Rayleigh fading. Sum-of-sinusoids realization of the
// Clarke spectrum: equal-power rays with i.i.d. arrival angles and phases,
// which gives the J0(2 pi f_d tau) autocorrelation channel aging rides on.
// Traces are evaluated directly at arbitrary instants (no recursion), so
// samples taken at shared instants agree bit for bit across consumers.
namespace dtzf::fading {

inline constexpr int kDefaultRays = 64;

struct FadingTrace {
  std::vector<cplx> samples;
  double sample_spacing = 0.0;  // s
  double doppler = 0.0;         // Hz
};

struct SosParams {
  std::vector<double> omega;  // 2 pi f_d cos(angle), rad/s per ray
  std::vector<double> phase;  // rad per ray
};

inline SosParams draw_sos(double f_d, int rays, Substream& rng) {
  SosParams s;
  s.omega.resize(static_cast<std::size_t>(rays));
  s.phase.resize(static_cast<std::size_t>(rays));
  constexpr double two_pi = 6.283185307179586476925286766559;
  for (int n = 0; n < rays; ++n) {
    s.omega[n] = two_pi * f_d * std::cos(rng.uniform(0.0, two_pi));
    s.phase[n] = rng.uniform(0.0, two_pi);
  }
  return s;
}

inline cplx sos_at(const SosParams& s, double t) {
  double re = 0.0, im = 0.0;
  const std::size_t n = s.omega.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double arg = s.omega[i] * t + s.phase[i];
    re += std::cos(arg);
    im += std::sin(arg);
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  return {re * scale, im * scale};
}

inline FadingTrace gen_trace(double f_d, double spacing, int length,
                             Substream& rng, int rays = kDefaultRays) {
  if (f_d < 0) throw invalid_parameter("gen_trace: doppler must be nonnegative");
  if (spacing <= 0) throw invalid_parameter("gen_trace: spacing must be positive");
  if (length < 1) throw invalid_parameter("gen_trace: length must be at least 1");
  if (rays < 1) throw invalid_parameter("gen_trace: need at least one ray");
  const SosParams p = draw_sos(f_d, rays, rng);
  FadingTrace tr;
  tr.sample_spacing = spacing;
  tr.doppler = f_d;
  tr.samples.resize(static_cast<std::size_t>(length));
  for (int t = 0; t < length; ++t)
    tr.samples[t] = sos_at(p, static_cast<double>(t) * spacing);
  return tr;
}

// One trace per (ap, ue) link, stored ap-major.
struct TraceSet {
  int M = 0;
  int K = 0;
  std::vector<FadingTrace> traces;

  const FadingTrace& at(int m, int k) const {
    return traces[static_cast<std::size_t>(m) * K + k];
  }
  int length() const { return traces.empty() ? 0 : static_cast<int>(traces.front().samples.size()); }
};

// Channel matrix at grid instant t; rows are users, columns APs:
// G(k, m) = sqrt(beta_mk) * h_mk[t].
inline Eigen::MatrixXcd channel_at(const TraceSet& ts,
                                   const netgeom::LinkGainMap& gains, int t) {
  if (t < 0 || t >= ts.length())
    throw invalid_parameter("channel_at: instant outside trace coverage");
  Eigen::MatrixXcd G(ts.K, ts.M);
  for (int m = 0; m < ts.M; ++m)
    for (int k = 0; k < ts.K; ++k)
      G(k, m) = std::sqrt(gains.beta(m, k)) * ts.at(m, k).samples[t];
  return G;
}

// Raw small-scale matrix at instant t (unit large-scale gain).
inline Eigen::MatrixXcd small_scale_at(const TraceSet& ts, int t) {
  if (t < 0 || t >= ts.length())
    throw invalid_parameter("small_scale_at: instant outside trace coverage");
  Eigen::MatrixXcd H(ts.K, ts.M);
  for (int m = 0; m < ts.M; ++m)
    for (int k = 0; k < ts.K; ++k) H(k, m) = ts.at(m, k).samples[t];
  return H;
}

}  // namespace dtzf::fading
