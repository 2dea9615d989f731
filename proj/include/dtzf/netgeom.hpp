#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dtzf/common.hpp"

// Network geometry and large-scale propagation: random placements on a square
// service area, three-slope path loss, lognormal shadowing, thermal noise.
namespace dtzf::netgeom {

struct SystemConfig {
  int num_aps = 128;
  int num_ues = 16;
  double area_side = 1000.0;     // m
  double break_d0 = 10.0;        // m, inner breakpoint
  double break_d1 = 50.0;        // m, outer breakpoint
  double carrier_freq = 1900.0;  // MHz
  double ap_height = 15.0;       // m
  double ue_height = 1.65;       // m
  double shadow_sigma = 8.0;     // dB
  double ap_power = 0.2;         // W per AP
  double ue_power = 0.1;         // W per UE (uplink pilots)
  double bandwidth = 20e6;       // Hz
  double temperature = 290.0;    // K
  double noise_figure = 9.0;     // dB
  double boltzmann = 1.381e-23;  // J/K
  double doppler = 100.0;        // Hz, maximal Doppler shift
  double frame_duration = 10e-3; // s
  double delay = 1e-3;           // s, fronthaul delay and prediction horizon
  int symbols_per_frame = 100;
  std::uint64_t rng_seed = 1;

  void validate() const {
    if (!(num_aps > num_ues && num_ues >= 1))
      throw invalid_parameter("config: need num_aps > num_ues >= 1");
    if (area_side <= 0 || break_d0 <= 0 || break_d1 <= 0 || carrier_freq <= 0 ||
        ap_height <= 0 || ue_height <= 0 || ap_power <= 0 || ue_power <= 0 ||
        bandwidth <= 0 || temperature <= 0 || boltzmann <= 0 ||
        frame_duration <= 0 || symbols_per_frame <= 0)
      throw invalid_parameter("config: powers, distances, bandwidth and durations must be positive");
    if (!(break_d0 < break_d1))
      throw invalid_parameter("config: break_d0 must be below break_d1");
    if (shadow_sigma < 0 || doppler < 0 || delay < 0)
      throw invalid_parameter("config: shadow_sigma, doppler and delay must be nonnegative");
  }
};

struct Placement {
  std::vector<std::array<double, 2>> ap_xy;
  std::vector<std::array<double, 2>> ue_xy;
};

// All three matrices are M x K, indexed (ap, ue).
struct LinkGainMap {
  Eigen::MatrixXd beta;
  Eigen::MatrixXd pathloss_db;
  Eigen::MatrixXd shadow_db;
};

// Reference path loss at 1 km, COST-Hata style. Carrier frequency in MHz,
// heights in meters; only these units reproduce the usual 140.72 dB figure
// at 1900 MHz / 15 m / 1.65 m.
inline double compute_p0(double fc_mhz, double hap_m, double hue_m) {
  if (fc_mhz <= 0 || hap_m <= 0 || hue_m <= 0)
    throw invalid_parameter("compute_p0: carrier frequency and heights must be positive");
  const double lf = std::log10(fc_mhz);
  return 46.3 + 33.9 * lf - 13.82 * std::log10(hap_m) -
         (1.1 * lf - 0.7) * hue_m + 1.56 * lf - 0.8;
}

inline double compute_p0(const SystemConfig& c) {
  return compute_p0(c.carrier_freq, c.ap_height, c.ue_height);
}

// Three-slope path loss in dB: -35 dB/decade beyond d1, -20 between d0 and
// d1, flat below d0. Distances inside the logarithms are in kilometers, so
// the value at exactly 1 km is -p0.
inline double path_loss(double d_m, double p0_db, const SystemConfig& c) {
  if (d_m <= 0) throw invalid_parameter("path_loss: distance must be positive");
  const double d_km = d_m / 1000.0;
  const double d0_km = c.break_d0 / 1000.0;
  const double d1_km = c.break_d1 / 1000.0;
  if (d_m > c.break_d1) return -p0_db - 35.0 * std::log10(d_km);
  if (d_m > c.break_d0)
    return -p0_db - 15.0 * std::log10(d1_km) - 20.0 * std::log10(d_km);
  return -p0_db - 15.0 * std::log10(d1_km) - 20.0 * std::log10(d0_km);
}

inline Placement draw_placement(const SystemConfig& c, Substream& rng) {
  Placement p;
  p.ap_xy.resize(static_cast<std::size_t>(c.num_aps));
  p.ue_xy.resize(static_cast<std::size_t>(c.num_ues));
  for (auto& xy : p.ap_xy) {
    xy[0] = rng.uniform(0.0, c.area_side);
    xy[1] = rng.uniform(0.0, c.area_side);
  }
  for (auto& xy : p.ue_xy) {
    xy[0] = rng.uniform(0.0, c.area_side);
    xy[1] = rng.uniform(0.0, c.area_side);
  }
  return p;
}

// Per-link 3-D distance (the AP/UE height difference keeps co-located pairs
// off the d = 0 singularity), path loss, i.i.d. lognormal shadowing.
inline LinkGainMap large_scale_gains(const Placement& pl, double p0_db,
                                     const SystemConfig& c, Substream& rng) {
  const int M = static_cast<int>(pl.ap_xy.size());
  const int K = static_cast<int>(pl.ue_xy.size());
  LinkGainMap g;
  g.beta.resize(M, K);
  g.pathloss_db.resize(M, K);
  g.shadow_db.resize(M, K);
  const double dz = c.ap_height - c.ue_height;
  for (int m = 0; m < M; ++m) {
    for (int k = 0; k < K; ++k) {
      const double dx = pl.ap_xy[m][0] - pl.ue_xy[k][0];
      const double dy = pl.ap_xy[m][1] - pl.ue_xy[k][1];
      const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
      const double pl_db = path_loss(d, p0_db, c);
      const double sh_db = c.shadow_sigma * rng.normal();
      g.pathloss_db(m, k) = pl_db;
      g.shadow_db(m, k) = sh_db;
      g.beta(m, k) = std::pow(10.0, (pl_db + sh_db) / 10.0);
    }
  }
  return g;
}

// Thermal noise power in watts; the noise figure enters as 10^(NF/10).
inline double noise_power(const SystemConfig& c) {
  return c.boltzmann * c.bandwidth * c.temperature *
         std::pow(10.0, c.noise_figure / 10.0);
}

}  // namespace dtzf::netgeom
