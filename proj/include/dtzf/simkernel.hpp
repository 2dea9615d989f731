#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>
#include <thread>
#include <vector>

#include "dtzf/chest.hpp"
#include "dtzf/common.hpp"
#include "dtzf/fading.hpp"
#include "dtzf/netgeom.hpp"
#include "dtzf/neuralpredict.hpp"
#include "dtzf/zfprecode.hpp"

// Monte Carlo drops: place the network, evolve the channel over one frame's
// CSI grid, build the precoder from the selected CSI view, score per-user
// spectral efficiency at the transmission instant. Also the frame timeline
// accounting for the stop-and-wait and pipelined operation modes.
namespace dtzf::simkernel {

enum class CsiKind { perfect, outdated, predicted, noisy_predicted };

struct CsiMode {
  CsiKind kind = CsiKind::perfect;
  double delay = 1e-3;         // aging delay / prediction horizon, seconds
  double pilot_snr_db = 30.0;  // predicted variants only
  const neuralpredict::PredictorBank* bank = nullptr;

  std::string name() const {
    switch (kind) {
      case CsiKind::perfect: return "perfect";
      case CsiKind::outdated: return "outdated";
      case CsiKind::predicted: return "predicted";
      case CsiKind::noisy_predicted: return "noisy-predicted";
    }
    return "?";
  }
};

struct SimOptions {
  int drops = 200;
  int warmup_steps = 20;         // CSI grid instants fed before transmission
  int power_control_draws = 200;
  int redraw_limit = 10;
  bool physical_estimation = false;  // MMSE pilot chain instead of the
                                     // normalized-domain noise model
  bool gaussian_symbols = false;
  int jobs = 1;
};

// Effective per-user SINR of the precoded downlink at the transmission
// instant: C = sqrt(p_d) G_true A diag(psi), signal |C_kk|^2 against
// leaked interference plus noise.
inline Eigen::VectorXd effective_sinr(const Eigen::MatrixXcd& G_true,
                                      const Eigen::MatrixXcd& A,
                                      const Eigen::VectorXd& psi, double p_d,
                                      double sigma2) {
  const Eigen::Index K = G_true.rows();
  if (A.rows() != G_true.cols() || A.cols() != K || psi.size() != K)
    throw invalid_parameter("effective_sinr: dimension mismatch");
  const Eigen::MatrixXcd C =
      std::sqrt(p_d) * (G_true * A) * psi.asDiagonal();
  Eigen::VectorXd sinr(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    const double sig = std::norm(C(k, k));
    const double intf = C.row(k).squaredNorm() - sig;
    sinr(k) = sig / (intf + sigma2);
  }
  return sinr;
}

// Received downlink block R = sqrt(p_d) G_true X + noise.
inline Eigen::MatrixXcd downlink_receive(const Eigen::MatrixXcd& G_true,
                                         const Eigen::MatrixXcd& X, double p_d,
                                         double sigma2, Substream& rng) {
  if (G_true.cols() != X.rows())
    throw invalid_parameter("downlink_receive: dimension mismatch");
  Eigen::MatrixXcd R = std::sqrt(p_d) * (G_true * X);
  if (sigma2 > 0) {
    const double sd = std::sqrt(sigma2);
    for (Eigen::Index j = 0; j < R.cols(); ++j)
      for (Eigen::Index i = 0; i < R.rows(); ++i) R(i, j) += sd * rng.cnormal();
  }
  return R;
}

// CSI snapshot handed to the precoder. t_tx indexes the trace grid (spacing
// equals the configured delay/horizon).
inline Eigen::MatrixXcd csi_for_precoding(const CsiMode& mode,
                                          const fading::TraceSet& traces,
                                          const netgeom::LinkGainMap& gains,
                                          int t_tx, std::uint64_t seed,
                                          std::uint64_t drop,
                                          std::uint64_t attempt,
                                          const netgeom::SystemConfig& cfg,
                                          const SimOptions& opt) {
  switch (mode.kind) {
    case CsiKind::perfect:
      return fading::channel_at(traces, gains, t_tx);
    case CsiKind::outdated: {
      // one grid step of aging, no estimation error: with zero Doppler this
      // reproduces the perfect snapshot exactly
      if (t_tx - 1 < 0) throw invalid_parameter("csi_for_precoding: grid too short");
      return fading::channel_at(traces, gains, t_tx - 1);
    }
    case CsiKind::predicted:
    case CsiKind::noisy_predicted: {
      if (!mode.bank) throw invalid_parameter("csi_for_precoding: predicted mode needs a bank");
      if (t_tx < 1) throw invalid_parameter("csi_for_precoding: grid too short");
      const int M = traces.M, K = traces.K;
      const Eigen::MatrixXd sqrt_beta =
          gains.beta.transpose().array().sqrt().matrix();  // K x M
      neuralpredict::BankRuntime rt(*mode.bank, M);
      Eigen::MatrixXcd pred;
      if (opt.physical_estimation) {
        // uplink pilots + MMSE each grid instant, then normalize
        const double sigma2 = netgeom::noise_power(cfg);
        const auto pilots = chest::make_pilots(K, K);
        for (int t = 0; t < t_tx; ++t) {
          Substream pn(seed, "pilot-noise", drop, attempt, static_cast<std::uint64_t>(t));
          const Eigen::MatrixXcd Y = chest::uplink_observe(
              fading::channel_at(traces, gains, t), pilots, cfg.ue_power, sigma2, pn);
          const auto est = chest::mmse_estimate_all(Y, pilots, gains.beta,
                                                    cfg.ue_power, sigma2);
          pred = rt.step(est.ghat.cwiseQuotient(sqrt_beta.cast<cplx>()));
        }
      } else {
        // normalized-domain estimates hhat = h + e; the noise substream is
        // mode-independent so paired seeds compare banks on identical draws
        const double eps2 = chest::normalized_estimate_snr(mode.pilot_snr_db);
        const double sd = std::sqrt(eps2);
        for (int t = 0; t < t_tx; ++t) {
          Eigen::MatrixXcd hhat = fading::small_scale_at(traces, t);
          Substream en(seed, "estnoise", drop, attempt, static_cast<std::uint64_t>(t));
          for (int k = 0; k < K; ++k)
            for (int m = 0; m < M; ++m) hhat(k, m) += sd * en.cnormal();
          pred = rt.step(hhat);
        }
      }
      // denormalize the final one-step-ahead output, which targets t_tx
      return pred.cwiseProduct(sqrt_beta.cast<cplx>());
    }
  }
  throw invalid_parameter("csi_for_precoding: unknown mode");
}

struct DropResult {
  Eigen::VectorXd se;        // per user, bits/s/Hz
  Eigen::VectorXd ap_power;  // mean |x_m|^2 over the precoded frame
  int redraws = 0;
};

// One Monte Carlo drop. Geometry, shadowing and fading derive from
// (seed, drop) only, so every CSI mode sees the same network realization.
inline DropResult run_drop(const netgeom::SystemConfig& cfg,
                           const SimOptions& opt, const CsiMode& mode,
                           std::uint64_t drop) {
  cfg.validate();
  const double p0 = netgeom::compute_p0(cfg);
  const double sigma2 = netgeom::noise_power(cfg);
  const int M = cfg.num_aps, K = cfg.num_ues;
  const int t_tx = opt.warmup_steps;

  for (int attempt = 0;; ++attempt) {
    if (attempt > opt.redraw_limit)
      throw singular_channel("run_drop: redraw limit exceeded");
    const auto att = static_cast<std::uint64_t>(attempt);
    Substream place_rng(cfg.rng_seed, "placement", drop, att);
    Substream shadow_rng(cfg.rng_seed, "shadow", drop, att);
    const auto placement = netgeom::draw_placement(cfg, place_rng);
    const auto gains = netgeom::large_scale_gains(placement, p0, cfg, shadow_rng);

    fading::TraceSet traces;
    traces.M = M;
    traces.K = K;
    traces.traces.reserve(static_cast<std::size_t>(M) * K);
    for (int m = 0; m < M; ++m)
      for (int k = 0; k < K; ++k) {
        Substream tr(cfg.rng_seed, "fading", drop, att,
                     static_cast<std::uint64_t>(m) * K + k);
        traces.traces.push_back(
            fading::gen_trace(cfg.doppler, cfg.delay, t_tx + 1, tr));
      }

    try {
      const Eigen::MatrixXcd G_csi =
          csi_for_precoding(mode, traces, gains, t_tx, cfg.rng_seed, drop, att, cfg, opt);
      const Eigen::MatrixXcd A = zfprecode::zf_matrix(G_csi);

      std::vector<Eigen::MatrixXcd> ens;
      ens.reserve(static_cast<std::size_t>(opt.power_control_draws));
      const Eigen::MatrixXd sqrt_beta =
          gains.beta.transpose().array().sqrt().matrix();  // K x M
      for (int r = 0; r < opt.power_control_draws; ++r) {
        Substream er(cfg.rng_seed, "ens", drop, att, static_cast<std::uint64_t>(r));
        Eigen::MatrixXcd Gr(K, M);
        for (int k = 0; k < K; ++k)
          for (int m = 0; m < M; ++m) Gr(k, m) = sqrt_beta(k, m) * er.cnormal();
        ens.push_back(std::move(Gr));
      }
      const auto pc = zfprecode::power_control(ens);

      const Eigen::MatrixXcd G_true = fading::channel_at(traces, gains, t_tx);
      const Eigen::VectorXd sinr =
          effective_sinr(G_true, A, pc.psi, cfg.ap_power, sigma2);

      Substream sym_rng(cfg.rng_seed, "symbols", drop, att);
      const Eigen::MatrixXcd S = zfprecode::draw_symbols(
          K, cfg.symbols_per_frame, sym_rng, opt.gaussian_symbols);
      const Eigen::MatrixXcd X = zfprecode::precode_frame(A, pc.psi, S);

      DropResult res;
      res.redraws = attempt;
      res.se = (1.0 + sinr.array()).log() / std::log(2.0);
      res.ap_power = X.cwiseAbs2().rowwise().mean();
      return res;
    } catch (const singular_channel&) {
      continue;  // bounded by redraw_limit above
    }
  }
}

// Independent drops, deterministic by index; jobs > 1 shards the index
// range across threads.
inline std::vector<DropResult> run_campaign(const netgeom::SystemConfig& cfg,
                                            const SimOptions& opt,
                                            const CsiMode& mode) {
  std::vector<DropResult> results(static_cast<std::size_t>(opt.drops));
  const int jobs = std::max(1, opt.jobs);
  if (jobs == 1) {
    for (int d = 0; d < opt.drops; ++d)
      results[d] = run_drop(cfg, opt, mode, static_cast<std::uint64_t>(d));
    return results;
  }
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
  for (int j = 0; j < jobs; ++j)
    pool.emplace_back([&, j] {
      try {
        for (int d = next.fetch_add(1); d < opt.drops; d = next.fetch_add(1))
          results[d] = run_drop(cfg, opt, mode, static_cast<std::uint64_t>(d));
      } catch (...) {
        errors[j] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

struct SeSample {
  int drop;
  int user;
  double se;
};

struct SeReport {
  std::vector<SeSample> samples;
  double q05 = 0.0;
  double q50 = 0.0;
  std::string mode;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  Eigen::VectorXd ap_power_mean;
  long redraws = 0;
};

inline SeReport aggregate(const std::vector<DropResult>& drops,
                          const std::string& mode_name,
                          std::uint64_t config_hash, std::uint64_t seed) {
  if (drops.empty()) throw invalid_parameter("aggregate: no drops");
  SeReport rep;
  rep.mode = mode_name;
  rep.config_hash = config_hash;
  rep.seed = seed;
  std::vector<double> flat;
  for (std::size_t d = 0; d < drops.size(); ++d) {
    const auto& r = drops[d];
    for (Eigen::Index k = 0; k < r.se.size(); ++k)
      rep.samples.push_back({static_cast<int>(d), static_cast<int>(k), r.se(k)});
    if (rep.ap_power_mean.size() == 0)
      rep.ap_power_mean = Eigen::VectorXd::Zero(r.ap_power.size());
    rep.ap_power_mean += r.ap_power;
    rep.redraws += r.redraws;
  }
  rep.ap_power_mean /= static_cast<double>(drops.size());
  flat.reserve(rep.samples.size());
  for (const auto& s : rep.samples) flat.push_back(s.se);
  std::sort(flat.begin(), flat.end());
  rep.q05 = quantile_sorted(flat, 0.05);
  rep.q50 = quantile_sorted(flat, 0.50);
  return rep;
}

// Frame timeline. Uplink training occupies one pilot block (K symbol
// periods); stop-and-wait spends the fronthaul-and-processing gap D before
// the downlink starts, the pipelined mode transmits symbols buffered during
// the previous frame and starts right after training.
enum class TimelineMode { stop_and_wait, pipelined };

struct FrameTimeline {
  TimelineMode mode = TimelineMode::stop_and_wait;
  double training_end = 0.0;
  double csi_available = 0.0;
  double symbols_available = 0.0;
  double downlink_start = 0.0;
  double downlink_end = 0.0;
  double idle = 0.0;         // gap between readiness and downlink start
  double utilization = 0.0;  // downlink share of the frame
};

inline FrameTimeline timeline_report(const netgeom::SystemConfig& cfg,
                                     TimelineMode mode,
                                     double switch_time = 0.0) {
  cfg.validate();
  const double symbol = cfg.frame_duration / cfg.symbols_per_frame;
  const double t_train = static_cast<double>(cfg.num_ues) * symbol;
  FrameTimeline tl;
  tl.mode = mode;
  tl.training_end = t_train;
  if (mode == TimelineMode::stop_and_wait) {
    tl.csi_available = t_train + cfg.delay;  // fronthaul + processing gap
    tl.symbols_available = tl.csi_available;
    tl.downlink_start = t_train + switch_time + cfg.delay;
    tl.idle = cfg.delay;  // by construction, not by subtraction: the gap is
                          // exactly the wait between readiness and start
  } else {
    tl.csi_available = t_train;  // prediction ran during the previous frame
    tl.symbols_available = 0.0;  // buffered one frame ahead
    tl.downlink_start = t_train + switch_time;
    tl.idle = 0.0;
  }
  tl.downlink_end = cfg.frame_duration;
  tl.utilization = (tl.downlink_end - tl.downlink_start) / cfg.frame_duration;
  return tl;
}

}  // namespace dtzf::simkernel
