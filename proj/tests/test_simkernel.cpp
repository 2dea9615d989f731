#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "dtzf/simkernel.hpp"
#include "oracles.hpp"

using namespace dtzf;
using namespace dtzf::simkernel;
using Catch::Approx;
using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXcd random_cmat(int rows, int cols, std::uint64_t seed) {
  Substream rng(seed, "mat");
  MatrixXcd G(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) G(r, c) = rng.cnormal();
  return G;
}

netgeom::SystemConfig small_config() {
  netgeom::SystemConfig cfg;
  cfg.num_aps = 16;
  cfg.num_ues = 4;
  cfg.symbols_per_frame = 20;
  cfg.rng_seed = 11;
  return cfg;
}

// flat unit-gain map over a toy trace grid
netgeom::LinkGainMap unit_gains(int M, int K) {
  netgeom::LinkGainMap g;
  g.beta = MatrixXd::Ones(M, K);
  g.pathloss_db = MatrixXd::Zero(M, K);
  g.shadow_db = MatrixXd::Zero(M, K);
  return g;
}

fading::TraceSet make_traces(int M, int K, double f_d, double spacing, int length,
                             std::uint64_t seed) {
  fading::TraceSet ts;
  ts.M = M;
  ts.K = K;
  for (int m = 0; m < M; ++m)
    for (int k = 0; k < K; ++k) {
      Substream rng(seed, "fading", 0, 0, static_cast<std::uint64_t>(m) * K + k);
      ts.traces.push_back(fading::gen_trace(f_d, spacing, length, rng));
    }
  return ts;
}

}  // namespace

TEST_CASE("matched CSI reduces to the closed-form SINR", "[simkernel]") {
  const MatrixXcd G = random_cmat(4, 10, 1);
  const MatrixXcd A = zfprecode::zf_matrix(G);
  const VectorXd psi = VectorXd::Constant(4, 0.37);
  const double p_d = 0.2, sigma2 = 6.36241029449455e-13;

  const VectorXd sinr = effective_sinr(G, A, psi, p_d, sigma2);
  const double expected = p_d * 0.37 * 0.37 / sigma2;
  for (int k = 0; k < 4; ++k)
    REQUIRE(std::abs(sinr(k) - expected) < 1e-6 * expected);

  // effective matrix is diagonal under matched CSI
  const MatrixXcd C = std::sqrt(p_d) * (G * A) * psi.asDiagonal();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      if (i != j) REQUIRE(std::abs(C(i, j)) < 1e-9 * std::abs(C(i, i)));
}

TEST_CASE("overwhelming noise drives the efficiency to zero", "[simkernel]") {
  const MatrixXcd G = random_cmat(3, 8, 2);
  const MatrixXcd A = zfprecode::zf_matrix(G);
  const VectorXd psi = VectorXd::Ones(3);
  const VectorXd sinr = effective_sinr(G, A, psi, 1.0, 1e30);
  for (int k = 0; k < 3; ++k) {
    REQUIRE(sinr(k) < 1e-15);
    REQUIRE(std::log2(1.0 + sinr(k)) < 1e-15);
  }
}

TEST_CASE("effective SINR rejects inconsistent shapes", "[simkernel]") {
  const MatrixXcd G = random_cmat(3, 8, 3);
  const MatrixXcd A = zfprecode::zf_matrix(G);
  REQUIRE_THROWS_AS(effective_sinr(G, A.topRows(7), VectorXd::Ones(3), 1.0, 1.0),
                    invalid_parameter);
  REQUIRE_THROWS_AS(effective_sinr(G, A.leftCols(2), VectorXd::Ones(3), 1.0, 1.0),
                    invalid_parameter);
  REQUIRE_THROWS_AS(effective_sinr(G, A, VectorXd::Ones(4), 1.0, 1.0),
                    invalid_parameter);
}

TEST_CASE("noiseless matched downlink returns scaled symbols", "[simkernel]") {
  const MatrixXcd G = random_cmat(4, 12, 4);
  const MatrixXcd A = zfprecode::zf_matrix(G);
  Substream srng(5, "sym");
  const MatrixXcd S = zfprecode::draw_symbols(4, 50, srng);
  const MatrixXcd X = zfprecode::precode_frame(A, VectorXd::Ones(4), S);

  Substream nrng(6, "noise");
  const double p_d = 0.2;
  const MatrixXcd R = downlink_receive(G, X, p_d, 0.0, nrng);
  REQUIRE((R - std::sqrt(p_d) * S).cwiseAbs().maxCoeff() < 1e-9);

  REQUIRE_THROWS_AS(downlink_receive(G, MatrixXcd::Zero(11, 3), p_d, 0.0, nrng),
                    invalid_parameter);
}

TEST_CASE("received power splits into signal and noise budgets",
          "[simkernel][stat]") {
  const int K = 4, M = 10, N = 5000;
  const MatrixXcd G = random_cmat(K, M, 7);
  const MatrixXcd X = random_cmat(M, N, 8) * 0.3;
  const double p_d = 2.0, sigma2 = 0.5;

  Substream nrng(9, "noise");
  const MatrixXcd R = downlink_receive(G, X, p_d, sigma2, nrng);

  const double signal = p_d * (G * X).squaredNorm();
  const double expected = signal + K * N * sigma2;
  const double se =
      std::sqrt(2.0 * sigma2 * signal + K * N * sigma2 * sigma2);
  REQUIRE(std::abs(R.squaredNorm() - expected) < 3.0 * se);

  // zero input leaves pure noise at the configured variance
  Substream zrng(10, "noise");
  const MatrixXcd Rz = downlink_receive(G, MatrixXcd::Zero(M, N), p_d, sigma2, zrng);
  const double pw = Rz.cwiseAbs2().mean();
  REQUIRE(std::abs(pw - sigma2) < 3.0 * sigma2 / std::sqrt(static_cast<double>(K * N)));
}

TEST_CASE("perfect and outdated views read the trace grid", "[simkernel]") {
  const int M = 3, K = 2, t_tx = 5;
  const auto ts = make_traces(M, K, 100.0, 1e-3, t_tx + 1, 21);
  auto gains = unit_gains(M, K);
  gains.beta.setConstant(2.5);

  netgeom::SystemConfig cfg = small_config();
  SimOptions opt;

  CsiMode perfect;
  const MatrixXcd Gp = csi_for_precoding(perfect, ts, gains, t_tx, 1, 0, 0, cfg, opt);
  const MatrixXcd truth = fading::channel_at(ts, gains, t_tx);
  REQUIRE((Gp - truth).cwiseAbs().maxCoeff() == 0.0);

  CsiMode outdated;
  outdated.kind = CsiKind::outdated;
  const MatrixXcd Go = csi_for_precoding(outdated, ts, gains, t_tx, 1, 0, 0, cfg, opt);
  const MatrixXcd aged = fading::channel_at(ts, gains, t_tx - 1);
  REQUIRE((Go - aged).cwiseAbs().maxCoeff() == 0.0);

  REQUIRE_THROWS_AS(csi_for_precoding(outdated, ts, gains, 0, 1, 0, 0, cfg, opt),
                    invalid_parameter);
}

TEST_CASE("frozen channels make the aged view exact", "[simkernel]") {
  const int M = 4, K = 3, t_tx = 3;
  const auto ts = make_traces(M, K, 0.0, 1e-3, t_tx + 1, 22);
  const auto gains = unit_gains(M, K);
  netgeom::SystemConfig cfg = small_config();
  SimOptions opt;

  CsiMode perfect;
  CsiMode outdated;
  outdated.kind = CsiKind::outdated;
  const MatrixXcd Gp = csi_for_precoding(perfect, ts, gains, t_tx, 1, 0, 0, cfg, opt);
  const MatrixXcd Go = csi_for_precoding(outdated, ts, gains, t_tx, 1, 0, 0, cfg, opt);
  REQUIRE((Gp - Go).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("one-step aging decorrelates by the Bessel factor",
          "[simkernel][stat]") {
  // 1e5 unit-gain links, 100 Hz Doppler on a 1 ms grid
  const int M = 500, K = 200;
  const auto ts = make_traces(M, K, 100.0, 1e-3, 2, 23);
  const auto gains = unit_gains(M, K);
  netgeom::SystemConfig cfg = small_config();
  SimOptions opt;

  CsiMode perfect;
  CsiMode outdated;
  outdated.kind = CsiKind::outdated;
  const MatrixXcd now = csi_for_precoding(perfect, ts, gains, 1, 1, 0, 0, cfg, opt);
  const MatrixXcd old = csi_for_precoding(outdated, ts, gains, 1, 1, 0, 0, cfg, opt);

  const double cross = (now.cwiseProduct(old.conjugate())).sum().real();
  const double rho = cross / std::sqrt(now.squaredNorm() * old.squaredNorm());
  REQUIRE(std::abs(rho - oracle::kJ0Lag1) < 0.01);
}

TEST_CASE("predicted view needs a bank and a warm grid", "[simkernel]") {
  const int M = 4, K = 2, t_tx = 3;
  const auto ts = make_traces(M, K, 100.0, 1e-3, t_tx + 1, 24);
  const auto gains = unit_gains(M, K);
  netgeom::SystemConfig cfg = small_config();
  SimOptions opt;

  CsiMode pred;
  pred.kind = CsiKind::predicted;
  REQUIRE_THROWS_AS(csi_for_precoding(pred, ts, gains, t_tx, 1, 0, 0, cfg, opt),
                    invalid_parameter);

  neuralpredict::PredictorBank bank;
  for (int k = 0; k < K; ++k) {
    Substream rng(60 + k, "init");
    bank.modules.push_back(neuralpredict::init_module(1, 4, neuralpredict::CellType::lstm, rng));
  }
  pred.bank = &bank;
  REQUIRE_THROWS_AS(csi_for_precoding(pred, ts, gains, 0, 1, 0, 0, cfg, opt),
                    invalid_parameter);

  const MatrixXcd a = csi_for_precoding(pred, ts, gains, t_tx, 1, 0, 0, cfg, opt);
  const MatrixXcd b = csi_for_precoding(pred, ts, gains, t_tx, 1, 0, 0, cfg, opt);
  REQUIRE(a.rows() == K);
  REQUIRE(a.cols() == M);
  REQUIRE((a - b).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(a.allFinite());

  // the noisy label is a tag, not a different noise draw: at equal pilot SNR
  // both variants consume the same substreams and agree to the bit
  CsiMode noisy = pred;
  noisy.kind = CsiKind::noisy_predicted;
  const MatrixXcd c = csi_for_precoding(noisy, ts, gains, t_tx, 1, 0, 0, cfg, opt);
  REQUIRE((a - c).cwiseAbs().maxCoeff() == 0.0);

  // estimation noise perturbs the fed history
  CsiMode harsh = noisy;
  harsh.pilot_snr_db = 0.0;
  const MatrixXcd d = csi_for_precoding(harsh, ts, gains, t_tx, 1, 0, 0, cfg, opt);
  REQUIRE((a - d).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("mode names are stable identifiers", "[simkernel]") {
  CsiMode m;
  REQUIRE(m.name() == "perfect");
  m.kind = CsiKind::outdated;
  REQUIRE(m.name() == "outdated");
  m.kind = CsiKind::predicted;
  REQUIRE(m.name() == "predicted");
  m.kind = CsiKind::noisy_predicted;
  REQUIRE(m.name() == "noisy-predicted");
}

TEST_CASE("perfect-CSI drops hit the power-control closed form", "[simkernel]") {
  netgeom::SystemConfig cfg = small_config();
  SimOptions opt;
  opt.warmup_steps = 3;
  opt.power_control_draws = 40;

  CsiMode perfect;
  const DropResult res = run_drop(cfg, opt, perfect, 0);
  REQUIRE(res.se.size() == cfg.num_ues);
  REQUIRE(res.redraws == 0);
  REQUIRE(res.ap_power.size() == cfg.num_aps);
  REQUIRE(res.se.allFinite());

  // all users share the common amplitude, so all SE values coincide
  for (int k = 1; k < cfg.num_ues; ++k)
    REQUIRE(res.se(k) == Approx(res.se(0)).epsilon(1e-9));

  // independent reconstruction of the drop's power control level
  const double p0 = netgeom::compute_p0(cfg);
  Substream place_rng(cfg.rng_seed, "placement", 0, 0);
  Substream shadow_rng(cfg.rng_seed, "shadow", 0, 0);
  const auto placement = netgeom::draw_placement(cfg, place_rng);
  const auto gains = netgeom::large_scale_gains(placement, p0, cfg, shadow_rng);
  const MatrixXd sqrt_beta = gains.beta.transpose().array().sqrt().matrix();

  std::vector<MatrixXcd> ens;
  for (int r = 0; r < opt.power_control_draws; ++r) {
    Substream er(cfg.rng_seed, "ens", 0, 0, static_cast<std::uint64_t>(r));
    MatrixXcd Gr(cfg.num_ues, cfg.num_aps);
    for (int k = 0; k < cfg.num_ues; ++k)
      for (int m = 0; m < cfg.num_aps; ++m) Gr(k, m) = sqrt_beta(k, m) * er.cnormal();
    ens.push_back(std::move(Gr));
  }
  const auto pc = zfprecode::power_control(ens);
  const double sigma2 = netgeom::noise_power(cfg);
  const double se_expected =
      std::log2(1.0 + cfg.ap_power * pc.power / sigma2);
  for (int k = 0; k < cfg.num_ues; ++k)
    REQUIRE(res.se(k) == Approx(se_expected).epsilon(1e-6));
}

TEST_CASE("zero Doppler collapses aged drops onto perfect ones", "[simkernel]") {
  netgeom::SystemConfig cfg = small_config();
  cfg.doppler = 0.0;
  SimOptions opt;
  opt.warmup_steps = 2;
  opt.power_control_draws = 30;

  CsiMode perfect;
  CsiMode outdated;
  outdated.kind = CsiKind::outdated;
  for (std::uint64_t d = 0; d < 3; ++d) {
    const DropResult a = run_drop(cfg, opt, perfect, d);
    const DropResult b = run_drop(cfg, opt, outdated, d);
    REQUIRE((a.se - b.se).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("aging never helps: paired drops favor fresh CSI",
          "[simkernel][stat][slow]") {
  netgeom::SystemConfig cfg = small_config();
  cfg.num_aps = 24;
  cfg.num_ues = 6;
  cfg.rng_seed = 31;
  SimOptions opt;
  opt.warmup_steps = 2;
  opt.power_control_draws = 50;

  CsiMode perfect;
  CsiMode outdated;
  outdated.kind = CsiKind::outdated;

  const int n = 300;
  int wins = 0;
  for (std::uint64_t d = 0; d < n; ++d) {
    const DropResult a = run_drop(cfg, opt, perfect, d);
    const DropResult b = run_drop(cfg, opt, outdated, d);
    if (a.se.mean() >= b.se.mean()) ++wins;
  }
  REQUIRE(wins >= static_cast<int>(0.95 * n));
}

TEST_CASE("degenerate predictions exhaust the redraw budget", "[simkernel]") {
  netgeom::SystemConfig cfg = small_config();
  cfg.num_aps = 8;
  cfg.num_ues = 2;
  SimOptions opt;
  opt.warmup_steps = 2;
  opt.power_control_draws = 10;
  opt.redraw_limit = 3;

  // all-zero modules predict a zero channel, singular on every attempt
  neuralpredict::PredictorBank bank;
  for (int k = 0; k < 2; ++k) {
    Substream rng(70 + k, "init");
    auto p = neuralpredict::init_module(1, 3, neuralpredict::CellType::gru, rng);
    bank.modules.push_back(neuralpredict::zeros_like(p));
  }
  CsiMode pred;
  pred.kind = CsiKind::predicted;
  pred.bank = &bank;
  REQUIRE_THROWS_AS(run_drop(cfg, opt, pred, 0), singular_channel);
}

TEST_CASE("campaigns shard deterministically across threads", "[simkernel]") {
  netgeom::SystemConfig cfg = small_config();
  SimOptions opt;
  opt.drops = 8;
  opt.warmup_steps = 2;
  opt.power_control_draws = 20;

  CsiMode perfect;
  const auto serial = run_campaign(cfg, opt, perfect);
  SimOptions par = opt;
  par.jobs = 3;
  const auto threaded = run_campaign(cfg, par, perfect);

  REQUIRE(serial.size() == threaded.size());
  for (std::size_t d = 0; d < serial.size(); ++d) {
    REQUIRE((serial[d].se - threaded[d].se).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((serial[d].ap_power - threaded[d].ap_power).cwiseAbs().maxCoeff() == 0.0);
  }

  const auto again = run_campaign(cfg, opt, perfect);
  for (std::size_t d = 0; d < serial.size(); ++d)
    REQUIRE((serial[d].se - again[d].se).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("analytic SINR matches a symbol-level estimate", "[simkernel][stat]") {
  const int K = 4, M = 16, N = 100000;
  const MatrixXcd G_true = random_cmat(K, M, 40);
  const MatrixXcd G_hat = G_true + 0.1 * random_cmat(K, M, 41);
  const MatrixXcd A = zfprecode::zf_matrix(G_hat);
  const VectorXd psi = VectorXd::Ones(K);
  const double p_d = 1.0, sigma2 = 0.05;

  const VectorXd sinr = effective_sinr(G_true, A, psi, p_d, sigma2);

  Substream srng(42, "sym");
  const MatrixXcd S = zfprecode::draw_symbols(K, N, srng);
  const MatrixXcd X = zfprecode::precode_frame(A, psi, S);
  Substream nrng(43, "noise");
  const MatrixXcd R = downlink_receive(G_true, X, p_d, sigma2, nrng);

  const MatrixXcd C = std::sqrt(p_d) * (G_true * A) * psi.asDiagonal();
  for (int k = 0; k < K; ++k) {
    double err = 0.0;
    for (int n = 0; n < N; ++n) err += std::norm(R(k, n) - C(k, k) * S(k, n));
    const double sinr_mc = std::norm(C(k, k)) / (err / N);
    REQUIRE(std::abs(sinr_mc - sinr(k)) < 0.05 * sinr(k));
  }
}

TEST_CASE("aggregation interpolates order statistics", "[simkernel]") {
  // 25 drops x 4 users carrying 1..100 in scrambled order
  std::vector<DropResult> drops(25);
  std::vector<double> vals(100);
  for (int i = 0; i < 100; ++i) vals[i] = i + 1.0;
  Substream rng(50, "perm");
  std::shuffle(vals.begin(), vals.end(), rng.engine());
  for (int d = 0; d < 25; ++d) {
    drops[d].se = VectorXd(4);
    for (int k = 0; k < 4; ++k) drops[d].se(k) = vals[4 * d + k];
    drops[d].ap_power = VectorXd::Constant(3, d);
    drops[d].redraws = d == 7 ? 2 : 0;
  }

  const SeReport rep = aggregate(drops, "perfect", 0xabcd, 99);
  REQUIRE(rep.samples.size() == 100);
  REQUIRE(rep.q05 == Approx(5.95).margin(1e-12));
  REQUIRE(rep.q50 == Approx(50.5).margin(1e-12));
  REQUIRE(rep.mode == "perfect");
  REQUIRE(rep.config_hash == 0xabcd);
  REQUIRE(rep.seed == 99);
  REQUIRE(rep.redraws == 2);
  REQUIRE(rep.ap_power_mean.size() == 3);
  REQUIRE(rep.ap_power_mean(0) == Approx(12.0).margin(1e-12));

  // a different scramble of the same values reports the same quantiles
  std::shuffle(vals.begin(), vals.end(), rng.engine());
  std::vector<DropResult> perm(25);
  for (int d = 0; d < 25; ++d) {
    perm[d].se = VectorXd(4);
    for (int k = 0; k < 4; ++k) perm[d].se(k) = vals[4 * d + k];
    perm[d].ap_power = VectorXd::Zero(3);
  }
  const SeReport rep2 = aggregate(perm, "perfect", 0xabcd, 99);
  REQUIRE(rep2.q05 == Approx(rep.q05).margin(1e-12));
  REQUIRE(rep2.q50 == Approx(rep.q50).margin(1e-12));

  std::vector<DropResult> flat(3);
  for (auto& d : flat) {
    d.se = VectorXd::Constant(2, 7.25);
    d.ap_power = VectorXd::Zero(1);
  }
  const SeReport rep3 = aggregate(flat, "perfect", 1, 1);
  REQUIRE(rep3.q05 == 7.25);
  REQUIRE(rep3.q50 == 7.25);

  REQUIRE_THROWS_AS(aggregate({}, "perfect", 0, 0), invalid_parameter);
}

TEST_CASE("stop-and-wait frames idle through the processing gap", "[simkernel]") {
  netgeom::SystemConfig cfg;  // 10 ms frame, 100 symbols, 16 users, 1 ms delay
  const FrameTimeline tl = timeline_report(cfg, TimelineMode::stop_and_wait);

  REQUIRE(tl.training_end == Approx(1.6e-3).margin(1e-15));
  REQUIRE(tl.csi_available == Approx(1.6e-3 + 1e-3).margin(1e-15));
  REQUIRE(tl.downlink_start == Approx(2.6e-3).margin(1e-15));
  REQUIRE(tl.idle >= cfg.delay);
  REQUIRE(tl.idle == Approx(cfg.delay).margin(1e-15));
  REQUIRE(tl.utilization == Approx(0.74).margin(1e-12));
  // never better than the frame minus gap minus training
  REQUIRE(tl.utilization <=
          (cfg.frame_duration - cfg.delay - tl.training_end) / cfg.frame_duration +
              1e-15);

  const FrameTimeline sw = timeline_report(cfg, TimelineMode::stop_and_wait, 2e-4);
  REQUIRE(sw.idle >= cfg.delay);
  REQUIRE(sw.downlink_start == Approx(1.6e-3 + 2e-4 + 1e-3).margin(1e-15));
}

TEST_CASE("pipelined frames never idle", "[simkernel]") {
  netgeom::SystemConfig cfg;
  for (const double d : {1e-3, 2e-3, 3e-3, 2.5e-3}) {
    cfg.delay = d;
    const FrameTimeline tl = timeline_report(cfg, TimelineMode::pipelined);
    REQUIRE(tl.idle == 0.0);
    REQUIRE(tl.symbols_available == 0.0);
    REQUIRE(tl.csi_available == tl.training_end);
    REQUIRE(tl.downlink_start == tl.training_end);
    REQUIRE(tl.utilization == Approx(0.84).margin(1e-12));
  }

  const FrameTimeline sw = timeline_report(cfg, TimelineMode::pipelined, 2e-4);
  REQUIRE(sw.idle == 0.0);
  REQUIRE(sw.downlink_start == Approx(1.6e-3 + 2e-4).margin(1e-15));
}

TEST_CASE("with no gap both schedules coincide", "[simkernel]") {
  netgeom::SystemConfig cfg;
  cfg.delay = 0.0;
  const FrameTimeline sw = timeline_report(cfg, TimelineMode::stop_and_wait);
  const FrameTimeline pl = timeline_report(cfg, TimelineMode::pipelined);
  REQUIRE(sw.downlink_start == pl.downlink_start);
  REQUIRE(sw.utilization == pl.utilization);
  REQUIRE(sw.idle == 0.0);
}
