#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "dtzf/chest.hpp"
#include "dtzf/common.hpp"
#include "dtzf/fading.hpp"
#include "dtzf/rnn.hpp"

// Per-user recurrent channel predictors operating on normalized gains
// (hhat = ghat / sqrt(beta)), plus their training from fading traces.
namespace dtzf::neuralpredict {

struct TrainOptions {
  int layers = 2;
  int hidden = 25;
  CellType cell = CellType::lstm;
  int window = 20;          // truncated-BPTT window, zero state per window
  int batch = 64;
  int epochs = 200;
  int training_length = 5000;  // (window, target) pairs per epoch
  double pilot_snr_db = 30.0;  // observation noise on the inputs
  bool noisy_targets = false;  // default: clean future samples as targets
  AdamConfig adam;
  double target_mse = 0.0;     // stop once epoch MSE falls below; 0 disables
  double plateau_rel = 0.0;    // stop when the windowed mean improves less
  int plateau_window = 5;      //   than this fraction; 0 disables
  int min_epochs = 8;
  std::uint64_t seed = 1;
};

struct TrainReport {
  std::vector<double> epoch_mse;
  double heldout_nmse = std::numeric_limits<double>::quiet_NaN();
  double heldout_power = 0.0;  // mean |target|^2, the NMSE denominator
  int epochs_run = 0;
};

namespace detail {

struct WindowRef {
  int link;
  int t0;
};

// column b of each step matrix is window b of the batch
inline void fill_batch(const std::vector<std::vector<cplx>>& noisy,
                       const std::vector<const fading::FadingTrace*>& clean,
                       const std::vector<WindowRef>& refs, std::size_t lo,
                       std::size_t hi, int W, int horizon, bool noisy_targets,
                       std::vector<MatrixXd>& xs, MatrixXd& target) {
  const int B = static_cast<int>(hi - lo);
  xs.assign(static_cast<std::size_t>(W), MatrixXd(2, B));
  target.resize(2, B);
  for (std::size_t b = lo; b < hi; ++b) {
    const auto& r = refs[b];
    const int col = static_cast<int>(b - lo);
    for (int t = 0; t < W; ++t) {
      const cplx v = noisy[r.link][static_cast<std::size_t>(r.t0 + t)];
      xs[t](0, col) = v.real();
      xs[t](1, col) = v.imag();
    }
    const int ti = r.t0 + W - 1 + horizon;
    const cplx tv = noisy_targets
                        ? noisy[r.link][static_cast<std::size_t>(ti)]
                        : clean[r.link]->samples[static_cast<std::size_t>(ti)];
    target(0, col) = tv.real();
    target(1, col) = tv.imag();
  }
}

}  // namespace detail

// Held-out one-shot evaluation: windowed predictions against clean targets
// exactly `horizon` steps past the window end.
inline std::pair<double, double> eval_nmse(
    const ModuleParams& p, const std::vector<std::vector<cplx>>& noisy,
    const std::vector<const fading::FadingTrace*>& clean,
    const std::vector<detail::WindowRef>& refs, int W, int horizon) {
  if (refs.empty()) throw invalid_parameter("eval_nmse: no evaluation windows");
  std::vector<MatrixXd> xs;
  MatrixXd target;
  double err = 0.0, pow_sum = 0.0;
  constexpr std::size_t chunk = 512;
  for (std::size_t lo = 0; lo < refs.size(); lo += chunk) {
    const std::size_t hi = std::min(refs.size(), lo + chunk);
    detail::fill_batch(noisy, clean, refs, lo, hi, W, horizon, false, xs, target);
    std::vector<StepCache> caches;
    const MatrixXd y = forward_window(p, xs, caches);
    err += (y - target).squaredNorm();
    pow_sum += target.squaredNorm();
  }
  return {err / pow_sum, pow_sum / static_cast<double>(refs.size())};
}

// Trains one module on a pool of unit-power traces. The last max(1, L/16)
// traces are held out for NMSE evaluation; observation noise at the
// configured pilot SNR is drawn once and fixed across epochs.
inline std::pair<ModuleParams, TrainReport> train_module(
    const std::vector<fading::FadingTrace>& pool, int horizon_steps,
    const TrainOptions& opt) {
  if (pool.empty()) throw invalid_parameter("train_module: empty trace pool");
  if (horizon_steps < 1) throw invalid_parameter("train_module: horizon must be positive");
  const int W = opt.window;
  const int L = static_cast<int>(pool.size());
  const int T = static_cast<int>(pool.front().samples.size());
  if (T < W + horizon_steps)
    throw invalid_parameter("train_module: traces shorter than window plus horizon");

  const double eps2 = chest::normalized_estimate_snr(opt.pilot_snr_db);
  std::vector<std::vector<cplx>> noisy(static_cast<std::size_t>(L));
  {
    Substream nz(opt.seed, "obsnoise");
    const double sd = std::sqrt(eps2);
    for (int l = 0; l < L; ++l) {
      noisy[l].resize(static_cast<std::size_t>(T));
      for (int t = 0; t < T; ++t)
        noisy[l][t] = pool[l].samples[t] + (eps2 > 0 ? sd * nz.cnormal() : cplx{0, 0});
    }
  }
  std::vector<const fading::FadingTrace*> clean(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) clean[l] = &pool[l];

  const int heldout = std::max(1, L / 16);
  const int train_links = L - heldout;
  if (train_links < 1) throw invalid_parameter("train_module: pool too small to hold out");

  std::vector<detail::WindowRef> all_refs;
  for (int l = 0; l < train_links; ++l)
    for (int t0 = 0; t0 + W - 1 + horizon_steps < T; ++t0) all_refs.push_back({l, t0});
  if (static_cast<int>(all_refs.size()) < opt.training_length)
    throw invalid_parameter("train_module: pool yields fewer windows than training_length");

  Substream shuffle_rng(opt.seed, "shuffle");
  std::shuffle(all_refs.begin(), all_refs.end(), shuffle_rng.engine());
  all_refs.resize(static_cast<std::size_t>(opt.training_length));

  Substream init_rng(opt.seed, "init");
  ModuleParams params = init_module(opt.layers, opt.hidden, opt.cell, init_rng);
  AdamState adam(params);
  TrainReport rep;

  std::vector<MatrixXd> xs;
  MatrixXd target;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    Substream order_rng(opt.seed, "order", static_cast<std::uint64_t>(epoch));
    std::shuffle(all_refs.begin(), all_refs.end(), order_rng.engine());
    double se_sum = 0.0;
    for (std::size_t lo = 0; lo < all_refs.size(); lo += opt.batch) {
      const std::size_t hi = std::min(all_refs.size(), lo + opt.batch);
      detail::fill_batch(noisy, clean, all_refs, lo, hi, W, horizon_steps,
                         opt.noisy_targets, xs, target);
      std::vector<StepCache> caches;
      const MatrixXd y = forward_window(params, xs, caches);
      const MatrixXd diff = y - target;
      const double batch_se = diff.squaredNorm();
      if (!std::isfinite(batch_se)) throw training_diverged(epoch);
      se_sum += batch_se;
      const MatrixXd dY = (2.0 / static_cast<double>(hi - lo)) * diff;
      ModuleParams grads = zeros_like(params);
      backward_window(params, caches, dY, grads);
      adam_step(params, grads, adam, opt.adam);
    }
    if (!all_finite(params)) throw training_diverged(epoch);
    const double mse = se_sum / static_cast<double>(all_refs.size());
    rep.epoch_mse.push_back(mse);
    rep.epochs_run = epoch + 1;

    if (opt.target_mse > 0 && mse < opt.target_mse) break;
    if (opt.plateau_rel > 0 && rep.epochs_run >= std::max(opt.min_epochs, 2 * opt.plateau_window)) {
      const auto& h = rep.epoch_mse;
      const int w = opt.plateau_window;
      const double recent =
          std::accumulate(h.end() - w, h.end(), 0.0) / w;
      const double before =
          std::accumulate(h.end() - 2 * w, h.end() - w, 0.0) / w;
      if (before - recent < opt.plateau_rel * before) break;
    }
  }

  std::vector<detail::WindowRef> eval_refs;
  for (int l = train_links; l < L; ++l)
    for (int t0 = 0; t0 + W - 1 + horizon_steps < T; ++t0) eval_refs.push_back({l, t0});
  const auto [nmse, pw] = eval_nmse(params, noisy, clean, eval_refs, W, horizon_steps);
  rep.heldout_nmse = nmse;
  rep.heldout_power = pw;
  return {std::move(params), rep};
}

// K user-module slots plus the lead time they were trained for. Weight
// sharing across slots is a storage detail; state is always per link.
struct PredictorBank {
  std::vector<ModuleParams> modules;
  double horizon_s = 1e-3;
  double pilot_snr_db = 30.0;

  int users() const { return static_cast<int>(modules.size()); }
};

// Normalization sandwich around an arbitrary per-user step function:
// divide by norm(k), apply step(k, .), multiply back.
template <class F>
Eigen::VectorXcd predict_with(F&& step, const Eigen::VectorXd& norm,
                              const Eigen::VectorXcd& ghat) {
  if (norm.size() != ghat.size())
    throw invalid_parameter("predict_with: user count mismatch");
  Eigen::VectorXcd out(ghat.size());
  for (int k = 0; k < ghat.size(); ++k) {
    if (!(norm(k) > 0))
      throw invalid_parameter("predict_with: normalization factors must be positive");
    out(k) = norm(k) * step(k, ghat(k) / norm(k));
  }
  return out;
}

// Single-AP prediction step: normalize by sqrt(beta), advance module k's
// state, denormalize. States are caller-owned, one per user.
inline Eigen::VectorXcd predict_bank(const PredictorBank& bank,
                                     const Eigen::VectorXd& norm,
                                     const Eigen::VectorXcd& ghat,
                                     std::vector<RnnState>& states) {
  const int K = bank.users();
  if (norm.size() != K || ghat.size() != K)
    throw invalid_parameter("predict_bank: user count mismatch");
  if (static_cast<int>(states.size()) != K)
    throw invalid_parameter("predict_bank: one state per user required");
  return predict_with(
      [&](int k, cplx h) { return forward(bank.modules[k], h, states[k]); },
      norm, ghat);
}

// Whole-network inference: per user, all M AP links advance as one batch.
// Inputs and outputs are normalized-domain K x M matrices.
class BankRuntime {
 public:
  BankRuntime(const PredictorBank& bank, int num_aps)
      : bank_(&bank), M_(num_aps), states_(bank.modules.size()) {
    for (std::size_t k = 0; k < states_.size(); ++k)
      states_[k].reset(bank.modules[k], M_);
  }

  Eigen::MatrixXcd step(const Eigen::MatrixXcd& hhat_norm) {
    const int K = bank_->users();
    if (hhat_norm.rows() != K || hhat_norm.cols() != M_)
      throw invalid_parameter("BankRuntime: input shape mismatch");
    Eigen::MatrixXcd pred(K, M_);
    MatrixXd x(2, M_);
    for (int k = 0; k < K; ++k) {
      for (int m = 0; m < M_; ++m) {
        x(0, m) = hhat_norm(k, m).real();
        x(1, m) = hhat_norm(k, m).imag();
      }
      const MatrixXd y = module_step(bank_->modules[k], x, states_[k]);
      for (int m = 0; m < M_; ++m) pred(k, m) = cplx{y(0, m), y(1, m)};
    }
    return pred;
  }

 private:
  const PredictorBank* bank_;
  int M_;
  std::vector<RnnState> states_;
};

// Anonymous unit-power trace pool for training, one substream per trace.
inline std::vector<fading::FadingTrace> make_training_pool(
    int num_traces, int length, double f_d, double spacing, std::uint64_t seed) {
  std::vector<fading::FadingTrace> pool;
  pool.reserve(static_cast<std::size_t>(num_traces));
  for (int i = 0; i < num_traces; ++i) {
    Substream rng(seed, "train-trace", static_cast<std::uint64_t>(i));
    pool.push_back(fading::gen_trace(f_d, spacing, length, rng));
  }
  return pool;
}

}  // namespace dtzf::neuralpredict
