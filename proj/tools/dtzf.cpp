// Command-line front end: trace generation, predictor training, downlink
// simulation and report merging, with reproducible artifacts.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dtzf/config.hpp"
#include "dtzf/io.hpp"

namespace fs = std::filesystem;
using namespace dtzf;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

std::string default_out_dir() {
  const char* env = std::getenv("DTZF_OUT_DIR");
  return env && *env ? env : ".";
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io_error("cannot create output directory " + dir + ": " + ec.message());
}

void record_output(config::RunManifest& man, const std::string& path) {
  man.outputs[path] = hex64(io::file_hash(path));
}

void finish_manifest(config::RunManifest& man, const std::string& out_dir) {
  man.out_dir = out_dir;
  const std::string path = join(out_dir, "manifest.json");
  io::write_json(path, man.full());
  std::printf("manifest %s (%s)\n", hex64(man.hash()).c_str(), path.c_str());
}

config::RunManifest start_manifest(const std::string& command,
                                   const config::Config& cfg) {
  config::RunManifest man;
  man.command = command;
  man.config_json = config::to_json(cfg);
  man.config_hash = config::config_hash(cfg);
  man.seed = cfg.system.rng_seed;
  return man;
}

int steps_for_horizon(double horizon_s, double spacing) {
  if (spacing <= 0) throw invalid_parameter("trace sample spacing must be positive");
  const double ratio = horizon_s / spacing;
  const int steps = static_cast<int>(std::lround(ratio));
  if (steps < 1 || std::abs(ratio - steps) > 1e-9 * std::max(1.0, ratio))
    throw invalid_parameter("horizon must be a positive multiple of the trace spacing");
  return steps;
}

int cmd_gen_traces(const config::Config& cfg, const std::string& out_dir,
                   const std::string& file_name) {
  ensure_dir(out_dir);
  const auto& t = cfg.training;
  if (t.num_traces < 2 || t.num_traces > 0xffff)
    throw invalid_parameter("training.num_traces must be in [2, 65535]");
  if (t.trace_length < 2) throw invalid_parameter("training.trace_length must be >= 2");
  auto pool = neuralpredict::make_training_pool(t.num_traces, t.trace_length,
                                                cfg.system.doppler, cfg.system.delay,
                                                cfg.system.rng_seed);
  fading::TraceSet ts;
  ts.M = t.num_traces;  // anonymous training links, one "user" slot
  ts.K = 1;
  ts.traces = std::move(pool);

  auto man = start_manifest("gen-traces", cfg);
  const std::string path = join(out_dir, file_name);
  io::write_traces(path, ts);
  record_output(man, path);
  std::printf("wrote %s: %d traces x %d samples, spacing %gs, doppler %g Hz\n",
              path.c_str(), ts.M, ts.length(), cfg.system.delay, cfg.system.doppler);
  finish_manifest(man, out_dir);
  return 0;
}

int cmd_train(const config::Config& cfg, const std::string& out_dir,
              const std::string& traces_path, const std::string& weights_name) {
  ensure_dir(out_dir);
  auto man = start_manifest("train", cfg);
  man.inputs[traces_path] = hex64(io::file_hash(traces_path));

  const auto ts = io::read_traces(traces_path);
  const int horizon_steps =
      steps_for_horizon(cfg.training.horizon_ms * 1e-3, ts.traces.front().sample_spacing);

  auto opt = config::training_options(cfg);
  neuralpredict::PredictorBank bank;
  bank.horizon_s = cfg.training.horizon_ms * 1e-3;
  bank.pilot_snr_db = cfg.training.pilot_snr_db;

  neuralpredict::TrainReport first_report;
  if (cfg.training.sharing == "shared") {
    auto [params, rep] = neuralpredict::train_module(ts.traces, horizon_steps, opt);
    first_report = rep;
    bank.modules.assign(static_cast<std::size_t>(cfg.system.num_ues), params);
    std::printf("trained shared module: %d epochs, final mse %g, heldout nmse %g\n",
                rep.epochs_run, rep.epoch_mse.empty() ? 0.0 : rep.epoch_mse.back(),
                rep.heldout_nmse);
  } else {
    for (int k = 0; k < cfg.system.num_ues; ++k) {
      opt.seed = Substream(cfg.system.rng_seed, "bank", static_cast<std::uint64_t>(k)).bits();
      auto [params, rep] = neuralpredict::train_module(ts.traces, horizon_steps, opt);
      if (k == 0) first_report = rep;
      bank.modules.push_back(std::move(params));
      std::printf("trained module %d: %d epochs, heldout nmse %g\n", k,
                  rep.epochs_run, rep.heldout_nmse);
    }
  }

  const std::string wpath = join(out_dir, weights_name);
  io::write_bank(wpath, bank);
  record_output(man, wpath);
  const std::string cpath = join(out_dir, "training.csv");
  io::write_training_csv(cpath, first_report);
  record_output(man, cpath);
  finish_manifest(man, out_dir);
  return 0;
}

int cmd_simulate(config::Config cfg, const std::string& out_dir,
                 const std::string& weights_path, bool dump_gains) {
  ensure_dir(out_dir);
  simkernel::CsiMode mode;
  mode.kind = config::parse_mode(cfg.simulation.mode);
  mode.delay = cfg.system.delay;
  mode.pilot_snr_db = cfg.simulation.pilot_snr_db;

  auto man = start_manifest("simulate", cfg);
  man.modes = {cfg.simulation.mode};

  neuralpredict::PredictorBank bank;
  const bool needs_bank = mode.kind == simkernel::CsiKind::predicted ||
                          mode.kind == simkernel::CsiKind::noisy_predicted;
  if (needs_bank) {
    if (weights_path.empty())
      throw invalid_parameter("mode " + cfg.simulation.mode + " needs --weights");
    man.inputs[weights_path] = hex64(io::file_hash(weights_path));
    bank = io::read_bank(weights_path);
    if (bank.users() != cfg.system.num_ues)
      throw invalid_parameter("weight file holds " + std::to_string(bank.users()) +
                              " modules, config expects " +
                              std::to_string(cfg.system.num_ues));
    if (std::abs(bank.horizon_s - cfg.system.delay) > 1e-12)
      throw invalid_parameter("weight file horizon disagrees with system.delay");
    mode.bank = &bank;
  }

  const auto opt = config::sim_options(cfg);
  const auto drops = simkernel::run_campaign(cfg.system, opt, mode);
  auto rep = simkernel::aggregate(drops, cfg.simulation.mode,
                                  config::config_hash(cfg), cfg.system.rng_seed);

  const std::string base = "se_" + cfg.simulation.mode;
  const std::string csv = join(out_dir, base + ".csv");
  io::write_se_csv(csv, rep);
  record_output(man, csv);
  const std::string side = join(out_dir, base + ".json");
  io::write_json(side, io::se_sidecar(rep, hex64(man.hash()),
                                      hex64(config::system_hash(cfg))));
  record_output(man, side);

  if (dump_gains) {
    Substream place_rng(cfg.system.rng_seed, "placement", 0, 0);
    Substream shadow_rng(cfg.system.rng_seed, "shadow", 0, 0);
    const auto pl = netgeom::draw_placement(cfg.system, place_rng);
    const auto g = netgeom::large_scale_gains(pl, netgeom::compute_p0(cfg.system),
                                              cfg.system, shadow_rng);
    const std::string gpath = join(out_dir, "gains.csv");
    io::write_gains_csv(gpath, g);
    record_output(man, gpath);
  }

  std::printf("%s: %zu samples, se q05 %.4f, q50 %.4f, max mean AP power %.4g\n",
              cfg.simulation.mode.c_str(), rep.samples.size(), rep.q05, rep.q50,
              rep.ap_power_mean.maxCoeff());
  finish_manifest(man, out_dir);
  return 0;
}

int cmd_report(const config::Config& cfg, const std::string& out_dir,
               const std::vector<std::string>& report_csvs, int grid_points,
               bool force) {
  ensure_dir(out_dir);
  auto man = start_manifest("report", cfg);
  std::vector<std::string> names;
  std::vector<std::vector<double>> samples;
  std::string system_hash_seen;
  for (const auto& csv : report_csvs) {
    man.inputs[csv] = hex64(io::file_hash(csv));
    const auto rows = io::read_se_csv(csv);
    if (rows.empty()) throw invalid_parameter("report " + csv + " holds no samples");
    std::vector<double> se;
    se.reserve(rows.size());
    for (const auto& r : rows) se.push_back(r.se);

    std::string name = fs::path(csv).stem().string();
    const std::string side = (fs::path(csv).parent_path() /
                              (fs::path(csv).stem().string() + ".json")).string();
    if (fs::exists(side)) {
      const auto j = io::read_json(side);
      if (j.contains("mode")) name = j.at("mode").get<std::string>();
      if (j.contains("system_hash")) {
        const auto h = j.at("system_hash").get<std::string>();
        if (system_hash_seen.empty()) system_hash_seen = h;
        else if (h != system_hash_seen && !force)
          throw invalid_parameter(
              "reports stem from different scenarios (" + system_hash_seen +
              " vs " + h + "); pass --force to merge anyway");
      }
      man.inputs[side] = hex64(io::file_hash(side));
    }
    while (std::find(names.begin(), names.end(), name) != names.end()) name += "+";
    names.push_back(name);
    samples.push_back(std::move(se));
  }
  man.modes = names;
  const std::string path = join(out_dir, "cdf.csv");
  io::write_merged_cdf(path, names, std::move(samples), grid_points);
  record_output(man, path);
  std::printf("merged %zu report(s) into %s\n", names.size(), path.c_str());
  finish_manifest(man, out_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cell-free massive MIMO downlink simulator: delay-tolerant "
               "zero-forcing with recurrent channel prediction"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = default_out_dir();
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  auto* out_opt = app.add_option("--out", out_dir, "output directory (env DTZF_OUT_DIR)");
  auto* seed_opt = app.add_option("--seed", seed, "override system.rng_seed");
  (void)out_opt;

  auto* gen = app.add_subcommand("gen-traces", "generate a training trace file");
  int num_traces = 0, trace_length = 0;
  std::string trace_name = "traces.bin";
  auto* gt_n = gen->add_option("--num-traces", num_traces, "training links to draw");
  auto* gt_l = gen->add_option("--trace-length", trace_length, "samples per link");
  gen->add_option("--file", trace_name, "output file name");

  auto* train = app.add_subcommand("train", "train the predictor bank on a trace file");
  std::string traces_path, weights_name = "weights.bin", cell;
  double horizon_ms = 0, snr_db = 0, lr = 0;
  int epochs = -1, layers = 0, hidden = 0, training_length = 0;
  train->add_option("--traces", traces_path, "CFTRACE1 input")->check(CLI::ExistingFile);
  train->add_option("--weights", weights_name, "output weight file name");
  auto* tr_h = train->add_option("--horizon-ms", horizon_ms, "prediction horizon, ms");
  auto* tr_s = train->add_option("--snr-db", snr_db, "pilot SNR driving observation noise");
  auto* tr_e = train->add_option("--epochs", epochs, "training epochs");
  auto* tr_c = train->add_option("--cell", cell, "lstm or gru");
  auto* tr_la = train->add_option("--layers", layers, "recurrent layers");
  auto* tr_hi = train->add_option("--hidden", hidden, "units per layer");
  auto* tr_tl = train->add_option("--training-length", training_length, "windows per epoch");
  auto* tr_lr = train->add_option("--lr", lr, "Adam learning rate");

  auto* sim = app.add_subcommand("simulate", "run Monte Carlo drops for one CSI mode");
  std::string mode, weights_path;
  int drops = 0, jobs = 0;
  double delay_ms = 0, sim_snr_db = 0;
  bool dump_gains = false;
  auto* si_m = sim->add_option("--mode", mode, "perfect|outdated|predicted|noisy-predicted");
  auto* si_d = sim->add_option("--drops", drops, "Monte Carlo drops");
  auto* si_de = sim->add_option("--delay-ms", delay_ms, "CSI delay / horizon, ms");
  auto* si_s = sim->add_option("--snr-db", sim_snr_db, "pilot SNR for predicted modes");
  auto* si_j = sim->add_option("--jobs", jobs, "worker threads");
  sim->add_option("--weights", weights_path, "CFPRED1 bank for predicted modes")
      ->check(CLI::ExistingFile);
  sim->add_flag("--dump-gains", dump_gains, "also write drop-0 link gains");

  auto* rpt = app.add_subcommand("report", "merge SE reports into one CDF table");
  std::vector<std::string> report_csvs;
  int grid_points = 513;
  bool force = false;
  rpt->add_option("reports", report_csvs, "SE report CSV files")
      ->required()
      ->check(CLI::ExistingFile);
  rpt->add_option("--grid", grid_points, "points on the shared SE grid");
  rpt->add_flag("--force", force, "merge despite differing config hashes");

  // --config/--out/--seed may trail the subcommand name
  for (auto* s : {gen, train, sim, rpt}) s->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    config::Config cfg;
    if (!config_path.empty()) cfg = config::parse_config(io::read_json(config_path));
    if (seed_opt->count()) cfg.system.rng_seed = seed;

    if (gen->parsed()) {
      if (gt_n->count()) cfg.training.num_traces = num_traces;
      if (gt_l->count()) cfg.training.trace_length = trace_length;
      return cmd_gen_traces(cfg, out_dir, trace_name);
    }
    if (train->parsed()) {
      if (tr_h->count()) cfg.training.horizon_ms = horizon_ms;
      if (tr_s->count()) cfg.training.pilot_snr_db = snr_db;
      if (tr_e->count()) cfg.training.epochs = epochs;
      if (tr_c->count()) cfg.training.cell = cell;
      if (tr_la->count()) cfg.training.layers = layers;
      if (tr_hi->count()) cfg.training.hidden = hidden;
      if (tr_tl->count()) cfg.training.training_length = training_length;
      if (tr_lr->count()) cfg.training.learning_rate = lr;
      if (cfg.training.cell != "lstm" && cfg.training.cell != "gru")
        throw invalid_parameter("--cell must be lstm or gru");
      if (traces_path.empty()) traces_path = join(out_dir, "traces.bin");
      return cmd_train(cfg, out_dir, traces_path, weights_name);
    }
    if (sim->parsed()) {
      if (si_m->count()) cfg.simulation.mode = mode;
      if (si_d->count()) cfg.simulation.drops = drops;
      if (si_de->count()) cfg.system.delay = delay_ms * 1e-3;
      if (si_s->count()) cfg.simulation.pilot_snr_db = sim_snr_db;
      if (si_j->count()) cfg.simulation.jobs = jobs;
      return cmd_simulate(std::move(cfg), out_dir, weights_path, dump_gains);
    }
    if (rpt->parsed()) return cmd_report(cfg, out_dir, report_csvs, grid_points, force);
    throw invalid_parameter("no subcommand");
  } catch (const invalid_parameter& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const io_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const numeric_fault& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
