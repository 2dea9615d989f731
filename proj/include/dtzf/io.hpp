#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtzf/common.hpp"
#include "dtzf/fading.hpp"
#include "dtzf/neuralpredict.hpp"
#include "dtzf/simkernel.hpp"

// Artifact files: fading traces (CFTRACE1), predictor weights (CFPRED1),
// CSV reports and JSON sidecars. All binary values are little-endian f64 or
// fixed-width unsigned integers; text files never embed timestamps so equal
// inputs give byte-equal outputs.
namespace dtzf::io {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts unsupported");

using nlohmann::json;

namespace detail {

inline void put_raw(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw io_error("write failed");
}

template <class T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  put_raw(os, &v, sizeof v);
}

inline void get_raw(std::istream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (is.gcount() != static_cast<std::streamsize>(n))
    throw io_error("read failed: truncated file");
}

template <class T>
T get(std::istream& is) {
  static_assert(std::is_trivially_copyable_v<T>);
  T v;
  get_raw(is, &v, sizeof v);
  return v;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io_error("cannot open for writing: " + path);
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open for reading: " + path);
  return is;
}

}  // namespace detail

// ---- fading traces -------------------------------------------------------
// 32-byte header: "CFTRACE1" u16 M  u16 K  u32 T  f64 spacing  f64 doppler,
// then M*K links ap-major, each T complex samples as (re, im) f64 pairs.

inline constexpr char kTraceMagic[8] = {'C', 'F', 'T', 'R', 'A', 'C', 'E', '1'};

inline void write_traces(const std::string& path, const fading::TraceSet& ts) {
  if (ts.M <= 0 || ts.K <= 0 || ts.traces.size() != static_cast<std::size_t>(ts.M) * ts.K)
    throw invalid_parameter("write_traces: inconsistent trace set");
  if (ts.M > 0xffff || ts.K > 0xffff)
    throw invalid_parameter("write_traces: dimensions exceed the u16 header fields");
  auto os = detail::open_out(path);
  detail::put_raw(os, kTraceMagic, sizeof kTraceMagic);
  detail::put<std::uint16_t>(os, static_cast<std::uint16_t>(ts.M));
  detail::put<std::uint16_t>(os, static_cast<std::uint16_t>(ts.K));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(ts.length()));
  detail::put<double>(os, ts.traces.front().sample_spacing);
  detail::put<double>(os, ts.traces.front().doppler);
  const int T = ts.length();
  for (const auto& tr : ts.traces) {
    if (static_cast<int>(tr.samples.size()) != T)
      throw invalid_parameter("write_traces: ragged trace lengths");
    for (const auto& s : tr.samples) {
      detail::put<double>(os, s.real());
      detail::put<double>(os, s.imag());
    }
  }
}

inline fading::TraceSet read_traces(const std::string& path) {
  auto is = detail::open_in(path);
  char magic[8];
  detail::get_raw(is, magic, sizeof magic);
  if (std::memcmp(magic, kTraceMagic, sizeof magic) != 0)
    throw io_error("read_traces: bad magic in " + path);
  fading::TraceSet ts;
  ts.M = detail::get<std::uint16_t>(is);
  ts.K = detail::get<std::uint16_t>(is);
  const auto T = detail::get<std::uint32_t>(is);
  const double spacing = detail::get<double>(is);
  const double doppler = detail::get<double>(is);
  if (ts.M <= 0 || ts.K <= 0 || T == 0)
    throw io_error("read_traces: empty dimensions in " + path);
  ts.traces.resize(static_cast<std::size_t>(ts.M) * ts.K);
  for (auto& tr : ts.traces) {
    tr.sample_spacing = spacing;
    tr.doppler = doppler;
    tr.samples.resize(T);
    for (auto& s : tr.samples) {
      const double re = detail::get<double>(is);
      const double im = detail::get<double>(is);
      s = {re, im};
    }
  }
  return ts;
}

// ---- predictor weights ---------------------------------------------------
// "CFPRED1\0"  u32 version  u32 layers  u32 hidden  u32 cell  u32 modules
// f64 horizon_s  f64 pilot_snr_db, then per module the parameter tensors in
// traversal order as  u32 name_len  name  u32 rows  u32 cols  f64 column-major.

inline constexpr char kBankMagic[8] = {'C', 'F', 'P', 'R', 'E', 'D', '1', '\0'};
inline constexpr std::uint32_t kBankVersion = 1;

inline void write_bank(const std::string& path,
                       const neuralpredict::PredictorBank& bank) {
  if (bank.modules.empty()) throw invalid_parameter("write_bank: empty bank");
  const auto& first = bank.modules.front();
  auto os = detail::open_out(path);
  detail::put_raw(os, kBankMagic, sizeof kBankMagic);
  detail::put<std::uint32_t>(os, kBankVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(first.layers()));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(first.hidden()));
  detail::put<std::uint32_t>(os, first.cell_type() == neuralpredict::CellType::lstm ? 0u : 1u);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(bank.modules.size()));
  detail::put<double>(os, bank.horizon_s);
  detail::put<double>(os, bank.pilot_snr_db);
  for (const auto& m : bank.modules) {
    neuralpredict::for_each_tensor(
        const_cast<neuralpredict::ModuleParams&>(m),
        [&](const std::string& name, const Eigen::MatrixXd& t) {
          detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
          detail::put_raw(os, name.data(), name.size());
          detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rows()));
          detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.cols()));
          detail::put_raw(os, t.data(), sizeof(double) * static_cast<std::size_t>(t.size()));
        });
  }
}

inline neuralpredict::PredictorBank read_bank(const std::string& path) {
  auto is = detail::open_in(path);
  char magic[8];
  detail::get_raw(is, magic, sizeof magic);
  if (std::memcmp(magic, kBankMagic, sizeof magic) != 0)
    throw io_error("read_bank: bad magic in " + path);
  if (detail::get<std::uint32_t>(is) != kBankVersion)
    throw io_error("read_bank: unsupported version in " + path);
  const auto layers = detail::get<std::uint32_t>(is);
  const auto hidden = detail::get<std::uint32_t>(is);
  const auto cell = detail::get<std::uint32_t>(is);
  const auto count = detail::get<std::uint32_t>(is);
  if (layers == 0 || hidden == 0 || count == 0 || cell > 1)
    throw io_error("read_bank: bad header in " + path);
  neuralpredict::PredictorBank bank;
  bank.horizon_s = detail::get<double>(is);
  bank.pilot_snr_db = detail::get<double>(is);
  bank.modules.resize(count);
  for (auto& m : bank.modules) {
    m.cells.resize(layers);
    for (auto& c : m.cells)
      c.type = cell == 0 ? neuralpredict::CellType::lstm : neuralpredict::CellType::gru;
    neuralpredict::for_each_tensor(m, [&](const std::string& name, Eigen::MatrixXd& t) {
      const auto len = detail::get<std::uint32_t>(is);
      std::string got(len, '\0');
      detail::get_raw(is, got.data(), len);
      if (got != name)
        throw io_error("read_bank: expected tensor " + name + ", found " + got);
      const auto rows = detail::get<std::uint32_t>(is);
      const auto cols = detail::get<std::uint32_t>(is);
      if (rows == 0 || cols == 0 || static_cast<std::uint64_t>(rows) * cols > (1u << 26))
        throw io_error("read_bank: implausible tensor shape for " + name);
      t.resize(rows, cols);
      detail::get_raw(is, t.data(), sizeof(double) * static_cast<std::size_t>(t.size()));
    });
    if (m.hidden() != static_cast<int>(hidden))
      throw io_error("read_bank: tensor shapes disagree with header");
  }
  return bank;
}

// ---- text artifacts ------------------------------------------------------

// Shortest round-trippable decimal.
inline std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_text(const std::string& path, const std::string& body) {
  auto os = detail::open_out(path);
  detail::put_raw(os, body.data(), body.size());
}

inline std::string read_text(const std::string& path) {
  auto is = detail::open_in(path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline std::uint64_t file_hash(const std::string& path) {
  const std::string body = read_text(path);
  return fnv1a64(body.data(), body.size());
}

inline void write_json(const std::string& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

inline json read_json(const std::string& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw io_error("malformed JSON in " + path + ": " + e.what());
  }
}

inline void write_training_csv(const std::string& path,
                               const neuralpredict::TrainReport& rep) {
  std::string body = "epoch,mse\n";
  for (std::size_t i = 0; i < rep.epoch_mse.size(); ++i)
    body += std::to_string(i + 1) + "," + fmt_g(rep.epoch_mse[i]) + "\n";
  write_text(path, body);
}

inline void write_se_csv(const std::string& path, const simkernel::SeReport& rep) {
  std::string body = "drop,user,se_bps_hz\n";
  for (const auto& s : rep.samples)
    body += std::to_string(s.drop) + "," + std::to_string(s.user) + "," +
            fmt_g(s.se) + "\n";
  write_text(path, body);
}

inline std::vector<simkernel::SeSample> read_se_csv(const std::string& path) {
  std::istringstream is(read_text(path));
  std::string line;
  if (!std::getline(is, line) || line != "drop,user,se_bps_hz")
    throw io_error("read_se_csv: bad header in " + path);
  std::vector<simkernel::SeSample> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    simkernel::SeSample s{};
    char* end = nullptr;
    s.drop = static_cast<int>(std::strtol(line.c_str(), &end, 10));
    if (!end || *end != ',') throw io_error("read_se_csv: bad row in " + path);
    const char* p = end + 1;
    s.user = static_cast<int>(std::strtol(p, &end, 10));
    if (!end || *end != ',') throw io_error("read_se_csv: bad row in " + path);
    s.se = std::strtod(end + 1, &end);
    out.push_back(s);
  }
  return out;
}

inline void write_gains_csv(const std::string& path,
                            const netgeom::LinkGainMap& g) {
  std::string body = "m,k,beta,pathloss_db,shadow_db\n";
  for (Eigen::Index m = 0; m < g.beta.rows(); ++m)
    for (Eigen::Index k = 0; k < g.beta.cols(); ++k)
      body += std::to_string(m) + "," + std::to_string(k) + "," +
              fmt_g(g.beta(m, k)) + "," + fmt_g(g.pathloss_db(m, k)) + "," +
              fmt_g(g.shadow_db(m, k)) + "\n";
  write_text(path, body);
}

// Report sidecar; carries everything the merge step and the reproducibility
// audit need.
inline json se_sidecar(const simkernel::SeReport& rep,
                       const std::string& manifest_hash_hex,
                       const std::string& system_hash_hex) {
  json j;
  j["mode"] = rep.mode;
  j["seed"] = rep.seed;
  j["config_hash"] = hex64(rep.config_hash);
  j["system_hash"] = system_hash_hex;
  j["manifest"] = manifest_hash_hex;
  j["samples"] = rep.samples.size();
  j["se_q05"] = rep.q05;
  j["se_q50"] = rep.q50;
  j["redraws"] = rep.redraws;
  std::vector<double> ap(rep.ap_power_mean.data(),
                         rep.ap_power_mean.data() + rep.ap_power_mean.size());
  j["ap_power_mean"] = ap;
  j["ap_power_max"] =
      rep.ap_power_mean.size() ? rep.ap_power_mean.maxCoeff() : 0.0;
  return j;
}

// ---- merged CDF table ----------------------------------------------------

// Empirical CDF of `sorted` evaluated at x (right-continuous step form).
inline double cdf_at(const std::vector<double>& sorted, double x) {
  const auto it = std::upper_bound(sorted.begin(), sorted.end(), x);
  return static_cast<double>(it - sorted.begin()) / static_cast<double>(sorted.size());
}

// Shared-grid CDF table: column per mode over an evenly spaced SE grid that
// spans all samples.
inline void write_merged_cdf(const std::string& path,
                             const std::vector<std::string>& names,
                             std::vector<std::vector<double>> samples,
                             int grid_points = 513) {
  if (names.empty() || names.size() != samples.size())
    throw invalid_parameter("write_merged_cdf: need one name per sample set");
  if (grid_points < 2) throw invalid_parameter("write_merged_cdf: grid too small");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (auto& s : samples) {
    if (s.empty()) throw invalid_parameter("write_merged_cdf: empty sample set");
    std::sort(s.begin(), s.end());
    lo = std::min(lo, s.front());
    hi = std::max(hi, s.back());
  }
  if (!(hi > lo)) hi = lo + 1.0;
  std::string body = "se";
  for (const auto& n : names) body += ",cdf_" + n;
  body += "\n";
  for (int i = 0; i < grid_points; ++i) {
    const double x = lo + (hi - lo) * static_cast<double>(i) / (grid_points - 1);
    body += fmt_g(x);
    for (const auto& s : samples) body += "," + fmt_g(cdf_at(s, x));
    body += "\n";
  }
  write_text(path, body);
}

}  // namespace dtzf::io
