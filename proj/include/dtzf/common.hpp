#pragma once

#include <algorithm>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dtzf {

using cplx = std::complex<double>;

// Error taxonomy. The CLI maps these onto process exit codes
// (usage 2, numeric fault 3, I/O 4).
struct invalid_parameter : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct numeric_fault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct singular_channel : numeric_fault {
  using numeric_fault::numeric_fault;
};

struct training_diverged : numeric_fault {
  explicit training_diverged(int at_epoch)
      : numeric_fault("training diverged at epoch " + std::to_string(at_epoch)),
        epoch(at_epoch) {}
  int epoch;
};

struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Purpose-keyed RNG substream. Every consumer of randomness derives its own
// stream from (seed, purpose, indices), so Monte Carlo drops can run in any
// order, in parallel, and different CSI modes see identical channel draws.
class Substream {
 public:
  Substream(std::uint64_t seed, std::string_view purpose, std::uint64_t a = 0,
            std::uint64_t b = 0, std::uint64_t c = 0)
      : eng_(splitmix64(splitmix64(splitmix64(splitmix64(seed ^ fnv1a64(purpose)) ^ a) ^ b) ^ c)) {}

  std::mt19937_64& engine() { return eng_; }

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(eng_);
  }

  double normal() { return std::normal_distribution<double>()(eng_); }

  cplx cnormal() {
    // unit-variance circular complex gaussian
    const double re = normal(), im = normal();
    return {re * 0.7071067811865476, im * 0.7071067811865476};
  }

  std::uint64_t bits() { return eng_(); }

 private:
  std::mt19937_64 eng_;
};

// Quantile by linear interpolation of order statistics (the common
// position = 1 + p(n-1) convention). Input must be sorted ascending.
inline double quantile_sorted(const std::vector<double>& s, double p) {
  if (s.empty()) throw invalid_parameter("quantile of an empty sample");
  if (s.size() == 1) return s.front();
  const double pos = p * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= s.size()) return s.back();
  const double frac = pos - static_cast<double>(lo);
  return s[lo] + frac * (s[lo + 1] - s[lo]);
}

inline double quantile(std::vector<double> s, double p) {
  std::sort(s.begin(), s.end());
  return quantile_sorted(s, p);
}

}  // namespace dtzf
