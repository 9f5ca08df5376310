#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <initializer_list>

namespace hcdg {

// Exit codes used by the command line tool. Library errors carry one of these
// so the CLI can map exceptions onto documented process status codes.
enum class ErrorKind : int {
  kConfig = 2,
  kData = 3,
  kNumerical = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::kNumerical, what) {}
};

// 64-bit FNV-1a over a label, finished with a splitmix64 avalanche.
uint64_t hash_label(std::string_view label, std::initializer_list<uint64_t> ids = {},
                    uint64_t seed = 0);

// Deterministic random stream. Uniform draws use the top 53 bits of the
// engine output so the values are identical across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  // Independent stream for (seed, label, ids...).
  static Rng derive(uint64_t seed, std::string_view label,
                    std::initializer_list<uint64_t> ids = {}) {
    return Rng(hash_label(label, ids, seed));
  }

  uint64_t next_u64() { return engine_(); }
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  // Integer in [0, n).
  uint64_t below(uint64_t n);
  bool bernoulli(double p) { return uniform01() < p; }
  double normal(double mean, double stddev);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Hex SHA-256 digest of a byte buffer.
std::string sha256_hex(std::string_view bytes);

}  // namespace hcdg
