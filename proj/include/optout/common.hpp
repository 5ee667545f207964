#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace optout {

// ----------------------------- errors -----------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file (schema violation). Message names file and line.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// Data sets violate a cross-record invariant (overlap, duplicate split membership).
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration: unknown key, missing credentials, invalid value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Text could not be mapped to model tokens, or token ids are out of range.
class EncodingError : public Error {
 public:
  using Error::Error;
};

/// Snapshot or matrix shapes do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A loss or metric evaluated to NaN/inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

// ----------------------------- warnings -----------------------------

using WarningSink = std::function<void(const std::string&)>;

/// Routes a warning to the active sink (stderr by default).
void warn(const std::string& message);

/// Installs a sink for the lifetime of the guard; restores the previous one on destruction.
class ScopedWarningSink {
 public:
  explicit ScopedWarningSink(WarningSink sink);
  ~ScopedWarningSink();
  ScopedWarningSink(const ScopedWarningSink&) = delete;
  ScopedWarningSink& operator=(const ScopedWarningSink&) = delete;

 private:
  WarningSink previous_;
};

// ----------------------------- rng -----------------------------

/// Seeded generator with platform-independent uniform/normal draws.
/// std::mt19937_64 is fully specified by the standard; the distributions
/// below are hand-rolled because the standard library ones are not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::size_t below(std::size_t n);

  /// Standard normal via Box-Muller.
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::swap(values[i - 1], values[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Mixes a base seed with a stream index (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// ----------------------------- hashing -----------------------------

/// FNV-1a 64-bit over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string to_hex(std::uint64_t value);

// ----------------------------- text -----------------------------

/// Lowercases ASCII and collapses runs of whitespace to one space; trims ends.
std::string normalize_text(std::string_view text);

/// Lowercase, strip punctuation, split on whitespace.
std::vector<std::string> rouge_tokens(std::string_view text);

std::string trim(std::string_view text);

std::vector<std::string> split_lines(std::string_view text);

bool is_finite(double value);

}  // namespace optout
