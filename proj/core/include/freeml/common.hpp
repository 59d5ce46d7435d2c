#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace freeml {

// Raised when an input file violates the ingestion contract. Messages carry
// the offending row number where one exists.
class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Remote description generation failed at the network layer (after retries).
// The caller may fall back to the template engine if its policy allows.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Remote endpoint answered but the payload was unusable (e.g. empty
// completion). Fallback to the template engine is permitted.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// FNV-1a, 64-bit. Used for cache keys, data hashes and checkpoint hashes.
inline constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = kFnvOffset) {
  return fnv1a64(std::string_view(static_cast<const char*>(data), n), h);
}

std::string to_hex64(std::uint64_t v);

// Accumulates length-prefixed fields into an FNV stream so that field
// boundaries cannot alias ("ab","c" vs "a","bc").
class HashStream {
 public:
  HashStream& field(std::string_view s) {
    std::uint64_t len = s.size();
    h_ = fnv1a64(&len, sizeof len, h_);
    h_ = fnv1a64(s, h_);
    return *this;
  }
  std::uint64_t digest() const { return h_; }

 private:
  std::uint64_t h_ = kFnvOffset;
};

// Seeded generator with explicit transforms. The engine (mt19937_64) is
// fully specified by the standard; the transforms below are hand-rolled so
// that draws are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller with a cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) { return engine_() % n; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(below(i + 1));
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Derives a child seed from a parent seed and a textual scope, so per-site /
// per-epoch streams are decoupled and independent of iteration order.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view scope) {
  HashStream hs;
  hs.field(std::string_view(reinterpret_cast<const char*>(&base), sizeof base));
  hs.field(scope);
  return hs.digest();
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. Callers own
// determinism: fn must write only to slot i.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

int default_thread_count();

}  // namespace freeml
