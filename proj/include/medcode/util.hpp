#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace medcode {

// Inclusive integer range used by generator configs.
struct IntRange {
  int lo = 0;
  int hi = 0;
  bool contains(int v) const { return v >= lo && v <= hi; }
  bool valid() const { return lo <= hi; }
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::string to_hex(uint64_t v);

std::string lowercase(std::string_view s);
std::string trim(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);

// Lowercased maximal alphanumeric runs; everything else is a separator.
std::vector<std::string> tokenize_words(std::string_view s);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

// Deterministic seeded generator (splitmix64 stream) with explicit
// distributions so output does not depend on the standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(splitmix64(seed ^ 0x6a09e667f3bcc909ull)) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  // [0, 1)
  double uniform() { return double(next_u64() >> 11) * (1.0 / 9007199254740992.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int uniform_int(int n) { return n <= 1 ? 0 : int(next_u64() % uint64_t(n)); }

  int uniform_range(const IntRange& r) { return r.lo + uniform_int(r.hi - r.lo + 1); }

  double normal();

  int poisson(double lambda);

  // Derive an independent child seed for a named stream.
  uint64_t derive(std::string_view tag) { return splitmix64(state_ ^ fnv1a64(tag)); }

 private:
  uint64_t state_;
};

}  // namespace medcode
