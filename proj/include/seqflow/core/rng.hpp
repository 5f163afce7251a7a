#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "seqflow/core/matrix.hpp"

namespace seqflow {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Counter-based substream derivation: the seed for (master, tag, index) does
// not depend on how many other streams were drawn before it.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index = 0) {
  return splitmix64(splitmix64(master ^ fnv1a(tag)) + splitmix64(index + 0x632be59bd9b4e019ULL));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t master, std::string_view tag, std::uint64_t index = 0)
      : engine_(derive_seed(master, tag, index)) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer in [0, n).
  std::size_t below(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  template <class T>
  Vector<T> normal_vector(Eigen::Index n) {
    Vector<T> v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = static_cast<T>(normal());
    return v;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace seqflow
