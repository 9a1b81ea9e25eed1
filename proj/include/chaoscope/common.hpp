#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace chaoscope {

// Runtime failure categories used for process exit codes by the CLI.
//   2 -> ConfigError, 4 -> DegenerateData, 3 -> everything else.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// splitmix64, used as the seed-splitting rule: every consumer derives its
// RNG seed as split_seed(global_seed, "tag"[, index]) so partial reruns of
// a sweep see the same streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t split_seed(std::uint64_t global_seed, std::string_view tag,
                                std::uint64_t index = 0) {
  std::uint64_t h = fnv1a64(tag.data(), tag.size());
  return splitmix64(global_seed ^ splitmix64(h ^ (index * 0x9e3779b97f4a7c15ULL)));
}

// Worker cap for the pure per-item stages. 0 means hardware concurrency.
void set_worker_threads(int n);
int worker_threads();

// Static partition of [0, n) across workers. Each index is processed exactly
// once; results must be written to disjoint slots so the output ordering is
// independent of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace chaoscope
