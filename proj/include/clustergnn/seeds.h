#ifndef CLUSTERGNN_SEEDS_H_
#define CLUSTERGNN_SEEDS_H_

#include <cstdint>
#include <initializer_list>

namespace clustergnn {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream seed for a (base, tag...) tuple.
inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = splitmix64(base);
  for (const std::uint64_t t : tags) s = splitmix64(s ^ splitmix64(t + 1));
  return s;
}

}  // namespace clustergnn

#endif  // CLUSTERGNN_SEEDS_H_
