#ifndef CLUSTERGNN_MEMORY_STATS_H_
#define CLUSTERGNN_MEMORY_STATS_H_

#include <cstddef>

namespace clustergnn::memory {

// Accounting for attention working buffers (scores, probabilities, gathered
// query/key/value blocks). Counts are process-wide and thread-safe.
std::size_t current_bytes();
std::size_t peak_bytes();
// Sets the peak to the current level.
void reset_peak();

// Charges `bytes` for the lifetime of the object.
class Charge {
 public:
  explicit Charge(std::size_t bytes);
  ~Charge();
  Charge(const Charge&) = delete;
  Charge& operator=(const Charge&) = delete;

 private:
  std::size_t bytes_;
};

template <typename M>
std::size_t bytes_of(const M& m) {
  return m.size() * sizeof(typename M::value_type);
}

}  // namespace clustergnn::memory

#endif  // CLUSTERGNN_MEMORY_STATS_H_
