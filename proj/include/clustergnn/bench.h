#ifndef CLUSTERGNN_BENCH_H_
#define CLUSTERGNN_BENCH_H_

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace clustergnn {

struct BenchOptions {
  std::vector<std::size_t> sizes = {512, 1024, 2048, 4096, 8192};
  bool dense = true;
  bool clustered = true;
  std::vector<std::size_t> schedule = {16, 32, 64, 128};
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t runs = 5;
  std::size_t kmeans_iters = 10;
  std::uint64_t seed = 1;
};

struct BenchRow {
  std::size_t n = 0;
  std::string mode;  // "dense" or "clustered"
  double ms = 0.0;   // median over runs
  std::size_t bytes = 0;  // peak attention-buffer bytes
  std::size_t unmasked_pairs = 0;  // summed over stages and heads
  std::size_t dense_pairs = 0;
};

struct SelfCheck {
  std::size_t n = 64;
  double max_abs_diff = 0.0;
  bool passed = false;
};

// Clustered fast path against the masked dense oracle on n = 64.
SelfCheck bench_self_check(const BenchOptions& options,
                           double tolerance = 1e-5);

// One row per (size, enabled mode). Centers are k-means seeded before
// timing; only the stage forward passes are timed.
std::vector<BenchRow> run_bench(const BenchOptions& options);

inline constexpr const char* kBenchCsvHeader =
    "n,mode,ms,bytes,unmasked_pairs,dense_pairs";
void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);

// Least-squares slope of log(ms) against log(n) for one mode.
double fit_exponent(const std::vector<BenchRow>& rows, const std::string& mode);

// Log-log text plot of ms against n.
std::string ascii_plot(const std::vector<BenchRow>& rows, int width = 60,
                       int height = 16);

}  // namespace clustergnn

#endif  // CLUSTERGNN_BENCH_H_
