#include "clustergnn/bench.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <stdexcept>

#include "clustergnn/kernels.h"
#include "clustergnn/memory_stats.h"
#include "clustergnn/seeds.h"
#include "clustergnn/sparse_attention.h"

namespace clustergnn {
namespace {

struct Setup {
  MatrixF features;
  std::vector<StageWeights<float>> stages;  // one layer per stage
};

MatrixF random_features(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  MatrixF f(n, d);
  for (auto& v : f.storage()) v = gauss(rng);
  return f;
}

MatrixF clustered_stage(const MatrixF& u, const StageWeights<float>& stage,
                        std::vector<Assignment>* routing) {
  const auto& w = stage.layers.front();
  Projections<float> proj = project(u, u, w);
  const std::size_t k_eff = std::min(stage.clusters.front().k(), u.rows());
  std::vector<Assignment> asg = route(
      proj, w.heads, std::span<const ClusterState<float>>(stage.clusters),
      k_eff);
  MatrixF out = clustered_layer(u, std::move(proj),
                                std::span<const Assignment>(asg), w,
                                static_cast<ClusteredLayerCache<float>*>(nullptr));
  if (routing != nullptr) *routing = std::move(asg);
  return out;
}

// Random weights; centers seeded by k-means on each stage's routing
// vectors along the clustered path.
Setup make_setup(std::size_t n, const BenchOptions& opt) {
  Setup s;
  s.features = random_features(n, opt.dim, derive_seed(opt.seed, {n, 0}));
  std::mt19937_64 rng(derive_seed(opt.seed, {n, 1}));
  const std::size_t dh = opt.dim / opt.heads;
  MatrixF u = s.features;
  for (std::size_t st = 0; st < opt.schedule.size(); ++st) {
    StageWeights<float> stage;
    stage.layers.push_back(AttentionWeights<float>::init(opt.dim, opt.heads, rng));
    const Projections<float> proj = project(u, u, stage.layers.front());
    for (std::size_t h = 0; h < opt.heads; ++h) {
      const MatrixF qk =
          concat_rows(head_slice(proj.q, h, dh), head_slice(proj.k, h, dh));
      ClusterState<float> c =
          kmeans_init(qk, std::min(opt.schedule[st], qk.rows()),
                      derive_seed(opt.seed, {n, 2, st, h}), opt.kmeans_iters);
      c.stage_index = st;
      stage.clusters.push_back(std::move(c));
    }
    u = clustered_stage(u, stage, nullptr);
    s.stages.push_back(std::move(stage));
  }
  return s;
}

template <typename F>
BenchRow measure(std::size_t n, const std::string& mode, std::size_t runs,
                 F&& body) {
  std::vector<double> times;
  std::size_t bytes = 0;
  for (std::size_t r = 0; r < std::max<std::size_t>(runs, 1); ++r) {
    memory::reset_peak();
    const std::size_t base = memory::current_bytes();
    const auto t0 = std::chrono::steady_clock::now();
    body();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    bytes = std::max(bytes, memory::peak_bytes() - base);
  }
  std::sort(times.begin(), times.end());
  BenchRow row;
  row.n = n;
  row.mode = mode;
  row.ms = times[times.size() / 2];
  row.bytes = bytes;
  return row;
}

}  // namespace

SelfCheck bench_self_check(const BenchOptions& options, double tolerance) {
  SelfCheck check;
  const Setup s = make_setup(check.n, options);
  MatrixF u = s.features;
  for (const auto& stage : s.stages) {
    std::vector<Assignment> routing;
    const MatrixF fast = clustered_stage(u, stage, &routing);
    std::vector<Mask> masks;
    for (const auto& a : routing) {
      masks.push_back(ClusterMask::from_assignment(a).to_dense());
    }
    const MatrixF oracle = masked_dense_oracle(
        u, std::span<const Mask>(masks), stage.layers.front());
    check.max_abs_diff =
        std::max(check.max_abs_diff, max_abs_diff(fast, oracle));
    u = fast;
  }
  check.passed = check.max_abs_diff <= tolerance;
  return check;
}

std::vector<BenchRow> run_bench(const BenchOptions& opt) {
  if (opt.heads == 0 || opt.dim % opt.heads != 0) {
    throw std::invalid_argument("bench: heads must divide dim");
  }
  std::vector<BenchRow> rows;
  for (const std::size_t n : opt.sizes) {
    const Setup s = make_setup(n, opt);
    const std::size_t stages = s.stages.size();
    const std::size_t dense_pairs = stages * opt.heads * n * n;
    if (opt.dense) {
      BenchRow row = measure(n, "dense", opt.runs, [&] {
        MatrixF u = s.features;
        for (const auto& stage : s.stages) {
          u = dense_union_layer(u, stage.layers.front());
        }
      });
      row.unmasked_pairs = dense_pairs;
      row.dense_pairs = dense_pairs;
      rows.push_back(row);
    }
    if (opt.clustered) {
      std::size_t unmasked = 0;
      BenchRow row = measure(n, "clustered", opt.runs, [&] {
        MatrixF u = s.features;
        unmasked = 0;
        for (const auto& stage : s.stages) {
          std::vector<Assignment> routing;
          u = clustered_stage(u, stage, &routing);
          for (const auto& a : routing) {
            unmasked += attention_cost(n, a).unmasked_pairs;
          }
        }
      });
      row.unmasked_pairs = unmasked;
      row.dense_pairs = dense_pairs;
      rows.push_back(row);
    }
  }
  return rows;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << kBenchCsvHeader << "\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%zu,%s,%.3f,%zu,%zu,%zu\n", r.n,
                  r.mode.c_str(), r.ms, r.bytes, r.unmasked_pairs,
                  r.dense_pairs);
    out << buf;
  }
}

double fit_exponent(const std::vector<BenchRow>& rows, const std::string& mode) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& r : rows) {
    if (r.mode == mode && r.ms > 0.0) {
      pts.emplace_back(std::log(static_cast<double>(r.n)), std::log(r.ms));
    }
  }
  if (pts.size() < 2) throw std::invalid_argument("fit_exponent: < 2 points");
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : pts) {
    mx += x;
    my += y;
  }
  mx /= static_cast<double>(pts.size());
  my /= static_cast<double>(pts.size());
  double sxy = 0.0, sxx = 0.0;
  for (const auto& [x, y] : pts) {
    sxy += (x - mx) * (y - my);
    sxx += (x - mx) * (x - mx);
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_exponent: one size only");
  return sxy / sxx;
}

std::string ascii_plot(const std::vector<BenchRow>& rows, int width,
                       int height) {
  if (rows.empty() || width < 8 || height < 4) return "";
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& r : rows) {
    const double x = std::log10(static_cast<double>(r.n));
    const double y = std::log10(std::max(r.ms, 1e-3));
    x0 = std::min(x0, x);
    x1 = std::max(x1, x);
    y0 = std::min(y0, y);
    y1 = std::max(y1, y);
  }
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) y1 = y0 + 1.0;
  std::vector<std::string> grid(static_cast<std::size_t>(height),
                                std::string(static_cast<std::size_t>(width), ' '));
  for (const auto& r : rows) {
    const double x = std::log10(static_cast<double>(r.n));
    const double y = std::log10(std::max(r.ms, 1e-3));
    const int cx = static_cast<int>(std::lround((x - x0) / (x1 - x0) * (width - 1)));
    const int cy = static_cast<int>(std::lround((y - y0) / (y1 - y0) * (height - 1)));
    char& cell = grid[static_cast<std::size_t>(height - 1 - cy)]
                     [static_cast<std::size_t>(cx)];
    const char mark = r.mode == "dense" ? 'D' : 'C';
    cell = (cell == ' ' || cell == mark) ? mark : '*';
  }
  std::ostringstream out;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "ms (log) %.3g\n", std::pow(10.0, y1));
  out << buf;
  for (const auto& line : grid) out << "|" << line << "\n";
  out << "+" << std::string(static_cast<std::size_t>(width), '-') << "\n";
  std::snprintf(buf, sizeof(buf), " n (log) %.0f .. %.0f   D=dense C=clustered\n",
                std::pow(10.0, x0), std::pow(10.0, x1));
  out << buf;
  std::snprintf(buf, sizeof(buf), "ms (log) %.3g at bottom\n", std::pow(10.0, y0));
  out << buf;
  return out.str();
}

}  // namespace clustergnn
