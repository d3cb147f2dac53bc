// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Pass criterion numbers as arguments to run a
// subset (9 selects the cmd_match self-matching example).

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "clustergnn/bench.h"
#include "clustergnn/grad_check.h"
#include "clustergnn/io.h"
#include "clustergnn/ground_truth.h"
#include "clustergnn/kernels.h"
#include "clustergnn/matcher.h"
#include "clustergnn/model.h"
#include "clustergnn/sparse_attention.h"
#include "clustergnn/trainer.h"

namespace clustergnn {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

void log(const std::string& s) {
  std::printf("  %s\n", s.c_str());
  std::fflush(stdout);
}

// 1. clustered attention against the masked dense oracle.
Outcome oracle_equivalence() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240101);
  const std::size_t sizes[] = {16, 64, 256}, ks[] = {1, 2, 8};
  const std::size_t dim = 32, heads = 4;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = sizes[trial % 3];
    const std::size_t k = ks[(trial / 3) % 3];
    const auto w = AttentionWeights<float>::init(dim, heads, rng);
    MatrixF u(n, dim);
    std::normal_distribution<float> gauss(0.0f, 1.0f);
    for (auto& v : u.storage()) v = gauss(rng);
    // Alternate between one shared assignment and one per head.
    const std::size_t n_asg = trial % 2 == 0 ? 1 : heads;
    std::vector<Assignment> asg;
    std::vector<Mask> masks;
    std::uniform_int_distribution<std::size_t> pick(0, k - 1);
    for (std::size_t h = 0; h < n_asg; ++h) {
      std::vector<std::size_t> cid(n);
      for (auto& c : cid) c = pick(rng);
      asg.push_back(Assignment::from_ids(cid, k));
      masks.push_back(ClusterMask::from_assignment(asg.back()).to_dense());
    }
    const MatrixF fast = clustered_attention<float>(u, asg, w);
    const MatrixF oracle = masked_dense_oracle<float>(u, masks, w);
    worst = std::max(worst, max_abs_diff(fast, oracle));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6 && secs < 60.0,
          fmt("100 trials, max |diff| %.3g (limit 1e-6), %.1f s (limit 60 s)",
              worst, secs)};
}

// 2. dense vs clustered scaling on the default sweep.
Outcome complexity() {
  const auto t0 = Clock::now();
  BenchOptions opt;  // sizes 512..8192, schedule {16,32,64,128}
  const SelfCheck check = bench_self_check(opt);
  const auto rows = run_bench(opt);
  const double secs = seconds_since(t0);
  std::ostringstream csv;
  write_bench_csv(csv, rows);
  std::istringstream lines(csv.str());
  for (std::string line; std::getline(lines, line);) log(line);
  const double exponent = fit_exponent(rows, "dense");
  const BenchRow *dense = nullptr, *clustered = nullptr;
  for (const BenchRow& r : rows) {
    if (r.n != 8192) continue;
    (r.mode == "dense" ? dense : clustered) = &r;
  }
  if (dense == nullptr || clustered == nullptr) return {false, "missing n=8192 rows"};
  const double byte_ratio = double(clustered->bytes) / double(dense->bytes);
  const double time_ratio = clustered->ms / dense->ms;
  const bool pass = check.passed && std::abs(exponent - 2.0) <= 0.3 &&
                    byte_ratio <= 0.5 && time_ratio <= 0.5 && secs < 600.0;
  return {pass,
          fmt("dense exponent %.3f (2.0 +- 0.3), clustered exponent %.3f; n=8192 "
              "bytes ratio %.3f, time ratio %.3f (both <= 0.5); self-check %.2g; "
              "%.0f s (limit 600 s)",
              exponent, fit_exponent(rows, "clustered"), byte_ratio, time_ratio,
              check.max_abs_diff, secs)};
}

// 3. whole-model analytic gradients against central differences.
Outcome gradients() {
  const auto t0 = Clock::now();
  ModelConfig c;
  c.descriptor_dim = 8;
  c.heads = 2;
  c.init_depth = 1;
  c.schedule = {2, 4};
  c.layers_per_stage = 2;
  c.encoder_hidden_layers = 1;
  c.query_chunks = 1;
  c.sinkhorn_iters = 10;
  PairOptions po;
  po.n_keypoints = 6;
  po.outlier_frac = 1.0 / 3.0;
  const std::vector<SyntheticPair> pairs{
      generate_pair(11, po, DescriptorModel::make(1, 8, 0.5))};
  const GroundTruth gt = label_ground_truth(pairs[0]);
  double worst = 0.0;
  std::string worst_name;
  std::size_t groups = 0;
  for (const MatchHead head : {MatchHead::kDualSoftmax, MatchHead::kSinkhorn}) {
    c.head = head;
    auto w = ModelWeights<double>::init(c, 5);
    initialize_centers(w, std::span<const SyntheticPair>(pairs), 6);
    // Move every parameter off its structured init (unit norm scales,
    // zero shifts, 0.1-scaled outputs).
    std::mt19937_64 rng(7);
    std::normal_distribution<double> gauss(0.0, 0.1);
    w.visit_trainable([&](const std::string&, MatrixD& m) {
      for (auto& v : m.storage()) v += gauss(rng);
    });
    ForwardOptions opt = ForwardOptions::from(c);
    const KeypointSet& a = pairs[0].a;
    const KeypointSet& b = pairs[0].b;
    // Routing is piecewise constant; freeze it so the loss is smooth.
    const RoutingPlan plan =
        loss_and_gradients<double>(w, a, b, gt, opt, 0.1, nullptr).plan;
    opt.routing = &plan;
    auto g = w.zeros_like();
    loss_and_gradients(w, a, b, gt, opt, 0.1, &g);
    std::vector<std::pair<std::string, MatrixD*>> params;
    std::vector<MatrixD*> grads;
    w.visit_trainable([&](const std::string& n, MatrixD& m) { params.push_back({n, &m}); });
    g.visit_trainable([&](const std::string&, MatrixD& m) { grads.push_back(&m); });
    for (std::size_t p = 0; p < params.size(); ++p) {
      MatrixD& m = *params[p].second;
      const std::vector<double> x0 = m.storage();
      const double err = grad_check(
          [&](std::span<const double> v) {
            std::copy(v.begin(), v.end(), m.storage().begin());
            const double l =
                loss_and_gradients<double>(w, a, b, gt, opt, 0.1, nullptr).total;
            m.storage() = x0;
            return l;
          },
          x0, grads[p]->storage(), 1e-5);
      ++groups;
      if (err > worst) {
        worst = err;
        worst_name = to_string(head) + ":" + params[p].first;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-3 && secs < 120.0,
          fmt("%zu parameter groups over both heads, worst relative error %.3g "
              "(%s, limit 1e-3), %.1f s (limit 120 s)",
              groups, worst, worst_name.c_str(), secs)};
}

// Shared training protocol for 4-6.
TrainConfig protocol() {
  TrainConfig c;
  c.model = ModelConfig::tiny();
  c.lr = 3e-3;
  c.batch_size = 4;
  c.epochs = 15;
  c.steps_per_epoch = 100;
  c.n_keypoints = 64;
  c.outlier_frac = 0.2;
  c.noise_px = 1.0;
  c.descriptor_noise = 0.5;
  return c;
}

constexpr std::uint64_t kTrainSeed = 1;
constexpr std::uint64_t kHeldOutSeed = 2;
constexpr std::size_t kHeldOut = 200;

struct Run {
  EvalResult eval;
  double train_secs = 0.0;
  std::optional<ModelWeights<float>> weights;
};

std::map<std::string, Run>& runs() {
  static std::map<std::string, Run> r;
  return r;
}

const Run& trained(const std::string& name, const TrainConfig& c) {
  auto it = runs().find(name);
  if (it != runs().end()) return it->second;
  log("training " + name);
  const auto t0 = Clock::now();
  const TrainResult r = train(c, kTrainSeed, [&](const EpochMetrics& m) {
    log(fmt("  %s t=%.0fs", m.to_log_line().c_str(), seconds_since(t0)));
  });
  Run run;
  run.train_secs = seconds_since(t0);
  const auto held = held_out_pairs(c, kHeldOut, kHeldOutSeed);
  run.eval = evaluate(r.weights, held, c.model.head, c.model.sinkhorn_iters,
                      c.model.match_threshold);
  run.weights = r.weights;
  log(fmt("  %s: precision %.4f recall %.4f F1 %.2f, %.2f ms/pair, trained in %.0f s",
          name.c_str(), run.eval.precision, run.eval.recall, 100 * run.eval.f1,
          run.eval.ms_per_pair, run.train_secs));
  return runs().emplace(name, run).first->second;
}

const Run& varying_dual() { return trained("varying/dual-softmax", protocol()); }

// 4. tiny-profile learning.
Outcome learning() {
  const Run& r = varying_dual();
  return {r.eval.precision >= 0.9 && r.eval.recall >= 0.9 && r.train_secs < 1800,
          fmt("held-out precision %.4f, recall %.4f (both >= 0.90) on %zu pairs; "
              "training %.0f s (limit 1800 s)",
              r.eval.precision, r.eval.recall, kHeldOut, r.train_secs)};
}

// 5. fixed vs coarse-to-fine cluster schedules.
Outcome fixed_clusters() {
  const Run& varying = varying_dual();
  const auto schedule = protocol().model.schedule;
  const std::size_t k_min = *std::min_element(schedule.begin(), schedule.end());
  const std::size_t k_max = *std::max_element(schedule.begin(), schedule.end());
  double best_fixed = 0.0, fixed_min = 0.0;
  std::string report;
  for (const std::size_t k : {k_min, k_max}) {
    TrainConfig c = protocol();
    c.model.schedule = fixed_schedule(k, schedule.size());
    const Run& r = trained("fixed-" + std::to_string(k) + "/dual-softmax", c);
    best_fixed = std::max(best_fixed, r.eval.f1);
    if (k == k_min) fixed_min = r.eval.f1;
    report += fmt("fixed %zu F1 %.2f; ", k, 100 * r.eval.f1);
  }
  const bool near_best = varying.eval.f1 >= best_fixed - 0.02;
  const bool min_worse = fixed_min < varying.eval.f1;
  return {near_best && min_worse,
          report + fmt("varying F1 %.2f (>= best fixed - 2: %s; fixed-min "
                       "strictly worse: %s)",
                       100 * varying.eval.f1, near_best ? "yes" : "no",
                       min_worse ? "yes" : "no")};
}

// 6. Sinkhorn vs dual-softmax heads.
Outcome match_heads() {
  const Run& dual = varying_dual();
  TrainConfig c = protocol();
  c.model.head = MatchHead::kSinkhorn;
  c.model.sinkhorn_iters = 100;
  const Run& sk = trained("varying/sinkhorn", c);
  const bool pass = dual.eval.f1 >= 0.85 && sk.eval.f1 >= 0.85 &&
                    dual.eval.ms_per_pair < sk.eval.ms_per_pair;
  return {pass, fmt("dual-softmax F1 %.2f at %.2f ms/pair; Sinkhorn F1 %.2f at "
                    "%.2f ms/pair (both >= 85, dual faster)",
                    100 * dual.eval.f1, dual.eval.ms_per_pair, 100 * sk.eval.f1,
                    sk.eval.ms_per_pair)};
}

// 7. normalization of the matching heads.
Outcome normalization() {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::size_t> size(1, 40);
  std::uniform_real_distribution<double> scale(0.1, 10.0);
  double dual_err = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t r = size(rng), c = size(rng);
    std::normal_distribution<double> g(0.0, scale(rng));
    MatrixF m(r, c);
    for (auto& v : m.storage()) v = static_cast<float>(g(rng));
    const MatrixF row = log_softmax(m, Axis::kRow), col = log_softmax(m, Axis::kCol);
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < c; ++j) s += std::exp(double(row(i, j)));
      dual_err = std::max(dual_err, std::abs(s - 1.0));
    }
    for (std::size_t j = 0; j < c; ++j) {
      double s = 0;
      for (std::size_t i = 0; i < r; ++i) s += std::exp(double(col(i, j)));
      dual_err = std::max(dual_err, std::abs(s - 1.0));
    }
  }
  double sk_err = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = size(rng), m = size(rng);
    std::normal_distribution<double> g(0.0, 1.0);
    MatrixF c(n, m);
    for (auto& v : c.storage()) v = static_cast<float>(g(rng));
    const auto p = sinkhorn(add_dustbin(c, static_cast<float>(g(rng))), 100);
    const auto mg = SinkhornMarginals::standard(n, m);
    for (std::size_t i = 0; i <= n; ++i) {
      double s = 0;
      for (std::size_t j = 0; j <= m; ++j) s += std::exp(double(p.log_p(i, j)));
      sk_err = std::max(sk_err, std::abs(s / std::exp(mg.log_mu[i]) - 1.0));
    }
    for (std::size_t j = 0; j <= m; ++j) {
      double s = 0;
      for (std::size_t i = 0; i <= n; ++i) s += std::exp(double(p.log_p(i, j)));
      sk_err = std::max(sk_err, std::abs(s / std::exp(mg.log_nu[j]) - 1.0));
    }
  }
  return {dual_err <= 1e-6 && sk_err <= 1e-3,
          fmt("dual-softmax max |sum - 1| %.3g over 1000 matrices (limit 1e-6); "
              "Sinkhorn max relative marginal error %.3g over 200 matrices "
              "(limit 1e-3)",
              dual_err, sk_err)};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CLUSTERGNN_CLI) + " " + args + " >/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// 8. CLI train and match are reproducible.
Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "clustergnn_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "tiny.cfg")
      << "d = 32\nheads = 4\ninit_depth = 1\nschedule = 4,8\n"
         "layers_per_stage = 2\nlr = 0.003\nepochs = 2\nsteps_per_epoch = 10\n"
         "batch_size = 4\nn_keypoints = 64\noutlier_frac = 0.2\nnoise_px = 1.0\n";
  const std::string d = dir.string() + "/";
  std::vector<int> codes;
  for (const char* w : {"w1.bin", "w2.bin"}) {
    codes.push_back(run_cli("train --config " + d + "tiny.cfg --seed 9 --out " + d + w));
  }
  codes.push_back(run_cli("generate --seed 4 --n 64 --dim 32 --out-a " + d +
                          "a.kp --out-b " + d + "b.kp"));
  for (const char* m : {"m1.tsv", "m2.tsv"}) {
    codes.push_back(run_cli("match --weights " + d + "w1.bin --kp-a " + d +
                            "a.kp --kp-b " + d + "b.kp --out " + d + m));
  }
  bool ok = std::all_of(codes.begin(), codes.end(), [](int c) { return c == 0; });
  const std::string log1 = slurp(dir / "w1.bin.metrics.log");
  const bool logs_equal = !log1.empty() && log1 == slurp(dir / "w2.bin.metrics.log");
  const bool weights_equal = slurp(dir / "w1.bin") == slurp(dir / "w2.bin");
  const std::string m1 = slurp(dir / "m1.tsv");
  const bool matches_equal = !m1.empty() && m1 == slurp(dir / "m2.tsv");
  fs::remove_all(dir);
  ok = ok && logs_equal && weights_equal && matches_equal;
  return {ok, fmt("exit codes %s; metrics logs identical: %s; weights identical: "
                  "%s; match files identical: %s",
                  std::all_of(codes.begin(), codes.end(), [](int c) { return c == 0; })
                      ? "all 0"
                      : "non-zero",
                  logs_equal ? "yes" : "no", weights_equal ? "yes" : "no",
                  matches_equal ? "yes" : "no")};
}

// cmd_match on two copies of one keypoint file with trained weights: at
// least 95% of the points should be matched to themselves.
Outcome self_matching() {
  const Run& r = varying_dual();
  const fs::path dir = fs::temp_directory_path() / "clustergnn_self_match";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_weights((dir / "w.bin").string(), *r.weights);
  const auto pairs = held_out_pairs(protocol(), 5, kHeldOutSeed + 1);
  std::size_t total = 0, self = 0;
  int code = 0;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    write_keypoints((dir / "a.kp").string(), pairs[p].a);
    const std::string d = dir.string() + "/";
    code = std::max(code, run_cli("match --weights " + d + "w.bin --kp-a " + d +
                                  "a.kp --kp-b " + d + "a.kp --out " + d + "m.tsv"));
    std::istringstream lines(slurp(dir / "m.tsv"));
    for (std::string line; std::getline(lines, line);) {
      if (line.empty() || line[0] == '#') continue;
      std::size_t i = 0, j = 0;
      std::istringstream(line) >> i >> j;
      self += i == j;
    }
    total += pairs[p].a.size();
  }
  fs::remove_all(dir);
  const double frac = double(self) / double(total);
  return {code == 0 && frac >= 0.95,
          fmt("%zu of %zu keypoints matched to themselves (%.1f%%, limit 95%%) over "
              "%zu files",
              self, total, 100 * frac, pairs.size())};
}

}  // namespace
}  // namespace clustergnn

int main(int argc, char** argv) {
  using namespace clustergnn;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"oracle equivalence", oracle_equivalence},
      {"complexity", complexity},
      {"gradient correctness", gradients},
      {"desk-scale learning", learning},
      {"fixed vs varying clusters", fixed_clusters},
      {"dual softmax vs Sinkhorn", match_heads},
      {"normalization invariants", normalization},
      {"determinism", determinism},
  };
  // Not a numbered criterion; reported after them as an end-to-end example.
  const std::pair<std::string, std::function<Outcome()>> example{
      "cmd_match self-matching example", self_matching};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  // Cheap checks first; the training runs are shared by 4-6.
  const int order[] = {1, 3, 7, 8, 2, 4, 5, 6};
  std::map<int, std::pair<bool, std::string>> results;
  std::optional<std::pair<bool, std::string>> extra;
  for (const int id : order) {
    if (!selected.empty() && !selected.contains(id)) continue;
    const auto& [name, fn] = criteria[id - 1];
    std::printf("criterion %d (%s)...\n", id, name.c_str());
    std::fflush(stdout);
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s criterion %d: %s: %s\n", o.pass ? "PASS" : "FAIL", id,
                name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    results[id] = {o.pass, name + ": " + o.detail};
  }
  if (selected.empty() || selected.contains(9)) {
    std::printf("%s...\n", example.first.c_str());
    std::fflush(stdout);
    Outcome o;
    try {
      o = example.second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", example.first.c_str(),
                o.detail.c_str());
    extra = {o.pass, example.first + ": " + o.detail};
  }
  std::printf("\nsummary\n");
  int failed = 0;
  for (const auto& [id, r] : results) {
    std::printf("%s criterion %d: %s\n", r.first ? "PASS" : "FAIL", id,
                r.second.c_str());
    failed += !r.first;
  }
  if (extra) {
    std::printf("%s %s\n", extra->first ? "PASS" : "FAIL", extra->second.c_str());
    failed += !extra->first;
  }
  return failed == 0 ? 0 : 1;
}
