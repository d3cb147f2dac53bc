// clustergnn: match keypoint files, train on synthetic pairs, benchmark
// dense vs clustered attention, and generate synthetic keypoint pairs.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "clustergnn/bench.h"
#include "clustergnn/ground_truth.h"
#include "clustergnn/io.h"
#include "clustergnn/parallel.h"
#include "clustergnn/trainer.h"

namespace {

using namespace clustergnn;

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kFormat = 2,
  kConfigMismatch = 3,
  kNonFiniteLoss = 4,
  kSelfCheck = 5,
};

struct MatchArgs {
  std::string weights, kp_a, kp_b, out;
  double threshold = -1.0;  // < 0: use the value stored with the weights
  std::string head;         // empty: use the stored head
  std::size_t sinkhorn_iters = 0;
};

int cmd_match(const MatchArgs& a) {
  const ModelWeights<float> w = read_weights(a.weights);
  const KeypointSet kp_a = read_keypoints(a.kp_a);
  const KeypointSet kp_b = read_keypoints(a.kp_b);
  if (kp_a.dim() != w.config.descriptor_dim ||
      kp_b.dim() != w.config.descriptor_dim) {
    throw ConfigError("descriptor dim " + std::to_string(kp_a.dim()) + "/" +
                      std::to_string(kp_b.dim()) + " does not match weights (" +
                      std::to_string(w.config.descriptor_dim) + ")");
  }
  const MatchHead head = a.head.empty() ? w.config.head : parse_match_head(a.head);
  const double threshold = a.threshold < 0.0 ? w.config.match_threshold : a.threshold;
  const std::size_t iters = a.sinkhorn_iters > 0 ? a.sinkhorn_iters
                                                 : w.config.sinkhorn_iters;
  const MatchResult result = match(w, kp_a, kp_b, head, iters, threshold);
  std::ostringstream text;
  write_match_tsv(text, result);
  if (a.out.empty() || a.out == "-") {
    std::cout << text.str();
  } else {
    std::ofstream out(a.out, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + a.out);
    out << text.str();
  }
  return kOk;
}

struct TrainArgs {
  std::string config, out, metrics;
  std::uint64_t seed = 0;
};

int cmd_train(const TrainArgs& a) {
  const TrainConfig config = train_config_from(read_key_values(a.config), a.config);
  config.validate();
  const std::string metrics_path = a.metrics.empty() ? a.out + ".metrics.log" : a.metrics;
  std::ofstream log(metrics_path, std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + metrics_path);
  try {
    const TrainResult result = train(config, a.seed, [&](const EpochMetrics& m) {
      log << m.to_log_line() << "\n";
      log.flush();
      std::fprintf(stderr, "%s\n", m.to_log_line().c_str());
    });
    write_weights(a.out, result.weights);
  } catch (const TrainingAborted& e) {
    const std::string ckpt = a.out + ".last_good";
    write_weights(ckpt, e.checkpoint);
    log << "aborted step=" << e.step << "\n";
    std::fprintf(stderr, "%s; last good weights in %s\n", e.what(), ckpt.c_str());
    return kNonFiniteLoss;
  }
  return kOk;
}

struct BenchArgs {
  std::vector<std::size_t> sizes = {512, 1024, 2048, 4096, 8192};
  std::vector<std::string> modes = {"dense", "clustered"};
  std::vector<std::size_t> schedule = {16, 32, 64, 128};
  std::string out;
  std::size_t runs = 5, dim = 32, heads = 4;
  std::uint64_t seed = 1;
  bool plot = false;
};

int cmd_bench(const BenchArgs& a) {
  BenchOptions opt;
  opt.sizes = a.sizes;
  opt.schedule = a.schedule;
  opt.runs = a.runs;
  opt.dim = a.dim;
  opt.heads = a.heads;
  opt.seed = a.seed;
  opt.dense = opt.clustered = false;
  for (const auto& m : a.modes) {
    if (m == "dense") {
      opt.dense = true;
    } else if (m == "clustered") {
      opt.clustered = true;
    } else {
      throw ConfigError("unknown bench mode " + m);
    }
  }
  for (std::size_t i = 1; i < opt.schedule.size(); ++i) {
    if (opt.schedule[i] < opt.schedule[i - 1]) {
      throw ConfigError("schedule must be non-decreasing");
    }
  }
  const SelfCheck check = bench_self_check(opt);
  std::fprintf(stderr, "self-check n=%zu max_abs_diff=%.3g %s\n", check.n,
               check.max_abs_diff, check.passed ? "ok" : "FAILED");
  if (!check.passed) return kSelfCheck;
  const std::vector<BenchRow> rows = run_bench(opt);
  std::ostringstream csv;
  write_bench_csv(csv, rows);
  if (a.out.empty() || a.out == "-") {
    std::cout << csv.str();
  } else {
    std::ofstream out(a.out, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + a.out);
    out << csv.str();
  }
  for (const char* mode : {"dense", "clustered"}) {
    try {
      std::fprintf(stderr, "%s time exponent %.3f\n", mode, fit_exponent(rows, mode));
    } catch (const std::invalid_argument&) {
    }
  }
  if (a.plot) std::cerr << ascii_plot(rows);
  return kOk;
}

struct GenerateArgs {
  std::uint64_t seed = 0, world_seed = 1;
  std::size_t n = 64, dim = 32;
  double noise_px = 1.0, outlier_frac = 0.2, descriptor_noise = 0.5;
  std::string out_a, out_b, truth;
};

int cmd_generate(const GenerateArgs& a) {
  PairOptions opt;
  opt.n_keypoints = a.n;
  opt.noise_px = a.noise_px;
  opt.outlier_frac = a.outlier_frac;
  const SyntheticPair pair = generate_pair(
      a.seed, opt, DescriptorModel::make(a.world_seed, a.dim, a.descriptor_noise));
  write_keypoints(a.out_a, pair.a);
  write_keypoints(a.out_b, pair.b);
  if (!a.truth.empty()) {
    const GroundTruth gt = label_ground_truth(pair);
    std::ofstream out(a.truth, std::ios::trunc);
    for (const auto& [i, j] : gt.matches) out << i << "\t" << j << "\n";
    out << "# matches=" << gt.matches.size()
        << "\n# unmatched_a=" << gt.unmatched_a.size()
        << "\n# unmatched_b=" << gt.unmatched_b.size()
        << "\n# undecided=" << gt.undecided.size() << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ClusterGNN feature matcher"};
  app.require_subcommand(1);
  int threads = 1;
  auto add_threads = [&](CLI::App* sub) {
    sub->add_option("--threads", threads, "Worker threads")
        ->default_val(1)
        ->check(CLI::PositiveNumber);
  };

  MatchArgs match_args;
  auto* match = app.add_subcommand("match", "Match two keypoint files");
  match->add_option("--weights", match_args.weights)->required();
  match->add_option("--kp-a", match_args.kp_a)->required();
  match->add_option("--kp-b", match_args.kp_b)->required();
  match->add_option("--out", match_args.out, "TSV output (default stdout)");
  match->add_option("--threshold", match_args.threshold);
  match->add_option("--head", match_args.head)
      ->check(CLI::IsMember({"dual-softmax", "sinkhorn"}));
  match->add_option("--sinkhorn-iters", match_args.sinkhorn_iters);
  add_threads(match);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train on synthetic pairs");
  train->add_option("--config", train_args.config)->required();
  train->add_option("--out", train_args.out, "Weights file")->required();
  train->add_option("--seed", train_args.seed)->default_val(0);
  train->add_option("--metrics", train_args.metrics,
                    "Metrics log (default <out>.metrics.log)");
  add_threads(train);

  BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench", "Dense vs clustered attention");
  bench->add_option("--sizes", bench_args.sizes)
      ->delimiter(',')
      ->check(CLI::Range(std::size_t{64}, std::size_t{1} << 20));
  bench->add_option("--modes", bench_args.modes)->delimiter(',');
  bench->add_option("--schedule", bench_args.schedule)->delimiter(',');
  bench->add_option("--out", bench_args.out, "CSV output (default stdout)");
  bench->add_option("--runs", bench_args.runs)->check(CLI::PositiveNumber);
  bench->add_option("--dim", bench_args.dim)->check(CLI::PositiveNumber);
  bench->add_option("--heads", bench_args.heads)->check(CLI::PositiveNumber);
  bench->add_option("--seed", bench_args.seed);
  bench->add_flag("--plot", bench_args.plot, "Text plot on stderr");
  add_threads(bench);

  GenerateArgs gen_args;
  auto* generate = app.add_subcommand("generate", "Write a synthetic pair");
  generate->add_option("--seed", gen_args.seed);
  generate->add_option("--world-seed", gen_args.world_seed);
  generate->add_option("--n", gen_args.n)->check(CLI::PositiveNumber);
  generate->add_option("--dim", gen_args.dim)->check(CLI::PositiveNumber);
  generate->add_option("--noise-px", gen_args.noise_px);
  generate->add_option("--outlier-frac", gen_args.outlier_frac);
  generate->add_option("--descriptor-noise", gen_args.descriptor_noise);
  generate->add_option("--out-a", gen_args.out_a)->required();
  generate->add_option("--out-b", gen_args.out_b)->required();
  generate->add_option("--truth", gen_args.truth, "Ground-truth TSV");
  add_threads(generate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kFormat;
  }
  set_num_threads(threads);

  try {
    if (*match) return cmd_match(match_args);
    if (*train) return cmd_train(train_args);
    if (*bench) return cmd_bench(bench_args);
    if (*generate) return cmd_generate(gen_args);
  } catch (const FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return kFormat;
  } catch (const MissingKeyError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kFormat;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config mismatch: %s\n", e.what());
    return kConfigMismatch;
  } catch (const DegenerateTransformError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kFailure;
}
