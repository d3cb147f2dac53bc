#ifndef CLUSTERGNN_TRAINER_H_
#define CLUSTERGNN_TRAINER_H_

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "clustergnn/ground_truth.h"
#include "clustergnn/matcher.h"
#include "clustergnn/model.h"
#include "clustergnn/synthetic.h"

namespace clustergnn {

struct TrainConfig {
  ModelConfig model = ModelConfig::tiny();
  double lr = 1e-4;
  double gamma = 0.1;
  std::size_t epochs = 1;
  std::size_t steps_per_epoch = 100;
  std::size_t batch_size = 8;
  // Synthetic data stream.
  std::size_t n_keypoints = 64;
  double outlier_frac = 0.2;
  double noise_px = 1.0;
  double descriptor_noise = 0.5;
  std::uint64_t world_seed = 1;
  ImageSize image{640, 480};

  PairOptions pair_options() const;
  DescriptorModel descriptor_model() const;
  void validate() const;
};

// Adaptive-moment optimizer over the trainable parameters.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ModelWeights<float>& w, ModelWeights<float>& grad);
  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct MatchCounts {
  std::size_t predicted = 0;  // excluding pairs in the undecided band
  std::size_t correct = 0;
  std::size_t ground_truth = 0;

  MatchCounts& operator+=(const MatchCounts& o) {
    predicted += o.predicted;
    correct += o.correct;
    ground_truth += o.ground_truth;
    return *this;
  }
  double precision() const;
  double recall() const;
  double f1() const;
};

MatchCounts score_matches(const MatchResult& result, const GroundTruth& gt);

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0;
  double matching_loss = 0.0;
  double cluster_loss = 0.0;
  double precision = 0.0;
  double recall = 0.0;

  // One "key=value ..." line; no timings, so runs are diffable.
  std::string to_log_line() const;
};

struct StepStats {
  double loss = 0.0;
  double matching_loss = 0.0;
  double cluster_loss = 0.0;
  MatchCounts counts;
};

class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(std::size_t step, ModelWeights<float> checkpoint,
                  const std::string& what)
      : std::runtime_error(what),
        step(step),
        checkpoint(std::move(checkpoint)) {}

  std::size_t step;
  ModelWeights<float> checkpoint;  // weights before the failing step
};

class Trainer {
 public:
  Trainer(TrainConfig config, std::uint64_t seed);

  // One optimizer step on a batch; gradients are averaged over the pairs.
  // Centers are seeded from the first batch.
  StepStats step(std::span<const SyntheticPair> batch);
  // Re-seeds clusters that received no member during the epoch.
  void end_epoch();

  // Deterministic training pair for (epoch, step, index in batch).
  SyntheticPair training_pair(std::size_t epoch, std::size_t step,
                              std::size_t index) const;

  const ModelWeights<float>& weights() const { return weights_; }
  ModelWeights<float>& weights() { return weights_; }
  std::size_t steps_taken() const { return steps_taken_; }

 private:
  TrainConfig config_;
  std::uint64_t seed_;
  DescriptorModel descriptors_;
  ModelWeights<float> weights_;
  Adam adam_;
  std::size_t steps_taken_ = 0;
  // [stage][head][cluster] member counts over the current epoch.
  std::vector<std::vector<std::vector<std::size_t>>> epoch_counts_;
  // Most recent pooled routing vectors, per [stage][head].
  std::vector<std::vector<Matrix<float>>> last_features_;
  std::size_t last_union_ = 0;
};

struct TrainResult {
  ModelWeights<float> weights;
  std::vector<EpochMetrics> epochs;
};

// Full training run. `on_epoch` (optional) sees each epoch's metrics as it
// finishes. Throws TrainingAborted on a non-finite loss.
TrainResult train(const TrainConfig& config, std::uint64_t seed,
                  const std::function<void(const EpochMetrics&)>& on_epoch =
                      nullptr);

// Held-out pairs drawn from seeds disjoint from the training stream.
std::vector<SyntheticPair> held_out_pairs(const TrainConfig& config,
                                          std::size_t count,
                                          std::uint64_t seed);

struct EvalResult {
  MatchCounts counts;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double ms_per_pair = 0.0;
};

EvalResult evaluate(const ModelWeights<float>& w,
                    std::span<const SyntheticPair> pairs, MatchHead head,
                    std::size_t sinkhorn_iters, double threshold);

}  // namespace clustergnn

#endif  // CLUSTERGNN_TRAINER_H_
