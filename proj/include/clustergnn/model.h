#ifndef CLUSTERGNN_MODEL_H_
#define CLUSTERGNN_MODEL_H_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "clustergnn/cluster.h"
#include "clustergnn/config.h"
#include "clustergnn/encoder.h"
#include "clustergnn/ground_truth.h"
#include "clustergnn/matcher.h"
#include "clustergnn/sparse_attention.h"
#include "clustergnn/synthetic.h"

namespace clustergnn {

// Fixed cluster assignments, [stage][layer][head]. Only routing layers
// (layer 0, or every layer when re-clustering) are read.
using RoutingPlan = std::vector<std::vector<std::vector<Assignment>>>;

template <typename T>
struct ModelWeights {
  static constexpr std::uint16_t kSchemaVersion = 1;

  ModelConfig config;
  EncoderWeights<T> encoder;
  std::vector<InitLayerWeights<T>> init_layers;
  std::vector<StageWeights<T>> stages;
  Matrix<T> dustbin;  // 1 x 1

  static ModelWeights init(const ModelConfig& config, std::uint64_t seed);

  // Learnable parameters (centers excluded).
  void visit_trainable(const ParamVisitor<T>& f);
  void visit_centers(
      const std::function<void(const std::string&, ClusterState<T>&)>& f);

  // Same shapes, trainable parameters zeroed.
  ModelWeights zeros_like() const;

  template <typename U>
  ModelWeights<U> cast() const;

  bool centers_initialized() const;
};

struct ForwardOptions {
  MatchHead head = MatchHead::kDualSoftmax;
  std::size_t sinkhorn_iters = 100;
  const RoutingPlan* routing = nullptr;

  static ForwardOptions from(const ModelConfig& config) {
    return {config.head, config.sinkhorn_iters, nullptr};
  }
};

template <typename T>
struct ForwardCache {
  typename Mlp<T>::Cache enc_a, enc_b;
  InitGraphsCache<T> init;
  std::vector<StageCache<T>> stages;
  Matrix<T> fa, fb;  // final features
  Matrix<T> c_tilde;
  SinkhornCache<T> sinkhorn;
};

template <typename T>
MatchProbabilities<T> forward(const ModelWeights<T>& w, const KeypointSet& a,
                              const KeypointSet& b, const ForwardOptions& opt,
                              ForwardCache<T>* cache = nullptr);

// Assignments used by a cached forward pass.
template <typename T>
RoutingPlan routing_plan(const ForwardCache<T>& cache);

// Query and key vectors of the routing layers of one stage/head, stacked
// as rows, with the matching (duplicated) cluster ids.
template <typename T>
struct RoutingSample {
  Matrix<T> features;
  Assignment asg;
};

template <typename T>
RoutingSample<T> routing_sample(const StageCache<T>& stage, std::size_t head,
                                std::size_t heads, std::size_t k);

MatchResult match(const ModelWeights<float>& w, const KeypointSet& a,
                  const KeypointSet& b, MatchHead head,
                  std::size_t sinkhorn_iters, double threshold);

// k-means seeding of every stage's centers from the given pairs, stage by
// stage (later stages see features routed by the earlier ones).
template <typename T>
void initialize_centers(ModelWeights<T>& w,
                        std::span<const SyntheticPair> pairs,
                        std::uint64_t seed);

template <typename T>
struct LossReport {
  double total = 0.0;
  double matching = 0.0;
  std::vector<double> cluster;  // per stage
  MatchProbabilities<T> p;
  // [stage][head]
  std::vector<std::vector<RoutingSample<T>>> routing;
  RoutingPlan plan;
};

// One pair: forward, total loss, and backward. Gradients are accumulated
// into `grad` scaled by `weight`.
template <typename T>
LossReport<T> loss_and_gradients(const ModelWeights<T>& w,
                                 const KeypointSet& a, const KeypointSet& b,
                                 const GroundTruth& gt,
                                 const ForwardOptions& opt, double gamma,
                                 std::type_identity_t<ModelWeights<T>>* grad, double weight = 1.0);

}  // namespace clustergnn

#endif  // CLUSTERGNN_MODEL_H_
