#include "clustergnn/trainer.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "clustergnn/kernels.h"
#include "clustergnn/parallel.h"
#include "clustergnn/seeds.h"

namespace clustergnn {
namespace {

// Stream tags keep training, held-out and center-seeding draws disjoint.
constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kHeldOutStream = 2;
constexpr std::uint64_t kCenterStream = 3;
constexpr std::uint64_t kInitStream = 4;

std::vector<Matrix<float>*> trainable(ModelWeights<float>& w) {
  std::vector<Matrix<float>*> out;
  w.visit_trainable(
      [&](const std::string&, Matrix<float>& m) { out.push_back(&m); });
  return out;
}

}  // namespace

PairOptions TrainConfig::pair_options() const {
  PairOptions opt;
  opt.n_keypoints = n_keypoints;
  opt.noise_px = noise_px;
  opt.outlier_frac = outlier_frac;
  opt.image = image;
  return opt;
}

DescriptorModel TrainConfig::descriptor_model() const {
  return DescriptorModel::make(world_seed, model.descriptor_dim,
                               descriptor_noise);
}

void TrainConfig::validate() const {
  model.validate();
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be >= 0");
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (n_keypoints == 0) throw ConfigError("n_keypoints must be positive");
  if (!(outlier_frac >= 0.0 && outlier_frac <= 1.0)) {
    throw ConfigError("outlier_frac must lie in [0, 1]");
  }
  if (!(noise_px >= 0.0)) throw ConfigError("noise_px must be >= 0");
  if (!(descriptor_noise >= 0.0)) {
    throw ConfigError("descriptor_noise must be >= 0");
  }
  if (image.width == 0 || image.height == 0) {
    throw ConfigError("image size must be positive");
  }
}

void Adam::step(ModelWeights<float>& w, ModelWeights<float>& grad) {
  const auto params = trainable(w);
  const auto grads = trainable(grad);
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    float* x = params[p]->data();
    const float* g = grads[p]->data();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < m.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double update = lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      x[i] = static_cast<float>(x[i] - update);
    }
  }
}

double MatchCounts::precision() const {
  return predicted == 0 ? 0.0
                        : static_cast<double>(correct) /
                              static_cast<double>(predicted);
}

double MatchCounts::recall() const {
  return ground_truth == 0 ? 1.0
                           : static_cast<double>(correct) /
                                 static_cast<double>(ground_truth);
}

double MatchCounts::f1() const {
  const double p = precision(), r = recall();
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

MatchCounts score_matches(const MatchResult& result, const GroundTruth& gt) {
  std::map<std::size_t, std::size_t> truth(gt.matches.begin(),
                                           gt.matches.end());
  std::set<IndexPair> undecided(gt.undecided.begin(), gt.undecided.end());
  MatchCounts c;
  c.ground_truth = gt.matches.size();
  for (const Match& m : result.pairs) {
    const auto it = truth.find(m.i);
    if (it != truth.end() && it->second == m.j) {
      ++c.correct;
      ++c.predicted;
    } else if (!undecided.contains({m.i, m.j})) {
      ++c.predicted;
    }
  }
  return c;
}

std::string EpochMetrics::to_log_line() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "epoch=%zu loss=%.6f matching_loss=%.6f cluster_loss=%.6f "
                "precision=%.4f recall=%.4f",
                epoch, loss, matching_loss, cluster_loss, precision, recall);
  return buf;
}

Trainer::Trainer(TrainConfig config, std::uint64_t seed)
    : config_(std::move(config)),
      seed_(seed),
      descriptors_(config_.descriptor_model()),
      weights_(ModelWeights<float>::init(config_.model,
                                         derive_seed(seed, {kInitStream}))),
      adam_(config_.lr) {
  config_.validate();
}

SyntheticPair Trainer::training_pair(std::size_t epoch, std::size_t step,
                                     std::size_t index) const {
  return generate_pair(derive_seed(seed_, {kTrainStream, epoch, step, index}),
                       config_.pair_options(), descriptors_);
}

StepStats Trainer::step(std::span<const SyntheticPair> batch) {
  if (batch.empty()) throw ConfigError("empty batch");
  const std::size_t step_index = steps_taken_;
  if (!weights_.centers_initialized()) {
    initialize_centers(weights_, batch,
                       derive_seed(seed_, {kCenterStream}));
  }
  const std::size_t b = batch.size();
  const double weight = 1.0 / static_cast<double>(b);
  std::vector<ModelWeights<float>> grads(b);
  std::vector<LossReport<float>> reports(b);
  std::vector<GroundTruth> truths(b);
  const ForwardOptions opt = ForwardOptions::from(config_.model);
  try {
    parallel_for(b, [&](std::size_t i) {
      truths[i] = label_ground_truth(batch[i]);
      grads[i] = weights_.zeros_like();
      reports[i] = loss_and_gradients(weights_, batch[i].a, batch[i].b,
                                      truths[i], opt, config_.gamma,
                                      &grads[i], weight);
    });
  } catch (const NumericError& e) {
    throw TrainingAborted(step_index, weights_,
                          "training aborted at step " +
                              std::to_string(step_index) + ": " + e.what());
  }
  ModelWeights<float>& total = grads[0];
  {
    const auto dst = trainable(total);
    for (std::size_t i = 1; i < b; ++i) {
      const auto src = trainable(grads[i]);
      for (std::size_t p = 0; p < dst.size(); ++p) add_inplace(*dst[p], *src[p]);
    }
    for (const auto* g : dst) {
      if (!all_finite(*g)) {
        throw TrainingAborted(step_index, weights_,
                              "training aborted at step " +
                                  std::to_string(step_index) +
                                  ": non-finite gradient");
      }
    }
  }
  StepStats stats;
  for (std::size_t i = 0; i < b; ++i) {
    stats.loss += reports[i].total * weight;
    stats.matching_loss += reports[i].matching * weight;
    for (const double lc : reports[i].cluster) stats.cluster_loss += lc * weight;
    stats.counts += score_matches(
        extract_matches(reports[i].p, config_.model.match_threshold),
        truths[i]);
  }
  adam_.step(weights_, total);

  // Center EMA on routing vectors pooled over the batch.
  const std::size_t n_stages = weights_.stages.size();
  const std::size_t heads = config_.model.heads;
  if (epoch_counts_.empty()) {
    epoch_counts_.assign(n_stages, {});
    last_features_.assign(n_stages, std::vector<Matrix<float>>(heads));
    for (std::size_t s = 0; s < n_stages; ++s) {
      for (const auto& c : weights_.stages[s].clusters) {
        epoch_counts_[s].emplace_back(c.k(), 0);
      }
    }
  }
  for (std::size_t s = 0; s < n_stages; ++s) {
    for (std::size_t h = 0; h < heads; ++h) {
      ClusterState<float>& state = weights_.stages[s].clusters[h];
      Matrix<float> pooled;
      std::vector<std::size_t> cid;
      for (std::size_t i = 0; i < b; ++i) {
        const RoutingSample<float>& r = reports[i].routing[s][h];
        pooled = pooled.empty() ? r.features : concat_rows(pooled, r.features);
        cid.insert(cid.end(), r.asg.cid.begin(), r.asg.cid.end());
      }
      const Assignment asg = Assignment::from_ids(std::move(cid), state.k());
      for (std::size_t c = 0; c < state.k(); ++c) {
        epoch_counts_[s][h][c] += asg.sizes[c];
      }
      state = ema_update(state, pooled, asg);
      last_features_[s][h] = std::move(pooled);
    }
  }
  last_union_ = batch[0].a.size() + batch[0].b.size();
  ++steps_taken_;
  return stats;
}

void Trainer::end_epoch() {
  for (std::size_t s = 0; s < epoch_counts_.size(); ++s) {
    for (std::size_t h = 0; h < epoch_counts_[s].size(); ++h) {
      ClusterState<float>& state = weights_.stages[s].clusters[h];
      // Clusters beyond the feature count can never be filled.
      const std::size_t usable = std::min(state.k(), last_union_);
      for (std::size_t c = 0; c < usable; ++c) {
        if (epoch_counts_[s][h][c] == 0 && !last_features_[s][h].empty()) {
          reseed_center(state, c, last_features_[s][h]);
        }
      }
      std::fill(epoch_counts_[s][h].begin(), epoch_counts_[s][h].end(), 0);
    }
  }
}

TrainResult train(const TrainConfig& config, std::uint64_t seed,
                  const std::function<void(const EpochMetrics&)>& on_epoch) {
  Trainer trainer(config, seed);
  TrainResult result;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    EpochMetrics metrics;
    metrics.epoch = e + 1;
    MatchCounts counts;
    for (std::size_t s = 0; s < config.steps_per_epoch; ++s) {
      std::vector<SyntheticPair> batch(config.batch_size);
      parallel_for(batch.size(), [&](std::size_t i) {
        batch[i] = trainer.training_pair(e, s, i);
      });
      const StepStats st = trainer.step(batch);
      metrics.loss += st.loss;
      metrics.matching_loss += st.matching_loss;
      metrics.cluster_loss += st.cluster_loss;
      counts += st.counts;
    }
    trainer.end_epoch();
    const double steps = static_cast<double>(std::max<std::size_t>(
        config.steps_per_epoch, 1));
    metrics.loss /= steps;
    metrics.matching_loss /= steps;
    metrics.cluster_loss /= steps;
    metrics.precision = counts.precision();
    metrics.recall = counts.recall();
    result.epochs.push_back(metrics);
    if (on_epoch) on_epoch(metrics);
  }
  result.weights = trainer.weights();
  return result;
}

std::vector<SyntheticPair> held_out_pairs(const TrainConfig& config,
                                          std::size_t count,
                                          std::uint64_t seed) {
  const DescriptorModel descriptors = config.descriptor_model();
  std::vector<SyntheticPair> pairs(count);
  parallel_for(count, [&](std::size_t i) {
    pairs[i] = generate_pair(derive_seed(seed, {kHeldOutStream, i}),
                             config.pair_options(), descriptors);
  });
  return pairs;
}

EvalResult evaluate(const ModelWeights<float>& w,
                    std::span<const SyntheticPair> pairs, MatchHead head,
                    std::size_t sinkhorn_iters, double threshold) {
  EvalResult r;
  double seconds = 0.0;
  for (const SyntheticPair& pair : pairs) {
    const GroundTruth gt = label_ground_truth(pair);
    const auto t0 = std::chrono::steady_clock::now();
    const MatchResult m = match(w, pair.a, pair.b, head, sinkhorn_iters,
                                threshold);
    seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                             t0)
                   .count();
    r.counts += score_matches(m, gt);
  }
  r.precision = r.counts.precision();
  r.recall = r.counts.recall();
  r.f1 = r.counts.f1();
  r.ms_per_pair =
      pairs.empty() ? 0.0 : 1e3 * seconds / static_cast<double>(pairs.size());
  return r;
}

}  // namespace clustergnn
