#include "clustergnn/model.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "clustergnn/kernels.h"
#include "clustergnn/losses.h"
#include "clustergnn/seeds.h"

namespace clustergnn {
namespace {

template <typename T>
Matrix<T> random_unit_rows(std::size_t rows, std::size_t cols,
                           std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix<T> m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    double norm = 0.0;
    std::vector<double> v(cols);
    while (norm < 1e-12) {
      norm = 0.0;
      for (auto& x : v) {
        x = gauss(rng);
        norm += x * x;
      }
    }
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = static_cast<T>(v[j] / norm);
  }
  return m;
}

template <typename T>
std::vector<Matrix<T>*> all_arrays(ModelWeights<T>& w) {
  std::vector<Matrix<T>*> out;
  w.visit_trainable([&](const std::string&, Matrix<T>& m) { out.push_back(&m); });
  w.visit_centers([&](const std::string&, ClusterState<T>& c) {
    out.push_back(&c.centers);
  });
  return out;
}

template <typename T>
std::vector<ClusterState<T>*> all_states(ModelWeights<T>& w) {
  std::vector<ClusterState<T>*> out;
  w.visit_centers(
      [&](const std::string&, ClusterState<T>& c) { out.push_back(&c); });
  return out;
}

}  // namespace

template <typename T>
ModelWeights<T> ModelWeights<T>::init(const ModelConfig& config,
                                      std::uint64_t seed) {
  config.validate();
  const std::vector<std::size_t> schedule = stage_schedule(config);
  std::mt19937_64 rng(seed);
  ModelWeights w;
  w.config = config;
  const std::size_t d = config.descriptor_dim, h = config.heads;
  w.encoder = EncoderWeights<T>::init(d, config.encoder_hidden_layers, rng);
  for (std::size_t l = 0; l < config.init_depth; ++l) {
    w.init_layers.push_back(InitLayerWeights<T>::init(d, h, rng));
  }
  for (std::size_t s = 0; s < schedule.size(); ++s) {
    StageWeights<T> stage;
    for (std::size_t l = 0; l < config.layers_per_stage; ++l) {
      stage.layers.push_back(AttentionWeights<T>::init(d, h, rng));
    }
    for (std::size_t head = 0; head < h; ++head) {
      ClusterState<T> c;
      c.centers = random_unit_rows<T>(schedule[s], config.head_dim(), rng);
      c.stage_index = s;
      c.beta = config.beta;
      c.initialized = false;
      stage.clusters.push_back(std::move(c));
    }
    w.stages.push_back(std::move(stage));
  }
  w.dustbin = Matrix<T>(1, 1, T(1));
  return w;
}

template <typename T>
void ModelWeights<T>::visit_trainable(const ParamVisitor<T>& f) {
  encoder.visit("encoder", f);
  for (std::size_t l = 0; l < init_layers.size(); ++l) {
    init_layers[l].visit("init" + std::to_string(l), f);
  }
  for (std::size_t s = 0; s < stages.size(); ++s) {
    stages[s].visit("stage" + std::to_string(s), f);
  }
  f("dustbin", dustbin);
}

template <typename T>
void ModelWeights<T>::visit_centers(
    const std::function<void(const std::string&, ClusterState<T>&)>& f) {
  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (std::size_t h = 0; h < stages[s].clusters.size(); ++h) {
      f("stage" + std::to_string(s) + ".head" + std::to_string(h) + ".centers",
        stages[s].clusters[h]);
    }
  }
}

template <typename T>
ModelWeights<T> ModelWeights<T>::zeros_like() const {
  ModelWeights out = *this;
  out.visit_trainable([](const std::string&, Matrix<T>& m) { m.set_zero(); });
  return out;
}

template <typename T>
template <typename U>
ModelWeights<U> ModelWeights<T>::cast() const {
  ModelWeights<T> src = *this;
  ModelWeights<U> out = ModelWeights<U>::init(config, 0);
  const auto from = all_arrays(src);
  const auto to = all_arrays(out);
  for (std::size_t i = 0; i < from.size(); ++i) *to[i] = from[i]->template cast<U>();
  const auto sf = all_states(src);
  const auto st = all_states(out);
  for (std::size_t i = 0; i < sf.size(); ++i) {
    st[i]->initialized = sf[i]->initialized;
    st[i]->beta = sf[i]->beta;
  }
  return out;
}

template <typename T>
bool ModelWeights<T>::centers_initialized() const {
  for (const auto& s : stages) {
    for (const auto& c : s.clusters) {
      if (!c.initialized) return false;
    }
  }
  return true;
}

template <typename T>
MatchProbabilities<T> forward(const ModelWeights<T>& w, const KeypointSet& a,
                              const KeypointSet& b, const ForwardOptions& opt,
                              ForwardCache<T>* cache) {
  if (opt.routing != nullptr && opt.routing->size() != w.stages.size()) {
    throw ConfigError("routing plan does not match the stage count");
  }
  Matrix<T> fa = encode_keypoints(a, a.image_size, w.encoder,
                                  cache != nullptr ? &cache->enc_a : nullptr);
  Matrix<T> fb = encode_keypoints(b, b.image_size, w.encoder,
                                  cache != nullptr ? &cache->enc_b : nullptr);
  std::tie(fa, fb) =
      init_graphs(fa, fb, std::span<const InitLayerWeights<T>>(w.init_layers),
                  w.config.query_chunks,
                  cache != nullptr ? &cache->init : nullptr);
  if (!w.stages.empty()) {
    Matrix<T> u = concat_rows(fa, fb);
    if (cache != nullptr) cache->stages.assign(w.stages.size(), {});
    for (std::size_t s = 0; s < w.stages.size(); ++s) {
      u = run_stage(u, w.stages[s], w.config.recluster_per_layer,
                    cache != nullptr ? &cache->stages[s] : nullptr,
                    opt.routing != nullptr ? &(*opt.routing)[s] : nullptr);
    }
    fa = slice_rows(u, 0, a.size());
    fb = slice_rows(u, a.size(), b.size());
  }
  Matrix<T> c_tilde = add_dustbin(confidence(fa, fb), w.dustbin(0, 0));
  MatchProbabilities<T> p =
      opt.head == MatchHead::kSinkhorn
          ? sinkhorn(c_tilde, opt.sinkhorn_iters, nullptr,
                     cache != nullptr ? &cache->sinkhorn : nullptr)
          : dual_softmax(c_tilde);
  if (cache != nullptr) {
    cache->fa = std::move(fa);
    cache->fb = std::move(fb);
    cache->c_tilde = std::move(c_tilde);
  }
  return p;
}

template <typename T>
RoutingPlan routing_plan(const ForwardCache<T>& cache) {
  RoutingPlan plan(cache.stages.size());
  for (std::size_t s = 0; s < cache.stages.size(); ++s) {
    for (const auto& layer : cache.stages[s].layers) {
      plan[s].push_back(layer.routing);
    }
  }
  return plan;
}

template <typename T>
RoutingSample<T> routing_sample(const StageCache<T>& stage, std::size_t head,
                                std::size_t heads, std::size_t k) {
  RoutingSample<T> out;
  std::vector<std::size_t> cid;
  std::vector<Matrix<T>> parts;
  for (std::size_t l = 0; l < stage.layers.size(); ++l) {
    if (stage.routed_by[l] != l) continue;
    const auto& layer = stage.layers[l];
    const std::size_t dh = layer.proj.q.cols() / heads;
    const Assignment& asg =
        layer.routing.size() == 1 ? layer.routing[0] : layer.routing[head];
    parts.push_back(head_slice(layer.proj.q, head, dh));
    parts.push_back(head_slice(layer.proj.k, head, dh));
    cid.insert(cid.end(), asg.cid.begin(), asg.cid.end());
    cid.insert(cid.end(), asg.cid.begin(), asg.cid.end());
  }
  if (parts.empty()) return out;
  out.features = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) {
    out.features = concat_rows(out.features, parts[i]);
  }
  out.asg = Assignment::from_ids(std::move(cid), k);
  return out;
}

MatchResult match(const ModelWeights<float>& w, const KeypointSet& a,
                  const KeypointSet& b, MatchHead head,
                  std::size_t sinkhorn_iters, double threshold) {
  ForwardOptions opt;
  opt.head = head;
  opt.sinkhorn_iters = sinkhorn_iters;
  return extract_matches(forward(w, a, b, opt), threshold);
}

template <typename T>
void initialize_centers(ModelWeights<T>& w,
                        std::span<const SyntheticPair> pairs,
                        std::uint64_t seed) {
  if (pairs.empty()) throw ConfigError("initialize_centers: no pairs");
  const std::size_t heads = w.config.heads, dh = w.config.head_dim();
  std::vector<Matrix<T>> unions;
  for (const auto& pair : pairs) {
    Matrix<T> fa = encode_keypoints(pair.a, pair.a.image_size, w.encoder);
    Matrix<T> fb = encode_keypoints(pair.b, pair.b.image_size, w.encoder);
    std::tie(fa, fb) = init_graphs(
        fa, fb, std::span<const InitLayerWeights<T>>(w.init_layers),
        w.config.query_chunks);
    unions.push_back(concat_rows(fa, fb));
  }
  for (std::size_t s = 0; s < w.stages.size(); ++s) {
    StageWeights<T>& stage = w.stages[s];
    std::vector<Projections<T>> proj;
    for (const auto& u : unions) {
      proj.push_back(project(u, u, stage.layers.front()));
    }
    for (std::size_t h = 0; h < heads; ++h) {
      Matrix<T> pooled;
      for (const auto& p : proj) {
        Matrix<T> qk =
            concat_rows(head_slice(p.q, h, dh), head_slice(p.k, h, dh));
        pooled = pooled.empty() ? std::move(qk) : concat_rows(pooled, qk);
      }
      ClusterState<T>& state = stage.clusters[h];
      const std::size_t k = state.k();
      const std::size_t k_fit = std::min(k, pooled.rows());
      ClusterState<T> fitted =
          kmeans_init(pooled, k_fit, derive_seed(seed, {s, h}),
                      w.config.kmeans_iters);
      for (std::size_t c = 0; c < k_fit; ++c) {
        std::copy(fitted.centers.row(c).begin(), fitted.centers.row(c).end(),
                  state.centers.row(c).begin());
      }
      state.initialized = true;
    }
    for (auto& u : unions) {
      u = run_stage(u, stage, w.config.recluster_per_layer);
    }
  }
}

template <typename T>
LossReport<T> loss_and_gradients(const ModelWeights<T>& w,
                                 const KeypointSet& a, const KeypointSet& b,
                                 const GroundTruth& gt,
                                 const ForwardOptions& opt, double gamma,
                                 std::type_identity_t<ModelWeights<T>>* grad, double weight) {
  ForwardCache<T> cache;
  LossReport<T> rep;
  rep.p = forward(w, a, b, opt, &cache);
  const std::size_t heads = w.config.heads, dh = w.config.head_dim();

  Matrix<T> dP;
  rep.matching = matching_loss(rep.p, gt, grad != nullptr ? &dP : nullptr);

  // Cluster loss per stage: mean over heads (and routing layers) of the
  // mean distance of routed query/key vectors to their centers.
  const std::size_t n_stages = w.stages.size();
  rep.cluster.assign(n_stages, 0.0);
  rep.routing.assign(n_stages, {});
  std::vector<std::vector<Matrix<T>>> extra_dq(n_stages), extra_dk(n_stages);
  for (std::size_t s = 0; s < n_stages; ++s) {
    const StageCache<T>& sc = cache.stages[s];
    const std::size_t n_layers = sc.layers.size();
    extra_dq[s].assign(n_layers, {});
    extra_dk[s].assign(n_layers, {});
    for (std::size_t h = 0; h < heads; ++h) {
      const ClusterState<T>& state = w.stages[s].clusters[h];
      RoutingSample<T> sample = routing_sample(sc, h, heads, state.k());
      Matrix<T> dfeat;
      rep.cluster[s] += cluster_loss(state, sample.features, sample.asg,
                                     grad != nullptr ? &dfeat : nullptr) /
                        static_cast<double>(heads);
      if (grad != nullptr && gamma != 0.0) {
        const double scale = weight * gamma / static_cast<double>(heads);
        std::size_t row = 0;
        for (std::size_t l = 0; l < n_layers; ++l) {
          if (sc.routed_by[l] != l) continue;
          const std::size_t n = sc.layers[l].proj.q.rows();
          if (extra_dq[s][l].empty()) {
            extra_dq[s][l] = Matrix<T>(n, w.config.descriptor_dim);
            extra_dk[s][l] = Matrix<T>(n, w.config.descriptor_dim);
          }
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < dh; ++j) {
              extra_dq[s][l](i, h * dh + j) +=
                  static_cast<T>(scale * dfeat(row + i, j));
              extra_dk[s][l](i, h * dh + j) +=
                  static_cast<T>(scale * dfeat(row + n + i, j));
            }
          }
          row += 2 * n;
        }
      }
      rep.routing[s].push_back(std::move(sample));
    }
  }
  rep.total = total_loss(rep.matching, rep.cluster, gamma);
  rep.plan = routing_plan(cache);
  if (!std::isfinite(rep.total)) {
    throw NumericError("non-finite loss");
  }
  if (grad == nullptr) return rep;

  if (weight != 1.0) {
    for (auto& v : dP.storage()) v = static_cast<T>(v * weight);
  }
  const Matrix<T> dct =
      opt.head == MatchHead::kSinkhorn
          ? sinkhorn_backward(cache.c_tilde, cache.sinkhorn, dP)
          : dual_softmax_backward(rep.p, cache.c_tilde, dP);
  auto [dc, dz] = add_dustbin_backward(dct);
  grad->dustbin(0, 0) += dz;
  Matrix<T> da = matmul(dc, cache.fb);
  Matrix<T> db = matmul_tn(dc, cache.fa);
  if (n_stages > 0) {
    Matrix<T> du = concat_rows(da, db);
    for (std::size_t s = n_stages; s-- > 0;) {
      du = run_stage_backward(cache.stages[s], w.stages[s], du,
                              grad->stages[s],
                              std::span<const Matrix<T>>(extra_dq[s]),
                              std::span<const Matrix<T>>(extra_dk[s]));
    }
    da = slice_rows(du, 0, a.size());
    db = slice_rows(du, a.size(), b.size());
  }
  std::tie(da, db) = init_graphs_backward(
      cache.init, std::span<const InitLayerWeights<T>>(w.init_layers), da, db,
      std::span<InitLayerWeights<T>>(grad->init_layers));
  encode_keypoints_backward(cache.enc_a, da, w.encoder, grad->encoder);
  encode_keypoints_backward(cache.enc_b, db, w.encoder, grad->encoder);
  return rep;
}

#define CLUSTERGNN_INSTANTIATE(T)                                              \
  template struct ModelWeights<T>;                                             \
  template ModelWeights<float> ModelWeights<T>::cast<float>() const;           \
  template ModelWeights<double> ModelWeights<T>::cast<double>() const;         \
  template MatchProbabilities<T> forward(const ModelWeights<T>&,               \
                                         const KeypointSet&,                   \
                                         const KeypointSet&,                   \
                                         const ForwardOptions&,                \
                                         ForwardCache<T>*);                    \
  template RoutingPlan routing_plan(const ForwardCache<T>&);                   \
  template RoutingSample<T> routing_sample(const StageCache<T>&, std::size_t,  \
                                           std::size_t, std::size_t);          \
  template void initialize_centers(ModelWeights<T>&,                           \
                                   std::span<const SyntheticPair>,             \
                                   std::uint64_t);                             \
  template LossReport<T> loss_and_gradients(                                   \
      const ModelWeights<T>&, const KeypointSet&, const KeypointSet&,          \
      const GroundTruth&, const ForwardOptions&, double, ModelWeights<T>*,     \
      double);

CLUSTERGNN_INSTANTIATE(float)
CLUSTERGNN_INSTANTIATE(double)
#undef CLUSTERGNN_INSTANTIATE

}  // namespace clustergnn
