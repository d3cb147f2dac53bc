#ifndef CLUSTERGNN_SPARSE_ATTENTION_H_
#define CLUSTERGNN_SPARSE_ATTENTION_H_

#include <span>
#include <utility>
#include <vector>

#include "clustergnn/attention.h"
#include "clustergnn/cluster.h"
#include "clustergnn/matrix.h"

namespace clustergnn {

// Block structure induced by a shared assignment: query i may attend to key
// j iff cid(i) == cid(j). Held as per-cluster index lists; to_dense() is for
// testing only.
struct ClusterMask {
  std::size_t n = 0;
  std::vector<std::vector<std::size_t>> clusters;

  static ClusterMask from_assignment(const Assignment& asg);
  Mask to_dense() const;
  // Sum of squared cluster sizes.
  std::size_t unmasked_count() const;
};

struct AttentionCost {
  std::size_t unmasked_pairs = 0;
  std::size_t dense_pairs = 0;
};

AttentionCost attention_cost(std::size_t n_total, const Assignment& asg);

template <typename T>
struct ClusteredLayerCache {
  Matrix<T> input;
  Projections<T> proj;
  std::vector<Assignment> routing;           // per head (or one, broadcast)
  std::vector<std::vector<Matrix<T>>> probs;  // [head][cluster]
  Matrix<T> heads_out;
  UpdateCache<T> update;
};

// Per-head attention restricted to clusters, concatenated over heads
// (pre-merge). `asg` holds one assignment per head or a single one shared
// by all heads.
template <typename T>
Matrix<T> clustered_heads(const Projections<T>& proj, std::size_t heads,
                          std::span<const Assignment> asg,
                          std::vector<std::vector<Matrix<T>>>* probs = nullptr);

// Full layer on the union of both images' features: clustered attention,
// merge projection, residual MLP update. Output rows follow input rows.
template <typename T>
Matrix<T> clustered_attention(const Matrix<T>& f_union,
                              std::span<const Assignment> asg,
                              const AttentionWeights<T>& w,
                              ClusteredLayerCache<T>* cache = nullptr);

// As clustered_attention, reusing projections computed for routing.
template <typename T>
Matrix<T> clustered_layer(const Matrix<T>& f_union, Projections<T> proj,
                          std::span<const Assignment> asg,
                          const AttentionWeights<T>& w,
                          ClusteredLayerCache<T>* cache);

// Returns dL/df_union. extra_dq / extra_dk (may be empty) are added to the
// query/key projection gradients, e.g. from the clustering loss.
template <typename T>
Matrix<T> clustered_layer_backward(const ClusteredLayerCache<T>& cache,
                                   const AttentionWeights<T>& w,
                                   const Matrix<T>& dy,
                                   AttentionWeights<T>& grad,
                                   const Matrix<T>& extra_dq,
                                   const Matrix<T>& extra_dk);

// Reference semantics: full n x n scores per head, masked with the
// sentinel before the softmax. `masks` holds one mask per head or one
// shared mask. Slow; for verification only.
template <typename T>
Matrix<T> masked_dense_oracle(const Matrix<T>& f_union,
                              std::span<const Mask> masks,
                              const AttentionWeights<T>& w);

// Dense joint self-attention layer over the union (no routing).
template <typename T>
Matrix<T> dense_union_layer(const Matrix<T>& f_union,
                            const AttentionWeights<T>& w);

template <typename T>
struct StageWeights {
  std::vector<AttentionWeights<T>> layers;
  std::vector<ClusterState<T>> clusters;  // one per head

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      layers[l].visit(prefix + ".layer" + std::to_string(l), f);
    }
  }
};

template <typename T>
struct StageCache {
  std::size_t k_eff = 0;
  std::vector<ClusteredLayerCache<T>> layers;
  // Routing layer index per layer (the layer whose projections were
  // clustered to produce that layer's assignment).
  std::vector<std::size_t> routed_by;
};

// Routing routes per head: shared cluster id per feature from the head's
// query and key vectors.
template <typename T>
std::vector<Assignment> route(const Projections<T>& proj, std::size_t heads,
                              std::span<const ClusterState<T>> states,
                              std::size_t k_eff);

// Runs one stage's layers on the union. `fixed_routing`, when given,
// replaces routing with stored assignments ([layer][head]; only routing
// layers are read).
template <typename T>
Matrix<T> run_stage(const Matrix<T>& u, const StageWeights<T>& stage,
                    bool recluster_per_layer, StageCache<T>* cache = nullptr,
                    const std::vector<std::vector<Assignment>>* fixed_routing =
                        nullptr);

// extra_dq / extra_dk indexed by layer (empty matrices allowed).
template <typename T>
Matrix<T> run_stage_backward(const StageCache<T>& cache,
                             const StageWeights<T>& stage, const Matrix<T>& dy,
                             StageWeights<T>& grad,
                             std::span<const Matrix<T>> extra_dq,
                             std::span<const Matrix<T>> extra_dk);

// Concatenates fa and fb, runs every stage, splits back.
template <typename T>
std::pair<Matrix<T>, Matrix<T>> cluster_gnn_forward(
    const Matrix<T>& fa, const Matrix<T>& fb,
    std::span<const StageWeights<T>> stages, bool recluster_per_layer = false,
    std::vector<StageCache<T>>* caches = nullptr);

}  // namespace clustergnn

#endif  // CLUSTERGNN_SPARSE_ATTENTION_H_
