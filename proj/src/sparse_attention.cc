#include "clustergnn/sparse_attention.h"

#include <algorithm>

#include "clustergnn/kernels.h"
#include "clustergnn/memory_stats.h"
#include "clustergnn/parallel.h"

namespace clustergnn {
namespace {

template <typename T>
void check_routing(std::span<const T> per_head, std::size_t heads,
                   const char* what) {
  if (per_head.size() != 1 && per_head.size() != heads) {
    throw NumericError(std::string(what) +
                       ": expected one entry or one per head");
  }
}

template <typename T>
const T& for_head(std::span<const T> per_head, std::size_t h) {
  return per_head.size() == 1 ? per_head[0] : per_head[h];
}

// Gathers rows `index` of columns [col, col + width).
template <typename T>
Matrix<T> gather_block(const Matrix<T>& m, std::span<const std::size_t> index,
                       std::size_t col, std::size_t width) {
  Matrix<T> out(index.size(), width);
  for (std::size_t r = 0; r < index.size(); ++r) {
    const T* src = m.data() + index[r] * m.cols() + col;
    std::copy(src, src + width, out.data() + r * width);
  }
  return out;
}

template <typename T>
void scatter_block(Matrix<T>& m, std::span<const std::size_t> index,
                   std::size_t col, const Matrix<T>& block) {
  for (std::size_t r = 0; r < index.size(); ++r) {
    std::copy(block.row(r).begin(), block.row(r).end(),
              m.data() + index[r] * m.cols() + col);
  }
}

}  // namespace

ClusterMask ClusterMask::from_assignment(const Assignment& asg) {
  ClusterMask m;
  m.n = asg.cid.size();
  m.clusters = asg.members();
  return m;
}

Mask ClusterMask::to_dense() const {
  Mask dense(n, n, 0);
  for (const auto& members : clusters) {
    for (const std::size_t i : members) {
      for (const std::size_t j : members) dense(i, j) = 1;
    }
  }
  return dense;
}

std::size_t ClusterMask::unmasked_count() const {
  std::size_t total = 0;
  for (const auto& members : clusters) total += members.size() * members.size();
  return total;
}

AttentionCost attention_cost(std::size_t n_total, const Assignment& asg) {
  AttentionCost cost;
  for (const std::size_t s : asg.sizes) cost.unmasked_pairs += s * s;
  cost.dense_pairs = n_total * n_total;
  return cost;
}

template <typename T>
Matrix<T> clustered_heads(const Projections<T>& proj, std::size_t heads,
                          std::span<const Assignment> asg,
                          std::vector<std::vector<Matrix<T>>>* probs) {
  check_routing(asg, heads, "clustered_heads");
  const std::size_t n = proj.q.rows(), dim = proj.q.cols(),
                    dh = dim / heads;
  for (const auto& a : asg) {
    if (a.cid.size() != n) {
      throw NumericError("clustered attention: assignment covers " +
                         std::to_string(a.cid.size()) + " of " +
                         std::to_string(n) + " rows");
    }
  }
  Matrix<T> out(n, dim);
  memory::Charge out_charge(memory::bytes_of(out));
  if (probs != nullptr) probs->assign(heads, {});
  parallel_for(heads, [&](std::size_t h) {
    const auto members = for_head(asg, h).members();
    if (probs != nullptr) (*probs)[h].assign(members.size(), Matrix<T>());
    for (std::size_t c = 0; c < members.size(); ++c) {
      const auto& idx = members[c];
      if (idx.empty()) continue;
      const Matrix<T> qc = gather_block(proj.q, idx, h * dh, dh);
      const Matrix<T> kc = gather_block(proj.k, idx, h * dh, dh);
      const Matrix<T> vc = gather_block(proj.v, idx, h * dh, dh);
      memory::Charge block_charge(3 * memory::bytes_of(qc));
      const Matrix<T> oc = attend_head(
          qc, kc, vc, nullptr, probs != nullptr ? &(*probs)[h][c] : nullptr);
      scatter_block(out, idx, h * dh, oc);
    }
  });
  return out;
}

template <typename T>
Matrix<T> clustered_layer(const Matrix<T>& f_union, Projections<T> proj,
                          std::span<const Assignment> asg,
                          const AttentionWeights<T>& w,
                          ClusteredLayerCache<T>* cache) {
  memory::Charge proj_charge(memory::bytes_of(proj.q) +
                             memory::bytes_of(proj.k) +
                             memory::bytes_of(proj.v));
  Matrix<T> heads_out = clustered_heads(
      proj, w.heads, asg, cache != nullptr ? &cache->probs : nullptr);
  const Matrix<T> msg = w.merge.forward(heads_out);
  Matrix<T> y = residual_update(f_union, msg, w.mlp,
                                cache != nullptr ? &cache->update : nullptr);
  if (cache != nullptr) {
    cache->input = f_union;
    cache->proj = std::move(proj);
    cache->routing.assign(asg.begin(), asg.end());
    cache->heads_out = std::move(heads_out);
  }
  return y;
}

template <typename T>
Matrix<T> clustered_attention(const Matrix<T>& f_union,
                              std::span<const Assignment> asg,
                              const AttentionWeights<T>& w,
                              ClusteredLayerCache<T>* cache) {
  return clustered_layer(f_union, project(f_union, f_union, w), asg, w, cache);
}

template <typename T>
Matrix<T> clustered_layer_backward(const ClusteredLayerCache<T>& cache,
                                   const AttentionWeights<T>& w,
                                   const Matrix<T>& dy,
                                   AttentionWeights<T>& grad,
                                   const Matrix<T>& extra_dq,
                                   const Matrix<T>& extra_dk) {
  Matrix<T> dmsg;
  Matrix<T> dx =
      residual_update_backward(cache.update, dy, w.mlp, grad.mlp, dmsg);
  const Matrix<T> dheads = w.merge.backward(cache.heads_out, dmsg, grad.merge);
  const std::size_t n = dy.rows(), dim = w.dim(), dh = w.head_dim();
  Matrix<T> dq(n, dim), dk(n, dim), dv(n, dim);
  const std::span<const Assignment> routing(cache.routing);
  for (std::size_t h = 0; h < w.heads; ++h) {
    const auto members = for_head(routing, h).members();
    for (std::size_t c = 0; c < members.size(); ++c) {
      const auto& idx = members[c];
      if (idx.empty()) continue;
      const HeadGrads<T> g = attend_head_backward(
          gather_block(cache.proj.q, idx, h * dh, dh),
          gather_block(cache.proj.k, idx, h * dh, dh),
          gather_block(cache.proj.v, idx, h * dh, dh), cache.probs[h][c],
          gather_block(dheads, idx, h * dh, dh));
      scatter_block(dq, idx, h * dh, g.dq);
      scatter_block(dk, idx, h * dh, g.dk);
      scatter_block(dv, idx, h * dh, g.dv);
    }
  }
  if (!extra_dq.empty()) add_inplace(dq, extra_dq);
  if (!extra_dk.empty()) add_inplace(dk, extra_dk);
  projections_backward(cache.input, cache.input, w, dq, dk, dv, grad, dx, dx);
  return dx;
}

template <typename T>
Matrix<T> masked_dense_oracle(const Matrix<T>& f_union,
                              std::span<const Mask> masks,
                              const AttentionWeights<T>& w) {
  check_routing(masks, w.heads, "masked_dense_oracle");
  const Projections<T> proj = project(f_union, f_union, w);
  const std::size_t dh = w.head_dim();
  Matrix<T> heads_out(f_union.rows(), w.dim());
  for (std::size_t h = 0; h < w.heads; ++h) {
    const Mask& mask = for_head(masks, h);
    if (mask.rows() != f_union.rows() || mask.cols() != f_union.rows()) {
      throw NumericError("masked_dense_oracle: mask must be n x n");
    }
    set_cols(heads_out, h * dh,
             attend_head(head_slice(proj.q, h, dh), head_slice(proj.k, h, dh),
                         head_slice(proj.v, h, dh), &mask));
  }
  return residual_update(f_union, w.merge.forward(heads_out), w.mlp,
                         static_cast<UpdateCache<T>*>(nullptr));
}

template <typename T>
Matrix<T> dense_union_layer(const Matrix<T>& f_union,
                            const AttentionWeights<T>& w) {
  return gnn_layer(f_union, f_union, w);
}

template <typename T>
std::vector<Assignment> route(const Projections<T>& proj, std::size_t heads,
                              std::span<const ClusterState<T>> states,
                              std::size_t k_eff) {
  if (states.size() != heads) {
    throw NumericError("route: expected one cluster state per head");
  }
  const std::size_t dh = proj.q.cols() / heads;
  std::vector<Assignment> out;
  out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    if (!states[h].initialized) {
      throw NumericError("route: cluster centers are not initialized");
    }
    out.push_back(assign_joint(head_slice(proj.q, h, dh),
                               head_slice(proj.k, h, dh), states[h], k_eff));
  }
  return out;
}

template <typename T>
Matrix<T> run_stage(const Matrix<T>& u, const StageWeights<T>& stage,
                    bool recluster_per_layer, StageCache<T>* cache,
                    const std::vector<std::vector<Assignment>>* fixed_routing) {
  if (stage.clusters.empty()) throw NumericError("stage has no cluster state");
  const std::size_t k_eff = std::min(stage.clusters.front().k(), u.rows());
  if (cache != nullptr) {
    cache->k_eff = k_eff;
    cache->layers.assign(stage.layers.size(), {});
    cache->routed_by.assign(stage.layers.size(), 0);
  }
  Matrix<T> x = u;
  std::vector<Assignment> routing;
  std::size_t routed_by = 0;
  for (std::size_t l = 0; l < stage.layers.size(); ++l) {
    const auto& w = stage.layers[l];
    Projections<T> proj = project(x, x, w);
    if (l == 0 || recluster_per_layer) {
      routing = fixed_routing != nullptr
                    ? (*fixed_routing).at(l)
                    : route(proj, w.heads,
                            std::span<const ClusterState<T>>(stage.clusters),
                            k_eff);
      routed_by = l;
    }
    if (cache != nullptr) cache->routed_by[l] = routed_by;
    x = clustered_layer(x, std::move(proj), std::span<const Assignment>(routing),
                        w, cache != nullptr ? &cache->layers[l] : nullptr);
  }
  return x;
}

template <typename T>
Matrix<T> run_stage_backward(const StageCache<T>& cache,
                             const StageWeights<T>& stage, const Matrix<T>& dy,
                             StageWeights<T>& grad,
                             std::span<const Matrix<T>> extra_dq,
                             std::span<const Matrix<T>> extra_dk) {
  Matrix<T> d = dy;
  const Matrix<T> none;
  for (std::size_t l = stage.layers.size(); l-- > 0;) {
    d = clustered_layer_backward(cache.layers[l], stage.layers[l], d,
                                 grad.layers[l],
                                 l < extra_dq.size() ? extra_dq[l] : none,
                                 l < extra_dk.size() ? extra_dk[l] : none);
  }
  return d;
}

template <typename T>
std::pair<Matrix<T>, Matrix<T>> cluster_gnn_forward(
    const Matrix<T>& fa, const Matrix<T>& fb,
    std::span<const StageWeights<T>> stages, bool recluster_per_layer,
    std::vector<StageCache<T>>* caches) {
  if (stages.empty()) return {fa, fb};
  Matrix<T> u = concat_rows(fa, fb);
  if (caches != nullptr) caches->assign(stages.size(), {});
  for (std::size_t s = 0; s < stages.size(); ++s) {
    u = run_stage(u, stages[s], recluster_per_layer,
                  caches != nullptr ? &(*caches)[s] : nullptr);
  }
  return {slice_rows(u, 0, fa.rows()), slice_rows(u, fa.rows(), fb.rows())};
}

#define CLUSTERGNN_INSTANTIATE(T)                                              \
  template Matrix<T> clustered_heads(const Projections<T>&, std::size_t,       \
                                     std::span<const Assignment>,              \
                                     std::vector<std::vector<Matrix<T>>>*);    \
  template Matrix<T> clustered_attention(const Matrix<T>&,                     \
                                         std::span<const Assignment>,          \
                                         const AttentionWeights<T>&,           \
                                         ClusteredLayerCache<T>*);             \
  template Matrix<T> clustered_layer(const Matrix<T>&, Projections<T>,         \
                                     std::span<const Assignment>,              \
                                     const AttentionWeights<T>&,               \
                                     ClusteredLayerCache<T>*);                 \
  template Matrix<T> clustered_layer_backward(                                 \
      const ClusteredLayerCache<T>&, const AttentionWeights<T>&,               \
      const Matrix<T>&, AttentionWeights<T>&, const Matrix<T>&,                \
      const Matrix<T>&);                                                       \
  template Matrix<T> masked_dense_oracle(const Matrix<T>&,                     \
                                         std::span<const Mask>,                \
                                         const AttentionWeights<T>&);          \
  template Matrix<T> dense_union_layer(const Matrix<T>&,                       \
                                       const AttentionWeights<T>&);            \
  template std::vector<Assignment> route(const Projections<T>&, std::size_t,   \
                                         std::span<const ClusterState<T>>,     \
                                         std::size_t);                         \
  template Matrix<T> run_stage(const Matrix<T>&, const StageWeights<T>&, bool, \
                               StageCache<T>*,                                 \
                               const std::vector<std::vector<Assignment>>*);   \
  template Matrix<T> run_stage_backward(                                       \
      const StageCache<T>&, const StageWeights<T>&, const Matrix<T>&,          \
      StageWeights<T>&, std::span<const Matrix<T>>,                           \
      std::span<const Matrix<T>>);                                             \
  template std::pair<Matrix<T>, Matrix<T>> cluster_gnn_forward(                \
      const Matrix<T>&, const Matrix<T>&, std::span<const StageWeights<T>>,    \
      bool, std::vector<StageCache<T>>*);

CLUSTERGNN_INSTANTIATE(float)
CLUSTERGNN_INSTANTIATE(double)
#undef CLUSTERGNN_INSTANTIATE

}  // namespace clustergnn
