#ifndef CLUSTERGNN_CLUSTER_H_
#define CLUSTERGNN_CLUSTER_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "clustergnn/config.h"
#include "clustergnn/matrix.h"

namespace clustergnn {

// Cluster centers of one stage (and one attention head) in the shared
// query/key space.
template <typename T>
struct ClusterState {
  Matrix<T> centers;  // k x d_qk
  std::size_t stage_index = 0;
  double beta = 0.99;
  // False until k-means has seeded the centers from data.
  bool initialized = false;

  std::size_t k() const { return centers.rows(); }
  std::size_t dim() const { return centers.cols(); }
};

struct Assignment {
  std::vector<std::size_t> cid;    // per feature, in [0, k)
  std::vector<std::size_t> sizes;  // per cluster member counts

  std::size_t k() const { return sizes.size(); }
  // Member indices per cluster, ascending within each cluster.
  std::vector<std::vector<std::size_t>> members() const;

  static Assignment from_ids(std::vector<std::size_t> cid, std::size_t k);
};

// 1 - cos(c, f), in [0, 2]. Throws NumericError on a zero-norm input.
template <typename T>
double discrepancy(std::span<const T> c, std::span<const T> f);

// Nearest center per feature row under the discrepancy; ties go to the
// lower center index. Only the first `k_eff` centers take part (0 = all).
// Zero-norm features are put in cluster 0 with a warning on stderr.
template <typename T>
Assignment assign(const Matrix<T>& features, const ClusterState<T>& state,
                  std::size_t k_eff = 0);

// One shared cluster id per feature: the center minimizing
// dis(c, query_i) + dis(c, key_i).
template <typename T>
Assignment assign_joint(const Matrix<T>& queries, const Matrix<T>& keys,
                        const ClusterState<T>& state, std::size_t k_eff = 0);

// k-means++ seeding followed by `iters` spherical Lloyd steps under the
// discrepancy. Deterministic in `seed`. If `trace` is given it receives the
// total within-cluster discrepancy after seeding and after each step.
template <typename T>
ClusterState<T> kmeans_init(const Matrix<T>& features, std::size_t k,
                            std::uint64_t seed, std::size_t iters,
                            std::vector<double>* trace = nullptr);

template <typename T>
double total_discrepancy(const Matrix<T>& features, const ClusterState<T>& state,
                         const Assignment& asg);

// c_i <- beta c_i + (1 - beta) mean{f_j : cid_j = i}. Empty clusters keep
// their center.
template <typename T>
ClusterState<T> ema_update(const ClusterState<T>& state,
                           const Matrix<T>& features, const Assignment& asg);

// Moves center `cluster` onto the feature farthest (by discrepancy) from it.
template <typename T>
void reseed_center(ClusterState<T>& state, std::size_t cluster,
                   const Matrix<T>& features);

// Validated cluster counts per stage (non-decreasing).
std::vector<std::size_t> stage_schedule(const ModelConfig& config);
// Same counts with every stage clamped to n_total features.
std::vector<std::size_t> effective_schedule(
    std::span<const std::size_t> schedule, std::size_t n_total);
// `stages` copies of k, for the fixed-cluster ablation.
std::vector<std::size_t> fixed_schedule(std::size_t k, std::size_t stages);

}  // namespace clustergnn

#endif  // CLUSTERGNN_CLUSTER_H_
