#ifndef CLUSTERGNN_MATCHER_H_
#define CLUSTERGNN_MATCHER_H_

#include <cstddef>
#include <vector>

#include "clustergnn/matrix.h"

namespace clustergnn {

// (n+1) x (m+1) log-score matrix; the last row and column are the dustbin.
template <typename T>
struct MatchProbabilities {
  Matrix<T> log_p;
  std::size_t n = 0;
  std::size_t m = 0;
};

struct Match {
  std::size_t i = 0;
  std::size_t j = 0;
  double score = 0.0;  // exp(P_ij)

  friend bool operator==(const Match&, const Match&) = default;
};

struct MatchResult {
  std::vector<Match> pairs;
  std::vector<std::size_t> unmatched_a;
  std::vector<std::size_t> unmatched_b;
};

// C_ij = fa_i . fb_j
template <typename T>
Matrix<T> confidence(const Matrix<T>& fa, const Matrix<T>& fb);

// Appends one row and one column filled with z.
template <typename T>
Matrix<T> add_dustbin(const Matrix<T>& c, T z);

// Returns (dL/dC, dL/dz) from dL/dC~.
template <typename T>
std::pair<Matrix<T>, T> add_dustbin_backward(const Matrix<T>& dc_tilde);

// P = logsoftmax over rows + logsoftmax over columns of c_tilde.
template <typename T>
MatchProbabilities<T> dual_softmax(const Matrix<T>& c_tilde);

template <typename T>
Matrix<T> dual_softmax_backward(const MatchProbabilities<T>& p,
                                const Matrix<T>& c_tilde,
                                const Matrix<T>& dlog_p);

// Log-domain marginals of the Sinkhorn problem.
struct SinkhornMarginals {
  std::vector<double> log_mu;  // n + 1
  std::vector<double> log_nu;  // m + 1

  // Unit mass per keypoint; each dustbin absorbs the other side's count.
  static SinkhornMarginals standard(std::size_t n, std::size_t m);
};

template <typename T>
struct SinkhornCache {
  // Scaling potentials after each half step; u[t], v[t] for t in [0, iters].
  std::vector<std::vector<double>> u, v;
};

// Alternating log-domain row/column normalization; returns C~ + u + v.
template <typename T>
MatchProbabilities<T> sinkhorn(const Matrix<T>& c_tilde, std::size_t iters,
                               const SinkhornMarginals* marginals = nullptr,
                               SinkhornCache<T>* cache = nullptr);

template <typename T>
Matrix<T> sinkhorn_backward(const Matrix<T>& c_tilde,
                            const SinkhornCache<T>& cache,
                            const Matrix<T>& dlog_p);

// Mutual argmax over the full matrix (dustbin included); a pair survives if
// neither side prefers the dustbin and exp(P_ij) >= threshold.
template <typename T>
MatchResult extract_matches(const MatchProbabilities<T>& p, double threshold);

}  // namespace clustergnn

#endif  // CLUSTERGNN_MATCHER_H_
