#include "clustergnn/losses.h"

#include <cmath>
#include <stdexcept>

namespace clustergnn {

template <typename T>
double matching_loss(const MatchProbabilities<T>& p, const GroundTruth& gt,
                     Matrix<T>* grad) {
  if (gt.matches.empty() && gt.unmatched_a.empty() && gt.unmatched_b.empty()) {
    throw std::invalid_argument("matching_loss: no supervised entries");
  }
  const std::size_t n = p.n, m = p.m;
  if (grad != nullptr) *grad = Matrix<T>(n + 1, m + 1);
  double loss = 0.0;
  auto term = [&](const auto& items, auto&& entry) {
    if (items.empty()) return;
    const double w = 1.0 / static_cast<double>(items.size());
    double s = 0.0;
    for (const auto& it : items) {
      const auto [i, j] = entry(it);
      if (i > n || j > m) throw std::out_of_range("matching_loss: index");
      s -= p.log_p(i, j);
      if (grad != nullptr) (*grad)(i, j) -= static_cast<T>(w);
    }
    loss += s * w;
  };
  term(gt.matches, [](const IndexPair& ij) { return ij; });
  term(gt.unmatched_a, [m](std::size_t i) { return IndexPair{i, m}; });
  term(gt.unmatched_b, [n](std::size_t j) { return IndexPair{n, j}; });
  return loss;
}

template <typename T>
double cluster_loss(const ClusterState<T>& state, const Matrix<T>& features,
                    const Assignment& asg, Matrix<T>* grad) {
  if (asg.cid.size() != features.rows()) {
    throw std::invalid_argument("cluster_loss: assignment size mismatch");
  }
  const std::size_t n = features.rows(), d = features.cols();
  if (grad != nullptr) *grad = Matrix<T>(n, d);
  if (n == 0) return 0.0;
  double total = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = state.centers.row(asg.cid[i]);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = static_cast<double>(features(i, j)) - c[j];
      s += diff * diff;
    }
    const double dist = std::sqrt(s);
    total += dist;
    if (grad != nullptr && dist > 0.0) {
      for (std::size_t j = 0; j < d; ++j) {
        (*grad)(i, j) = static_cast<T>(
            (static_cast<double>(features(i, j)) - c[j]) / dist * inv_n);
      }
    }
  }
  return total * inv_n;
}

double total_loss(double lm, std::span<const double> lc_per_stage,
                  double gamma) {
  if (gamma < 0.0) throw std::invalid_argument("gamma must be >= 0");
  double sum = 0.0;
  for (const double lc : lc_per_stage) sum += lc;
  return lm + gamma * sum;
}

template double matching_loss(const MatchProbabilities<float>&,
                              const GroundTruth&, Matrix<float>*);
template double matching_loss(const MatchProbabilities<double>&,
                              const GroundTruth&, Matrix<double>*);
template double cluster_loss(const ClusterState<float>&, const Matrix<float>&,
                             const Assignment&, Matrix<float>*);
template double cluster_loss(const ClusterState<double>&,
                             const Matrix<double>&, const Assignment&,
                             Matrix<double>*);

}  // namespace clustergnn
