#ifndef CLUSTERGNN_LOSSES_H_
#define CLUSTERGNN_LOSSES_H_

#include <span>

#include "clustergnn/cluster.h"
#include "clustergnn/ground_truth.h"
#include "clustergnn/matcher.h"
#include "clustergnn/matrix.h"

namespace clustergnn {

// Mean negative log-score over the matches, plus the mean over each
// dustbin set (rows of unmatched_a against the dustbin column, columns of
// unmatched_b against the dustbin row). Empty sets contribute nothing.
// Throws if there is no supervision at all. When `grad` is given it
// receives dL/dP.
template <typename T>
double matching_loss(const MatchProbabilities<T>& p, const GroundTruth& gt,
                     Matrix<T>* grad = nullptr);

// Mean Euclidean distance between each feature and its assigned center.
// When `grad` is given it receives dL/dfeatures (centers get no gradient).
template <typename T>
double cluster_loss(const ClusterState<T>& state, const Matrix<T>& features,
                    const Assignment& asg, Matrix<T>* grad = nullptr);

// lm + gamma * sum(lc)
double total_loss(double lm, std::span<const double> lc_per_stage,
                  double gamma = 0.1);

}  // namespace clustergnn

#endif  // CLUSTERGNN_LOSSES_H_
