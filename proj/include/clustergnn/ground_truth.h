#ifndef CLUSTERGNN_GROUND_TRUTH_H_
#define CLUSTERGNN_GROUND_TRUTH_H_

#include <cstddef>
#include <utility>
#include <vector>

#include "clustergnn/synthetic.h"

namespace clustergnn {

using IndexPair = std::pair<std::size_t, std::size_t>;

struct GroundTruth {
  std::vector<IndexPair> matches;
  std::vector<std::size_t> unmatched_a;
  std::vector<std::size_t> unmatched_b;
  // Nearest-neighbour pairs in the dead zone between the two thresholds,
  // or non-mutual pairs under the match threshold. Excluded from the loss.
  std::vector<IndexPair> undecided;
};

// Labels keypoints by reprojection distance in image b: a mutual nearest
// pair closer than eps_match is a match; a keypoint whose nearest
// reprojected partner is farther than eps_nonmatch is unmatched.
GroundTruth label_ground_truth(const SyntheticPair& pair,
                               double eps_match = 3.0,
                               double eps_nonmatch = 5.0);

}  // namespace clustergnn

#endif  // CLUSTERGNN_GROUND_TRUTH_H_
