#include "clustergnn/ground_truth.h"

#include <Eigen/Dense>
#include <cmath>
#include <limits>

namespace clustergnn {

GroundTruth label_ground_truth(const SyntheticPair& pair, double eps_match,
                               double eps_nonmatch) {
  const Eigen::Matrix3d& h = pair.homography;
  if (!h.allFinite() || std::abs(h.determinant()) < 1e-12) {
    throw DegenerateTransformError("label_ground_truth: degenerate transform");
  }
  const std::size_t n = pair.a.size(), m = pair.b.size();
  constexpr double kFar = std::numeric_limits<double>::infinity();
  std::vector<Eigen::Vector2d> proj(n);
  std::vector<bool> visible(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d hp =
        h * Eigen::Vector3d(pair.a.coords(i, 0), pair.a.coords(i, 1), 1.0);
    if (hp(2) > 0.0) {
      proj[i] = hp.hnormalized();
      visible[i] = true;
    }
  }
  std::vector<double> best_a(n, kFar), best_b(m, kFar);
  std::vector<std::size_t> nn_a(n, m), nn_b(m, n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!visible[i]) continue;
    for (std::size_t j = 0; j < m; ++j) {
      const double d = (proj[i] - Eigen::Vector2d(pair.b.coords(j, 0),
                                                  pair.b.coords(j, 1)))
                           .norm();
      if (d < best_a[i]) {
        best_a[i] = d;
        nn_a[i] = j;
      }
      if (d < best_b[j]) {
        best_b[j] = d;
        nn_b[j] = i;
      }
    }
  }
  GroundTruth gt;
  for (std::size_t i = 0; i < n; ++i) {
    if (best_a[i] > eps_nonmatch) {
      gt.unmatched_a.push_back(i);
    } else if (best_a[i] < eps_match && nn_b[nn_a[i]] == i) {
      gt.matches.emplace_back(i, nn_a[i]);
    } else {
      gt.undecided.emplace_back(i, nn_a[i]);
    }
  }
  for (std::size_t j = 0; j < m; ++j) {
    if (best_b[j] > eps_nonmatch) gt.unmatched_b.push_back(j);
  }
  return gt;
}

}  // namespace clustergnn
