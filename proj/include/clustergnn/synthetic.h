#ifndef CLUSTERGNN_SYNTHETIC_H_
#define CLUSTERGNN_SYNTHETIC_H_

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "clustergnn/encoder.h"
#include "clustergnn/matrix.h"

namespace clustergnn {

class DegenerateTransformError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shared "world" embedding: a point's descriptor in either image is a noisy
// view of normalize(E z) for its latent identity z.
struct DescriptorModel {
  std::size_t dim = 32;
  double noise = 0.5;  // norm of the per-observation perturbation
  MatrixD embedding;   // dim x dim

  static DescriptorModel make(std::uint64_t seed, std::size_t dim,
                              double noise);
};

struct PairOptions {
  std::size_t n_keypoints = 64;
  double noise_px = 1.0;
  double outlier_frac = 0.2;
  ImageSize image{640, 480};
  double max_rotation_deg = 25.0;
  double min_scale = 0.8;
  double max_scale = 1.25;
  double max_perspective = 2e-4;  // per pixel, about the image center
  double max_shift_px = 40.0;
  // Minimum spacing between keypoints of one image.
  double min_spacing_px = 8.0;
};

struct SyntheticPair {
  KeypointSet a;
  KeypointSet b;
  Eigen::Matrix3d homography;  // maps image a pixels to image b pixels
  double noise_px = 0.0;
  double outlier_frac = 0.0;
  // Correspondences as constructed (index in a, index in b).
  std::vector<std::pair<std::size_t, std::size_t>> inliers;
};

Eigen::Vector2d apply_homography(const Eigen::Matrix3d& h,
                                 const Eigen::Vector2d& p);

// Deterministic in `seed`. Throws DegenerateTransformError after 10
// rejected homography draws.
SyntheticPair generate_pair(std::uint64_t seed, const PairOptions& options,
                            const DescriptorModel& descriptors);

}  // namespace clustergnn

#endif  // CLUSTERGNN_SYNTHETIC_H_
