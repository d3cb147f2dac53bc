#ifndef CLUSTERGNN_ENCODER_H_
#define CLUSTERGNN_ENCODER_H_

#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "clustergnn/attention.h"
#include "clustergnn/layers.h"
#include "clustergnn/matrix.h"

namespace clustergnn {

struct ImageSize {
  std::uint32_t width = 0;
  std::uint32_t height = 0;

  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

// Detected keypoints of one image: n x 2 pixel coordinates, n scores in
// [0, 1], n x d descriptors.
struct KeypointSet {
  MatrixF coords;
  std::vector<float> scores;
  MatrixF descriptors;
  ImageSize image_size;

  std::size_t size() const { return coords.rows(); }
  std::size_t dim() const { return descriptors.cols(); }

  // Throws std::invalid_argument when the invariants do not hold.
  void validate() const;

  KeypointSet permuted(std::span<const std::size_t> order) const;

  friend bool operator==(const KeypointSet&, const KeypointSet&) = default;
};

template <typename T>
struct EncoderWeights {
  // [3, d x hidden_layers, d]
  Mlp<T> mlp;

  static EncoderWeights init(std::size_t dim, std::size_t hidden_layers,
                             std::mt19937_64& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    mlp.visit(prefix + ".mlp", f);
  }
};

// Rows of [x, y, score] with coordinates mapped to [-1, 1] about the image
// center.
template <typename T>
Matrix<T> encoder_input(const KeypointSet& kp, ImageSize image_size);

// descriptors + MLP(normalized coords ++ score)
template <typename T>
Matrix<T> encode_keypoints(const KeypointSet& kp, ImageSize image_size,
                           const EncoderWeights<T>& w,
                           typename Mlp<T>::Cache* cache = nullptr);

template <typename T>
void encode_keypoints_backward(const typename Mlp<T>::Cache& cache,
                               const Matrix<T>& dy, const EncoderWeights<T>& w,
                               EncoderWeights<T>& grad);

// One SA/CA round: self attention in each image, then cross attention
// between them. Both images share the weights.
template <typename T>
struct InitLayerWeights {
  AttentionWeights<T> self;
  AttentionWeights<T> cross;

  static InitLayerWeights init(std::size_t dim, std::size_t heads,
                               std::mt19937_64& rng) {
    InitLayerWeights l;
    l.self = AttentionWeights<T>::init(dim, heads, rng);
    l.cross = AttentionWeights<T>::init(dim, heads, rng);
    return l;
  }
  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    self.visit(prefix + ".self", f);
    cross.visit(prefix + ".cross", f);
  }
};

template <typename T>
struct InitGraphsCache {
  struct Layer {
    Matrix<T> in_a, in_b;    // layer inputs
    Matrix<T> mid_a, mid_b;  // after self attention
    GnnLayerCache<T> self_a, self_b, cross_a, cross_b;
  };
  std::vector<Layer> layers;
};

template <typename T>
std::pair<Matrix<T>, Matrix<T>> init_graphs(
    const Matrix<T>& fa, const Matrix<T>& fb,
    std::span<const InitLayerWeights<T>> layers, std::size_t query_chunks = 1,
    InitGraphsCache<T>* cache = nullptr);

// Returns (dL/dfa, dL/dfb).
template <typename T>
std::pair<Matrix<T>, Matrix<T>> init_graphs_backward(
    const InitGraphsCache<T>& cache,
    std::span<const InitLayerWeights<T>> layers, const Matrix<T>& da,
    const Matrix<T>& db, std::span<InitLayerWeights<T>> grads);

}  // namespace clustergnn

#endif  // CLUSTERGNN_ENCODER_H_
