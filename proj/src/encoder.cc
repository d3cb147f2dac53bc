#include "clustergnn/encoder.h"

#include <cmath>
#include <stdexcept>
#include <string>

#include "clustergnn/config.h"
#include "clustergnn/kernels.h"

namespace clustergnn {

void KeypointSet::validate() const {
  const std::size_t n = coords.rows();
  if (n == 0) throw std::invalid_argument("keypoint set is empty");
  if (coords.cols() != 2) throw std::invalid_argument("coords must be n x 2");
  if (scores.size() != n || descriptors.rows() != n) {
    throw std::invalid_argument("keypoint arrays disagree on count");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const float x = coords(i, 0), y = coords(i, 1);
    if (!std::isfinite(x) || !std::isfinite(y)) {
      throw std::invalid_argument("keypoint " + std::to_string(i) +
                                  " has non-finite coordinates");
    }
  }
}

KeypointSet KeypointSet::permuted(std::span<const std::size_t> order) const {
  KeypointSet out;
  out.coords = gather_rows(coords, order);
  out.descriptors = gather_rows(descriptors, order);
  out.scores.reserve(order.size());
  for (const std::size_t i : order) out.scores.push_back(scores.at(i));
  out.image_size = image_size;
  return out;
}

template <typename T>
EncoderWeights<T> EncoderWeights<T>::init(std::size_t dim,
                                          std::size_t hidden_layers,
                                          std::mt19937_64& rng) {
  std::vector<std::size_t> widths{3};
  for (std::size_t l = 0; l < hidden_layers; ++l) widths.push_back(dim);
  widths.push_back(dim);
  EncoderWeights w;
  w.mlp = Mlp<T>::init(widths, rng);
  w.mlp.scale_output(kResidualInitScale);
  return w;
}

template <typename T>
Matrix<T> encoder_input(const KeypointSet& kp, ImageSize image_size) {
  const double hw = 0.5 * image_size.width, hh = 0.5 * image_size.height;
  Matrix<T> in(kp.size(), 3);
  for (std::size_t i = 0; i < kp.size(); ++i) {
    in(i, 0) = static_cast<T>((kp.coords(i, 0) - hw) / hw);
    in(i, 1) = static_cast<T>((kp.coords(i, 1) - hh) / hh);
    in(i, 2) = static_cast<T>(kp.scores[i]);
  }
  return in;
}

template <typename T>
Matrix<T> encode_keypoints(const KeypointSet& kp, ImageSize image_size,
                           const EncoderWeights<T>& w,
                           typename Mlp<T>::Cache* cache) {
  if (kp.dim() != w.mlp.out_dim()) {
    throw ConfigError("descriptor dim " + std::to_string(kp.dim()) +
                      " does not match model dim " +
                      std::to_string(w.mlp.out_dim()));
  }
  if (image_size.width == 0 || image_size.height == 0) {
    throw std::invalid_argument("image size must be positive");
  }
  for (std::size_t i = 0; i < kp.size(); ++i) {
    const float x = kp.coords(i, 0), y = kp.coords(i, 1);
    if (!(x >= 0.0f && x < static_cast<float>(image_size.width) &&
          y >= 0.0f && y < static_cast<float>(image_size.height))) {
      throw std::invalid_argument("keypoint " + std::to_string(i) +
                                  " lies outside the image");
    }
  }
  Matrix<T> out = w.mlp.forward(encoder_input<T>(kp, image_size), cache);
  add_inplace(out, kp.descriptors.cast<T>());
  return out;
}

template <typename T>
void encode_keypoints_backward(const typename Mlp<T>::Cache& cache,
                               const Matrix<T>& dy, const EncoderWeights<T>& w,
                               EncoderWeights<T>& grad) {
  w.mlp.backward(cache, dy, grad.mlp);
}

template <typename T>
std::pair<Matrix<T>, Matrix<T>> init_graphs(
    const Matrix<T>& fa, const Matrix<T>& fb,
    std::span<const InitLayerWeights<T>> layers, std::size_t query_chunks,
    InitGraphsCache<T>* cache) {
  Matrix<T> a = fa, b = fb;
  if (cache != nullptr) cache->layers.assign(layers.size(), {});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto* lc = cache != nullptr ? &cache->layers[l] : nullptr;
    const auto& w = layers[l];
    Matrix<T> sa = gnn_layer(a, a, w.self, lc ? &lc->self_a : nullptr,
                             query_chunks);
    Matrix<T> sb = gnn_layer(b, b, w.self, lc ? &lc->self_b : nullptr,
                             query_chunks);
    Matrix<T> ca = gnn_layer(sa, sb, w.cross, lc ? &lc->cross_a : nullptr,
                             query_chunks);
    Matrix<T> cb = gnn_layer(sb, sa, w.cross, lc ? &lc->cross_b : nullptr,
                             query_chunks);
    if (lc != nullptr) {
      lc->in_a = std::move(a);
      lc->in_b = std::move(b);
      lc->mid_a = std::move(sa);
      lc->mid_b = std::move(sb);
    }
    a = std::move(ca);
    b = std::move(cb);
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
std::pair<Matrix<T>, Matrix<T>> init_graphs_backward(
    const InitGraphsCache<T>& cache,
    std::span<const InitLayerWeights<T>> layers, const Matrix<T>& da,
    const Matrix<T>& db, std::span<InitLayerWeights<T>> grads) {
  Matrix<T> ga = da, gb = db;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& lc = cache.layers[l];
    const auto& w = layers[l];
    Matrix<T> dsa(lc.mid_a.rows(), lc.mid_a.cols());
    Matrix<T> dsb(lc.mid_b.rows(), lc.mid_b.cols());
    gnn_layer_backward(lc.mid_a, lc.mid_b, w.cross, lc.cross_a, ga,
                       grads[l].cross, dsa, dsb);
    gnn_layer_backward(lc.mid_b, lc.mid_a, w.cross, lc.cross_b, gb,
                       grads[l].cross, dsb, dsa);
    Matrix<T> dina(lc.in_a.rows(), lc.in_a.cols());
    Matrix<T> dinb(lc.in_b.rows(), lc.in_b.cols());
    gnn_layer_backward(lc.in_a, lc.in_a, w.self, lc.self_a, dsa,
                       grads[l].self, dina, dina);
    gnn_layer_backward(lc.in_b, lc.in_b, w.self, lc.self_b, dsb,
                       grads[l].self, dinb, dinb);
    ga = std::move(dina);
    gb = std::move(dinb);
  }
  return {std::move(ga), std::move(gb)};
}

#define CLUSTERGNN_INSTANTIATE(T)                                              \
  template struct EncoderWeights<T>;                                           \
  template Matrix<T> encoder_input(const KeypointSet&, ImageSize);             \
  template Matrix<T> encode_keypoints(const KeypointSet&, ImageSize,           \
                                      const EncoderWeights<T>&,                \
                                      typename Mlp<T>::Cache*);                \
  template void encode_keypoints_backward(const typename Mlp<T>::Cache&,       \
                                          const Matrix<T>&,                    \
                                          const EncoderWeights<T>&,            \
                                          EncoderWeights<T>&);                 \
  template std::pair<Matrix<T>, Matrix<T>> init_graphs(                        \
      const Matrix<T>&, const Matrix<T>&, std::span<const InitLayerWeights<T>>, \
      std::size_t, InitGraphsCache<T>*);                                       \
  template std::pair<Matrix<T>, Matrix<T>> init_graphs_backward(               \
      const InitGraphsCache<T>&, std::span<const InitLayerWeights<T>>,         \
      const Matrix<T>&, const Matrix<T>&, std::span<InitLayerWeights<T>>);

CLUSTERGNN_INSTANTIATE(float)
CLUSTERGNN_INSTANTIATE(double)
#undef CLUSTERGNN_INSTANTIATE

}  // namespace clustergnn
