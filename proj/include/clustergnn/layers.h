#ifndef CLUSTERGNN_LAYERS_H_
#define CLUSTERGNN_LAYERS_H_

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "clustergnn/matrix.h"

namespace clustergnn {

// Initial scale of the last linear in residual branches, so a fresh stack
// starts close to the identity and match logits stay O(1).
inline constexpr double kResidualInitScale = 0.1;

template <typename T>
using ParamVisitor = std::function<void(const std::string&, Matrix<T>&)>;

// y = x W + b. The bias is optional (empty matrix).
template <typename T>
struct Linear {
  Matrix<T> weight;  // in x out
  Matrix<T> bias;    // 1 x out, or empty

  static Linear init(std::size_t in, std::size_t out, bool with_bias,
                     std::mt19937_64& rng);

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }

  Matrix<T> forward(const Matrix<T>& x) const;
  // Accumulates parameter gradients into grad and returns dL/dx.
  Matrix<T> backward(const Matrix<T>& x, const Matrix<T>& dy,
                     Linear& grad) const;

  void visit(const std::string& prefix, const ParamVisitor<T>& f);
};

// Per-channel normalization over the rows of the current input, with a
// learned affine map. Stands in for batch normalization so a single pair
// normalizes identically at train and test time.
template <typename T>
struct ChannelNorm {
  static constexpr double kEps = 1e-5;

  Matrix<T> scale;  // 1 x c
  Matrix<T> shift;  // 1 x c

  struct Cache {
    Matrix<T> normalized;
    std::vector<double> inv_std;
  };

  static ChannelNorm init(std::size_t channels);

  Matrix<T> forward(const Matrix<T>& x, Cache* cache) const;
  Matrix<T> backward(const Cache& cache, const Matrix<T>& dy,
                     ChannelNorm& grad) const;

  void visit(const std::string& prefix, const ParamVisitor<T>& f);
};

// Linear -> ChannelNorm -> ReLU repeated, then a final biased Linear.
// Hidden linears carry no bias (the normalization absorbs it).
template <typename T>
struct Mlp {
  std::vector<Linear<T>> linears;
  std::vector<ChannelNorm<T>> norms;  // linears.size() - 1

  struct Cache {
    std::vector<Matrix<T>> inputs;  // input of each linear
    std::vector<typename ChannelNorm<T>::Cache> norms;
  };

  // widths = {in, hidden..., out}
  static Mlp init(const std::vector<std::size_t>& widths,
                  std::mt19937_64& rng);

  std::size_t out_dim() const { return linears.back().out_dim(); }

  Matrix<T> forward(const Matrix<T>& x, Cache* cache) const;
  Matrix<T> backward(const Cache& cache, const Matrix<T>& dy, Mlp& grad) const;

  // Zeroes the last linear so the block outputs exactly zero.
  void zero_output();
  void scale_output(double s);

  void visit(const std::string& prefix, const ParamVisitor<T>& f);
};

}  // namespace clustergnn

#endif  // CLUSTERGNN_LAYERS_H_
