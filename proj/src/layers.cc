#include "clustergnn/layers.h"

#include <cmath>

#include "clustergnn/kernels.h"

namespace clustergnn {

template <typename T>
Linear<T> Linear<T>::init(std::size_t in, std::size_t out, bool with_bias,
                          std::mt19937_64& rng) {
  Linear l;
  l.weight = Matrix<T>(in, out);
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : l.weight.storage()) v = static_cast<T>(dist(rng));
  if (with_bias) l.bias = Matrix<T>(1, out);
  return l;
}

template <typename T>
Matrix<T> Linear<T>::forward(const Matrix<T>& x) const {
  Matrix<T> y = matmul(x, weight);
  if (!bias.empty()) add_row_inplace(y, bias);
  return y;
}

template <typename T>
Matrix<T> Linear<T>::backward(const Matrix<T>& x, const Matrix<T>& dy,
                              Linear& grad) const {
  add_inplace(grad.weight, matmul_tn(x, dy));
  if (!bias.empty()) add_inplace(grad.bias, column_sums(dy));
  return matmul_nt(dy, weight);
}

template <typename T>
void Linear<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  f(prefix + ".weight", weight);
  if (!bias.empty()) f(prefix + ".bias", bias);
}

template <typename T>
ChannelNorm<T> ChannelNorm<T>::init(std::size_t channels) {
  ChannelNorm n;
  n.scale = Matrix<T>(1, channels, T(1));
  n.shift = Matrix<T>(1, channels, T(0));
  return n;
}

template <typename T>
Matrix<T> ChannelNorm<T>::forward(const Matrix<T>& x, Cache* cache) const {
  const std::size_t n = x.rows(), c = x.cols();
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) mean[j] += x(i, j);
  }
  for (auto& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double d = x(i, j) - mean[j];
      var[j] += d * d;
    }
  }
  std::vector<double> inv_std(c);
  for (std::size_t j = 0; j < c; ++j) {
    inv_std[j] = 1.0 / std::sqrt(var[j] / static_cast<double>(n) + kEps);
  }
  Matrix<T> normalized(n, c), y(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double xh = (x(i, j) - mean[j]) * inv_std[j];
      normalized(i, j) = static_cast<T>(xh);
      y(i, j) = static_cast<T>(scale(0, j) * xh + shift(0, j));
    }
  }
  if (cache != nullptr) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename T>
Matrix<T> ChannelNorm<T>::backward(const Cache& cache, const Matrix<T>& dy,
                                   ChannelNorm& grad) const {
  const Matrix<T>& xh = cache.normalized;
  const std::size_t n = xh.rows(), c = xh.cols();
  std::vector<double> sum_d(c, 0.0), sum_dx(c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      grad.scale(0, j) += dy(i, j) * xh(i, j);
      grad.shift(0, j) += dy(i, j);
      const double dxh = static_cast<double>(dy(i, j)) * scale(0, j);
      sum_d[j] += dxh;
      sum_dx[j] += dxh * xh(i, j);
    }
  }
  Matrix<T> dx(n, c);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double dxh = static_cast<double>(dy(i, j)) * scale(0, j);
      dx(i, j) = static_cast<T>(cache.inv_std[j] *
                                (dxh - inv_n * sum_d[j] -
                                 xh(i, j) * inv_n * sum_dx[j]));
    }
  }
  return dx;
}

template <typename T>
void ChannelNorm<T>::visit(const std::string& prefix,
                           const ParamVisitor<T>& f) {
  f(prefix + ".scale", scale);
  f(prefix + ".shift", shift);
}

template <typename T>
Mlp<T> Mlp<T>::init(const std::vector<std::size_t>& widths,
                    std::mt19937_64& rng) {
  Mlp m;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const bool last = l + 2 == widths.size();
    m.linears.push_back(Linear<T>::init(widths[l], widths[l + 1], last, rng));
    if (!last) m.norms.push_back(ChannelNorm<T>::init(widths[l + 1]));
  }
  return m;
}

template <typename T>
Matrix<T> Mlp<T>::forward(const Matrix<T>& x, Cache* cache) const {
  if (cache != nullptr) {
    cache->inputs.clear();
    cache->norms.assign(norms.size(), {});
  }
  Matrix<T> h = x;
  for (std::size_t l = 0; l < linears.size(); ++l) {
    Matrix<T> y = linears[l].forward(h);
    if (cache != nullptr) cache->inputs.push_back(std::move(h));
    if (l < norms.size()) {
      y = norms[l].forward(y, cache != nullptr ? &cache->norms[l] : nullptr);
      relu_inplace(y);
    }
    h = std::move(y);
  }
  return h;
}

template <typename T>
Matrix<T> Mlp<T>::backward(const Cache& cache, const Matrix<T>& dy,
                           Mlp& grad) const {
  Matrix<T> d = dy;
  for (std::size_t l = linears.size(); l-- > 0;) {
    if (l < norms.size()) {
      // ReLU mask from the next linear's input, which is the ReLU output.
      const Matrix<T>& act = cache.inputs[l + 1];
      for (std::size_t i = 0; i < d.size(); ++i) {
        if (!(act.data()[i] > T(0))) d.data()[i] = T(0);
      }
      d = norms[l].backward(cache.norms[l], d, grad.norms[l]);
    }
    d = linears[l].backward(cache.inputs[l], d, grad.linears[l]);
  }
  return d;
}

template <typename T>
void Mlp<T>::zero_output() {
  linears.back().weight.set_zero();
  linears.back().bias.set_zero();
}

template <typename T>
void Mlp<T>::scale_output(double s) {
  for (auto& v : linears.back().weight.storage()) v = static_cast<T>(v * s);
  for (auto& v : linears.back().bias.storage()) v = static_cast<T>(v * s);
}

template <typename T>
void Mlp<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  for (std::size_t l = 0; l < linears.size(); ++l) {
    linears[l].visit(prefix + ".linear" + std::to_string(l), f);
    if (l < norms.size()) norms[l].visit(prefix + ".norm" + std::to_string(l), f);
  }
}

template struct Linear<float>;
template struct Linear<double>;
template struct ChannelNorm<float>;
template struct ChannelNorm<double>;
template struct Mlp<float>;
template struct Mlp<double>;

}  // namespace clustergnn
