#include "clustergnn/attention.h"

#include <algorithm>
#include <cmath>

#include "clustergnn/kernels.h"
#include "clustergnn/memory_stats.h"
#include "clustergnn/parallel.h"

namespace clustergnn {

template <typename T>
AttentionWeights<T> AttentionWeights<T>::init(std::size_t dim,
                                              std::size_t heads,
                                              std::mt19937_64& rng) {
  AttentionWeights w;
  w.heads = heads;
  w.query = Linear<T>::init(dim, dim, true, rng);
  // A key bias only shifts each score row (softmax cancels it); value and
  // merge biases shift message columns that the update MLP's channel norm
  // removes. Both would be dead parameters.
  w.key = Linear<T>::init(dim, dim, false, rng);
  w.value = Linear<T>::init(dim, dim, false, rng);
  w.merge = Linear<T>::init(dim, dim, false, rng);
  w.mlp = Mlp<T>::init({2 * dim, 2 * dim, dim}, rng);
  w.mlp.scale_output(kResidualInitScale);
  return w;
}

template <typename T>
void AttentionWeights<T>::visit(const std::string& prefix,
                                const ParamVisitor<T>& f) {
  query.visit(prefix + ".query", f);
  key.visit(prefix + ".key", f);
  value.visit(prefix + ".value", f);
  merge.visit(prefix + ".merge", f);
  mlp.visit(prefix + ".mlp", f);
}

template <typename T>
Projections<T> project(const Matrix<T>& tgt, const Matrix<T>& src,
                       const AttentionWeights<T>& w) {
  if (tgt.cols() != w.dim() || src.cols() != w.dim()) {
    throw NumericError("attention: feature dim mismatch");
  }
  return {w.query.forward(tgt), w.key.forward(src), w.value.forward(src)};
}

template <typename T>
Matrix<T> head_slice(const Matrix<T>& m, std::size_t head,
                     std::size_t head_dim) {
  return slice_cols(m, head * head_dim, head_dim);
}

template <typename T>
Matrix<T> attend_head(const Matrix<T>& q, const Matrix<T>& k,
                      const Matrix<T>& v, const Mask* mask, Matrix<T>* probs) {
  if (k.rows() == 0) throw NumericError("attention: no source rows");
  Matrix<T> scores = matmul_nt(q, k);
  memory::Charge charge(memory::bytes_of(scores));
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(q.cols())));
  for (auto& s : scores.storage()) s *= scale;
  softmax_rows_inplace(scores, mask);
  Matrix<T> out = matmul(scores, v);
  if (probs != nullptr) *probs = std::move(scores);
  return out;
}

template <typename T>
HeadGrads<T> attend_head_backward(const Matrix<T>& q, const Matrix<T>& k,
                                  const Matrix<T>& v, const Matrix<T>& probs,
                                  const Matrix<T>& dout) {
  Matrix<T> dp = matmul_nt(dout, v);
  HeadGrads<T> g;
  g.dv = matmul_tn(probs, dout);
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  for (std::size_t i = 0; i < dp.rows(); ++i) {
    double r = 0.0;
    for (std::size_t j = 0; j < dp.cols(); ++j) {
      r += static_cast<double>(dp(i, j)) * probs(i, j);
    }
    for (std::size_t j = 0; j < dp.cols(); ++j) {
      dp(i, j) = static_cast<T>(probs(i, j) * (dp(i, j) - r) * scale);
    }
  }
  g.dq = matmul(dp, k);
  g.dk = matmul_tn(dp, q);
  return g;
}

template <typename T>
Matrix<T> attention(const Matrix<T>& tgt, const Matrix<T>& src,
                    const AttentionWeights<T>& w, AttentionCache<T>* cache,
                    std::size_t query_chunks) {
  if (src.rows() == 0) throw NumericError("attention: no source rows");
  Projections<T> proj = project(tgt, src, w);
  memory::Charge proj_charge(memory::bytes_of(proj.q) +
                             memory::bytes_of(proj.k) +
                             memory::bytes_of(proj.v));
  const std::size_t n = tgt.rows(), dh = w.head_dim();
  const std::size_t chunks = std::max<std::size_t>(1, std::min(query_chunks, n));
  const std::size_t chunk_rows = n == 0 ? 0 : (n + chunks - 1) / chunks;
  Matrix<T> heads_out(n, w.dim());
  memory::Charge out_charge(memory::bytes_of(heads_out));
  if (cache != nullptr) cache->probs.assign(w.heads, Matrix<T>());

  parallel_for(w.heads, [&](std::size_t h) {
    const Matrix<T> qh = head_slice(proj.q, h, dh);
    const Matrix<T> kh = head_slice(proj.k, h, dh);
    const Matrix<T> vh = head_slice(proj.v, h, dh);
    memory::Charge slice_charge(3 * memory::bytes_of(kh));
    if (cache != nullptr) cache->probs[h] = Matrix<T>(n, src.rows());
    for (std::size_t begin = 0; begin < n; begin += chunk_rows) {
      const std::size_t rows = std::min(chunk_rows, n - begin);
      Matrix<T> p;
      Matrix<T> out =
          chunks == 1 ? attend_head(qh, kh, vh, nullptr,
                                    cache != nullptr ? &p : nullptr)
                      : attend_head(slice_rows(qh, begin, rows), kh, vh,
                                    nullptr, cache != nullptr ? &p : nullptr);
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy(out.row(r).begin(), out.row(r).end(),
                  heads_out.row(begin + r).begin() + h * dh);
        if (cache != nullptr) {
          std::copy(p.row(r).begin(), p.row(r).end(),
                    cache->probs[h].row(begin + r).begin());
        }
      }
    }
  });

  Matrix<T> msg = w.merge.forward(heads_out);
  if (cache != nullptr) {
    cache->proj = std::move(proj);
    cache->heads_out = std::move(heads_out);
  }
  return msg;
}

template <typename T>
void projections_backward(const Matrix<T>& tgt, const Matrix<T>& src,
                          const AttentionWeights<T>& w, const Matrix<T>& dq,
                          const Matrix<T>& dk, const Matrix<T>& dv,
                          AttentionWeights<T>& grad, Matrix<T>& dtgt,
                          Matrix<T>& dsrc) {
  add_inplace(dtgt, w.query.backward(tgt, dq, grad.query));
  add_inplace(dsrc, w.key.backward(src, dk, grad.key));
  add_inplace(dsrc, w.value.backward(src, dv, grad.value));
}

template <typename T>
void attention_backward(const Matrix<T>& tgt, const Matrix<T>& src,
                        const AttentionWeights<T>& w,
                        const AttentionCache<T>& cache, const Matrix<T>& dmsg,
                        AttentionWeights<T>& grad, Matrix<T>& dtgt,
                        Matrix<T>& dsrc) {
  const Matrix<T> dheads = w.merge.backward(cache.heads_out, dmsg, grad.merge);
  const std::size_t dh = w.head_dim();
  Matrix<T> dq(tgt.rows(), w.dim()), dk(src.rows(), w.dim()),
      dv(src.rows(), w.dim());
  for (std::size_t h = 0; h < w.heads; ++h) {
    const HeadGrads<T> g = attend_head_backward(
        head_slice(cache.proj.q, h, dh), head_slice(cache.proj.k, h, dh),
        head_slice(cache.proj.v, h, dh), cache.probs[h],
        head_slice(dheads, h, dh));
    set_cols(dq, h * dh, g.dq);
    set_cols(dk, h * dh, g.dk);
    set_cols(dv, h * dh, g.dv);
  }
  projections_backward(tgt, src, w, dq, dk, dv, grad, dtgt, dsrc);
}

template <typename T>
Matrix<T> residual_update(const Matrix<T>& x, const Matrix<T>& msg,
                          const Mlp<T>& mlp, UpdateCache<T>* cache) {
  Matrix<T> concat = concat_cols(x, msg);
  Matrix<T> y = mlp.forward(concat, cache != nullptr ? &cache->mlp : nullptr);
  add_inplace(y, x);
  if (cache != nullptr) cache->concat = std::move(concat);
  return y;
}

template <typename T>
Matrix<T> residual_update_backward(const UpdateCache<T>& cache,
                                   const Matrix<T>& dy, const Mlp<T>& mlp,
                                   Mlp<T>& grad, Matrix<T>& dmsg) {
  const Matrix<T> dconcat = mlp.backward(cache.mlp, dy, grad);
  const std::size_t d = dy.cols();
  Matrix<T> dx = slice_cols(dconcat, 0, d);
  add_inplace(dx, dy);
  dmsg = slice_cols(dconcat, d, dconcat.cols() - d);
  return dx;
}

template <typename T>
Matrix<T> gnn_layer(const Matrix<T>& tgt, const Matrix<T>& src,
                    const AttentionWeights<T>& w, GnnLayerCache<T>* cache,
                    std::size_t query_chunks) {
  const Matrix<T> msg = attention(tgt, src, w,
                                  cache != nullptr ? &cache->att : nullptr,
                                  query_chunks);
  return residual_update(tgt, msg, w.mlp,
                         cache != nullptr ? &cache->update : nullptr);
}

template <typename T>
void gnn_layer_backward(const Matrix<T>& tgt, const Matrix<T>& src,
                        const AttentionWeights<T>& w,
                        const GnnLayerCache<T>& cache, const Matrix<T>& dy,
                        AttentionWeights<T>& grad, Matrix<T>& dtgt,
                        Matrix<T>& dsrc) {
  Matrix<T> dmsg;
  add_inplace(dtgt,
              residual_update_backward(cache.update, dy, w.mlp, grad.mlp, dmsg));
  attention_backward(tgt, src, w, cache.att, dmsg, grad, dtgt, dsrc);
}

#define CLUSTERGNN_INSTANTIATE(T)                                              \
  template struct AttentionWeights<T>;                                         \
  template Projections<T> project(const Matrix<T>&, const Matrix<T>&,          \
                                  const AttentionWeights<T>&);                 \
  template Matrix<T> head_slice(const Matrix<T>&, std::size_t, std::size_t);   \
  template Matrix<T> attend_head(const Matrix<T>&, const Matrix<T>&,           \
                                 const Matrix<T>&, const Mask*, Matrix<T>*);   \
  template HeadGrads<T> attend_head_backward(                                  \
      const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, const Matrix<T>&,  \
      const Matrix<T>&);                                                       \
  template Matrix<T> attention(const Matrix<T>&, const Matrix<T>&,             \
                               const AttentionWeights<T>&, AttentionCache<T>*, \
                               std::size_t);                                   \
  template void projections_backward(                                          \
      const Matrix<T>&, const Matrix<T>&, const AttentionWeights<T>&,          \
      const Matrix<T>&, const Matrix<T>&, const Matrix<T>&,                    \
      AttentionWeights<T>&, Matrix<T>&, Matrix<T>&);                           \
  template void attention_backward(                                            \
      const Matrix<T>&, const Matrix<T>&, const AttentionWeights<T>&,          \
      const AttentionCache<T>&, const Matrix<T>&, AttentionWeights<T>&,        \
      Matrix<T>&, Matrix<T>&);                                                 \
  template Matrix<T> residual_update(const Matrix<T>&, const Matrix<T>&,       \
                                     const Mlp<T>&, UpdateCache<T>*);          \
  template Matrix<T> residual_update_backward(const UpdateCache<T>&,           \
                                              const Matrix<T>&, const Mlp<T>&, \
                                              Mlp<T>&, Matrix<T>&);            \
  template Matrix<T> gnn_layer(const Matrix<T>&, const Matrix<T>&,             \
                               const AttentionWeights<T>&, GnnLayerCache<T>*,  \
                               std::size_t);                                   \
  template void gnn_layer_backward(                                            \
      const Matrix<T>&, const Matrix<T>&, const AttentionWeights<T>&,          \
      const GnnLayerCache<T>&, const Matrix<T>&, AttentionWeights<T>&,         \
      Matrix<T>&, Matrix<T>&);

CLUSTERGNN_INSTANTIATE(float)
CLUSTERGNN_INSTANTIATE(double)
#undef CLUSTERGNN_INSTANTIATE

}  // namespace clustergnn
