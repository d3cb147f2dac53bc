#ifndef CLUSTERGNN_ATTENTION_H_
#define CLUSTERGNN_ATTENTION_H_

#include <random>
#include <string>
#include <vector>

#include "clustergnn/layers.h"
#include "clustergnn/matrix.h"

namespace clustergnn {

// Multi-head attention block followed by the residual MLP update
//   f' = f + MLP(f ++ Att(f, src)).
template <typename T>
struct AttentionWeights {
  std::size_t heads = 1;
  Linear<T> query, key, value;  // d x d, split into per-head column blocks
  Linear<T> merge;              // concatenated heads -> d
  Mlp<T> mlp;                   // [2d, 2d, d]

  static AttentionWeights init(std::size_t dim, std::size_t heads,
                               std::mt19937_64& rng);

  std::size_t dim() const { return query.in_dim(); }
  std::size_t head_dim() const { return dim() / heads; }

  void visit(const std::string& prefix, const ParamVisitor<T>& f);
};

template <typename T>
struct Projections {
  Matrix<T> q, k, v;
};

// Queries from tgt, keys and values from src.
template <typename T>
Projections<T> project(const Matrix<T>& tgt, const Matrix<T>& src,
                       const AttentionWeights<T>& w);

// Columns of head h.
template <typename T>
Matrix<T> head_slice(const Matrix<T>& m, std::size_t head,
                     std::size_t head_dim);

// Scaled dot-product attention for one head: softmax(q k^T / sqrt(dk)) v.
// With a mask, masked logits take the sentinel before the softmax. When
// `probs` is given it receives the attention weights.
template <typename T>
Matrix<T> attend_head(const Matrix<T>& q, const Matrix<T>& k,
                      const Matrix<T>& v, const Mask* mask = nullptr,
                      Matrix<T>* probs = nullptr);

template <typename T>
struct HeadGrads {
  Matrix<T> dq, dk, dv;
};

template <typename T>
HeadGrads<T> attend_head_backward(const Matrix<T>& q, const Matrix<T>& k,
                                  const Matrix<T>& v, const Matrix<T>& probs,
                                  const Matrix<T>& dout);

template <typename T>
struct AttentionCache {
  Projections<T> proj;
  std::vector<Matrix<T>> probs;  // per head, n_tgt x n_src
  Matrix<T> heads_out;           // concatenated head outputs, pre-merge
};

// Merged multi-head attention messages, n_tgt x d. Target rows are
// processed in `query_chunks` blocks, which bounds the score buffer and
// leaves results unchanged.
template <typename T>
Matrix<T> attention(const Matrix<T>& tgt, const Matrix<T>& src,
                    const AttentionWeights<T>& w,
                    AttentionCache<T>* cache = nullptr,
                    std::size_t query_chunks = 1);

// Backward of the merge projection + per-head attention given the
// projection-space head gradients; shared by dense and clustered paths.
// Accumulates into dtgt / dsrc.
template <typename T>
void projections_backward(const Matrix<T>& tgt, const Matrix<T>& src,
                          const AttentionWeights<T>& w, const Matrix<T>& dq,
                          const Matrix<T>& dk, const Matrix<T>& dv,
                          AttentionWeights<T>& grad, Matrix<T>& dtgt,
                          Matrix<T>& dsrc);

template <typename T>
void attention_backward(const Matrix<T>& tgt, const Matrix<T>& src,
                        const AttentionWeights<T>& w,
                        const AttentionCache<T>& cache, const Matrix<T>& dmsg,
                        AttentionWeights<T>& grad, Matrix<T>& dtgt,
                        Matrix<T>& dsrc);

template <typename T>
struct UpdateCache {
  Matrix<T> concat;
  typename Mlp<T>::Cache mlp;
};

// x + MLP(x ++ msg)
template <typename T>
Matrix<T> residual_update(const Matrix<T>& x, const Matrix<T>& msg,
                          const Mlp<T>& mlp, UpdateCache<T>* cache);

// Returns dL/dx (residual path included); writes dL/dmsg.
template <typename T>
Matrix<T> residual_update_backward(const UpdateCache<T>& cache,
                                   const Matrix<T>& dy, const Mlp<T>& mlp,
                                   Mlp<T>& grad, Matrix<T>& dmsg);

template <typename T>
struct GnnLayerCache {
  AttentionCache<T> att;
  UpdateCache<T> update;
};

// Cross layer tgt <- src. Self attention is gnn_layer(f, f, w).
template <typename T>
Matrix<T> gnn_layer(const Matrix<T>& tgt, const Matrix<T>& src,
                    const AttentionWeights<T>& w,
                    GnnLayerCache<T>* cache = nullptr,
                    std::size_t query_chunks = 1);

template <typename T>
void gnn_layer_backward(const Matrix<T>& tgt, const Matrix<T>& src,
                        const AttentionWeights<T>& w,
                        const GnnLayerCache<T>& cache, const Matrix<T>& dy,
                        AttentionWeights<T>& grad, Matrix<T>& dtgt,
                        Matrix<T>& dsrc);

}  // namespace clustergnn

#endif  // CLUSTERGNN_ATTENTION_H_
