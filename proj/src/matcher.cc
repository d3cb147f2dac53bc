#include "clustergnn/matcher.h"

#include <cmath>
#include <limits>
#include <string>

#include "clustergnn/kernels.h"

namespace clustergnn {
namespace {

// Log-sum-exp of row i of (c + col_offset).
template <typename T>
double row_lse(const Matrix<T>& c, std::size_t i,
               const std::vector<double>& col_offset) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < c.cols(); ++j) {
    mx = std::max(mx, c(i, j) + col_offset[j]);
  }
  double s = 0.0;
  for (std::size_t j = 0; j < c.cols(); ++j) {
    s += std::exp(c(i, j) + col_offset[j] - mx);
  }
  return mx + std::log(s);
}

template <typename T>
double col_lse(const Matrix<T>& c, std::size_t j,
               const std::vector<double>& row_offset) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < c.rows(); ++i) {
    mx = std::max(mx, c(i, j) + row_offset[i]);
  }
  double s = 0.0;
  for (std::size_t i = 0; i < c.rows(); ++i) {
    s += std::exp(c(i, j) + row_offset[i] - mx);
  }
  return mx + std::log(s);
}

bool finite_all(const std::vector<double>& v) {
  for (const double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace

template <typename T>
Matrix<T> confidence(const Matrix<T>& fa, const Matrix<T>& fb) {
  return matmul_nt(fa, fb);
}

template <typename T>
Matrix<T> add_dustbin(const Matrix<T>& c, T z) {
  Matrix<T> out(c.rows() + 1, c.cols() + 1, z);
  for (std::size_t i = 0; i < c.rows(); ++i) {
    std::copy(c.row(i).begin(), c.row(i).end(), out.row(i).begin());
  }
  return out;
}

template <typename T>
std::pair<Matrix<T>, T> add_dustbin_backward(const Matrix<T>& dc_tilde) {
  const std::size_t n = dc_tilde.rows() - 1, m = dc_tilde.cols() - 1;
  Matrix<T> dc = slice_cols(slice_rows(dc_tilde, 0, n), 0, m);
  double dz = 0.0;
  for (std::size_t i = 0; i <= n; ++i) dz += dc_tilde(i, m);
  for (std::size_t j = 0; j < m; ++j) dz += dc_tilde(n, j);
  return {std::move(dc), static_cast<T>(dz)};
}

template <typename T>
MatchProbabilities<T> dual_softmax(const Matrix<T>& c_tilde) {
  MatchProbabilities<T> p;
  p.log_p = log_softmax(c_tilde, Axis::kRow);
  add_inplace(p.log_p, log_softmax(c_tilde, Axis::kCol));
  p.n = c_tilde.rows() - 1;
  p.m = c_tilde.cols() - 1;
  return p;
}

template <typename T>
Matrix<T> dual_softmax_backward(const MatchProbabilities<T>& p,
                                const Matrix<T>& c_tilde,
                                const Matrix<T>& dlog_p) {
  (void)p;
  const Matrix<T> row_lp = log_softmax(c_tilde, Axis::kRow);
  const Matrix<T> col_lp = log_softmax(c_tilde, Axis::kCol);
  const std::size_t rows = c_tilde.rows(), cols = c_tilde.cols();
  std::vector<double> row_sum(rows, 0.0), col_sum(cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      row_sum[i] += dlog_p(i, j);
      col_sum[j] += dlog_p(i, j);
    }
  }
  Matrix<T> dc(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      dc(i, j) = static_cast<T>(2.0 * dlog_p(i, j) -
                                std::exp(static_cast<double>(row_lp(i, j))) *
                                    row_sum[i] -
                                std::exp(static_cast<double>(col_lp(i, j))) *
                                    col_sum[j]);
    }
  }
  return dc;
}

SinkhornMarginals SinkhornMarginals::standard(std::size_t n, std::size_t m) {
  SinkhornMarginals mg;
  mg.log_mu.assign(n + 1, 0.0);
  mg.log_nu.assign(m + 1, 0.0);
  mg.log_mu[n] = std::log(static_cast<double>(std::max<std::size_t>(m, 1)));
  mg.log_nu[m] = std::log(static_cast<double>(std::max<std::size_t>(n, 1)));
  return mg;
}

template <typename T>
MatchProbabilities<T> sinkhorn(const Matrix<T>& c_tilde, std::size_t iters,
                               const SinkhornMarginals* marginals,
                               SinkhornCache<T>* cache) {
  if (iters == 0) throw NumericError("sinkhorn: iters must be >= 1");
  const std::size_t rows = c_tilde.rows(), cols = c_tilde.cols();
  const SinkhornMarginals mg = marginals != nullptr
                                   ? *marginals
                                   : SinkhornMarginals::standard(rows - 1,
                                                                 cols - 1);
  if (mg.log_mu.size() != rows || mg.log_nu.size() != cols) {
    throw NumericError("sinkhorn: marginal sizes do not match the matrix");
  }
  std::vector<double> u(rows, 0.0), v(cols, 0.0);
  if (cache != nullptr) {
    cache->u.assign(1, u);
    cache->v.assign(1, v);
  }
  for (std::size_t t = 1; t <= iters; ++t) {
    for (std::size_t i = 0; i < rows; ++i) {
      u[i] = mg.log_mu[i] - row_lse(c_tilde, i, v);
    }
    for (std::size_t j = 0; j < cols; ++j) {
      v[j] = mg.log_nu[j] - col_lse(c_tilde, j, u);
    }
    if (!finite_all(u) || !finite_all(v)) {
      throw NumericError("sinkhorn: non-finite potential at iteration " +
                         std::to_string(t));
    }
    if (cache != nullptr) {
      cache->u.push_back(u);
      cache->v.push_back(v);
    }
  }
  MatchProbabilities<T> p;
  p.log_p = Matrix<T>(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      p.log_p(i, j) = static_cast<T>(c_tilde(i, j) + u[i] + v[j]);
    }
  }
  p.n = rows - 1;
  p.m = cols - 1;
  return p;
}

template <typename T>
Matrix<T> sinkhorn_backward(const Matrix<T>& c_tilde,
                            const SinkhornCache<T>& cache,
                            const Matrix<T>& dlog_p) {
  const std::size_t rows = c_tilde.rows(), cols = c_tilde.cols();
  const std::size_t iters = cache.u.size() - 1;
  Matrix<double> dc(rows, cols);
  std::vector<double> du(rows, 0.0), dv(cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      dc(i, j) = dlog_p(i, j);
      du[i] += dlog_p(i, j);
      dv[j] += dlog_p(i, j);
    }
  }
  for (std::size_t t = iters; t >= 1; --t) {
    const auto& u_t = cache.u[t];
    const auto& v_prev = cache.v[t - 1];
    // v_t = log_nu - LSE_i(C + u_t)
    for (std::size_t j = 0; j < cols; ++j) {
      const double lse = col_lse(c_tilde, j, u_t);
      for (std::size_t i = 0; i < rows; ++i) {
        const double s = std::exp(c_tilde(i, j) + u_t[i] - lse);
        dc(i, j) -= dv[j] * s;
        du[i] -= dv[j] * s;
      }
    }
    // u_t = log_mu - LSE_j(C + v_{t-1})
    std::fill(dv.begin(), dv.end(), 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
      const double lse = row_lse(c_tilde, i, v_prev);
      for (std::size_t j = 0; j < cols; ++j) {
        const double s = std::exp(c_tilde(i, j) + v_prev[j] - lse);
        dc(i, j) -= du[i] * s;
        dv[j] -= du[i] * s;
      }
    }
    std::fill(du.begin(), du.end(), 0.0);
  }
  return dc.cast<T>();
}

template <typename T>
MatchResult extract_matches(const MatchProbabilities<T>& p, double threshold) {
  const Matrix<T>& lp = p.log_p;
  const std::size_t n = p.n, m = p.m;
  std::vector<std::size_t> row_best(n, 0), col_best(m, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      if (lp(i, j) > lp(i, row_best[i])) row_best[i] = j;
    }
  }
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 1; i <= n; ++i) {
      if (lp(i, j) > lp(col_best[j], j)) col_best[j] = i;
    }
  }
  MatchResult result;
  std::vector<bool> b_matched(m, false);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = row_best[i];
    const double score = j < m ? std::exp(static_cast<double>(lp(i, j))) : 0.0;
    if (j < m && col_best[j] == i && score >= threshold) {
      result.pairs.push_back({i, j, score});
      b_matched[j] = true;
    } else {
      result.unmatched_a.push_back(i);
    }
  }
  for (std::size_t j = 0; j < m; ++j) {
    if (!b_matched[j]) result.unmatched_b.push_back(j);
  }
  return result;
}

#define CLUSTERGNN_INSTANTIATE(T)                                              \
  template Matrix<T> confidence(const Matrix<T>&, const Matrix<T>&);           \
  template Matrix<T> add_dustbin(const Matrix<T>&, T);                         \
  template std::pair<Matrix<T>, T> add_dustbin_backward(const Matrix<T>&);     \
  template MatchProbabilities<T> dual_softmax(const Matrix<T>&);               \
  template Matrix<T> dual_softmax_backward(const MatchProbabilities<T>&,       \
                                           const Matrix<T>&,                   \
                                           const Matrix<T>&);                  \
  template MatchProbabilities<T> sinkhorn(const Matrix<T>&, std::size_t,       \
                                          const SinkhornMarginals*,            \
                                          SinkhornCache<T>*);                  \
  template Matrix<T> sinkhorn_backward(const Matrix<T>&,                       \
                                       const SinkhornCache<T>&,                \
                                       const Matrix<T>&);                      \
  template MatchResult extract_matches(const MatchProbabilities<T>&, double);

CLUSTERGNN_INSTANTIATE(float)
CLUSTERGNN_INSTANTIATE(double)
#undef CLUSTERGNN_INSTANTIATE

}  // namespace clustergnn
