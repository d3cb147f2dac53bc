#include "clustergnn/kernels.h"

#include <cmath>
#include <limits>
#include <string>

namespace clustergnn {
namespace {

void require(bool cond, const char* what) {
  if (!cond) throw NumericError(what);
}

}  // namespace

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Matrix<T> c(n, m);
  std::vector<double> acc(m);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const T* ai = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      const T* bp = b.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) acc[j] += aip * bp[j];
    }
    T* ci = c.data() + i * m;
    for (std::size_t j = 0; j < m; ++j) ci[j] = static_cast<T>(acc[j]);
  }
  return c;
}

template <typename T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  Matrix<T> c(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    const T* ai = a.data() + i * k;
    T* ci = c.data() + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const T* bj = b.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        s += static_cast<double>(ai[p]) * static_cast<double>(bj[p]);
      }
      ci[j] = static_cast<T>(s);
    }
  }
  return c;
}

template <typename T>
Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b) {
  require(a.rows() == b.rows(), "matmul_tn: inner dimension mismatch");
  const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
  std::vector<double> acc(n * m, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const T* ap = a.data() + p * n;
    const T* bp = b.data() + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double api = ap[i];
      if (api == 0.0) continue;
      double* row = acc.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) row[j] += api * bp[j];
    }
  }
  Matrix<T> c(n, m);
  for (std::size_t i = 0; i < acc.size(); ++i) {
    c.data()[i] = static_cast<T>(acc[i]);
  }
  return c;
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& a) {
  Matrix<T> t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  }
  return t;
}

template <typename T>
void add_inplace(Matrix<T>& a, const Matrix<T>& b, T scale) {
  require(a.same_shape(b), "add_inplace: shape mismatch");
  T* pa = a.data();
  const T* pb = b.data();
  for (std::size_t i = 0; i < a.size(); ++i) pa[i] += scale * pb[i];
}

template <typename T>
void add_row_inplace(Matrix<T>& a, const Matrix<T>& row) {
  require(row.rows() == 1 && row.cols() == a.cols(),
          "add_row_inplace: bias shape mismatch");
  for (std::size_t i = 0; i < a.rows(); ++i) {
    T* ai = a.data() + i * a.cols();
    for (std::size_t j = 0; j < a.cols(); ++j) ai[j] += row.data()[j];
  }
}

template <typename T>
Matrix<T> column_sums(const Matrix<T>& a) {
  std::vector<double> acc(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const T* ai = a.data() + i * a.cols();
    for (std::size_t j = 0; j < a.cols(); ++j) acc[j] += ai[j];
  }
  Matrix<T> s(1, a.cols());
  for (std::size_t j = 0; j < a.cols(); ++j) s(0, j) = static_cast<T>(acc[j]);
  return s;
}

template <typename T>
Matrix<T> concat_cols(const Matrix<T>& a, const Matrix<T>& b) {
  require(a.rows() == b.rows(), "concat_cols: row count mismatch");
  Matrix<T> c(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::copy(a.row(i).begin(), a.row(i).end(), c.row(i).begin());
    std::copy(b.row(i).begin(), b.row(i).end(), c.row(i).begin() + a.cols());
  }
  return c;
}

template <typename T>
Matrix<T> concat_rows(const Matrix<T>& a, const Matrix<T>& b) {
  require(a.cols() == b.cols() || a.empty() || b.empty(),
          "concat_rows: column count mismatch");
  const std::size_t cols = a.empty() ? b.cols() : a.cols();
  Matrix<T> c(a.rows() + b.rows(), cols);
  std::copy(a.storage().begin(), a.storage().end(), c.storage().begin());
  std::copy(b.storage().begin(), b.storage().end(),
            c.storage().begin() + a.size());
  return c;
}

template <typename T>
Matrix<T> slice_cols(const Matrix<T>& a, std::size_t begin, std::size_t count) {
  require(begin + count <= a.cols(), "slice_cols: out of range");
  Matrix<T> s(a.rows(), count);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const T* src = a.data() + i * a.cols() + begin;
    std::copy(src, src + count, s.data() + i * count);
  }
  return s;
}

template <typename T>
Matrix<T> slice_rows(const Matrix<T>& a, std::size_t begin, std::size_t count) {
  require(begin + count <= a.rows(), "slice_rows: out of range");
  Matrix<T> s(count, a.cols());
  std::copy(a.data() + begin * a.cols(), a.data() + (begin + count) * a.cols(),
            s.data());
  return s;
}

template <typename T>
void set_cols(Matrix<T>& dst, std::size_t begin, const Matrix<T>& src) {
  require(dst.rows() == src.rows() && begin + src.cols() <= dst.cols(),
          "set_cols: out of range");
  for (std::size_t i = 0; i < src.rows(); ++i) {
    std::copy(src.row(i).begin(), src.row(i).end(),
              dst.row(i).begin() + begin);
  }
}

template <typename T>
Matrix<T> gather_rows(const Matrix<T>& a, std::span<const std::size_t> index) {
  Matrix<T> g(index.size(), a.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    require(index[r] < a.rows(), "gather_rows: index out of range");
    std::copy(a.row(index[r]).begin(), a.row(index[r]).end(),
              g.row(r).begin());
  }
  return g;
}

template <typename T>
void scatter_rows(Matrix<T>& dst, std::span<const std::size_t> index,
                  const Matrix<T>& src) {
  require(src.rows() == index.size() && src.cols() == dst.cols(),
          "scatter_rows: shape mismatch");
  for (std::size_t r = 0; r < index.size(); ++r) {
    require(index[r] < dst.rows(), "scatter_rows: index out of range");
    std::copy(src.row(r).begin(), src.row(r).end(),
              dst.row(index[r]).begin());
  }
}

template <typename T>
void relu_inplace(Matrix<T>& a) {
  for (auto& v : a.storage()) v = v > T(0) ? v : T(0);
}

template <typename T>
void softmax_rows_inplace(Matrix<T>& m, const Mask* mask) {
  if (mask != nullptr) {
    require(mask->rows() == m.rows() && mask->cols() == m.cols(),
            "softmax_rows: mask shape mismatch");
  }
  const std::size_t cols = m.cols();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    T* row = m.data() + i * cols;
    const std::uint8_t* keep =
        mask == nullptr ? nullptr : mask->data() + i * cols;
    bool any = keep == nullptr && cols > 0;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j) {
      if (keep != nullptr) {
        if (keep[j] == 0) {
          row[j] = static_cast<T>(kMaskSentinel);
        } else {
          any = true;
        }
      }
      mx = std::max(mx, static_cast<double>(row[j]));
    }
    if (!any) {
      throw NumericError("softmax_rows: row " + std::to_string(i) +
                         " is fully masked");
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double e = std::exp(static_cast<double>(row[j]) - mx);
      row[j] = static_cast<T>(e);
      denom += e;
    }
    const double inv = 1.0 / denom;
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] = static_cast<T>(static_cast<double>(row[j]) * inv);
    }
  }
}

template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& m, const Mask* mask) {
  Matrix<T> out = m;
  softmax_rows_inplace(out, mask);
  return out;
}

template <typename T>
Matrix<T> log_softmax(const Matrix<T>& m, Axis axis) {
  if (m.empty()) throw NumericError("log_softmax: empty matrix");
  Matrix<T> out(m.rows(), m.cols());
  const bool by_row = axis == Axis::kRow;
  const std::size_t slices = by_row ? m.rows() : m.cols();
  const std::size_t len = by_row ? m.cols() : m.rows();
  for (std::size_t s = 0; s < slices; ++s) {
    auto at = [&](std::size_t t) -> double {
      return by_row ? m(s, t) : m(t, s);
    };
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < len; ++t) mx = std::max(mx, at(t));
    double denom = 0.0;
    for (std::size_t t = 0; t < len; ++t) denom += std::exp(at(t) - mx);
    const double lse = mx + std::log(denom);
    for (std::size_t t = 0; t < len; ++t) {
      const T v = static_cast<T>(at(t) - lse);
      if (by_row) {
        out(s, t) = v;
      } else {
        out(t, s) = v;
      }
    }
  }
  return out;
}

template <typename T>
bool all_finite(const Matrix<T>& m) {
  for (const T v : m.storage()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
double max_abs_diff(const Matrix<T>& a, const Matrix<T>& b) {
  require(a.same_shape(b), "max_abs_diff: shape mismatch");
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d = std::max(d, std::abs(static_cast<double>(a.data()[i]) -
                             static_cast<double>(b.data()[i])));
  }
  return d;
}

#define CLUSTERGNN_INSTANTIATE(T)                                             \
  template Matrix<T> matmul(const Matrix<T>&, const Matrix<T>&);              \
  template Matrix<T> matmul_nt(const Matrix<T>&, const Matrix<T>&);           \
  template Matrix<T> matmul_tn(const Matrix<T>&, const Matrix<T>&);           \
  template Matrix<T> transpose(const Matrix<T>&);                             \
  template void add_inplace(Matrix<T>&, const Matrix<T>&, T);                 \
  template void add_row_inplace(Matrix<T>&, const Matrix<T>&);                \
  template Matrix<T> column_sums(const Matrix<T>&);                           \
  template Matrix<T> concat_cols(const Matrix<T>&, const Matrix<T>&);         \
  template Matrix<T> concat_rows(const Matrix<T>&, const Matrix<T>&);         \
  template Matrix<T> slice_cols(const Matrix<T>&, std::size_t, std::size_t);  \
  template Matrix<T> slice_rows(const Matrix<T>&, std::size_t, std::size_t);  \
  template void set_cols(Matrix<T>&, std::size_t, const Matrix<T>&);          \
  template Matrix<T> gather_rows(const Matrix<T>&,                            \
                                 std::span<const std::size_t>);               \
  template void scatter_rows(Matrix<T>&, std::span<const std::size_t>,        \
                             const Matrix<T>&);                               \
  template void relu_inplace(Matrix<T>&);                                     \
  template Matrix<T> softmax_rows(const Matrix<T>&, const Mask*);             \
  template void softmax_rows_inplace(Matrix<T>&, const Mask*);                \
  template Matrix<T> log_softmax(const Matrix<T>&, Axis);                     \
  template bool all_finite(const Matrix<T>&);                                 \
  template double max_abs_diff(const Matrix<T>&, const Matrix<T>&);

CLUSTERGNN_INSTANTIATE(float)
CLUSTERGNN_INSTANTIATE(double)
#undef CLUSTERGNN_INSTANTIATE

}  // namespace clustergnn
