#ifndef CLUSTERGNN_KERNELS_H_
#define CLUSTERGNN_KERNELS_H_

#include <cstddef>
#include <span>
#include <vector>

#include "clustergnn/matrix.h"

namespace clustergnn {

// Logit substituted for masked entries before a stabilized softmax.
inline constexpr double kMaskSentinel = -1e9;

enum class Axis { kRow, kCol };

// C = A * B
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b);
// C = A * B^T
template <typename T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b);
// C = A^T * B
template <typename T>
Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b);

template <typename T>
Matrix<T> transpose(const Matrix<T>& a);

// a += scale * b
template <typename T>
void add_inplace(Matrix<T>& a, const Matrix<T>& b, T scale = T(1));
// Adds the 1 x cols row vector to every row of a.
template <typename T>
void add_row_inplace(Matrix<T>& a, const Matrix<T>& row);
template <typename T>
Matrix<T> column_sums(const Matrix<T>& a);

template <typename T>
Matrix<T> concat_cols(const Matrix<T>& a, const Matrix<T>& b);
template <typename T>
Matrix<T> concat_rows(const Matrix<T>& a, const Matrix<T>& b);
template <typename T>
Matrix<T> slice_cols(const Matrix<T>& a, std::size_t begin, std::size_t count);
template <typename T>
Matrix<T> slice_rows(const Matrix<T>& a, std::size_t begin, std::size_t count);
// Writes src into columns [begin, begin + src.cols()) of dst.
template <typename T>
void set_cols(Matrix<T>& dst, std::size_t begin, const Matrix<T>& src);
template <typename T>
Matrix<T> gather_rows(const Matrix<T>& a, std::span<const std::size_t> index);
// dst.row(index[r]) = src.row(r)
template <typename T>
void scatter_rows(Matrix<T>& dst, std::span<const std::size_t> index,
                  const Matrix<T>& src);

template <typename T>
void relu_inplace(Matrix<T>& a);

// Stabilized row softmax. Masked entries (mask == 0) take the sentinel logit
// and come out exactly zero. Throws if a row is fully masked.
template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& m, const Mask* mask = nullptr);
template <typename T>
void softmax_rows_inplace(Matrix<T>& m, const Mask* mask = nullptr);

// Log-softmax over each row (Axis::kRow) or each column (Axis::kCol).
template <typename T>
Matrix<T> log_softmax(const Matrix<T>& m, Axis axis);

template <typename T>
bool all_finite(const Matrix<T>& m);

template <typename T>
double max_abs_diff(const Matrix<T>& a, const Matrix<T>& b);

}  // namespace clustergnn

#endif  // CLUSTERGNN_KERNELS_H_
