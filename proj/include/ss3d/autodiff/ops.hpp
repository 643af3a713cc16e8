#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ss3d/autodiff/tape.hpp"

namespace ss3d::ad {

/// Constant sparse matrix in CSR form, used as the left operand of sparse_matmul.
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_ptr;  // rows + 1 entries
  std::vector<std::size_t> col_index;
  std::vector<double> values;

  /// y = M x for x of shape (cols, k), row-major.
  std::vector<double> multiply(std::span<const double> x, std::size_t k) const;
};

// Elementwise binary ops broadcast numpy-style; their gradients are summed
// back over broadcast axes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var add(Var a, double b);
Var mul(Var a, double b);
Var neg(Var x);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator+(Var a, double b) { return add(a, b); }
inline Var operator+(double a, Var b) { return add(b, a); }
inline Var operator-(Var a, double b) { return add(a, -b); }
inline Var operator-(double a, Var b) { return add(neg(b), a); }
inline Var operator*(Var a, double b) { return mul(a, b); }
inline Var operator*(double a, Var b) { return mul(b, a); }
inline Var operator/(Var a, double b) { return mul(a, 1.0 / b); }
inline Var operator-(Var x) { return neg(x); }

Var pow(Var x, double exponent);
Var square(Var x);
Var exp(Var x);
Var log(Var x);
Var sqrt(Var x);
Var abs(Var x);
Var sin(Var x);
Var cos(Var x);
/// Input must lie strictly inside (-1, 1) for a finite gradient; clamp first.
Var acos(Var x);
Var sigmoid(Var x);
/// log(1 + e^x), computed stably.
Var softplus(Var x);

/// max(x, c); the gradient is 1 where x > c and 0 otherwise.
Var max_with(Var x, double c);
/// Gradient passes only strictly inside (lo, hi).
Var clamp(Var x, double lo, double hi);

/// (m x k) times (k x n).
Var matmul(Var a, Var b);
Var transpose(Var a);
Var sparse_matmul(const SparseMatrix& m, Var x);

Var sum(Var x);
Var mean(Var x);
Var sum_axis(Var x, std::size_t axis, bool keepdims = false);
Var mean_axis(Var x, std::size_t axis, bool keepdims = false);
/// Minimum along an axis. Ties route the whole gradient to the first minimum.
Var min_axis(Var x, std::size_t axis, bool keepdims = false);
/// Maximum along an axis. Ties route the whole gradient to the first maximum.
Var max_axis(Var x, std::size_t axis, bool keepdims = false);
Var softmax(Var x, std::size_t axis);

/// Rows (axis 0 slices) of x picked by index; repeated indices accumulate in backward.
Var gather(Var x, std::span<const std::size_t> indices);
/// out[indices[i]] += x[i] along axis 0 into an array with `rows` rows.
Var scatter_add(Var x, std::span<const std::size_t> indices, std::size_t rows);

Var reshape(Var x, Shape shape);
Var broadcast_to(Var x, Shape shape);
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);
Var concat(std::span<const Var> parts, std::size_t axis);
inline Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

/// Cross product along a last axis of length 3.
Var cross3(Var a, Var b);
/// Euclidean norm of each row of an (n x k) array; the gradient is 0 at a zero row.
Var row_norms(Var x);
/// Each row of (n x k) scaled to unit length; zero rows map to zero with zero gradient.
Var normalize_rows(Var x);

/// Samples an (H x W x C) image at continuous (x, y) positions given as a
/// (K x 2) array. Pixel (i, j) has its center at (j + 0.5, i + 0.5); positions
/// clamp to the edge pixels. Differentiable w.r.t. both image and positions.
Var bilinear_sample(Var image, Var positions);

}  // namespace ss3d::ad
