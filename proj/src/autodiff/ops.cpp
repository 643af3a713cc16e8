#include "ss3d/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ss3d/common/error.hpp"

namespace ss3d::ad {
namespace {

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    require(da == db || da == 1 || db == 1, "E_SHAPE",
            "cannot broadcast " + shape_string(a) + " with " + shape_string(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// For every element of `out`, the flat index of the broadcast source element in `in`.
std::vector<std::size_t> broadcast_map(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  std::vector<std::size_t> in_stride(rank, 0);
  std::size_t stride = 1;
  for (std::size_t i = rank; i-- > 0;) {
    const std::size_t offset = rank - in.size();
    if (i >= offset) {
      const std::size_t d = in[i - offset];
      in_stride[i] = d == 1 ? 0 : stride;
      stride *= d;
    }
  }
  const std::size_t n = element_count(out);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t src = 0;
  for (std::size_t k = 0; k < n; ++k) {
    map[k] = src;
    for (std::size_t i = rank; i-- > 0;) {
      ++counter[i];
      src += in_stride[i];
      if (counter[i] < out[i]) {
        break;
      }
      src -= in_stride[i] * counter[i];
      counter[i] = 0;
    }
  }
  return map;
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  require(axis < shape.size(), "E_SHAPE", "axis " + std::to_string(axis) + " out of range for " + shape_string(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape reduced_shape(const Shape& shape, std::size_t axis, bool keepdims) {
  Shape out = shape;
  if (keepdims) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return out;
}

template <class F, class DA, class DB>
Var binary_op(Var a, Var b, F f, DA da, DB db) {
  require(a.valid() && b.valid() && a.tape() == b.tape(), "E_TAPE", "binary op inputs must share a tape");
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t n = element_count(out_shape);
  std::vector<std::size_t> ia;
  std::vector<std::size_t> ib;
  if (a.shape() != out_shape) ia = broadcast_map(a.shape(), out_shape);
  if (b.shape() != out_shape) ib = broadcast_map(b.shape(), out_shape);

  const Array& av = a.value();
  const Array& bv = b.value();
  Array out(out_shape);
  for (std::size_t k = 0; k < n; ++k) {
    out[k] = f(av[ia.empty() ? k : ia[k]], bv[ib.empty() ? k : ib[k]]);
  }
  return a.tape()->record(std::move(out), {a, b},
                          [a, b, ia = std::move(ia), ib = std::move(ib), da, db](const Array& y, const Array& g,
                                                                                 ParentGrads pg) {
                            const Array& av = a.value();
                            const Array& bv = b.value();
                            for (std::size_t k = 0; k < g.size(); ++k) {
                              const std::size_t ka = ia.empty() ? k : ia[k];
                              const std::size_t kb = ib.empty() ? k : ib[k];
                              if (pg[0]) (*pg[0])[ka] += g[k] * da(av[ka], bv[kb], y[k]);
                              if (pg[1]) (*pg[1])[kb] += g[k] * db(av[ka], bv[kb], y[k]);
                            }
                          });
}

template <class F, class DF>
Var unary_op(Var x, F f, DF df) {
  const Array& xv = x.value();
  Array out(xv.shape());
  for (std::size_t k = 0; k < xv.size(); ++k) {
    out[k] = f(xv[k]);
  }
  return x.tape()->record(std::move(out), {x}, [x, df](const Array& y, const Array& g, ParentGrads pg) {
    const Array& xv = x.value();
    Array& gx = *pg[0];
    for (std::size_t k = 0; k < g.size(); ++k) {
      gx[k] += g[k] * df(xv[k], y[k]);
    }
  });
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::vector<double> SparseMatrix::multiply(std::span<const double> x, std::size_t k) const {
  std::vector<double> y(rows * k, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t e = row_ptr[r]; e < row_ptr[r + 1]; ++e) {
      const double w = values[e];
      const std::size_t c = col_index[e];
      for (std::size_t j = 0; j < k; ++j) {
        y[r * k + j] += w * x[c * k + j];
      }
    }
  }
  return y;
}

Var add(Var a, Var b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Var div(Var a, Var b) {
  return binary_op(
      a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

Var add(Var a, double b) {
  return unary_op(a, [b](double x) { return x + b; }, [](double, double) { return 1.0; });
}

Var mul(Var a, double b) {
  return unary_op(a, [b](double x) { return x * b; }, [b](double, double) { return b; });
}

Var neg(Var x) { return mul(x, -1.0); }

Var pow(Var x, double exponent) {
  return unary_op(
      x, [exponent](double v) { return std::pow(v, exponent); },
      [exponent](double v, double) { return exponent * std::pow(v, exponent - 1.0); });
}

Var square(Var x) {
  return unary_op(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var exp(Var x) {
  return unary_op(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
  return unary_op(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var sqrt(Var x) {
  return unary_op(x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Var abs(Var x) {
  return unary_op(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var sin(Var x) {
  return unary_op(x, [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

Var cos(Var x) {
  return unary_op(x, [](double v) { return std::cos(v); }, [](double v, double) { return -std::sin(v); });
}

Var acos(Var x) {
  return unary_op(
      x, [](double v) { return std::acos(v); }, [](double v, double) { return -1.0 / std::sqrt(1.0 - v * v); });
}

Var sigmoid(Var x) {
  return unary_op(x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var x) {
  return unary_op(
      x, [](double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](double v, double) { return stable_sigmoid(v); });
}

Var max_with(Var x, double c) {
  return unary_op(
      x, [c](double v) { return v > c ? v : c; }, [c](double v, double) { return v > c ? 1.0 : 0.0; });
}

Var clamp(Var x, double lo, double hi) {
  return unary_op(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Var matmul(Var a, Var b) {
  require(a.shape().size() == 2 && b.shape().size() == 2 && a.shape()[1] == b.shape()[0], "E_SHAPE",
          "matmul shapes " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  const std::size_t m = a.shape()[0];
  const std::size_t k = a.shape()[1];
  const std::size_t n = b.shape()[1];
  const Array& av = a.value();
  const Array& bv = b.value();
  Array out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        out[i * n + j] += aip * bv[p * n + j];
      }
    }
  }
  return a.tape()->record(std::move(out), {a, b}, [a, b, m, k, n](const Array&, const Array& g, ParentGrads pg) {
    const Array& av = a.value();
    const Array& bv = b.value();
    if (pg[0]) {
      Array& ga = *pg[0];
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] += s;
        }
    }
    if (pg[1]) {
      Array& gb = *pg[1];
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

Var transpose(Var a) {
  require(a.shape().size() == 2, "E_SHAPE", "transpose needs a rank-2 input");
  const std::size_t m = a.shape()[0];
  const std::size_t n = a.shape()[1];
  const Array& av = a.value();
  Array out(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return a.tape()->record(std::move(out), {a}, [m, n](const Array&, const Array& g, ParentGrads pg) {
    Array& ga = *pg[0];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

Var sparse_matmul(const SparseMatrix& m, Var x) {
  require(!x.shape().empty() && x.shape()[0] == m.cols, "E_SHAPE", "sparse_matmul operand shape mismatch");
  const std::size_t k = x.size() / m.cols;
  Shape out_shape = x.shape();
  out_shape[0] = m.rows;
  Array out(out_shape, m.multiply(x.value().data(), k));
  return x.tape()->record(std::move(out), {x}, [m, k](const Array&, const Array& g, ParentGrads pg) {
    Array& gx = *pg[0];
    for (std::size_t r = 0; r < m.rows; ++r)
      for (std::size_t e = m.row_ptr[r]; e < m.row_ptr[r + 1]; ++e) {
        const double w = m.values[e];
        const std::size_t c = m.col_index[e];
        for (std::size_t j = 0; j < k; ++j) gx[c * k + j] += w * g[r * k + j];
      }
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape()->record(Array::scalar(s), {x}, [](const Array&, const Array& g, ParentGrads pg) {
    for (double& v : pg[0]->data()) v += g[0];
  });
}

Var mean(Var x) { return mul(sum(x), 1.0 / static_cast<double>(x.size())); }

Var sum_axis(Var x, std::size_t axis, bool keepdims) {
  const AxisSplit s = split_axis(x.shape(), axis);
  const Array& xv = x.value();
  Array out(reduced_shape(x.shape(), axis, keepdims));
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += xv[(o * s.len + l) * s.inner + i];
  return x.tape()->record(std::move(out), {x}, [s](const Array&, const Array& g, ParentGrads pg) {
    Array& gx = *pg[0];
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t l = 0; l < s.len; ++l)
        for (std::size_t i = 0; i < s.inner; ++i) gx[(o * s.len + l) * s.inner + i] += g[o * s.inner + i];
  });
}

Var mean_axis(Var x, std::size_t axis, bool keepdims) {
  const double len = static_cast<double>(split_axis(x.shape(), axis).len);
  return mul(sum_axis(x, axis, keepdims), 1.0 / len);
}

namespace {

Var extremum_axis(Var x, std::size_t axis, bool keepdims, bool take_min) {
  const AxisSplit s = split_axis(x.shape(), axis);
  require(s.len > 0, "E_SHAPE", "reduction over an empty axis");
  const Array& xv = x.value();
  Array out(reduced_shape(x.shape(), axis, keepdims));
  std::vector<std::size_t> pick(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = (o * s.len) * s.inner + i;
      for (std::size_t l = 1; l < s.len; ++l) {
        const std::size_t idx = (o * s.len + l) * s.inner + i;
        if (take_min ? xv[idx] < xv[best] : xv[idx] > xv[best]) best = idx;
      }
      pick[o * s.inner + i] = best;
      out[o * s.inner + i] = xv[best];
    }
  return x.tape()->record(std::move(out), {x}, [pick = std::move(pick)](const Array&, const Array& g, ParentGrads pg) {
    Array& gx = *pg[0];
    for (std::size_t k = 0; k < pick.size(); ++k) gx[pick[k]] += g[k];
  });
}

}  // namespace

Var min_axis(Var x, std::size_t axis, bool keepdims) { return extremum_axis(x, axis, keepdims, true); }
Var max_axis(Var x, std::size_t axis, bool keepdims) { return extremum_axis(x, axis, keepdims, false); }

Var softmax(Var x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  const Array& xv = x.value();
  Array out(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < s.len; ++l) top = std::max(top, xv[(o * s.len + l) * s.inner + i]);
      double z = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) {
        const std::size_t idx = (o * s.len + l) * s.inner + i;
        out[idx] = std::exp(xv[idx] - top);
        z += out[idx];
      }
      for (std::size_t l = 0; l < s.len; ++l) out[(o * s.len + l) * s.inner + i] /= z;
    }
  return x.tape()->record(std::move(out), {x}, [s](const Array& y, const Array& g, ParentGrads pg) {
    Array& gx = *pg[0];
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        double dot = 0.0;
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t idx = (o * s.len + l) * s.inner + i;
          dot += g[idx] * y[idx];
        }
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t idx = (o * s.len + l) * s.inner + i;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
  });
}

Var gather(Var x, std::span<const std::size_t> indices) {
  require(!x.shape().empty(), "E_SHAPE", "gather needs rank >= 1");
  const std::size_t rows = x.shape()[0];
  const std::size_t width = rows ? x.size() / rows : 0;
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Shape out_shape = x.shape();
  out_shape[0] = idx.size();
  const Array& xv = x.value();
  Array out(out_shape);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    require(idx[r] < rows, "E_INDEX", "gather index out of range");
    std::copy_n(xv.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * width), width,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * width));
  }
  return x.tape()->record(std::move(out), {x}, [idx = std::move(idx), width](const Array&, const Array& g, ParentGrads pg) {
    Array& gx = *pg[0];
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < width; ++j) gx[idx[r] * width + j] += g[r * width + j];
  });
}

Var scatter_add(Var x, std::span<const std::size_t> indices, std::size_t rows) {
  require(!x.shape().empty() && x.shape()[0] == indices.size(), "E_SHAPE", "scatter_add index count mismatch");
  const std::size_t width = indices.empty() ? 0 : x.size() / indices.size();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Shape out_shape = x.shape();
  out_shape[0] = rows;
  const Array& xv = x.value();
  Array out(out_shape);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    require(idx[r] < rows, "E_INDEX", "scatter_add index out of range");
    for (std::size_t j = 0; j < width; ++j) out[idx[r] * width + j] += xv[r * width + j];
  }
  return x.tape()->record(std::move(out), {x}, [idx = std::move(idx), width](const Array&, const Array& g, ParentGrads pg) {
    Array& gx = *pg[0];
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < width; ++j) gx[r * width + j] += g[idx[r] * width + j];
  });
}

Var reshape(Var x, Shape shape) {
  Array out = x.value().reshaped(std::move(shape));
  return x.tape()->record(std::move(out), {x}, [](const Array&, const Array& g, ParentGrads pg) {
    Array& gx = *pg[0];
    for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k];
  });
}

Var broadcast_to(Var x, Shape shape) {
  require(broadcast_shape(x.shape(), shape) == shape, "E_SHAPE",
          "cannot broadcast " + shape_string(x.shape()) + " to " + shape_string(shape));
  std::vector<std::size_t> map = broadcast_map(x.shape(), shape);
  const Array& xv = x.value();
  Array out(shape);
  for (std::size_t k = 0; k < map.size(); ++k) out[k] = xv[map[k]];
  return x.tape()->record(std::move(out), {x}, [map = std::move(map)](const Array&, const Array& g, ParentGrads pg) {
    Array& gx = *pg[0];
    for (std::size_t k = 0; k < map.size(); ++k) gx[map[k]] += g[k];
  });
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisSplit s = split_axis(x.shape(), axis);
  require(begin <= end && end <= s.len, "E_SHAPE", "slice bounds out of range");
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t len = end - begin;
  const Array& xv = x.value();
  Array out(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[(o * len + l) * s.inner + i] = xv[(o * s.len + begin + l) * s.inner + i];
  return x.tape()->record(std::move(out), {x}, [s, begin, len](const Array&, const Array& g, ParentGrads pg) {
    Array& gx = *pg[0];
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t i = 0; i < s.inner; ++i)
          gx[(o * s.len + begin + l) * s.inner + i] += g[(o * len + l) * s.inner + i];
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  require(!parts.empty(), "E_SHAPE", "concat of zero arrays");
  Shape out_shape = parts[0].shape();
  require(axis < out_shape.size(), "E_SHAPE", "concat axis out of range");
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const Var& p : parts) {
    Shape sh = p.shape();
    require(sh.size() == out_shape.size(), "E_SHAPE", "concat rank mismatch");
    for (std::size_t d = 0; d < sh.size(); ++d) {
      require(d == axis || sh[d] == out_shape[d], "E_SHAPE", "concat shape mismatch");
    }
    lens.push_back(sh[axis]);
    total += sh[axis];
  }
  out_shape[axis] = total;
  const AxisSplit s = split_axis(out_shape, axis);
  Array out(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Array& v = parts[p].value();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t l = 0; l < lens[p]; ++l)
        for (std::size_t i = 0; i < s.inner; ++i)
          out[(o * total + offset + l) * s.inner + i] = v[(o * lens[p] + l) * s.inner + i];
    offset += lens[p];
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return parts[0].tape()->record(std::move(out), std::move(parents),
                                 [s, lens, total](const Array&, const Array& g, ParentGrads pg) {
                                   std::size_t offset = 0;
                                   for (std::size_t p = 0; p < lens.size(); ++p) {
                                     if (pg[p]) {
                                       Array& gp = *pg[p];
                                       for (std::size_t o = 0; o < s.outer; ++o)
                                         for (std::size_t l = 0; l < lens[p]; ++l)
                                           for (std::size_t i = 0; i < s.inner; ++i)
                                             gp[(o * lens[p] + l) * s.inner + i] +=
                                                 g[(o * total + offset + l) * s.inner + i];
                                     }
                                     offset += lens[p];
                                   }
                                 });
}

Var cross3(Var a, Var b) {
  require(a.shape() == b.shape() && !a.shape().empty() && a.shape().back() == 3, "E_SHAPE",
          "cross3 needs equal shapes with last axis 3");
  const std::size_t n = a.size() / 3;
  const Array& av = a.value();
  const Array& bv = b.value();
  Array out(a.shape());
  auto cross = [](const double* u, const double* v, double* w) {
    w[0] = u[1] * v[2] - u[2] * v[1];
    w[1] = u[2] * v[0] - u[0] * v[2];
    w[2] = u[0] * v[1] - u[1] * v[0];
  };
  for (std::size_t r = 0; r < n; ++r) cross(av.data().data() + 3 * r, bv.data().data() + 3 * r, &out[3 * r]);
  return a.tape()->record(std::move(out), {a, b}, [a, b, n, cross](const Array&, const Array& g, ParentGrads pg) {
    const Array& av = a.value();
    const Array& bv = b.value();
    double w[3];
    for (std::size_t r = 0; r < n; ++r) {
      if (pg[0]) {
        cross(bv.data().data() + 3 * r, g.data().data() + 3 * r, w);
        for (int j = 0; j < 3; ++j) (*pg[0])[3 * r + j] += w[j];
      }
      if (pg[1]) {
        cross(g.data().data() + 3 * r, av.data().data() + 3 * r, w);
        for (int j = 0; j < 3; ++j) (*pg[1])[3 * r + j] += w[j];
      }
    }
  });
}

Var row_norms(Var x) {
  require(x.shape().size() == 2, "E_SHAPE", "row_norms needs a rank-2 input");
  const std::size_t n = x.shape()[0];
  const std::size_t k = x.shape()[1];
  const Array& xv = x.value();
  Array out(Shape{n});
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += xv[r * k + j] * xv[r * k + j];
    out[r] = std::sqrt(s);
  }
  return x.tape()->record(std::move(out), {x}, [x, n, k](const Array& y, const Array& g, ParentGrads pg) {
    const Array& xv = x.value();
    Array& gx = *pg[0];
    for (std::size_t r = 0; r < n; ++r) {
      if (y[r] == 0.0) continue;
      for (std::size_t j = 0; j < k; ++j) gx[r * k + j] += g[r] * xv[r * k + j] / y[r];
    }
  });
}

Var normalize_rows(Var x) {
  require(x.shape().size() == 2, "E_SHAPE", "normalize_rows needs a rank-2 input");
  const std::size_t n = x.shape()[0];
  const std::size_t k = x.shape()[1];
  const Array& xv = x.value();
  Array out(x.shape());
  std::vector<double> norms(n);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += xv[r * k + j] * xv[r * k + j];
    norms[r] = std::sqrt(s);
    if (norms[r] > 0.0)
      for (std::size_t j = 0; j < k; ++j) out[r * k + j] = xv[r * k + j] / norms[r];
  }
  return x.tape()->record(std::move(out), {x},
                          [norms = std::move(norms), n, k](const Array& y, const Array& g, ParentGrads pg) {
                            Array& gx = *pg[0];
                            for (std::size_t r = 0; r < n; ++r) {
                              if (norms[r] == 0.0) continue;
                              double dot = 0.0;
                              for (std::size_t j = 0; j < k; ++j) dot += g[r * k + j] * y[r * k + j];
                              for (std::size_t j = 0; j < k; ++j)
                                gx[r * k + j] += (g[r * k + j] - y[r * k + j] * dot) / norms[r];
                            }
                          });
}

namespace {

struct AxisLerp {
  std::size_t i0 = 0;
  std::size_t i1 = 0;
  double t = 0.0;
  bool clamped = false;
};

AxisLerp axis_lerp(double coord, std::size_t size) {
  AxisLerp a;
  double c = coord - 0.5;
  const double hi = static_cast<double>(size - 1);
  if (c <= 0.0 || size == 1) {
    a.clamped = c < 0.0 || size == 1;
    c = std::max(c, 0.0);
    if (size == 1) c = 0.0;
  } else if (c >= hi) {
    a.clamped = c > hi;
    c = hi;
  }
  std::size_t f = static_cast<std::size_t>(std::floor(c));
  if (size > 1 && f >= size - 1) f = size - 2;
  a.i0 = f;
  a.i1 = size > 1 ? f + 1 : f;
  a.t = c - static_cast<double>(f);
  return a;
}

}  // namespace

Var bilinear_sample(Var image, Var positions) {
  require(image.shape().size() == 3, "E_SHAPE", "bilinear_sample image must be H x W x C");
  require(positions.shape().size() == 2 && positions.shape()[1] == 2, "E_SHAPE", "positions must be K x 2");
  const std::size_t h = image.shape()[0];
  const std::size_t w = image.shape()[1];
  const std::size_t c = image.shape()[2];
  const std::size_t k = positions.shape()[0];
  const Array& iv = image.value();
  const Array& pv = positions.value();
  Array out(Shape{k, c});
  for (std::size_t s = 0; s < k; ++s) {
    const AxisLerp ax = axis_lerp(pv[2 * s], w);
    const AxisLerp ay = axis_lerp(pv[2 * s + 1], h);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double v00 = iv[(ay.i0 * w + ax.i0) * c + ch];
      const double v01 = iv[(ay.i0 * w + ax.i1) * c + ch];
      const double v10 = iv[(ay.i1 * w + ax.i0) * c + ch];
      const double v11 = iv[(ay.i1 * w + ax.i1) * c + ch];
      out[s * c + ch] = (1 - ay.t) * ((1 - ax.t) * v00 + ax.t * v01) + ay.t * ((1 - ax.t) * v10 + ax.t * v11);
    }
  }
  return image.tape()->record(
      std::move(out), {image, positions}, [image, positions, h, w, c, k](const Array&, const Array& g, ParentGrads pg) {
        const Array& iv = image.value();
        const Array& pv = positions.value();
        for (std::size_t s = 0; s < k; ++s) {
          const AxisLerp ax = axis_lerp(pv[2 * s], w);
          const AxisLerp ay = axis_lerp(pv[2 * s + 1], h);
          double gx = 0.0;
          double gy = 0.0;
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double gs = g[s * c + ch];
            const std::size_t i00 = (ay.i0 * w + ax.i0) * c + ch;
            const std::size_t i01 = (ay.i0 * w + ax.i1) * c + ch;
            const std::size_t i10 = (ay.i1 * w + ax.i0) * c + ch;
            const std::size_t i11 = (ay.i1 * w + ax.i1) * c + ch;
            if (pg[0]) {
              Array& gi = *pg[0];
              gi[i00] += gs * (1 - ay.t) * (1 - ax.t);
              gi[i01] += gs * (1 - ay.t) * ax.t;
              gi[i10] += gs * ay.t * (1 - ax.t);
              gi[i11] += gs * ay.t * ax.t;
            }
            gx += gs * ((1 - ay.t) * (iv[i01] - iv[i00]) + ay.t * (iv[i11] - iv[i10]));
            gy += gs * ((1 - ax.t) * (iv[i10] - iv[i00]) + ax.t * (iv[i11] - iv[i01]));
          }
          if (pg[1]) {
            if (!ax.clamped && w > 1) (*pg[1])[2 * s] += gx;
            if (!ay.clamped && h > 1) (*pg[1])[2 * s + 1] += gy;
          }
        }
      });
}

}  // namespace ss3d::ad
