#include "advit/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "advit/errors.hpp"

namespace advit::testing {

namespace {
std::atomic<double> g_gelu_backward_scale{1.0};
}

void set_gelu_backward_scale(double scale) { g_gelu_backward_scale.store(scale); }
double gelu_backward_scale() { return g_gelu_backward_scale.load(); }

}  // namespace advit::testing

namespace advit::ops {

namespace {

// C[M,N] += op(A) * op(B). A is [M,K] (or [K,M] when trans_a), B is [K,N]
// (or [N,K] when trans_b). Both transposed is never needed.
template <typename T>
void gemm_acc(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  if (!trans_a && !trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = c + i * n;
      const T* arow = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = arow[p];
        const T* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) {
          crow[j] += av * brow[j];
        }
      }
    }
  } else if (trans_a && !trans_b) {
    for (std::size_t p = 0; p < k; ++p) {
      const T* arow = a + p * m;
      const T* brow = b + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const T av = arow[i];
        T* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
          crow[j] += av * brow[j];
        }
      }
    }
  } else if (!trans_a && trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      const T* arow = a + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const T* brow = b + j * k;
        T acc{0};
        for (std::size_t p = 0; p < k; ++p) {
          acc += arow[p] * brow[p];
        }
        c[i * n + j] += acc;
      }
    }
  } else {
    throw ContractError("gemm_acc: double transpose unsupported");
  }
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) {
    return false;
  }
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) {
    s[i - 1] = s[i] * shape[i];
  }
  return s;
}

// For each output position (row-major), the flat source offset under `axes`.
std::vector<std::size_t> permutation_map(const Shape& in_shape, const std::vector<std::size_t>& axes) {
  const std::size_t rank = in_shape.size();
  const auto in_strides = strides_of(in_shape);
  Shape out_shape(rank);
  std::vector<std::size_t> step(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[axes[i]];
    step[i] = in_strides[axes[i]];
  }
  const std::size_t n = shape_numel(in_shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    map[flat] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      offset += step[d];
      if (idx[d] < out_shape[d]) {
        break;
      }
      offset -= step[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return map;
}

}  // namespace

template <typename T>
Var matmul(Graph<T>& g, Var a, Var b) {
  const Shape& sa = g.shape(a);
  const Shape& sb = g.shape(b);
  if (sa.size() < 2 || sb.size() < 2) {
    throw DimensionError("matmul: operands must have rank >= 2, got " + shape_str(sa) + " and " + shape_str(sb));
  }
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa.back();
  const std::size_t kb = sb[sb.size() - 2];
  const std::size_t n = sb.back();
  const bool shared = sb.size() == 2;
  const bool leading_ok =
      shared || (sa.size() == sb.size() && std::equal(sa.begin(), sa.end() - 2, sb.begin()));
  if (k != kb || !leading_ok) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  }
  const std::size_t batch = shape_numel(Shape(sa.begin(), sa.end() - 2));
  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(n);
  Tensor<T> out(out_shape);
  const T* pa = g.value(a).data().data();
  const T* pb = g.value(b).data().data();
  T* po = out.data().data();
  if (shared) {
    gemm_acc(false, false, batch * m, n, k, pa, pb, po);
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      gemm_acc(false, false, m, n, k, pa + i * m * k, pb + i * k * n, po + i * m * n);
    }
  }
  return g.record("matmul", std::move(out), {a, b}, [=](Graph<T>& gr, std::span<const T> dout) {
    const T* va = gr.value(a).data().data();
    const T* vb = gr.value(b).data().data();
    if (gr.requires_grad(a)) {
      T* da = gr.adjoint_buffer(a).data();
      if (shared) {
        gemm_acc(false, true, batch * m, k, n, dout.data(), vb, da);
      } else {
        for (std::size_t i = 0; i < batch; ++i) {
          gemm_acc(false, true, m, k, n, dout.data() + i * m * n, vb + i * k * n, da + i * m * k);
        }
      }
    }
    if (gr.requires_grad(b)) {
      T* db = gr.adjoint_buffer(b).data();
      if (shared) {
        gemm_acc(true, false, k, n, batch * m, va, dout.data(), db);
      } else {
        for (std::size_t i = 0; i < batch; ++i) {
          gemm_acc(true, false, k, n, m, va + i * m * k, dout.data() + i * m * n, db + i * k * n);
        }
      }
    }
  });
}

template <typename T>
Var transpose_last2(Graph<T>& g, Var a) {
  const std::size_t rank = g.shape(a).size();
  if (rank < 2) {
    throw DimensionError("transpose_last2: rank must be >= 2, got " + shape_str(g.shape(a)));
  }
  std::vector<std::size_t> axes(rank);
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[rank - 1], axes[rank - 2]);
  return permute(g, a, axes);
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  const Shape& sa = g.shape(a);
  const Shape& sb = g.shape(b);
  if (!is_suffix(sb, sa)) {
    throw DimensionError("add: shape " + shape_str(sb) + " does not match trailing dims of " + shape_str(sa));
  }
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  Tensor<T> out(sa);
  const std::size_t inner = vb.numel();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = va[i] + vb[i % inner];
  }
  return g.record("add", std::move(out), {a, b}, [=](Graph<T>& gr, std::span<const T> dout) {
    gr.accumulate(a, dout);
    if (gr.requires_grad(b)) {
      auto db = gr.adjoint_buffer(b);
      for (std::size_t i = 0; i < dout.size(); ++i) {
        db[i % inner] += dout[i];
      }
    }
  });
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
  if (g.shape(a) != g.shape(b)) {
    throw DimensionError("mul: shapes " + shape_str(g.shape(a)) + " and " + shape_str(g.shape(b)) + " differ");
  }
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  Tensor<T> out(va.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = va[i] * vb[i];
  }
  return g.record("mul", std::move(out), {a, b}, [=](Graph<T>& gr, std::span<const T> dout) {
    const auto& xa = gr.value(a);
    const auto& xb = gr.value(b);
    if (gr.requires_grad(a)) {
      auto da = gr.adjoint_buffer(a);
      for (std::size_t i = 0; i < dout.size(); ++i) {
        da[i] += dout[i] * xb[i];
      }
    }
    if (gr.requires_grad(b)) {
      auto db = gr.adjoint_buffer(b);
      for (std::size_t i = 0; i < dout.size(); ++i) {
        db[i] += dout[i] * xa[i];
      }
    }
  });
}

template <typename T>
Var scale(Graph<T>& g, Var a, T factor) {
  Tensor<T> out = g.value(a).detached();
  for (auto& v : out.data()) {
    v *= factor;
  }
  return g.record("scale", std::move(out), {a}, [=](Graph<T>& gr, std::span<const T> dout) {
    auto da = gr.adjoint_buffer(a);
    for (std::size_t i = 0; i < dout.size(); ++i) {
      da[i] += dout[i] * factor;
    }
  });
}

template <typename T>
Var sum(Graph<T>& g, Var a) {
  const auto& va = g.value(a);
  T total{0};
  for (T v : va.data()) {
    total += v;
  }
  return g.record("sum", Tensor<T>::scalar(total), {a}, [=](Graph<T>& gr, std::span<const T> dout) {
    auto da = gr.adjoint_buffer(a);
    for (auto& v : da) {
      v += dout[0];
    }
  });
}

template <typename T>
Var reshape(Graph<T>& g, Var a, Shape shape) {
  Tensor<T> out = g.value(a).reshaped(std::move(shape));
  return g.record("reshape", std::move(out), {a}, [=](Graph<T>& gr, std::span<const T> dout) { gr.accumulate(a, dout); });
}

template <typename T>
Var permute(Graph<T>& g, Var a, std::vector<std::size_t> axes) {
  const Shape& sa = g.shape(a);
  std::vector<std::size_t> sorted = axes;
  std::sort(sorted.begin(), sorted.end());
  bool valid = sorted.size() == sa.size();
  for (std::size_t i = 0; valid && i < sorted.size(); ++i) {
    valid = sorted[i] == i;
  }
  if (!valid) {
    throw DimensionError("permute: axes are not a permutation of rank " + std::to_string(sa.size()));
  }
  Shape out_shape(sa.size());
  for (std::size_t i = 0; i < sa.size(); ++i) {
    out_shape[i] = sa[axes[i]];
  }
  auto map = permutation_map(sa, axes);
  const auto& va = g.value(a);
  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < map.size(); ++i) {
    out[i] = va[map[i]];
  }
  return g.record("permute", std::move(out), {a}, [a, map = std::move(map)](Graph<T>& gr, std::span<const T> dout) {
    auto da = gr.adjoint_buffer(a);
    for (std::size_t i = 0; i < map.size(); ++i) {
      da[map[i]] += dout[i];
    }
  });
}

template <typename T>
Var concat(Graph<T>& g, std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) {
    throw DimensionError("concat: no inputs");
  }
  const Shape& first = g.shape(parts[0]);
  if (axis >= first.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;
  for (Var p : parts) {
    const Shape& s = g.shape(p);
    Shape a = s;
    Shape b = first;
    a[axis] = 0;
    b[axis] = 0;
    if (s.size() != first.size() || a != b) {
      throw DimensionError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(first));
    }
    out_shape[axis] += s[axis];
  }
  const std::size_t outer = shape_numel(Shape(first.begin(), first.begin() + static_cast<std::ptrdiff_t>(axis)));
  const std::size_t inner = shape_numel(Shape(first.begin() + static_cast<std::ptrdiff_t>(axis) + 1, first.end()));
  for (Var p : parts) {
    widths.push_back(g.shape(p)[axis] * inner);
  }
  const std::size_t out_row = out_shape[axis] * inner;
  Tensor<T> out(out_shape);
  std::size_t col = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& v = g.value(parts[pi]);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.data().begin() + static_cast<std::ptrdiff_t>(o * widths[pi]), widths[pi],
                  out.data().begin() + static_cast<std::ptrdiff_t>(o * out_row + col));
    }
    col += widths[pi];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return g.record("concat", std::move(out), std::span<const Var>(inputs),
                  [inputs, widths, outer, out_row](Graph<T>& gr, std::span<const T> dout) {
                    std::size_t c = 0;
                    for (std::size_t pi = 0; pi < inputs.size(); ++pi) {
                      if (gr.requires_grad(inputs[pi])) {
                        auto d = gr.adjoint_buffer(inputs[pi]);
                        for (std::size_t o = 0; o < outer; ++o) {
                          for (std::size_t j = 0; j < widths[pi]; ++j) {
                            d[o * widths[pi] + j] += dout[o * out_row + c + j];
                          }
                        }
                      }
                      c += widths[pi];
                    }
                  });
}

template <typename T>
Var broadcast_leading(Graph<T>& g, Var a, const Shape& leading) {
  const auto& va = g.value(a);
  Shape out_shape = leading;
  out_shape.insert(out_shape.end(), va.shape().begin(), va.shape().end());
  Tensor<T> out(out_shape);
  const std::size_t inner = va.numel();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = va[i % inner];
  }
  return g.record("broadcast_leading", std::move(out), {a}, [=](Graph<T>& gr, std::span<const T> dout) {
    auto da = gr.adjoint_buffer(a);
    for (std::size_t i = 0; i < dout.size(); ++i) {
      da[i % inner] += dout[i];
    }
  });
}

template <typename T>
Var slice(Graph<T>& g, Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& sa = g.shape(a);
  if (axis >= sa.size() || begin >= end || end > sa[axis]) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                         std::to_string(axis) + " of " + shape_str(sa));
  }
  const std::size_t outer = shape_numel(Shape(sa.begin(), sa.begin() + static_cast<std::ptrdiff_t>(axis)));
  const std::size_t inner = shape_numel(Shape(sa.begin() + static_cast<std::ptrdiff_t>(axis) + 1, sa.end()));
  const std::size_t in_row = sa[axis] * inner;
  const std::size_t out_row = (end - begin) * inner;
  const std::size_t start = begin * inner;
  Shape out_shape = sa;
  out_shape[axis] = end - begin;
  Tensor<T> out(out_shape);
  const auto& va = g.value(a);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(va.data().begin() + static_cast<std::ptrdiff_t>(o * in_row + start), out_row,
                out.data().begin() + static_cast<std::ptrdiff_t>(o * out_row));
  }
  return g.record("slice", std::move(out), {a}, [=](Graph<T>& gr, std::span<const T> dout) {
    auto da = gr.adjoint_buffer(a);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < out_row; ++j) {
        da[o * in_row + start + j] += dout[o * out_row + j];
      }
    }
  });
}

template <typename T>
Var softmax_lastdim(Graph<T>& g, Var x) {
  const auto& vx = g.value(x);
  if (vx.rank() == 0) {
    throw DimensionError("softmax_lastdim: rank-0 input");
  }
  if (!vx.all_finite()) {
    throw NumericError("softmax_lastdim: non-finite input");
  }
  const std::size_t n = vx.shape().back();
  const std::size_t rows = vx.numel() / n;
  Tensor<T> out(vx.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = vx.data().data() + r * n;
    T* o = out.data().data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T total{0};
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) {
      o[j] /= total;
    }
  }
  const Var y = g.next();
  return g.record("softmax", std::move(out), {x}, [=](Graph<T>& gr, std::span<const T> dout) {
    const auto& vy = gr.value(y);
    auto dx = gr.adjoint_buffer(x);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = vy.data().data() + r * n;
      const T* dr = dout.data() + r * n;
      T dot{0};
      for (std::size_t j = 0; j < n; ++j) {
        dot += dr[j] * yr[j];
      }
      for (std::size_t j = 0; j < n; ++j) {
        dx[r * n + j] += yr[j] * (dr[j] - dot);
      }
    }
  });
}

template <typename T>
Var layer_norm(Graph<T>& g, Var x, Var gamma, Var beta, T eps) {
  if (!(eps >= T{0})) {
    throw ContractError("layer_norm: eps must be non-negative");
  }
  const auto& vx = g.value(x);
  if (vx.rank() == 0) {
    throw DimensionError("layer_norm: rank-0 input");
  }
  const std::size_t d = vx.shape().back();
  if (g.shape(gamma) != Shape{d} || g.shape(beta) != Shape{d}) {
    throw DimensionError("layer_norm: gamma " + shape_str(g.shape(gamma)) + " / beta " + shape_str(g.shape(beta)) +
                         " do not match last dim of " + shape_str(vx.shape()));
  }
  const std::size_t rows = vx.numel() / d;
  const auto& vg = g.value(gamma);
  const auto& vb = g.value(beta);
  Tensor<T> out(vx.shape());
  std::vector<T> xhat(vx.numel());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = vx.data().data() + r * d;
    T mean{0};
    for (std::size_t j = 0; j < d; ++j) {
      mean += in[j];
    }
    mean /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) {
      const T c = in[j] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T denom = std::sqrt(var + eps);
    // A constant slice has zero centered values; map it to beta even at eps = 0.
    rstd[r] = denom > T{0} ? T{1} / denom : T{0};
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (in[j] - mean) * rstd[r];
      xhat[r * d + j] = h;
      out[r * d + j] = vg[j] * h + vb[j];
    }
  }
  return g.record("layer_norm", std::move(out), {x, gamma, beta},
                  [=, xhat = std::move(xhat), rstd = std::move(rstd)](Graph<T>& gr, std::span<const T> dout) {
                    const auto& gv = gr.value(gamma);
                    if (gr.requires_grad(gamma)) {
                      auto dg = gr.adjoint_buffer(gamma);
                      for (std::size_t i = 0; i < dout.size(); ++i) {
                        dg[i % d] += dout[i] * xhat[i];
                      }
                    }
                    if (gr.requires_grad(beta)) {
                      auto db = gr.adjoint_buffer(beta);
                      for (std::size_t i = 0; i < dout.size(); ++i) {
                        db[i % d] += dout[i];
                      }
                    }
                    if (gr.requires_grad(x)) {
                      auto dx = gr.adjoint_buffer(x);
                      const T inv_d = T{1} / static_cast<T>(d);
                      for (std::size_t r = 0; r < rows; ++r) {
                        T mean_dh{0};
                        T mean_dh_h{0};
                        for (std::size_t j = 0; j < d; ++j) {
                          const T dh = dout[r * d + j] * gv[j];
                          mean_dh += dh;
                          mean_dh_h += dh * xhat[r * d + j];
                        }
                        mean_dh *= inv_d;
                        mean_dh_h *= inv_d;
                        for (std::size_t j = 0; j < d; ++j) {
                          const T dh = dout[r * d + j] * gv[j];
                          dx[r * d + j] += rstd[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
                        }
                      }
                    }
                  });
}

template <typename T>
Var gelu(Graph<T>& g, Var x) {
  const auto& vx = g.value(x);
  Tensor<T> out(vx.shape());
  for (std::size_t i = 0; i < vx.numel(); ++i) {
    const T v = vx[i];
    out[i] = v * T(0.5) * (T{1} + std::erf(v / std::numbers::sqrt2_v<T>));
  }
  const T fault = static_cast<T>(testing::gelu_backward_scale());
  return g.record("gelu", std::move(out), {x}, [=](Graph<T>& gr, std::span<const T> dout) {
    const auto& xv = gr.value(x);
    auto dx = gr.adjoint_buffer(x);
    const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
    for (std::size_t i = 0; i < dout.size(); ++i) {
      const T v = xv[i];
      const T cdf = T(0.5) * (T{1} + std::erf(v / std::numbers::sqrt2_v<T>));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      dx[i] += dout[i] * (cdf + v * pdf) * fault;
    }
  });
}

template <typename T>
void check_label_distribution(const Tensor<T>& labels) {
  if (labels.rank() != 2) {
    throw DimensionError("labels must be [B, C], got " + shape_str(labels.shape()));
  }
  const std::size_t c = labels.dim(1);
  const double tol = label_sum_tolerance<T>();
  for (std::size_t r = 0; r < labels.dim(0); ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const T v = labels[r * c + j];
      if (!(v >= T{0})) {
        throw ValidationError("label row " + std::to_string(r) + " has a negative or non-finite entry");
      }
      total += static_cast<double>(v);
    }
    if (std::abs(total - 1.0) > tol) {
      throw ValidationError("label row " + std::to_string(r) + " sums to " + std::to_string(total) +
                            ", not a distribution");
    }
  }
}

template <typename T>
Var cross_entropy(Graph<T>& g, Var logits, const Tensor<T>& labels) {
  const auto& vl = g.value(logits);
  if (vl.rank() != 2 || labels.shape() != vl.shape()) {
    throw DimensionError("cross_entropy: logits " + shape_str(vl.shape()) + " vs labels " + shape_str(labels.shape()));
  }
  check_label_distribution(labels);
  const std::size_t batch = vl.dim(0);
  const std::size_t c = vl.dim(1);
  std::vector<T> probs(vl.numel());
  T total{0};
  for (std::size_t r = 0; r < batch; ++r) {
    const T* in = vl.data().data() + r * c;
    const T mx = *std::max_element(in, in + c);
    T z{0};
    for (std::size_t j = 0; j < c; ++j) {
      z += std::exp(in[j] - mx);
    }
    const T lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) {
      const T logp = in[j] - lse;
      probs[r * c + j] = std::exp(logp);
      const T y = labels[r * c + j];
      if (y != T{0}) {
        total -= y * logp;
      }
    }
  }
  const T loss = total / static_cast<T>(batch);
  return g.record("cross_entropy", Tensor<T>::scalar(loss), {logits},
                  [=, probs = std::move(probs), targets = labels.detached()](Graph<T>& gr, std::span<const T> dout) {
                    auto dl = gr.adjoint_buffer(logits);
                    const T s = dout[0] / static_cast<T>(batch);
                    for (std::size_t i = 0; i < dl.size(); ++i) {
                      dl[i] += s * (probs[i] - targets[i]);
                    }
                  });
}

template <typename T>
Var grad_gate(Graph<T>& g, Var x, int gate) {
  if (gate != 0 && gate != 1) {
    throw ContractError("grad_gate: gate must be 0 or 1, got " + std::to_string(gate));
  }
  return g.record("grad_gate", g.value(x).detached(), {x}, [=](Graph<T>& gr, std::span<const T> dout) {
    if (gate == 1) {
      gr.accumulate(x, dout);
    }
  });
}

template <typename T>
Var detach(Graph<T>& g, Var x) {
  return g.constant(g.value(x).detached());
}

#define ADVIT_INSTANTIATE_OPS(T)                                                               \
  template Var matmul(Graph<T>&, Var, Var);                                                    \
  template Var transpose_last2(Graph<T>&, Var);                                                \
  template Var add(Graph<T>&, Var, Var);                                                       \
  template Var mul(Graph<T>&, Var, Var);                                                       \
  template Var scale(Graph<T>&, Var, T);                                                       \
  template Var sum(Graph<T>&, Var);                                                            \
  template Var reshape(Graph<T>&, Var, Shape);                                                 \
  template Var permute(Graph<T>&, Var, std::vector<std::size_t>);                              \
  template Var concat(Graph<T>&, std::span<const Var>, std::size_t);                           \
  template Var broadcast_leading(Graph<T>&, Var, const Shape&);                                \
  template Var slice(Graph<T>&, Var, std::size_t, std::size_t, std::size_t);                   \
  template Var softmax_lastdim(Graph<T>&, Var);                                                \
  template Var layer_norm(Graph<T>&, Var, Var, Var, T);                                        \
  template Var gelu(Graph<T>&, Var);                                                           \
  template Var cross_entropy(Graph<T>&, Var, const Tensor<T>&);                                \
  template Var grad_gate(Graph<T>&, Var, int);                                                 \
  template Var detach(Graph<T>&, Var);                                                         \
  template void check_label_distribution(const Tensor<T>&);

ADVIT_INSTANTIATE_OPS(float)
ADVIT_INSTANTIATE_OPS(double)

#undef ADVIT_INSTANTIATE_OPS

}  // namespace advit::ops
