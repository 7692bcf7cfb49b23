#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "glgait/autodiff.hpp"
#include "glgait/flops.hpp"
#include "gemm.hpp"
#include "kernels.hpp"

namespace glgait {

namespace kernels {

namespace {

Shape broadcast_batch(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      throw DimensionError("batch extents not broadcast-compatible");
    out[i] = std::max(ea, eb);
  }
  return out;
}

// Offset (in matrices) of operand batch index for each output batch index.
std::vector<std::size_t> batch_offsets(const Shape& operand, const Shape& out) {
  const std::size_t count = numel(out);
  std::vector<std::size_t> offsets(count, 0);
  const std::size_t lead = out.size() - operand.size();
  const auto ostr = strides_of(out);
  const auto astr = strides_of(operand);
  for (std::size_t flat = 0; flat < count; ++flat) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < operand.size(); ++d) {
      const std::size_t idx = (flat / ostr[d + lead]) % out[d + lead];
      if (operand[d] != 1) off += idx * astr[d];
    }
    offsets[flat] = off;
  }
  return offsets;
}

std::vector<double> transpose_last2(const Tensor& t) {
  const std::size_t r = t.rank();
  const std::size_t rows = t.dim(r - 2), cols = t.dim(r - 1);
  const std::size_t batch = t.numel() / (rows * cols);
  std::vector<double> out(t.numel());
  const double* src = t.ptr();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        out[b * rows * cols + j * rows + i] = src[b * rows * cols + i * cols + j];
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  if (a.rank() < 2 || b.rank() < 2)
    throw DimensionError("matmul needs rank >= 2 operands, got " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  const std::size_t ra = a.rank(), rb = b.rank();
  const std::size_t m = ta ? a.dim(ra - 1) : a.dim(ra - 2);
  const std::size_t k = ta ? a.dim(ra - 2) : a.dim(ra - 1);
  const std::size_t kb = tb ? b.dim(rb - 1) : b.dim(rb - 2);
  const std::size_t n = tb ? b.dim(rb - 2) : b.dim(rb - 1);
  if (k != kb)
    throw DimensionError("matmul inner extents differ: " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  Shape batch;
  try {
    batch = broadcast_batch(batch_a, batch_b);
  } catch (const DimensionError&) {
    throw DimensionError("matmul batch extents not broadcast-compatible: " + to_string(a.shape()) +
                         " x " + to_string(b.shape()));
  }
  const std::size_t nbatch = numel(batch);
  const auto off_a = batch_offsets(batch_a, batch);
  const auto off_b = batch_offsets(batch_b, batch);

  std::vector<double> a_t, b_t;
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  if (ta) {
    a_t = transpose_last2(a);
    pa = a_t.data();
  }
  if (tb) {
    b_t = transpose_last2(b);
    pb = b_t.data();
  }

  std::vector<double> out(nbatch * m * n, 0.0);
  for (std::size_t bi = 0; bi < nbatch; ++bi) {
    const double* A = pa + off_a[bi] * m * k;
    const double* B = pb + off_b[bi] * k * n;
    double* O = out.data() + bi * m * n;
    detail::gemm_acc(m, n, k, A, k, 1, B, n, O, n);
  }
  record_multiplies(static_cast<std::uint64_t>(nbatch) * m * k * n);
  Shape shape = batch;
  shape.push_back(m);
  shape.push_back(n);
  return Tensor(std::move(shape), std::move(out), promote(a.dtype(), b.dtype()));
}

Tensor sum_to_shape(const Tensor& t, const Shape& target) {
  if (t.shape() == target) return t;
  const Shape& src = t.shape();
  if (target.size() > src.size()) throw DimensionError("sum_to_shape: target rank too large");
  const std::size_t lead = src.size() - target.size();
  std::vector<double> out(numel(target), 0.0);
  const auto sstr = strides_of(src);
  const auto tstr = strides_of(target);
  for (std::size_t flat = 0; flat < t.numel(); ++flat) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < target.size(); ++d) {
      const std::size_t idx = (flat / sstr[d + lead]) % src[d + lead];
      if (target[d] != 1) off += idx * tstr[d];
    }
    out[off] += t[flat];
  }
  return Tensor(target, std::move(out), t.dtype());
}

Tensor permute(const Tensor& t, const std::vector<std::size_t>& axes) {
  const std::size_t r = t.rank();
  if (axes.size() != r) throw DimensionError("permute: axes rank mismatch for " + to_string(t.shape()));
  std::vector<bool> seen(r, false);
  for (auto a : axes) {
    if (a >= r || seen[a]) throw DimensionError("permute: invalid axes for " + to_string(t.shape()));
    seen[a] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = t.dim(axes[i]);
  bool identity = true;
  for (std::size_t i = 0; i < r; ++i) identity = identity && axes[i] == i;
  if (identity) return t;

  const auto in_str = strides_of(t.shape());
  std::vector<std::size_t> step(r);  // input stride for each output axis
  for (std::size_t i = 0; i < r; ++i) step[i] = in_str[axes[i]];
  std::vector<double> out(t.numel());
  std::vector<std::size_t> idx(r, 0);
  const double* src = t.ptr();
  const std::size_t last = r - 1;
  const std::size_t inner = out_shape[last];
  const std::size_t inner_step = step[last];
  std::size_t src_off = 0;
  for (std::size_t flat = 0; flat < out.size(); flat += inner) {
    for (std::size_t j = 0; j < inner; ++j) out[flat + j] = src[src_off + j * inner_step];
    // advance the multi-index over all axes except the last
    for (std::size_t d = last; d-- > 0;) {
      ++idx[d];
      src_off += step[d];
      if (idx[d] < out_shape[d]) break;
      src_off -= step[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return Tensor(std::move(out_shape), std::move(out), t.dtype());
}

}  // namespace kernels

namespace {

using kernels::sum_to_shape;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes differ " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
}

Tensor map(const Tensor& t, auto fn) {
  std::vector<double> out(t.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(t[i]);
  return Tensor(t.shape(), std::move(out), t.dtype());
}

// Splits a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + to_string(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out = shape;
  out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  return out;
}

std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& axes) {
  std::vector<std::size_t> inv(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) inv[axes[i]] = i;
  return inv;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.value().numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  Tensor value(a.shape(), std::move(out), promote(a.dtype(), b.dtype()));
  return make_node("add", std::move(value), {a, b}, [](const Tensor& g, const Node&) {
    return std::vector<Tensor>{g, g};
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.value().numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  Tensor value(a.shape(), std::move(out), promote(a.dtype(), b.dtype()));
  return make_node("sub", std::move(value), {a, b}, [](const Tensor& g, const Node&) {
    return std::vector<Tensor>{g, map(g, [](double v) { return -v; })};
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.value().numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  Tensor value(a.shape(), std::move(out), promote(a.dtype(), b.dtype()));
  return make_node("mul", std::move(value), {a, b}, [](const Tensor& g, const Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    std::vector<double> ga(g.numel()), gb(g.numel());
    for (std::size_t i = 0; i < g.numel(); ++i) {
      ga[i] = g[i] * bv[i];
      gb[i] = g[i] * av[i];
    }
    return std::vector<Tensor>{Tensor(av.shape(), std::move(ga), av.dtype()),
                               Tensor(bv.shape(), std::move(gb), bv.dtype())};
  });
}

Var scale(const Var& a, double factor) {
  Tensor value = map(a.value(), [factor](double v) { return v * factor; });
  return make_node("scale", std::move(value), {a}, [factor](const Tensor& g, const Node&) {
    return std::vector<Tensor>{map(g, [factor](double v) { return v * factor; })};
  });
}

Var sum(const Var& a) {
  double total = 0.0;
  for (auto v : a.value().data()) total += v;
  return make_node("sum", Tensor::scalar(total, a.dtype()), {a}, [](const Tensor& g, const Node& self) {
    const Tensor& in = self.inputs[0]->value;
    return std::vector<Tensor>{Tensor::full(in.shape(), g.item(), in.dtype())};
  });
}

Var mean(const Var& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().numel()));
}

Var matmul(const Var& a, const Var& b, bool ta, bool tb) {
  // Batched activations times one matrix: a single 2D product over the
  // flattened rows, so the weight gradient needs no broadcast reduction.
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (!ta && as.size() > 2 && bs.size() == 2 && as.back() == (tb ? bs[1] : bs[0])) {
    Shape out = as;
    out.back() = tb ? bs[0] : bs[1];
    return reshape(matmul(reshape(a, {a.value().numel() / as.back(), as.back()}), b, false, tb), std::move(out));
  }
  Tensor value = kernels::matmul(a.value(), b.value(), ta, tb);
  return make_node("matmul", std::move(value), {a, b}, [ta, tb](const Tensor& g, const Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    Tensor ga, gb;
    if (self.inputs[0]->requires_grad) {
      Tensor full = ta ? (tb ? kernels::matmul(bv, g, true, true) : kernels::matmul(bv, g, false, true))
                       : (tb ? kernels::matmul(g, bv, false, false) : kernels::matmul(g, bv, false, true));
      ga = sum_to_shape(full, av.shape()).to(av.dtype());
    }
    if (self.inputs[1]->requires_grad) {
      Tensor full = tb ? (ta ? kernels::matmul(g, av, true, true) : kernels::matmul(g, av, true, false))
                       : (ta ? kernels::matmul(av, g, false, false) : kernels::matmul(av, g, true, false));
      gb = sum_to_shape(full, bv.shape()).to(bv.dtype());
    }
    return std::vector<Tensor>{ga, gb};
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor value = a.value().reshape(std::move(shape));
  return make_node("reshape", std::move(value), {a}, [](const Tensor& g, const Node& self) {
    return std::vector<Tensor>{g.reshape(self.inputs[0]->value.shape())};
  });
}

Var permute(const Var& a, const std::vector<std::size_t>& axes) {
  Tensor value = kernels::permute(a.value(), axes);
  return make_node("permute", std::move(value), {a},
                   [inv = inverse_permutation(axes)](const Tensor& g, const Node&) {
                     return std::vector<Tensor>{kernels::permute(g, inv)};
                   });
}

Var slice(const Var& a, std::size_t axis, std::size_t start, std::size_t length) {
  const auto s = split_at(a.shape(), axis);
  if (length == 0 || start + length > s.extent)
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range on axis " + std::to_string(axis) + " of " +
                         to_string(a.shape()));
  Shape shape = a.shape();
  shape[axis] = length;
  std::vector<double> out(numel(shape));
  const double* src = a.value().ptr();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(src + (o * s.extent + start) * s.inner, length * s.inner,
                out.data() + o * length * s.inner);
  Tensor value(std::move(shape), std::move(out), a.dtype());
  return make_node("slice", std::move(value), {a},
                   [s, start, length](const Tensor& g, const Node& self) {
                     const Tensor& in = self.inputs[0]->value;
                     std::vector<double> gi(in.numel(), 0.0);
                     for (std::size_t o = 0; o < s.outer; ++o)
                       std::copy_n(g.ptr() + o * length * s.inner, length * s.inner,
                                   gi.data() + (o * s.extent + start) * s.inner);
                     return std::vector<Tensor>{Tensor(in.shape(), std::move(gi), in.dtype())};
                   });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  Shape shape = parts[0].shape();
  if (axis >= shape.size()) throw DimensionError("concat axis out of range");
  std::size_t total = 0;
  DType dtype = parts[0].dtype();
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != shape.size()) throw DimensionError("concat rank mismatch");
    probe[axis] = shape[axis];
    if (probe != shape)
      throw DimensionError("concat shape mismatch: " + to_string(p.shape()) + " vs " +
                           to_string(parts[0].shape()));
    total += p.shape()[axis];
    dtype = promote(dtype, p.dtype());
  }
  shape[axis] = total;
  const auto s = split_at(shape, axis);
  std::vector<double> out(numel(shape));
  std::vector<std::size_t> extents;
  std::size_t at = 0;
  for (const auto& p : parts) {
    const std::size_t e = p.shape()[axis];
    extents.push_back(e);
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(p.value().ptr() + o * e * s.inner, e * s.inner,
                  out.data() + (o * s.extent + at) * s.inner);
    at += e;
  }
  Tensor value(std::move(shape), std::move(out), dtype);
  return make_node("concat", std::move(value), parts,
                   [s, extents](const Tensor& g, const Node& self) {
                     std::vector<Tensor> grads;
                     std::size_t at = 0;
                     for (std::size_t i = 0; i < extents.size(); ++i) {
                       const Tensor& in = self.inputs[i]->value;
                       const std::size_t e = extents[i];
                       std::vector<double> gi(in.numel());
                       for (std::size_t o = 0; o < s.outer; ++o)
                         std::copy_n(g.ptr() + (o * s.extent + at) * s.inner, e * s.inner,
                                     gi.data() + o * e * s.inner);
                       grads.emplace_back(in.shape(), std::move(gi), in.dtype());
                       at += e;
                     }
                     return grads;
                   });
}

Var softmax(const Var& x, std::size_t axis) {
  const auto s = split_at(x.shape(), axis);
  std::vector<double> out(x.value().numel());
  const double* src = x.value().ptr();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < s.extent; ++e) mx = std::max(mx, src[base + e * s.inner]);
      double total = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double v = std::exp(src[base + e * s.inner] - mx);
        out[base + e * s.inner] = v;
        total += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= total;
    }
  Tensor value(x.shape(), std::move(out), x.dtype());
  return make_node("softmax", std::move(value), {x}, [s](const Tensor& g, const Node& self) {
    const Tensor& y = self.value;
    std::vector<double> gx(y.numel());
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        double dot = 0.0;
        for (std::size_t e = 0; e < s.extent; ++e) dot += g[base + e * s.inner] * y[base + e * s.inner];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t at = base + e * s.inner;
          gx[at] = y[at] * (g[at] - dot);
        }
      }
    return std::vector<Tensor>{Tensor(y.shape(), std::move(gx), self.inputs[0]->value.dtype())};
  });
}

Var relu(const Var& x) {
  Tensor value = map(x.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  return make_node("relu", std::move(value), {x}, [](const Tensor& g, const Node& self) {
    const Tensor& in = self.inputs[0]->value;
    std::vector<double> gx(g.numel());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = in[i] > 0.0 ? g[i] : 0.0;
    return std::vector<Tensor>{Tensor(in.shape(), std::move(gx), in.dtype())};
  });
}

// ---------------------------------------------------------------------------
// Temporal convolution. Layout viewed as x[ci][outer][T][inner].

namespace {

struct Conv1dGeometry {
  std::size_t cin, cout, k, outer, t_in, t_out, inner;
  std::ptrdiff_t pad;
};

// Output time range [lo, hi) for which input index t + tap - pad is valid.
std::pair<std::size_t, std::size_t> valid_range(std::size_t t_out, std::size_t t_in,
                                                std::ptrdiff_t shift, std::size_t stride = 1) {
  // input = out * stride + shift must lie in [0, t_in)
  std::ptrdiff_t lo = 0;
  while (lo < static_cast<std::ptrdiff_t>(t_out) && lo * static_cast<std::ptrdiff_t>(stride) + shift < 0) ++lo;
  std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(t_out);
  while (hi > lo &&
         (hi - 1) * static_cast<std::ptrdiff_t>(stride) + shift >= static_cast<std::ptrdiff_t>(t_in))
    --hi;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

Var conv1d_temporal(const Var& x, const Var& w, std::size_t time_axis, int pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws.size() != 3) throw DimensionError("conv1d weight must be [C_out, C_in, k], got " + to_string(ws));
  if (time_axis == 0 || time_axis >= xs.size())
    throw DimensionError("conv1d time axis invalid for " + to_string(xs));
  if (xs[0] != ws[1])
    throw DimensionError("conv1d channel mismatch: input " + to_string(xs) + ", weight " + to_string(ws));
  const std::size_t k = ws[2];
  if (k % 2 == 0) throw ValueError("conv1d kernel size must be odd, got " + std::to_string(k));
  Conv1dGeometry geo{};
  geo.cin = ws[1];
  geo.cout = ws[0];
  geo.k = k;
  geo.pad = pad < 0 ? static_cast<std::ptrdiff_t>((k - 1) / 2) : pad;
  geo.outer = 1;
  for (std::size_t i = 1; i < time_axis; ++i) geo.outer *= xs[i];
  geo.t_in = xs[time_axis];
  geo.inner = 1;
  for (std::size_t i = time_axis + 1; i < xs.size(); ++i) geo.inner *= xs[i];
  const std::ptrdiff_t t_out = static_cast<std::ptrdiff_t>(geo.t_in) + 2 * geo.pad - static_cast<std::ptrdiff_t>(k) + 1;
  if (t_out <= 0) throw DimensionError("conv1d output length nonpositive for " + to_string(xs));
  geo.t_out = static_cast<std::size_t>(t_out);

  Shape out_shape = xs;
  out_shape[0] = geo.cout;
  out_shape[time_axis] = geo.t_out;
  const std::size_t in_plane = geo.t_in * geo.inner;
  const std::size_t out_plane = geo.t_out * geo.inner;
  std::vector<double> out(numel(out_shape), 0.0);
  const double* X = x.value().ptr();
  const double* W = w.value().ptr();
  // Tap-major: out[:, o, lo:hi] += W[:, :, tap] x[:, o, lo+shift : hi+shift].
  for (std::size_t tap = 0; tap < k; ++tap) {
    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(tap) - geo.pad;
    const auto [lo, hi] = valid_range(geo.t_out, geo.t_in, shift);
    if (lo >= hi) continue;
    const std::size_t len = (hi - lo) * geo.inner;
    const std::size_t xlo = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(lo) + shift) * geo.inner;
    for (std::size_t o = 0; o < geo.outer; ++o)
      detail::gemm_acc(geo.cout, len, geo.cin, W + tap, geo.cin * k, k, X + o * in_plane + xlo, geo.outer * in_plane,
                       out.data() + o * out_plane + lo * geo.inner, geo.outer * out_plane);
  }
  Tensor value(std::move(out_shape), std::move(out), promote(x.dtype(), w.dtype()));
  return make_node("conv1d", std::move(value), {x, w}, [geo, in_plane, out_plane](const Tensor& g, const Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    const Tensor& wv_t = self.inputs[1]->value;
    const double* X = xv.ptr();
    const double* W = wv_t.ptr();
    const double* G = g.ptr();
    Tensor gx, gw;
    const bool need_x = self.inputs[0]->requires_grad;
    const bool need_w = self.inputs[1]->requires_grad;
    std::vector<double> dx(need_x ? xv.numel() : 0, 0.0);
    std::vector<double> dw(need_w ? wv_t.numel() : 0, 0.0);
    std::vector<double> dw_tap(geo.cout * geo.cin);
    for (std::size_t tap = 0; tap < geo.k; ++tap) {
      const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(tap) - geo.pad;
      const auto [lo, hi] = valid_range(geo.t_out, geo.t_in, shift);
      if (lo >= hi) continue;
      const std::size_t len = (hi - lo) * geo.inner;
      const std::size_t xlo = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(lo) + shift) * geo.inner;
      if (need_x)
        for (std::size_t o = 0; o < geo.outer; ++o)
          detail::gemm_acc(geo.cin, len, geo.cout, W + tap, geo.k, geo.cin * geo.k, G + o * out_plane + lo * geo.inner,
                           geo.outer * out_plane, dx.data() + o * in_plane + xlo, geo.outer * in_plane);
      if (need_w) {
        std::fill(dw_tap.begin(), dw_tap.end(), 0.0);
        for (std::size_t o = 0; o < geo.outer; ++o)
          detail::gemm_nt_acc(geo.cout, geo.cin, len, G + o * out_plane + lo * geo.inner, geo.outer * out_plane,
                              X + o * in_plane + xlo, geo.outer * in_plane, dw_tap.data(), geo.cin);
        for (std::size_t c = 0; c < geo.cout * geo.cin; ++c) dw[c * geo.k + tap] = dw_tap[c];
      }
    }
    if (need_x) gx = Tensor(xv.shape(), std::move(dx), xv.dtype());
    if (need_w) gw = Tensor(wv_t.shape(), std::move(dw), wv_t.dtype());
    return std::vector<Tensor>{gx, gw};
  });
}

// ---------------------------------------------------------------------------
// Spatial convolution. Layout viewed as x[ci][images][H][W].

namespace {

struct Conv2dGeometry {
  std::size_t cin, cout, k, images, h, w, oh, ow, stride;
  std::ptrdiff_t pad;
};

// Images per im2col block, keeping the column buffer near 2^15 values.
std::size_t conv2d_chunk(const Conv2dGeometry& geo) {
  const std::size_t per_image = geo.cin * geo.k * geo.k * geo.oh * geo.ow;
  return std::max<std::size_t>(1, (std::size_t{1} << 17) / per_image);
}

// cols[(ci, kh, kw)][(m, oy, ox)] for images [m0, m0 + mc); zero where the
// window falls into padding.
void im2col(const Conv2dGeometry& geo, const double* X, std::size_t m0, std::size_t mc, std::vector<double>& cols) {
  const std::size_t out_plane = geo.oh * geo.ow, in_plane = geo.h * geo.w, n = mc * out_plane;
  cols.assign(geo.cin * geo.k * geo.k * n, 0.0);
  for (std::size_t ci = 0; ci < geo.cin; ++ci)
    for (std::size_t kh = 0; kh < geo.k; ++kh) {
      const auto [ylo, yhi] = valid_range(geo.oh, geo.h, static_cast<std::ptrdiff_t>(kh) - geo.pad, geo.stride);
      for (std::size_t kw = 0; kw < geo.k; ++kw) {
        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(kw) - geo.pad;
        const auto [xlo, xhi] = valid_range(geo.ow, geo.w, sx, geo.stride);
        double* row = cols.data() + ((ci * geo.k + kh) * geo.k + kw) * n;
        for (std::size_t m = 0; m < mc; ++m) {
          const double* I = X + (ci * geo.images + m0 + m) * in_plane;
          for (std::size_t oy = ylo; oy < yhi; ++oy) {
            const double* irow = I + (oy * geo.stride + kh - static_cast<std::size_t>(geo.pad)) * geo.w;
            double* crow = row + m * out_plane + oy * geo.ow;
            for (std::size_t ox = xlo; ox < xhi; ++ox)
              crow[ox] = irow[static_cast<std::ptrdiff_t>(ox * geo.stride) + sx];
          }
        }
      }
    }
}

// Scatter-add of column gradients back onto the input gradient.
void col2im(const Conv2dGeometry& geo, const std::vector<double>& dcols, std::size_t m0, std::size_t mc, double* dx) {
  const std::size_t out_plane = geo.oh * geo.ow, in_plane = geo.h * geo.w, n = mc * out_plane;
  for (std::size_t ci = 0; ci < geo.cin; ++ci)
    for (std::size_t kh = 0; kh < geo.k; ++kh) {
      const auto [ylo, yhi] = valid_range(geo.oh, geo.h, static_cast<std::ptrdiff_t>(kh) - geo.pad, geo.stride);
      for (std::size_t kw = 0; kw < geo.k; ++kw) {
        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(kw) - geo.pad;
        const auto [xlo, xhi] = valid_range(geo.ow, geo.w, sx, geo.stride);
        const double* row = dcols.data() + ((ci * geo.k + kh) * geo.k + kw) * n;
        for (std::size_t m = 0; m < mc; ++m) {
          double* I = dx + (ci * geo.images + m0 + m) * in_plane;
          for (std::size_t oy = ylo; oy < yhi; ++oy) {
            double* irow = I + (oy * geo.stride + kh - static_cast<std::size_t>(geo.pad)) * geo.w;
            const double* crow = row + m * out_plane + oy * geo.ow;
            for (std::size_t ox = xlo; ox < xhi; ++ox)
              irow[static_cast<std::ptrdiff_t>(ox * geo.stride) + sx] += crow[ox];
          }
        }
      }
    }
}

}  // namespace

Var conv2d_spatial(const Var& x, const Var& w, std::size_t stride, std::size_t pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws.size() != 4 || ws[2] != ws[3])
    throw DimensionError("conv2d weight must be [C_out, C_in, k, k], got " + to_string(ws));
  if (xs.size() < 3) throw DimensionError("conv2d input must be [C_in, ..., H, W], got " + to_string(xs));
  if (xs[0] != ws[1])
    throw DimensionError("conv2d channel mismatch: input " + to_string(xs) + ", weight " + to_string(ws));
  if (stride == 0) throw ValueError("conv2d stride must be positive");
  Conv2dGeometry geo{};
  geo.cin = ws[1];
  geo.cout = ws[0];
  geo.k = ws[2];
  geo.stride = stride;
  geo.pad = static_cast<std::ptrdiff_t>(pad);
  geo.h = xs[xs.size() - 2];
  geo.w = xs[xs.size() - 1];
  geo.images = 1;
  for (std::size_t i = 1; i + 2 < xs.size(); ++i) geo.images *= xs[i];
  const std::ptrdiff_t oh = (static_cast<std::ptrdiff_t>(geo.h) + 2 * geo.pad - static_cast<std::ptrdiff_t>(geo.k)) /
                                static_cast<std::ptrdiff_t>(stride) + 1;
  const std::ptrdiff_t ow = (static_cast<std::ptrdiff_t>(geo.w) + 2 * geo.pad - static_cast<std::ptrdiff_t>(geo.k)) /
                                static_cast<std::ptrdiff_t>(stride) + 1;
  if (static_cast<std::ptrdiff_t>(geo.h) + 2 * geo.pad < static_cast<std::ptrdiff_t>(geo.k) ||
      static_cast<std::ptrdiff_t>(geo.w) + 2 * geo.pad < static_cast<std::ptrdiff_t>(geo.k) || oh <= 0 || ow <= 0)
    throw DimensionError("conv2d output extent nonpositive for input " + to_string(xs));
  geo.oh = static_cast<std::size_t>(oh);
  geo.ow = static_cast<std::size_t>(ow);

  Shape out_shape = xs;
  out_shape[0] = geo.cout;
  out_shape[xs.size() - 2] = geo.oh;
  out_shape[xs.size() - 1] = geo.ow;
  std::vector<double> out(numel(out_shape), 0.0);
  const double* X = x.value().ptr();
  const double* W = w.value().ptr();
  const std::size_t rows = geo.cin * geo.k * geo.k;
  const std::size_t out_plane = geo.oh * geo.ow;
  const std::size_t chunk = conv2d_chunk(geo);
  std::vector<double> cols;
  for (std::size_t m0 = 0; m0 < geo.images; m0 += chunk) {
    const std::size_t mc = std::min(chunk, geo.images - m0);
    const std::size_t n = mc * out_plane;
    im2col(geo, X, m0, mc, cols);
    detail::gemm_acc(geo.cout, n, rows, W, rows, 1, cols.data(), n, out.data() + m0 * out_plane,
                     geo.images * out_plane);
  }
  Tensor value(std::move(out_shape), std::move(out), promote(x.dtype(), w.dtype()));
  return make_node("conv2d", std::move(value), {x, w}, [geo](const Tensor& g, const Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    const Tensor& wt = self.inputs[1]->value;
    const double* X = xv.ptr();
    const double* W = wt.ptr();
    const double* G = g.ptr();
    const bool need_x = self.inputs[0]->requires_grad;
    const bool need_w = self.inputs[1]->requires_grad;
    const std::size_t rows = geo.cin * geo.k * geo.k;
    const std::size_t out_plane = geo.oh * geo.ow;
    const std::size_t chunk = conv2d_chunk(geo);
    std::vector<double> dx(need_x ? xv.numel() : 0, 0.0);
    std::vector<double> dw(need_w ? wt.numel() : 0, 0.0);
    std::vector<double> cols, dcols;
    for (std::size_t m0 = 0; m0 < geo.images; m0 += chunk) {
      const std::size_t mc = std::min(chunk, geo.images - m0);
      const std::size_t n = mc * out_plane;
      if (need_w) {
        im2col(geo, X, m0, mc, cols);
        detail::gemm_nt_acc(geo.cout, rows, n, G + m0 * out_plane, geo.images * out_plane, cols.data(), n,
                            dw.data(), rows);
      }
      if (need_x) {
        dcols.assign(rows * n, 0.0);
        detail::gemm_acc(rows, n, geo.cout, W, 1, rows, G + m0 * out_plane, geo.images * out_plane, dcols.data(), n);
        col2im(geo, dcols, m0, mc, dx.data());
      }
    }
    Tensor gx, gw;
    if (need_x) gx = Tensor(xv.shape(), std::move(dx), xv.dtype());
    if (need_w) gw = Tensor(wt.shape(), std::move(dw), wt.dtype());
    return std::vector<Tensor>{gx, gw};
  });
}

// ---------------------------------------------------------------------------
// Reductions.

Var max_axis(const Var& x, std::size_t axis) {
  const auto s = split_at(x.shape(), axis);
  const Shape out_shape = drop_axis(x.shape(), axis);
  std::vector<double> out(s.outer * s.inner);
  std::vector<std::size_t> arg(out.size());
  const double* src = x.value().ptr();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      std::size_t best = 0;
      double mx = src[base];
      for (std::size_t e = 1; e < s.extent; ++e)
        if (src[base + e * s.inner] > mx) {
          mx = src[base + e * s.inner];
          best = e;
        }
      out[o * s.inner + i] = mx;
      arg[o * s.inner + i] = best;
    }
  Tensor value(out_shape, std::move(out), x.dtype());
  return make_node("max_axis", std::move(value), {x}, [s, arg = std::move(arg)](const Tensor& g, const Node& self) {
    const Tensor& in = self.inputs[0]->value;
    std::vector<double> gx(in.numel(), 0.0);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t r = o * s.inner + i;
        gx[o * s.extent * s.inner + arg[r] * s.inner + i] = g[r];
      }
    return std::vector<Tensor>{Tensor(in.shape(), std::move(gx), in.dtype())};
  });
}

Var mean_axis(const Var& x, std::size_t axis) {
  const auto s = split_at(x.shape(), axis);
  const Shape out_shape = drop_axis(x.shape(), axis);
  std::vector<double> out(s.outer * s.inner, 0.0);
  const double* src = x.value().ptr();
  const double inv = 1.0 / static_cast<double>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o) {
    double* row = out.data() + o * s.inner;
    for (std::size_t e = 0; e < s.extent; ++e) {
      const double* in = src + (o * s.extent + e) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) row[i] += in[i];
    }
    for (std::size_t i = 0; i < s.inner; ++i) row[i] *= inv;
  }
  Tensor value(out_shape, std::move(out), x.dtype());
  return make_node("mean_axis", std::move(value), {x}, [s, inv](const Tensor& g, const Node& self) {
    const Tensor& in = self.inputs[0]->value;
    std::vector<double> gx(in.numel());
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t e = 0; e < s.extent; ++e)
        for (std::size_t i = 0; i < s.inner; ++i)
          gx[(o * s.extent + e) * s.inner + i] = g[o * s.inner + i] * inv;
    return std::vector<Tensor>{Tensor(in.shape(), std::move(gx), in.dtype())};
  });
}

// ---------------------------------------------------------------------------
// Batch normalization. Kept axes are moved to the front and flattened to
// [channels, reduce] so the core works on contiguous rows.

namespace {

struct BnLayout {
  std::vector<std::size_t> perm;
  Shape permuted;
  std::size_t channels = 1;
  std::size_t reduce = 1;
};

BnLayout bn_layout(const Shape& shape, const std::vector<std::size_t>& reduce_axes, const Shape& param_shape) {
  BnLayout lay;
  std::vector<bool> reduced(shape.size(), false);
  for (auto a : reduce_axes) {
    if (a >= shape.size()) throw DimensionError("batchnorm reduce axis out of range for " + to_string(shape));
    reduced[a] = true;
  }
  Shape kept;
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (!reduced[i]) {
      lay.perm.push_back(i);
      kept.push_back(shape[i]);
      lay.channels *= shape[i];
    }
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (reduced[i]) {
      lay.perm.push_back(i);
      lay.reduce *= shape[i];
    }
  for (auto p : lay.perm) lay.permuted.push_back(shape[p]);
  if (numel(param_shape) != lay.channels)
    throw DimensionError("batchnorm parameter shape " + to_string(param_shape) + " does not match kept axes of " +
                         to_string(shape));
  return lay;
}

Var bn_wrap(const Var& x, const BnLayout& lay, const std::function<Var(const Var&)>& core) {
  Var xp = permute(x, lay.perm);
  Var y2 = core(reshape(xp, {lay.channels, lay.reduce}));
  return permute(reshape(y2, lay.permuted), inverse_permutation(lay.perm));
}

}  // namespace

Var batchnorm_train(const Var& x, const Var& gamma, const Var& beta, const std::vector<std::size_t>& reduce_axes,
                    double eps, BatchStats* stats) {
  if (!(eps > 0)) throw ValueError("batchnorm eps must be positive");
  const BnLayout lay = bn_layout(x.shape(), reduce_axes, gamma.shape());
  if (beta.shape() != gamma.shape()) throw DimensionError("batchnorm gamma/beta shapes differ");
  const std::size_t C = lay.channels, R = lay.reduce;
  return bn_wrap(x, lay, [&](const Var& x2) {
    const double* X = x2.value().ptr();
    const double* G = gamma.value().ptr();
    const double* B = beta.value().ptr();
    std::vector<double> y(C * R), xhat(C * R), inv_std(C), mu(C), var(C);
    for (std::size_t c = 0; c < C; ++c) {
      const double* row = X + c * R;
      double m = 0.0;
      for (std::size_t r = 0; r < R; ++r) m += row[r];
      m /= static_cast<double>(R);
      double v = 0.0;
      for (std::size_t r = 0; r < R; ++r) v += (row[r] - m) * (row[r] - m);
      v /= static_cast<double>(R);
      mu[c] = m;
      var[c] = v;
      inv_std[c] = 1.0 / std::sqrt(v + eps);
      for (std::size_t r = 0; r < R; ++r) {
        xhat[c * R + r] = (row[r] - m) * inv_std[c];
        y[c * R + r] = G[c] * xhat[c * R + r] + B[c];
      }
    }
    if (stats != nullptr) {
      stats->mean = Tensor(gamma.shape(), mu, DType::f64);
      stats->var = Tensor(gamma.shape(), var, DType::f64);
    }
    const DType dt = promote(x2.dtype(), gamma.dtype());
    Tensor value({C, R}, std::move(y), dt);
    return make_node("batchnorm", std::move(value), {x2, gamma, beta},
                     [C, R, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Tensor& g, const Node& self) {
                       const Tensor& gam = self.inputs[1]->value;
                       std::vector<double> dx(C * R), dgamma(C), dbeta(C);
                       for (std::size_t c = 0; c < C; ++c) {
                         double sg = 0.0, sgx = 0.0;
                         for (std::size_t r = 0; r < R; ++r) {
                           sg += g[c * R + r];
                           sgx += g[c * R + r] * xhat[c * R + r];
                         }
                         dbeta[c] = sg;
                         dgamma[c] = sgx;
                         const double k = gam[c] * inv_std[c] / static_cast<double>(R);
                         for (std::size_t r = 0; r < R; ++r)
                           dx[c * R + r] = k * (static_cast<double>(R) * g[c * R + r] - sg - xhat[c * R + r] * sgx);
                       }
                       return std::vector<Tensor>{
                           Tensor({C, R}, std::move(dx), self.inputs[0]->value.dtype()),
                           Tensor(gam.shape(), std::move(dgamma), gam.dtype()),
                           Tensor(self.inputs[2]->value.shape(), std::move(dbeta), self.inputs[2]->value.dtype())};
                     });
  });
}

Var batchnorm_eval(const Var& x, const Var& gamma, const Var& beta, const std::vector<std::size_t>& reduce_axes,
                   const BatchStats& running, double eps) {
  if (!(eps > 0)) throw ValueError("batchnorm eps must be positive");
  const BnLayout lay = bn_layout(x.shape(), reduce_axes, gamma.shape());
  if (beta.shape() != gamma.shape()) throw DimensionError("batchnorm gamma/beta shapes differ");
  if (running.mean.numel() != lay.channels || running.var.numel() != lay.channels)
    throw DimensionError("batchnorm running statistics do not match channels");
  const std::size_t C = lay.channels, R = lay.reduce;
  return bn_wrap(x, lay, [&](const Var& x2) {
    const double* X = x2.value().ptr();
    const double* G = gamma.value().ptr();
    const double* B = beta.value().ptr();
    std::vector<double> y(C * R), xhat(C * R), inv_std(C);
    for (std::size_t c = 0; c < C; ++c) {
      inv_std[c] = 1.0 / std::sqrt(running.var[c] + eps);
      for (std::size_t r = 0; r < R; ++r) {
        xhat[c * R + r] = (X[c * R + r] - running.mean[c]) * inv_std[c];
        y[c * R + r] = G[c] * xhat[c * R + r] + B[c];
      }
    }
    const DType dt = promote(x2.dtype(), gamma.dtype());
    Tensor value({C, R}, std::move(y), dt);
    return make_node("batchnorm", std::move(value), {x2, gamma, beta},
                     [C, R, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Tensor& g, const Node& self) {
                       const Tensor& gam = self.inputs[1]->value;
                       std::vector<double> dx(C * R), dgamma(C, 0.0), dbeta(C, 0.0);
                       for (std::size_t c = 0; c < C; ++c)
                         for (std::size_t r = 0; r < R; ++r) {
                           const double gv = g[c * R + r];
                           dx[c * R + r] = gv * gam[c] * inv_std[c];
                           dgamma[c] += gv * xhat[c * R + r];
                           dbeta[c] += gv;
                         }
                       return std::vector<Tensor>{
                           Tensor({C, R}, std::move(dx), self.inputs[0]->value.dtype()),
                           Tensor(gam.shape(), std::move(dgamma), gam.dtype()),
                           Tensor(self.inputs[2]->value.shape(), std::move(dbeta), self.inputs[2]->value.dtype())};
                     });
  });
}

}  // namespace glgait
