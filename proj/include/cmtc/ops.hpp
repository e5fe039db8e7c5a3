#pragma once

#include <cmath>
#include <cstring>
#include <span>
#include <vector>

#include "cmtc/kernels.hpp"
#include "cmtc/tensor.hpp"

namespace cmtc {

namespace detail {

template <typename T>
bool wants_grad(std::initializer_list<const Tensor<T>*> ins) {
  if (!active_tape<T>()) return false;
  for (const auto* t : ins) {
    if (t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
void record(std::initializer_list<const Tensor<T>*> ins, Tensor<T>& out,
            std::function<void()> backward_fn) {
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  inputs.reserve(ins.size());
  for (const auto* t : ins) inputs.push_back(t->impl_ptr());
  active_tape<T>()->record(inputs, out.impl_ptr(), std::move(backward_fn));
}

// Broadcast of b onto a: right-aligned, every b dim either 1 or equal.
inline void check_broadcast(const char* op, const Shape& a, const Shape& b) {
  bool ok = b.size() <= a.size();
  if (ok) {
    for (std::size_t i = 0; i < b.size(); ++i) {
      const auto ad = a[a.size() - 1 - i];
      const auto bd = b[b.size() - 1 - i];
      if (bd != 1 && bd != ad) {
        ok = false;
        break;
      }
    }
  }
  if (!ok) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b) + " onto " +
                     shape_str(a));
  }
}

// Per-a-axis element strides into b (0 where b broadcasts).
inline std::vector<std::int64_t> broadcast_strides(const Shape& a, const Shape& b) {
  std::vector<std::int64_t> bstride_raw(b.size());
  std::int64_t s = 1;
  for (std::size_t i = b.size(); i-- > 0;) {
    bstride_raw[i] = s;
    s *= b[i];
  }
  std::vector<std::int64_t> out(a.size(), 0);
  const std::size_t off = a.size() - b.size();
  for (std::size_t i = 0; i < b.size(); ++i) {
    out[off + i] = (b[i] == 1) ? 0 : bstride_raw[i];
  }
  return out;
}

// Calls f(ai, bi) for every element of a with the matching (broadcast)
// element of b, in ascending ai order.
template <typename F>
void bcast_loop(const Shape& as, const Shape& bs, F&& f) {
  const std::int64_t an = numel(as);
  if (numel(bs) == an && as.size() == bs.size() && as == bs) {
    for (std::int64_t i = 0; i < an; ++i) f(i, i);
    return;
  }
  if (numel(bs) == 1) {
    for (std::int64_t i = 0; i < an; ++i) f(i, 0);
    return;
  }
  const auto bstr = broadcast_strides(as, bs);
  const std::size_t rank = as.size();
  std::vector<std::int64_t> idx(rank, 0);
  std::int64_t bi = 0;
  for (std::int64_t ai = 0; ai < an; ++ai) {
    f(ai, bi);
    for (std::size_t r = rank; r-- > 0;) {
      ++idx[r];
      bi += bstr[r];
      if (idx[r] < as[r]) break;
      bi -= bstr[r] * as[r];
      idx[r] = 0;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (b broadcasts onto a)
// ---------------------------------------------------------------------------

enum class EwOp { Add, Sub, Mul, Div };

template <typename T>
Tensor<T> ewise(const Tensor<T>& a, const Tensor<T>& b, EwOp op) {
  const char* name = op == EwOp::Add   ? "add"
                     : op == EwOp::Sub ? "sub"
                     : op == EwOp::Mul ? "mul"
                                       : "div";
  detail::check_broadcast(name, a.shape(), b.shape());
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<T> out(static_cast<std::size_t>(a.numel()));
  switch (op) {
    case EwOp::Add:
      detail::bcast_loop(a.shape(), b.shape(), [&](auto ai, auto bi) { out[ai] = av[ai] + bv[bi]; });
      break;
    case EwOp::Sub:
      detail::bcast_loop(a.shape(), b.shape(), [&](auto ai, auto bi) { out[ai] = av[ai] - bv[bi]; });
      break;
    case EwOp::Mul:
      detail::bcast_loop(a.shape(), b.shape(), [&](auto ai, auto bi) { out[ai] = av[ai] * bv[bi]; });
      break;
    case EwOp::Div:
      detail::bcast_loop(a.shape(), b.shape(), [&](auto ai, auto bi) { out[ai] = av[ai] / bv[bi]; });
      break;
  }
  Tensor<T> res = Tensor<T>::from(a.shape(), std::move(out));
  if (detail::wants_grad<T>({&a, &b})) {
    auto ai_ = a.impl_ptr();
    auto bi_ = b.impl_ptr();
    auto oi_ = res.impl_ptr();
    detail::record<T>({&a, &b}, res, [ai_, bi_, oi_, op] {
      const auto& g = oi_->grad;
      if (ai_->requires_grad) {
        auto& da = ai_->grad_buffer();
        if (op == EwOp::Mul) {
          detail::bcast_loop(ai_->shape, bi_->shape,
                             [&](auto x, auto y) { da[x] += g[x] * bi_->values[y]; });
        } else if (op == EwOp::Div) {
          detail::bcast_loop(ai_->shape, bi_->shape,
                             [&](auto x, auto y) { da[x] += g[x] / bi_->values[y]; });
        } else {
          for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i];
        }
      }
      if (bi_->requires_grad) {
        auto& db = bi_->grad_buffer();
        switch (op) {
          case EwOp::Add:
            detail::bcast_loop(ai_->shape, bi_->shape, [&](auto x, auto y) { db[y] += g[x]; });
            break;
          case EwOp::Sub:
            detail::bcast_loop(ai_->shape, bi_->shape, [&](auto x, auto y) { db[y] -= g[x]; });
            break;
          case EwOp::Mul:
            detail::bcast_loop(ai_->shape, bi_->shape,
                               [&](auto x, auto y) { db[y] += g[x] * ai_->values[x]; });
            break;
          case EwOp::Div:
            detail::bcast_loop(ai_->shape, bi_->shape, [&](auto x, auto y) {
              db[y] -= g[x] * ai_->values[x] / (bi_->values[y] * bi_->values[y]);
            });
            break;
        }
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return ewise(a, b, EwOp::Add);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return ewise(a, b, EwOp::Sub);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return ewise(a, b, EwOp::Mul);
}
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return ewise(a, b, EwOp::Div);
}

/// Multiply by a plain scalar constant.
template <typename T>
Tensor<T> scale(const Tensor<T>& a, double c) {
  const auto av = a.values();
  std::vector<T> out(av.size());
  const T cc = static_cast<T>(c);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * cc;
  Tensor<T> res = Tensor<T>::from(a.shape(), std::move(out));
  if (detail::wants_grad<T>({&a})) {
    auto ai_ = a.impl_ptr();
    auto oi_ = res.impl_ptr();
    detail::record<T>({&a}, res, [ai_, oi_, cc] {
      const auto& g = oi_->grad;
      auto& da = ai_->grad_buffer();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i] * cc;
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Matrix multiply (rank 2, or equal leading batch dims)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() < 2 || as.size() != bs.size()) {
    throw ShapeError("matmul: ranks must match and be >= 2, got " + shape_str(as) + " and " +
                     shape_str(bs));
  }
  for (std::size_t i = 0; i + 2 < as.size(); ++i) {
    if (as[i] != bs[i]) {
      throw ShapeError("matmul: batch dims differ, " + shape_str(as) + " vs " + shape_str(bs));
    }
  }
  const std::int64_t M = as[as.size() - 2];
  const std::int64_t K = as[as.size() - 1];
  const std::int64_t Kb = bs[bs.size() - 2];
  const std::int64_t N = bs[bs.size() - 1];
  if (K != Kb) {
    throw ShapeError("matmul: inner dims differ, " + shape_str(as) + " x " + shape_str(bs));
  }
  std::int64_t batch = 1;
  for (std::size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];

  Shape os(as.begin(), as.end() - 2);
  os.push_back(M);
  os.push_back(N);
  std::vector<T> out(static_cast<std::size_t>(batch * M * N), T(0));
  const T* ap = a.values().data();
  const T* bp = b.values().data();
  for (std::int64_t i = 0; i < batch; ++i) {
    detail::gemm_nn(M, N, K, ap + i * M * K, bp + i * K * N, out.data() + i * M * N);
  }
  Tensor<T> res = Tensor<T>::from(std::move(os), std::move(out));
  if (detail::wants_grad<T>({&a, &b})) {
    auto ai_ = a.impl_ptr();
    auto bi_ = b.impl_ptr();
    auto oi_ = res.impl_ptr();
    detail::record<T>({&a, &b}, res, [ai_, bi_, oi_, batch, M, N, K] {
      const T* g = oi_->grad.data();
      if (ai_->requires_grad) {
        auto& da = ai_->grad_buffer();
        std::vector<T> bt(static_cast<std::size_t>(K * N));
        for (std::int64_t i = 0; i < batch; ++i) {
          detail::transpose(K, N, bi_->values.data() + i * K * N, bt.data());
          detail::gemm_nn(M, K, N, g + i * M * N, bt.data(), da.data() + i * M * K);
        }
      }
      if (bi_->requires_grad) {
        auto& db = bi_->grad_buffer();
        std::vector<T> at(static_cast<std::size_t>(M * K));
        for (std::int64_t i = 0; i < batch; ++i) {
          detail::transpose(M, K, ai_->values.data() + i * M * K, at.data());
          detail::gemm_nn(K, N, M, at.data(), g + i * M * N, db.data() + i * K * N);
        }
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose2d: expected rank 2, got " + shape_str(a.shape()));
  const std::int64_t R = a.dim(0);
  const std::int64_t C = a.dim(1);
  std::vector<T> out(static_cast<std::size_t>(R * C));
  detail::transpose(R, C, a.values().data(), out.data());
  Tensor<T> res = Tensor<T>::from({C, R}, std::move(out));
  if (detail::wants_grad<T>({&a})) {
    auto ai_ = a.impl_ptr();
    auto oi_ = res.impl_ptr();
    detail::record<T>({&a}, res, [ai_, oi_, R, C] {
      auto& da = ai_->grad_buffer();
      const auto& g = oi_->grad;
      for (std::int64_t r = 0; r < R; ++r) {
        for (std::int64_t c = 0; c < C; ++c) da[r * C + c] += g[c * R + r];
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> vals(a.values().begin(), a.values().end());
  Tensor<T> res = Tensor<T>::from(std::move(shape), std::move(vals));
  if (detail::wants_grad<T>({&a})) {
    auto ai_ = a.impl_ptr();
    auto oi_ = res.impl_ptr();
    detail::record<T>({&a}, res, [ai_, oi_] {
      auto& da = ai_->grad_buffer();
      const auto& g = oi_->grad;
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i];
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Concat / slice
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const auto& s0 = parts[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range for " + shape_str(s0));
  Shape os = s0;
  std::int64_t axis_total = 0;
  for (const auto& p : parts) {
    const auto& ps = p.shape();
    if (ps.size() != s0.size()) {
      throw ShapeError("concat: rank mismatch, " + shape_str(ps) + " vs " + shape_str(s0));
    }
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (i != axis && ps[i] != s0[i]) {
        throw ShapeError("concat: non-axis dims differ, " + shape_str(ps) + " vs " + shape_str(s0));
      }
    }
    axis_total += ps[axis];
  }
  os[axis] = axis_total;

  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];

  std::vector<T> out(static_cast<std::size_t>(numel(os)));
  std::int64_t axis_off = 0;
  for (const auto& p : parts) {
    const std::int64_t pl = p.shape()[axis];
    const T* src = p.values().data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::memcpy(out.data() + (o * axis_total + axis_off) * inner, src + o * pl * inner,
                  static_cast<std::size_t>(pl * inner) * sizeof(T));
    }
    axis_off += pl;
  }
  Tensor<T> res = Tensor<T>::from(std::move(os), std::move(out));

  bool any_grad = false;
  for (const auto& p : parts) any_grad |= p.requires_grad();
  if (active_tape<T>() && any_grad) {
    std::vector<std::shared_ptr<detail::TensorImpl<T>>> impls;
    impls.reserve(parts.size());
    for (const auto& p : parts) impls.push_back(p.impl_ptr());
    auto oi_ = res.impl_ptr();
    active_tape<T>()->record(impls, res.impl_ptr(), [impls, oi_, outer, inner, axis, axis_total] {
      const auto& g = oi_->grad;
      std::int64_t axis_off = 0;
      for (const auto& pi : impls) {
        const std::int64_t pl = pi->shape[axis];
        if (pi->requires_grad) {
          auto& dp = pi->grad_buffer();
          for (std::int64_t o = 0; o < outer; ++o) {
            const T* gs = g.data() + (o * axis_total + axis_off) * inner;
            T* dst = dp.data() + o * pl * inner;
            for (std::int64_t i = 0; i < pl * inner; ++i) dst[i] += gs[i];
          }
        }
        axis_off += pl;
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::int64_t start, std::int64_t len) {
  const auto& s = a.shape();
  if (axis >= s.size()) throw ShapeError("slice: axis out of range for " + shape_str(s));
  if (start < 0 || len < 1 || start + len > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") invalid for axis size " + std::to_string(s[axis]));
  }
  Shape os = s;
  os[axis] = len;
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::int64_t L = s[axis];

  std::vector<T> out(static_cast<std::size_t>(numel(os)));
  const T* src = a.values().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::memcpy(out.data() + o * len * inner, src + (o * L + start) * inner,
                static_cast<std::size_t>(len * inner) * sizeof(T));
  }
  Tensor<T> res = Tensor<T>::from(std::move(os), std::move(out));
  if (detail::wants_grad<T>({&a})) {
    auto ai_ = a.impl_ptr();
    auto oi_ = res.impl_ptr();
    detail::record<T>({&a}, res, [ai_, oi_, outer, inner, L, start, len] {
      auto& da = ai_->grad_buffer();
      const auto& g = oi_->grad;
      for (std::int64_t o = 0; o < outer; ++o) {
        const T* gs = g.data() + o * len * inner;
        T* dst = da.data() + (o * L + start) * inner;
        for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += gs[i];
      }
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

/// Numerically stable softmax along one axis (max subtraction).
template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
  const auto& s = a.shape();
  if (axis >= s.size()) throw ShapeError("softmax: axis out of range for " + shape_str(s));
  std::int64_t outer = 1, inner = 1;
  const std::int64_t L = s[axis];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];

  const T* x = a.values().data();
  std::vector<T> out(static_cast<std::size_t>(a.numel()));
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * L * inner + in;
      T m = x[base];
      for (std::int64_t l = 1; l < L; ++l) m = std::max(m, x[base + l * inner]);
      T z = T(0);
      for (std::int64_t l = 0; l < L; ++l) {
        const T e = std::exp(x[base + l * inner] - m);
        out[base + l * inner] = e;
        z += e;
      }
      const T invz = T(1) / z;
      for (std::int64_t l = 0; l < L; ++l) out[base + l * inner] *= invz;
    }
  }
  Tensor<T> res = Tensor<T>::from(s, std::move(out));
  if (detail::wants_grad<T>({&a})) {
    auto ai_ = a.impl_ptr();
    auto oi_ = res.impl_ptr();
    detail::record<T>({&a}, res, [ai_, oi_, outer, inner, L] {
      auto& da = ai_->grad_buffer();
      const auto& g = oi_->grad;
      const auto& y = oi_->values;
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
          const std::int64_t base = o * L * inner + in;
          T dot = T(0);
          for (std::int64_t l = 0; l < L; ++l) dot += g[base + l * inner] * y[base + l * inner];
          for (std::int64_t l = 0; l < L; ++l) {
            const std::int64_t i = base + l * inner;
            da[i] += y[i] * (g[i] - dot);
          }
        }
      }
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) {
    throw ValueError("leaky_relu: slope must lie in (0,1), got " + std::to_string(slope));
  }
  const T sl = static_cast<T>(slope);
  const auto x = a.values();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] >= T(0) ? x[i] : sl * x[i];
  Tensor<T> res = Tensor<T>::from(a.shape(), std::move(out));
  if (detail::wants_grad<T>({&a})) {
    auto ai_ = a.impl_ptr();
    auto oi_ = res.impl_ptr();
    detail::record<T>({&a}, res, [ai_, oi_, sl] {
      auto& da = ai_->grad_buffer();
      const auto& g = oi_->grad;
      const auto& x = ai_->values;
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i] * (x[i] >= T(0) ? T(1) : sl);
    });
  }
  return res;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  const auto x = a.values();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    if (v >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T(1) + e);
    }
  }
  Tensor<T> res = Tensor<T>::from(a.shape(), std::move(out));
  if (detail::wants_grad<T>({&a})) {
    auto ai_ = a.impl_ptr();
    auto oi_ = res.impl_ptr();
    detail::record<T>({&a}, res, [ai_, oi_] {
      auto& da = ai_->grad_buffer();
      const auto& g = oi_->grad;
      const auto& y = oi_->values;
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i] * y[i] * (T(1) - y[i]);
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// 2-D convolution, NCHW input, OIHW weight, per-channel bias.
/// Output spatial size: floor((H + 2*pad - Kh)/stride) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::int64_t stride,
                 std::int64_t pad) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4) {
    throw ShapeError("conv2d: expected rank-4 input and weight, got " + shape_str(xs) + " and " +
                     shape_str(ws));
  }
  if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
  if (pad < 0) throw ValueError("conv2d: padding must be >= 0");
  const std::int64_t N = xs[0], Ci = xs[1], H = xs[2], W = xs[3];
  const std::int64_t O = ws[0], Kh = ws[2], Kw = ws[3];
  if (ws[1] != Ci) {
    throw ShapeError("conv2d: input has " + std::to_string(Ci) + " channels but weight expects " +
                     std::to_string(ws[1]) + " (input " + shape_str(xs) + ", weight " +
                     shape_str(ws) + ")");
  }
  if (b.rank() != 1 || b.dim(0) != O) {
    throw ShapeError("conv2d: bias must have shape (" + std::to_string(O) + "), got " +
                     shape_str(b.shape()));
  }
  const std::int64_t OH = (H + 2 * pad - Kh) / stride + 1;
  const std::int64_t OW = (W + 2 * pad - Kw) / stride + 1;
  if (H + 2 * pad < Kh || W + 2 * pad < Kw || OH < 1 || OW < 1) {
    throw ShapeError("conv2d: kernel " + std::to_string(Kh) + "x" + std::to_string(Kw) +
                     " does not fit input " + shape_str(xs) + " with pad " + std::to_string(pad));
  }

  const std::int64_t CKK = Ci * Kh * Kw;
  const std::int64_t P = OH * OW;
  const bool unit = (Kh == 1 && Kw == 1 && stride == 1 && pad == 0);

  std::vector<T> out(static_cast<std::size_t>(N * O * P), T(0));
  const T* xp = x.values().data();
  const T* wp = w.values().data();
  const T* bp = b.values().data();
  std::vector<T> cols;
  if (!unit) cols.resize(static_cast<std::size_t>(CKK * P));
  for (std::int64_t n = 0; n < N; ++n) {
    const T* img = xp + n * Ci * H * W;
    const T* colp = img;
    if (!unit) {
      detail::im2col(img, Ci, H, W, Kh, Kw, stride, pad, OH, OW, cols.data());
      colp = cols.data();
    }
    T* dst = out.data() + n * O * P;
    detail::gemm_nn(O, P, CKK, wp, colp, dst);
    for (std::int64_t o = 0; o < O; ++o) {
      const T bias = bp[o];
      T* row = dst + o * P;
      for (std::int64_t p = 0; p < P; ++p) row[p] += bias;
    }
  }
  Tensor<T> res = Tensor<T>::from({N, O, OH, OW}, std::move(out));
  if (detail::wants_grad<T>({&x, &w, &b})) {
    auto xi_ = x.impl_ptr();
    auto wi_ = w.impl_ptr();
    auto bi_ = b.impl_ptr();
    auto oi_ = res.impl_ptr();
    detail::record<T>(
        {&x, &w, &b}, res, [xi_, wi_, bi_, oi_, N, Ci, H, W, O, Kh, Kw, stride, pad, OH, OW] {
          const std::int64_t CKK = Ci * Kh * Kw;
          const std::int64_t P = OH * OW;
          const bool unit = (Kh == 1 && Kw == 1 && stride == 1 && pad == 0);
          const auto& g = oi_->grad;
          const T* xp = xi_->values.data();
          const T* wp = wi_->values.data();

          if (bi_->requires_grad) {
            auto& db = bi_->grad_buffer();
            for (std::int64_t n = 0; n < N; ++n) {
              for (std::int64_t o = 0; o < O; ++o) {
                const T* row = g.data() + (n * O + o) * P;
                T acc = T(0);
                for (std::int64_t p = 0; p < P; ++p) acc += row[p];
                db[o] += acc;
              }
            }
          }

          std::vector<T> cols, colsT, wT, dcols;
          if (wi_->requires_grad) colsT.resize(static_cast<std::size_t>(P * CKK));
          if (!unit && (wi_->requires_grad || xi_->requires_grad)) {
            cols.resize(static_cast<std::size_t>(CKK * P));
          }
          if (xi_->requires_grad) {
            wT.resize(static_cast<std::size_t>(CKK * O));
            detail::transpose(O, CKK, wp, wT.data());
            if (!unit) dcols.resize(static_cast<std::size_t>(CKK * P));
          }
          for (std::int64_t n = 0; n < N; ++n) {
            const T* img = xp + n * Ci * H * W;
            const T* gout = g.data() + n * O * P;
            const T* colp = img;
            if (!unit && (wi_->requires_grad || xi_->requires_grad)) {
              detail::im2col(img, Ci, H, W, Kh, Kw, stride, pad, OH, OW, cols.data());
              colp = cols.data();
            }
            if (wi_->requires_grad) {
              auto& dw = wi_->grad_buffer();
              detail::transpose(CKK, P, colp, colsT.data());
              detail::gemm_nn(O, CKK, P, gout, colsT.data(), dw.data());
            }
            if (xi_->requires_grad) {
              auto& dx = xi_->grad_buffer();
              if (unit) {
                detail::gemm_nn(CKK, P, O, wT.data(), gout, dx.data() + n * Ci * H * W);
              } else {
                std::fill(dcols.begin(), dcols.end(), T(0));
                detail::gemm_nn(CKK, P, O, wT.data(), gout, dcols.data());
                detail::col2im(dcols.data(), Ci, H, W, Kh, Kw, stride, pad, OH, OW,
                               dx.data() + n * Ci * H * W);
              }
            }
          }
        });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::int64_t kernel, std::int64_t stride) {
  const auto& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("avg_pool2d: expected rank-4 input, got " + shape_str(xs));
  if (kernel < 1 || stride < 1) throw ValueError("avg_pool2d: kernel and stride must be >= 1");
  const std::int64_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  if (kernel > H || kernel > W) {
    throw ShapeError("avg_pool2d: kernel " + std::to_string(kernel) + " larger than input " +
                     shape_str(xs));
  }
  const std::int64_t OH = (H - kernel) / stride + 1;
  const std::int64_t OW = (W - kernel) / stride + 1;
  const T inv = T(1) / static_cast<T>(kernel * kernel);

  std::vector<T> out(static_cast<std::size_t>(N * C * OH * OW));
  const T* xp = x.values().data();
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const T* plane = xp + nc * H * W;
    T* dst = out.data() + nc * OH * OW;
    for (std::int64_t oh = 0; oh < OH; ++oh) {
      for (std::int64_t ow = 0; ow < OW; ++ow) {
        T acc = T(0);
        for (std::int64_t kh = 0; kh < kernel; ++kh) {
          const T* row = plane + (oh * stride + kh) * W + ow * stride;
          for (std::int64_t kw = 0; kw < kernel; ++kw) acc += row[kw];
        }
        dst[oh * OW + ow] = acc * inv;
      }
    }
  }
  Tensor<T> res = Tensor<T>::from({N, C, OH, OW}, std::move(out));
  if (detail::wants_grad<T>({&x})) {
    auto xi_ = x.impl_ptr();
    auto oi_ = res.impl_ptr();
    detail::record<T>({&x}, res, [xi_, oi_, N, C, H, W, OH, OW, kernel, stride, inv] {
      auto& dx = xi_->grad_buffer();
      const auto& g = oi_->grad;
      for (std::int64_t nc = 0; nc < N * C; ++nc) {
        T* plane = dx.data() + nc * H * W;
        const T* gs = g.data() + nc * OH * OW;
        for (std::int64_t oh = 0; oh < OH; ++oh) {
          for (std::int64_t ow = 0; ow < OW; ++ow) {
            const T v = gs[oh * OW + ow] * inv;
            for (std::int64_t kh = 0; kh < kernel; ++kh) {
              T* row = plane + (oh * stride + kh) * W + ow * stride;
              for (std::int64_t kw = 0; kw < kernel; ++kw) row[kw] += v;
            }
          }
        }
      }
    });
  }
  return res;
}

/// Global average pool: N x C x H x W -> N x C x 1 x 1.
template <typename T>
Tensor<T> global_avg_pool2d(const Tensor<T>& x) {
  const auto& xs = x.shape();
  if (xs.size() != 4) {
    throw ShapeError("global_avg_pool2d: expected rank-4 input, got " + shape_str(xs));
  }
  const std::int64_t NC = xs[0] * xs[1];
  const std::int64_t HW = xs[2] * xs[3];
  const T inv = T(1) / static_cast<T>(HW);
  std::vector<T> out(static_cast<std::size_t>(NC));
  const T* xp = x.values().data();
  for (std::int64_t i = 0; i < NC; ++i) {
    T acc = T(0);
    const T* p = xp + i * HW;
    for (std::int64_t j = 0; j < HW; ++j) acc += p[j];
    out[i] = acc * inv;
  }
  Tensor<T> res = Tensor<T>::from({xs[0], xs[1], 1, 1}, std::move(out));
  if (detail::wants_grad<T>({&x})) {
    auto xi_ = x.impl_ptr();
    auto oi_ = res.impl_ptr();
    detail::record<T>({&x}, res, [xi_, oi_, NC, HW, inv] {
      auto& dx = xi_->grad_buffer();
      const auto& g = oi_->grad;
      for (std::int64_t i = 0; i < NC; ++i) {
        const T v = g[i] * inv;
        T* p = dx.data() + i * HW;
        for (std::int64_t j = 0; j < HW; ++j) p[j] += v;
      }
    });
  }
  return res;
}

/// Global max pool: N x C x H x W -> N x C x 1 x 1. Ties route the gradient
/// to the first maximal element.
template <typename T>
Tensor<T> global_max_pool2d(const Tensor<T>& x) {
  const auto& xs = x.shape();
  if (xs.size() != 4) {
    throw ShapeError("global_max_pool2d: expected rank-4 input, got " + shape_str(xs));
  }
  const std::int64_t NC = xs[0] * xs[1];
  const std::int64_t HW = xs[2] * xs[3];
  std::vector<T> out(static_cast<std::size_t>(NC));
  std::vector<std::int64_t> arg(static_cast<std::size_t>(NC));
  const T* xp = x.values().data();
  for (std::int64_t i = 0; i < NC; ++i) {
    const T* p = xp + i * HW;
    T m = p[0];
    std::int64_t mi = 0;
    for (std::int64_t j = 1; j < HW; ++j) {
      if (p[j] > m) {
        m = p[j];
        mi = j;
      }
    }
    out[i] = m;
    arg[i] = mi;
  }
  Tensor<T> res = Tensor<T>::from({xs[0], xs[1], 1, 1}, std::move(out));
  if (detail::wants_grad<T>({&x})) {
    auto xi_ = x.impl_ptr();
    auto oi_ = res.impl_ptr();
    detail::record<T>({&x}, res, [xi_, oi_, NC, HW, arg = std::move(arg)] {
      auto& dx = xi_->grad_buffer();
      const auto& g = oi_->grad;
      for (std::int64_t i = 0; i < NC; ++i) dx[i * HW + arg[i]] += g[i];
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Single-axis reductions (keep the reduced dim as size 1)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reduce_mean_axis(const Tensor<T>& x, std::size_t axis) {
  const auto& s = x.shape();
  if (axis >= s.size()) throw ShapeError("reduce_mean_axis: axis out of range for " + shape_str(s));
  std::int64_t outer = 1, inner = 1;
  const std::int64_t L = s[axis];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape os = s;
  os[axis] = 1;
  const T inv = T(1) / static_cast<T>(L);
  std::vector<T> out(static_cast<std::size_t>(outer * inner), T(0));
  const T* xp = x.values().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t l = 0; l < L; ++l) {
      const T* src = xp + (o * L + l) * inner;
      T* dst = out.data() + o * inner;
      for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  for (auto& v : out) v *= inv;
  Tensor<T> res = Tensor<T>::from(std::move(os), std::move(out));
  if (detail::wants_grad<T>({&x})) {
    auto xi_ = x.impl_ptr();
    auto oi_ = res.impl_ptr();
    detail::record<T>({&x}, res, [xi_, oi_, outer, inner, L, inv] {
      auto& dx = xi_->grad_buffer();
      const auto& g = oi_->grad;
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t l = 0; l < L; ++l) {
          T* dst = dx.data() + (o * L + l) * inner;
          const T* gs = g.data() + o * inner;
          for (std::int64_t i = 0; i < inner; ++i) dst[i] += gs[i] * inv;
        }
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> reduce_max_axis(const Tensor<T>& x, std::size_t axis) {
  const auto& s = x.shape();
  if (axis >= s.size()) throw ShapeError("reduce_max_axis: axis out of range for " + shape_str(s));
  std::int64_t outer = 1, inner = 1;
  const std::int64_t L = s[axis];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape os = s;
  os[axis] = 1;
  std::vector<T> out(static_cast<std::size_t>(outer * inner));
  std::vector<std::int64_t> arg(static_cast<std::size_t>(outer * inner));
  const T* xp = x.values().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      T m = xp[o * L * inner + i];
      std::int64_t mi = 0;
      for (std::int64_t l = 1; l < L; ++l) {
        const T v = xp[(o * L + l) * inner + i];
        if (v > m) {
          m = v;
          mi = l;
        }
      }
      out[o * inner + i] = m;
      arg[o * inner + i] = mi;
    }
  }
  Tensor<T> res = Tensor<T>::from(std::move(os), std::move(out));
  if (detail::wants_grad<T>({&x})) {
    auto xi_ = x.impl_ptr();
    auto oi_ = res.impl_ptr();
    detail::record<T>({&x}, res, [xi_, oi_, outer, inner, L, arg = std::move(arg)] {
      auto& dx = xi_->grad_buffer();
      const auto& g = oi_->grad;
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
          dx[(o * L + arg[o * inner + i]) * inner + i] += g[o * inner + i];
        }
      }
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Bilinear upsampling (align-corners)
// ---------------------------------------------------------------------------

namespace detail {

struct LerpTap {
  std::int64_t lo;
  std::int64_t hi;
  double frac;  // weight of hi
};

inline std::vector<LerpTap> align_corner_taps(std::int64_t in, std::int64_t out) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(out));
  for (std::int64_t i = 0; i < out; ++i) {
    double src = (out > 1) ? static_cast<double>(i) * static_cast<double>(in - 1) /
                                 static_cast<double>(out - 1)
                           : 0.0;
    auto lo = static_cast<std::int64_t>(std::floor(src));
    lo = std::min(lo, in - 1);
    const std::int64_t hi = std::min(lo + 1, in - 1);
    taps[static_cast<std::size_t>(i)] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace detail

/// Bilinear resize with the align-corners convention: source coordinate for
/// output index i is i*(in-1)/(out-1), so corners map exactly. Works for
/// both up- and downscaling.
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w) {
  const auto& xs = x.shape();
  if (xs.size() != 4) {
    throw ShapeError("upsample_bilinear: expected rank-4 input, got " + shape_str(xs));
  }
  if (out_h < 1 || out_w < 1) throw ValueError("upsample_bilinear: output dims must be >= 1");
  const std::int64_t NC = xs[0] * xs[1], H = xs[2], W = xs[3];
  const auto hts = detail::align_corner_taps(H, out_h);
  const auto wts = detail::align_corner_taps(W, out_w);

  std::vector<T> out(static_cast<std::size_t>(NC * out_h * out_w));
  const T* xp = x.values().data();
  for (std::int64_t nc = 0; nc < NC; ++nc) {
    const T* plane = xp + nc * H * W;
    T* dst = out.data() + nc * out_h * out_w;
    for (std::int64_t oh = 0; oh < out_h; ++oh) {
      const auto& th = hts[static_cast<std::size_t>(oh)];
      const T fh = static_cast<T>(th.frac);
      for (std::int64_t ow = 0; ow < out_w; ++ow) {
        const auto& tw = wts[static_cast<std::size_t>(ow)];
        const T fw = static_cast<T>(tw.frac);
        const T v00 = plane[th.lo * W + tw.lo];
        const T v01 = plane[th.lo * W + tw.hi];
        const T v10 = plane[th.hi * W + tw.lo];
        const T v11 = plane[th.hi * W + tw.hi];
        dst[oh * out_w + ow] = (T(1) - fh) * ((T(1) - fw) * v00 + fw * v01) +
                               fh * ((T(1) - fw) * v10 + fw * v11);
      }
    }
  }
  Tensor<T> res = Tensor<T>::from({xs[0], xs[1], out_h, out_w}, std::move(out));
  if (detail::wants_grad<T>({&x})) {
    auto xi_ = x.impl_ptr();
    auto oi_ = res.impl_ptr();
    detail::record<T>({&x}, res, [xi_, oi_, NC, H, W, out_h, out_w, hts, wts] {
      auto& dx = xi_->grad_buffer();
      const auto& g = oi_->grad;
      for (std::int64_t nc = 0; nc < NC; ++nc) {
        T* plane = dx.data() + nc * H * W;
        const T* gs = g.data() + nc * out_h * out_w;
        for (std::int64_t oh = 0; oh < out_h; ++oh) {
          const auto& th = hts[static_cast<std::size_t>(oh)];
          const T fh = static_cast<T>(th.frac);
          for (std::int64_t ow = 0; ow < out_w; ++ow) {
            const auto& tw = wts[static_cast<std::size_t>(ow)];
            const T fw = static_cast<T>(tw.frac);
            const T v = gs[oh * out_w + ow];
            plane[th.lo * W + tw.lo] += (T(1) - fh) * (T(1) - fw) * v;
            plane[th.lo * W + tw.hi] += (T(1) - fh) * fw * v;
            plane[th.hi * W + tw.lo] += fh * (T(1) - fw) * v;
            plane[th.hi * W + tw.hi] += fh * fw * v;
          }
        }
      }
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Reductions to scalar and losses
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  const auto xv = x.values();
  T acc = T(0);
  for (auto v : xv) acc += v;
  Tensor<T> res = Tensor<T>::scalar(acc);
  if (detail::wants_grad<T>({&x})) {
    auto xi_ = x.impl_ptr();
    auto oi_ = res.impl_ptr();
    detail::record<T>({&x}, res, [xi_, oi_] {
      auto& dx = xi_->grad_buffer();
      const T g = oi_->grad[0];
      for (auto& v : dx) v += g;
    });
  }
  return res;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

/// Mean squared error between same-shape tensors.
template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mse: shapes differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const auto av = a.values();
  const auto bv = b.values();
  const T inv = T(1) / static_cast<T>(a.numel());
  T acc = T(0);
  for (std::size_t i = 0; i < av.size(); ++i) {
    const T d = av[i] - bv[i];
    acc += d * d;
  }
  Tensor<T> res = Tensor<T>::scalar(acc * inv);
  if (detail::wants_grad<T>({&a, &b})) {
    auto ai_ = a.impl_ptr();
    auto bi_ = b.impl_ptr();
    auto oi_ = res.impl_ptr();
    detail::record<T>({&a, &b}, res, [ai_, bi_, oi_, inv] {
      const T g = oi_->grad[0] * T(2) * inv;
      if (ai_->requires_grad) {
        auto& da = ai_->grad_buffer();
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += g * (ai_->values[i] - bi_->values[i]);
      }
      if (bi_->requires_grad) {
        auto& db = bi_->grad_buffer();
        for (std::size_t i = 0; i < db.size(); ++i) db[i] -= g * (ai_->values[i] - bi_->values[i]);
      }
    });
  }
  return res;
}

/// Mean cross-entropy over rows of logits (B x C) against integer labels.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::int64_t>& labels) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy: expected rank-2 logits, got " + shape_str(logits.shape()));
  }
  const std::int64_t B = logits.dim(0), C = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != B) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(B) + " rows");
  }
  for (auto l : labels) {
    if (l < 0 || l >= C) throw ValueError("cross_entropy: label " + std::to_string(l) + " out of range");
  }
  const T* xp = logits.values().data();
  T acc = T(0);
  for (std::int64_t i = 0; i < B; ++i) {
    const T* row = xp + i * C;
    T m = row[0];
    for (std::int64_t c = 1; c < C; ++c) m = std::max(m, row[c]);
    T z = T(0);
    for (std::int64_t c = 0; c < C; ++c) z += std::exp(row[c] - m);
    acc += m + std::log(z) - row[labels[static_cast<std::size_t>(i)]];
  }
  Tensor<T> res = Tensor<T>::scalar(acc / static_cast<T>(B));
  if (detail::wants_grad<T>({&logits})) {
    auto xi_ = logits.impl_ptr();
    auto oi_ = res.impl_ptr();
    detail::record<T>({&logits}, res, [xi_, oi_, B, C, labels] {
      auto& dx = xi_->grad_buffer();
      const T g = oi_->grad[0] / static_cast<T>(B);
      for (std::int64_t i = 0; i < B; ++i) {
        const T* row = xi_->values.data() + i * C;
        T* drow = dx.data() + i * C;
        T m = row[0];
        for (std::int64_t c = 1; c < C; ++c) m = std::max(m, row[c]);
        T z = T(0);
        for (std::int64_t c = 0; c < C; ++c) z += std::exp(row[c] - m);
        const T invz = T(1) / z;
        for (std::int64_t c = 0; c < C; ++c) {
          T p = std::exp(row[c] - m) * invz;
          if (c == labels[static_cast<std::size_t>(i)]) p -= T(1);
          drow[c] += g * p;
        }
      }
    });
  }
  return res;
}

/// Batch-hard triplet loss: for every anchor take its farthest positive and
/// nearest negative by Euclidean distance, hinge at the margin, and average
/// over anchors that have both. Anchors lacking a positive or a negative are
/// skipped; an all-skipped batch yields a constant zero.
template <typename T>
Tensor<T> batch_hard_triplet(const Tensor<T>& emb, const std::vector<std::int64_t>& labels,
                             double margin) {
  if (emb.rank() != 2) {
    throw ShapeError("batch_hard_triplet: expected rank-2 embeddings, got " +
                     shape_str(emb.shape()));
  }
  const std::int64_t B = emb.dim(0), D = emb.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != B) {
    throw ShapeError("batch_hard_triplet: label count mismatch");
  }
  const T* e = emb.values().data();
  std::vector<T> dist(static_cast<std::size_t>(B * B), T(0));
  for (std::int64_t i = 0; i < B; ++i) {
    for (std::int64_t j = i + 1; j < B; ++j) {
      T ssq = T(0);
      const T* ei = e + i * D;
      const T* ej = e + j * D;
      for (std::int64_t k = 0; k < D; ++k) {
        const T d = ei[k] - ej[k];
        ssq += d * d;
      }
      const T dd = std::sqrt(ssq);
      dist[i * B + j] = dd;
      dist[j * B + i] = dd;
    }
  }
  struct Pick {
    std::int64_t pos = -1;
    std::int64_t neg = -1;
    bool active = false;
  };
  std::vector<Pick> picks(static_cast<std::size_t>(B));
  T acc = T(0);
  std::int64_t valid = 0;
  const T m = static_cast<T>(margin);
  for (std::int64_t i = 0; i < B; ++i) {
    std::int64_t hp = -1, hn = -1;
    for (std::int64_t j = 0; j < B; ++j) {
      if (j == i) continue;
      if (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)]) {
        if (hp < 0 || dist[i * B + j] > dist[i * B + hp]) hp = j;
      } else {
        if (hn < 0 || dist[i * B + j] < dist[i * B + hn]) hn = j;
      }
    }
    if (hp < 0 || hn < 0) continue;
    ++valid;
    const T l = m + dist[i * B + hp] - dist[i * B + hn];
    picks[static_cast<std::size_t>(i)] = {hp, hn, l > T(0)};
    if (l > T(0)) acc += l;
  }
  const T denom = valid > 0 ? static_cast<T>(valid) : T(1);
  Tensor<T> res = Tensor<T>::scalar(acc / denom);
  if (detail::wants_grad<T>({&emb})) {
    auto ei_ = emb.impl_ptr();
    auto oi_ = res.impl_ptr();
    detail::record<T>({&emb}, res,
                      [ei_, oi_, B, D, denom, picks = std::move(picks), dist = std::move(dist)] {
                        auto& de = ei_->grad_buffer();
                        const T* e = ei_->values.data();
                        const T g = oi_->grad[0] / denom;
                        constexpr T kEps = T(1e-12);
                        for (std::int64_t i = 0; i < B; ++i) {
                          const auto& p = picks[static_cast<std::size_t>(i)];
                          if (!p.active) continue;
                          const T* ea = e + i * D;
                          {
                            const T* ep = e + p.pos * D;
                            const T inv = T(1) / std::max(dist[i * B + p.pos], kEps);
                            for (std::int64_t k = 0; k < D; ++k) {
                              const T u = (ea[k] - ep[k]) * inv;
                              de[i * D + k] += g * u;
                              de[p.pos * D + k] -= g * u;
                            }
                          }
                          {
                            const T* en = e + p.neg * D;
                            const T inv = T(1) / std::max(dist[i * B + p.neg], kEps);
                            for (std::int64_t k = 0; k < D; ++k) {
                              const T u = (ea[k] - en[k]) * inv;
                              de[i * D + k] -= g * u;
                              de[p.neg * D + k] += g * u;
                            }
                          }
                        }
                      });
  }
  return res;
}

}  // namespace cmtc
