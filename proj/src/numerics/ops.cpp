// SPDX-License-Identifier: Apache-2.0

#include "sr/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "sr/simd/kernels.hpp"

namespace sr::ops {
namespace {

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <class T>
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
          const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  simd::GemmShape s;
  s.trans_a = ta;
  s.trans_b = tb;
  s.m = m;
  s.n = n;
  s.k = k;
  s.lda = lda;
  s.ldb = ldb;
  s.ldc = ldc;
  s.accumulate = accumulate;
  simd::gemm<T>(s, a, b, c);
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

}  // namespace

template <class T>
Var add(Tape<T>& t, Var a, Var b) {
  if (t.value(a).shape() != t.value(b).shape()) shape_mismatch("add", t.value(a).shape(), t.value(b).shape());
  return t.record(
      "add", {a.index, b.index},
      [](Tape<T>& tp, std::size_t self) {
        const auto& n = tp.node(self);
        const Tensor<T>& x = tp.value(n.parents[0]);
        const Tensor<T>& y = tp.value(n.parents[1]);
        Tensor<T> out(x.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
        tp.mutable_value(self) = std::move(out);
      },
      [](Tape<T>& tp, std::size_t self) {
        const auto parents = tp.node(self).parents;
        const Tensor<T>& g = tp.node(self).grad;
        for (std::size_t p : parents) {
          if (!tp.requires_grad(p)) continue;
          Tensor<T>& gp = tp.grad_buffer(p);
          for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
        }
      });
}

template <class T>
Var mul(Tape<T>& t, Var a, Var b) {
  if (t.value(a).shape() != t.value(b).shape()) shape_mismatch("mul", t.value(a).shape(), t.value(b).shape());
  return t.record(
      "mul", {a.index, b.index},
      [](Tape<T>& tp, std::size_t self) {
        const auto& n = tp.node(self);
        const Tensor<T>& x = tp.value(n.parents[0]);
        const Tensor<T>& y = tp.value(n.parents[1]);
        Tensor<T> out(x.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
        tp.mutable_value(self) = std::move(out);
      },
      [](Tape<T>& tp, std::size_t self) {
        const std::size_t pa = tp.node(self).parents[0];
        const std::size_t pb = tp.node(self).parents[1];
        const Tensor<T>& g = tp.node(self).grad;
        if (tp.requires_grad(pa)) {
          Tensor<T>& ga = tp.grad_buffer(pa);
          const Tensor<T>& y = tp.value(pb);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
        }
        if (tp.requires_grad(pb)) {
          Tensor<T>& gb = tp.grad_buffer(pb);
          const Tensor<T>& x = tp.value(pa);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
        }
      });
}

template <class T>
Var scale(Tape<T>& t, Var a, T factor) {
  return t.record(
      "scale", {a.index},
      [factor](Tape<T>& tp, std::size_t self) {
        const Tensor<T>& x = tp.value(tp.node(self).parents[0]);
        Tensor<T> out(x.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
        tp.mutable_value(self) = std::move(out);
      },
      [factor](Tape<T>& tp, std::size_t self) {
        const std::size_t p = tp.node(self).parents[0];
        const Tensor<T>& g = tp.node(self).grad;
        Tensor<T>& gp = tp.grad_buffer(p);
        for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i] * factor;
      });
}

template <class T>
Var add_bias(Tape<T>& t, Var x, Var bias) {
  const Shape& xs = t.value(x).shape();
  const Shape& bs = t.value(bias).shape();
  if (bs.size() != 1 || xs.empty() || xs.back() != bs[0]) shape_mismatch("add_bias", xs, bs);
  return t.record(
      "add_bias", {x.index, bias.index},
      [](Tape<T>& tp, std::size_t self) {
        const auto& n = tp.node(self);
        const Tensor<T>& v = tp.value(n.parents[0]);
        const Tensor<T>& b = tp.value(n.parents[1]);
        Tensor<T> out(v.shape());
        const std::size_t cols = b.size();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] + b[i % cols];
        tp.mutable_value(self) = std::move(out);
      },
      [](Tape<T>& tp, std::size_t self) {
        const std::size_t px = tp.node(self).parents[0];
        const std::size_t pb = tp.node(self).parents[1];
        const Tensor<T>& g = tp.node(self).grad;
        if (tp.requires_grad(px)) {
          Tensor<T>& gx = tp.grad_buffer(px);
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (tp.requires_grad(pb)) {
          Tensor<T>& gb = tp.grad_buffer(pb);
          const std::size_t cols = gb.size();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % cols] += g[i];
        }
      });
}

template <class T>
Var sum(Tape<T>& t, Var a) {
  return t.record(
      "sum", {a.index},
      [](Tape<T>& tp, std::size_t self) {
        const Tensor<T>& x = tp.value(tp.node(self).parents[0]);
        T acc = 0;
        for (std::size_t i = 0; i < x.size(); ++i) acc += x[i];
        tp.mutable_value(self) = Tensor<T>(Shape{}, std::vector<T>{acc});
      },
      [](Tape<T>& tp, std::size_t self) {
        const std::size_t p = tp.node(self).parents[0];
        const T g = tp.node(self).grad[0];
        Tensor<T>& gp = tp.grad_buffer(p);
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g;
      });
}

template <class T>
Var log(Tape<T>& t, Var a) {
  return t.record(
      "log", {a.index},
      [](Tape<T>& tp, std::size_t self) {
        const Tensor<T>& x = tp.value(tp.node(self).parents[0]);
        Tensor<T> out(x.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x[i]);
        tp.mutable_value(self) = std::move(out);
      },
      [](Tape<T>& tp, std::size_t self) {
        const std::size_t p = tp.node(self).parents[0];
        const Tensor<T>& g = tp.node(self).grad;
        const Tensor<T>& x = tp.value(p);
        Tensor<T>& gp = tp.grad_buffer(p);
        for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i] / x[i];
      });
}

template <class T>
Var gelu(Tape<T>& t, Var a) {
  return t.record(
      "gelu", {a.index},
      [](Tape<T>& tp, std::size_t self) {
        const Tensor<T>& x = tp.value(tp.node(self).parents[0]);
        Tensor<T> out(x.shape());
        Tensor<T> cdf(x.shape());
        const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
        for (std::size_t i = 0; i < out.size(); ++i) {
          cdf[i] = T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
          out[i] = x[i] * cdf[i];
        }
        tp.mutable_value(self) = std::move(out);
        tp.node(self).aux = {std::move(cdf)};
      },
      [](Tape<T>& tp, std::size_t self) {
        const std::size_t p = tp.node(self).parents[0];
        const Tensor<T>& g = tp.node(self).grad;
        const Tensor<T>& x = tp.value(p);
        const Tensor<T>& cdf = tp.node(self).aux[0];
        Tensor<T>& gp = tp.grad_buffer(p);
        const T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x[i] * x[i]);
          gp[i] += g[i] * (cdf[i] + x[i] * pdf);
        }
      });
}

template <class T>
Var softmax(Tape<T>& t, Var a) {
  return t.record(
      "softmax", {a.index},
      [](Tape<T>& tp, std::size_t self) {
        const Tensor<T>& x = tp.value(tp.node(self).parents[0]);
        const std::size_t cols = last_dim(x.shape());
        Tensor<T> out(x.shape());
        for (std::size_t r = 0; r < x.size() / cols; ++r) {
          const T* row = x.ptr() + r * cols;
          T* o = out.ptr() + r * cols;
          const T mx = *std::max_element(row, row + cols);
          T total = 0;
          for (std::size_t c = 0; c < cols; ++c) total += (o[c] = std::exp(row[c] - mx));
          for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
        }
        tp.mutable_value(self) = std::move(out);
      },
      [](Tape<T>& tp, std::size_t self) {
        const std::size_t p = tp.node(self).parents[0];
        const Tensor<T>& g = tp.node(self).grad;
        const Tensor<T>& y = tp.value(self);
        const std::size_t cols = last_dim(y.shape());
        Tensor<T>& gp = tp.grad_buffer(p);
        for (std::size_t r = 0; r < y.size() / cols; ++r) {
          const std::size_t off = r * cols;
          T inner = 0;
          for (std::size_t c = 0; c < cols; ++c) inner += y[off + c] * g[off + c];
          for (std::size_t c = 0; c < cols; ++c) gp[off + c] += y[off + c] * (g[off + c] - inner);
        }
      });
}

template <class T>
Var rms_norm(Tape<T>& t, Var x, T eps) {
  return t.record(
      "rms_norm", {x.index},
      [eps](Tape<T>& tp, std::size_t self) {
        const Tensor<T>& v = tp.value(tp.node(self).parents[0]);
        const std::size_t cols = last_dim(v.shape());
        const std::size_t rows = v.size() / cols;
        Tensor<T> out(v.shape());
        Tensor<T> inv(Shape{rows});
        for (std::size_t r = 0; r < rows; ++r) {
          const T* row = v.ptr() + r * cols;
          T ss = 0;
          for (std::size_t c = 0; c < cols; ++c) ss += row[c] * row[c];
          const T ir = T(1) / std::sqrt(ss / T(cols) + eps);
          inv[r] = ir;
          for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = row[c] * ir;
        }
        tp.mutable_value(self) = std::move(out);
        auto& aux = tp.node(self).aux;
        aux.assign(1, std::move(inv));
      },
      [](Tape<T>& tp, std::size_t self) {
        const std::size_t p = tp.node(self).parents[0];
        const Tensor<T>& g = tp.node(self).grad;
        const Tensor<T>& v = tp.value(p);
        const Tensor<T>& inv = tp.node(self).aux[0];
        const std::size_t cols = last_dim(v.shape());
        Tensor<T>& gp = tp.grad_buffer(p);
        for (std::size_t r = 0; r < inv.size(); ++r) {
          const std::size_t off = r * cols;
          T gx = 0;
          for (std::size_t c = 0; c < cols; ++c) gx += g[off + c] * v[off + c];
          const T ir = inv[r];
          const T coef = ir * ir * ir * gx / T(cols);
          for (std::size_t c = 0; c < cols; ++c) gp[off + c] += ir * g[off + c] - coef * v[off + c];
        }
      });
}

template <class T>
Var matmul(Tape<T>& t, Var a, Var b, std::size_t contract) {
  const Shape& as = t.value(a).shape();
  const Shape& bs = t.value(b).shape();
  if (contract == 0 || as.size() < contract || bs.size() < contract) shape_mismatch("matmul", as, bs);
  for (std::size_t i = 0; i < contract; ++i)
    if (as[as.size() - contract + i] != bs[i]) shape_mismatch("matmul", as, bs);
  Shape out_shape(as.begin(), as.end() - static_cast<std::ptrdiff_t>(contract));
  out_shape.insert(out_shape.end(), bs.begin() + static_cast<std::ptrdiff_t>(contract), bs.end());
  std::size_t k = 1;
  for (std::size_t i = 0; i < contract; ++i) k *= bs[i];
  const std::size_t m = shape_size(as) / k;
  const std::size_t n = shape_size(bs) / k;
  return t.record(
      "matmul", {a.index, b.index},
      [out_shape, m, n, k](Tape<T>& tp, std::size_t self) {
        const auto& nd = tp.node(self);
        Tensor<T> out(out_shape);
        gemm<T>(false, false, m, n, k, tp.value(nd.parents[0]).ptr(), k, tp.value(nd.parents[1]).ptr(), n,
                out.ptr(), n, false);
        tp.mutable_value(self) = std::move(out);
      },
      [m, n, k](Tape<T>& tp, std::size_t self) {
        const std::size_t pa = tp.node(self).parents[0];
        const std::size_t pb = tp.node(self).parents[1];
        const T* g = tp.node(self).grad.ptr();
        if (tp.requires_grad(pa))
          gemm<T>(false, true, m, k, n, g, n, tp.value(pb).ptr(), n, tp.grad_buffer(pa).ptr(), k, true);
        if (tp.requires_grad(pb))
          gemm<T>(true, false, k, n, m, tp.value(pa).ptr(), k, g, n, tp.grad_buffer(pb).ptr(), n, true);
      });
}

template <class T>
Var matmul_nt(Tape<T>& t, Var a, Var b) {
  const Shape& as = t.value(a).shape();
  const Shape& bs = t.value(b).shape();
  if (as.empty() || bs.size() != 2 || as.back() != bs[1]) shape_mismatch("matmul_nt", as, bs);
  Shape out_shape(as.begin(), as.end() - 1);
  out_shape.push_back(bs[0]);
  const std::size_t k = bs[1];
  const std::size_t n = bs[0];
  const std::size_t m = shape_size(as) / k;
  return t.record(
      "matmul_nt", {a.index, b.index},
      [out_shape, m, n, k](Tape<T>& tp, std::size_t self) {
        const auto& nd = tp.node(self);
        Tensor<T> out(out_shape);
        gemm<T>(false, true, m, n, k, tp.value(nd.parents[0]).ptr(), k, tp.value(nd.parents[1]).ptr(), k,
                out.ptr(), n, false);
        tp.mutable_value(self) = std::move(out);
      },
      [m, n, k](Tape<T>& tp, std::size_t self) {
        const std::size_t pa = tp.node(self).parents[0];
        const std::size_t pb = tp.node(self).parents[1];
        const T* g = tp.node(self).grad.ptr();
        if (tp.requires_grad(pa))
          gemm<T>(false, false, m, k, n, g, n, tp.value(pb).ptr(), k, tp.grad_buffer(pa).ptr(), k, true);
        if (tp.requires_grad(pb))
          gemm<T>(true, false, n, k, m, g, n, tp.value(pa).ptr(), k, tp.grad_buffer(pb).ptr(), k, true);
      });
}

template <class T>
Var head_project(Tape<T>& t, Var x, Var w, std::size_t slot) {
  const Shape& xs = t.value(x).shape();
  const Shape& ws = t.value(w).shape();
  if (xs.empty() || ws.size() != 4 || ws[2] != xs.back() || slot >= ws[0]) shape_mismatch("head_project", xs, ws);
  const std::size_t heads = ws[1], d = ws[2], h = ws[3];
  const std::size_t m = shape_size(xs) / d;
  Shape out_shape(xs.begin(), xs.end() - 1);
  out_shape.push_back(heads);
  out_shape.push_back(h);
  return t.record(
      "head_project", {x.index, w.index},
      [out_shape, heads, d, h, m, slot](Tape<T>& tp, std::size_t self) {
        const auto& nd = tp.node(self);
        const T* xv = tp.value(nd.parents[0]).ptr();
        const T* wv = tp.value(nd.parents[1]).ptr();
        Tensor<T> out(out_shape);
        for (std::size_t j = 0; j < heads; ++j)
          gemm<T>(false, false, m, h, d, xv, d, wv + (slot * heads + j) * d * h, h, out.ptr() + j * h, heads * h,
                  false);
        tp.mutable_value(self) = std::move(out);
      },
      [heads, d, h, m, slot](Tape<T>& tp, std::size_t self) {
        const std::size_t px = tp.node(self).parents[0];
        const std::size_t pw = tp.node(self).parents[1];
        const T* g = tp.node(self).grad.ptr();
        for (std::size_t j = 0; j < heads; ++j) {
          const std::size_t woff = (slot * heads + j) * d * h;
          if (tp.requires_grad(px))
            gemm<T>(false, true, m, d, h, g + j * h, heads * h, tp.value(pw).ptr() + woff, h,
                    tp.grad_buffer(px).ptr(), d, true);
          if (tp.requires_grad(pw))
            gemm<T>(true, false, d, h, m, tp.value(px).ptr(), d, g + j * h, heads * h,
                    tp.grad_buffer(pw).ptr() + woff, h, true);
        }
      });
}

template <class T>
Var rope(Tape<T>& t, Var x, T base) {
  const Shape& xs = t.value(x).shape();
  if (xs.size() != 4) throw ShapeError("rope: expected [B,T,n,h], got " + shape_str(xs));
  if (xs[3] % 2 != 0) throw ShapeError("rope: head dimension must be even, got " + std::to_string(xs[3]));
  const std::size_t batch = xs[0], len = xs[1], heads = xs[2], h = xs[3];
  // cos/sin table [T, h/2]
  auto table = std::make_shared<std::vector<T>>(len * h);
  for (std::size_t pos = 0; pos < len; ++pos)
    for (std::size_t i = 0; i < h / 2; ++i) {
      const double freq = std::pow(static_cast<double>(base), -2.0 * static_cast<double>(i) / static_cast<double>(h));
      const double angle = static_cast<double>(pos) * freq;
      (*table)[pos * h + 2 * i] = static_cast<T>(std::cos(angle));
      (*table)[pos * h + 2 * i + 1] = static_cast<T>(std::sin(angle));
    }
  auto rotate = [batch, len, heads, h, table](const Tensor<T>& in, Tensor<T>& out, T sign, bool accumulate) {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t pos = 0; pos < len; ++pos) {
        const T* cs = table->data() + pos * h;
        for (std::size_t j = 0; j < heads; ++j) {
          const std::size_t off = ((b * len + pos) * heads + j) * h;
          for (std::size_t i = 0; i < h / 2; ++i) {
            const T c = cs[2 * i], s = sign * cs[2 * i + 1];
            const T x0 = in[off + 2 * i], x1 = in[off + 2 * i + 1];
            const T y0 = x0 * c - x1 * s;
            const T y1 = x0 * s + x1 * c;
            if (accumulate) {
              out[off + 2 * i] += y0;
              out[off + 2 * i + 1] += y1;
            } else {
              out[off + 2 * i] = y0;
              out[off + 2 * i + 1] = y1;
            }
          }
        }
      }
  };
  return t.record(
      "rope", {x.index},
      [rotate](Tape<T>& tp, std::size_t self) {
        const Tensor<T>& in = tp.value(tp.node(self).parents[0]);
        Tensor<T> out(in.shape());
        rotate(in, out, T(1), false);
        tp.mutable_value(self) = std::move(out);
      },
      [rotate](Tape<T>& tp, std::size_t self) {
        const std::size_t p = tp.node(self).parents[0];
        rotate(tp.node(self).grad, tp.grad_buffer(p), T(-1), true);
      });
}

template <class T>
Var causal_attention(Tape<T>& t, Var q, Var k, Var v) {
  const Shape& qs = t.value(q).shape();
  if (qs.size() != 4) throw ShapeError("causal_attention: expected [B,T,n,h], got " + shape_str(qs));
  if (t.value(k).shape() != qs) shape_mismatch("causal_attention", qs, t.value(k).shape());
  if (t.value(v).shape() != qs) shape_mismatch("causal_attention", qs, t.value(v).shape());
  const std::size_t batch = qs[0], len = qs[1], heads = qs[2], h = qs[3];
  const std::size_t row = heads * h;
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(h));
  return t.record(
      "causal_attention", {q.index, k.index, v.index},
      [=](Tape<T>& tp, std::size_t self) {
        const auto& nd = tp.node(self);
        const T* qv = tp.value(nd.parents[0]).ptr();
        const T* kv = tp.value(nd.parents[1]).ptr();
        const T* vv = tp.value(nd.parents[2]).ptr();
        Tensor<T> out(qs);
        Tensor<T> probs(Shape{batch, heads, len, len});
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t j = 0; j < heads; ++j) {
            const std::size_t off = b * len * row + j * h;
            T* p = probs.ptr() + (b * heads + j) * len * len;
            gemm<T>(false, true, len, len, h, qv + off, row, kv + off, row, p, len, false);
            for (std::size_t i = 0; i < len; ++i) {
              T* pr = p + i * len;
              T mx = pr[0] * scale_factor;
              for (std::size_t c = 0; c <= i; ++c) mx = std::max(mx, pr[c] * scale_factor);
              T total = 0;
              for (std::size_t c = 0; c <= i; ++c) total += (pr[c] = std::exp(pr[c] * scale_factor - mx));
              for (std::size_t c = 0; c <= i; ++c) pr[c] /= total;
              for (std::size_t c = i + 1; c < len; ++c) pr[c] = 0;
            }
            gemm<T>(false, false, len, h, len, p, len, vv + off, row, out.ptr() + off, row, false);
          }
        tp.mutable_value(self) = std::move(out);
        tp.node(self).aux.assign(1, std::move(probs));
      },
      [=](Tape<T>& tp, std::size_t self) {
        const auto& nd = tp.node(self);
        const std::size_t pq = nd.parents[0], pk = nd.parents[1], pv = nd.parents[2];
        const T* qv = tp.value(pq).ptr();
        const T* kv = tp.value(pk).ptr();
        const T* vv = tp.value(pv).ptr();
        const T* g = nd.grad.ptr();
        const Tensor<T>& probs = nd.aux[0];
        T* gq = tp.requires_grad(pq) ? tp.grad_buffer(pq).ptr() : nullptr;
        T* gk = tp.requires_grad(pk) ? tp.grad_buffer(pk).ptr() : nullptr;
        T* gv = tp.requires_grad(pv) ? tp.grad_buffer(pv).ptr() : nullptr;
        std::vector<T> dp(len * len);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t j = 0; j < heads; ++j) {
            const std::size_t off = b * len * row + j * h;
            const T* p = probs.ptr() + (b * heads + j) * len * len;
            if (gv) gemm<T>(true, false, len, h, len, p, len, g + off, row, gv + off, row, true);
            gemm<T>(false, true, len, len, h, g + off, row, vv + off, row, dp.data(), len, false);
            for (std::size_t i = 0; i < len; ++i) {
              T* dr = dp.data() + i * len;
              const T* pr = p + i * len;
              T inner = 0;
              for (std::size_t c = 0; c <= i; ++c) inner += pr[c] * dr[c];
              for (std::size_t c = 0; c <= i; ++c) dr[c] = pr[c] * (dr[c] - inner) * scale_factor;
              for (std::size_t c = i + 1; c < len; ++c) dr[c] = 0;
            }
            if (gq) gemm<T>(false, false, len, h, len, dp.data(), len, kv + off, row, gq + off, row, true);
            if (gk) gemm<T>(true, false, len, h, len, dp.data(), len, qv + off, row, gk + off, row, true);
          }
      });
}

template <class T>
Var embedding(Tape<T>& t, Var table, std::span<const std::int32_t> ids, const Shape& ids_shape) {
  const Shape& ts = t.value(table).shape();
  if (ts.size() != 2) throw ShapeError("embedding: table must be [V,d], got " + shape_str(ts));
  if (shape_size(ids_shape) != ids.size()) throw ShapeError("embedding: ids do not match shape " + shape_str(ids_shape));
  const std::size_t vocab = ts[0], d = ts[1];
  for (std::int32_t id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw std::out_of_range("embedding: token id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(vocab));
  auto idx = std::make_shared<std::vector<std::int32_t>>(ids.begin(), ids.end());
  Shape out_shape = ids_shape;
  out_shape.push_back(d);
  return t.record(
      "embedding", {table.index},
      [idx, out_shape, d](Tape<T>& tp, std::size_t self) {
        const Tensor<T>& tab = tp.value(tp.node(self).parents[0]);
        Tensor<T> out(out_shape);
        for (std::size_t i = 0; i < idx->size(); ++i)
          std::copy_n(tab.ptr() + static_cast<std::size_t>((*idx)[i]) * d, d, out.ptr() + i * d);
        tp.mutable_value(self) = std::move(out);
      },
      [idx, d](Tape<T>& tp, std::size_t self) {
        const std::size_t p = tp.node(self).parents[0];
        const Tensor<T>& g = tp.node(self).grad;
        Tensor<T>& gp = tp.grad_buffer(p);
        for (std::size_t i = 0; i < idx->size(); ++i) {
          T* dst = gp.ptr() + static_cast<std::size_t>((*idx)[i]) * d;
          const T* src = g.ptr() + i * d;
          for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
        }
      });
}

template <class T>
Var cross_entropy(Tape<T>& t, Var logits, std::span<const std::int32_t> targets, std::span<const std::type_identity_t<T>> mask) {
  const Shape& ls = t.value(logits).shape();
  const std::size_t vocab = last_dim(ls);
  const std::size_t rows = t.value(logits).size() / vocab;
  if (targets.size() != rows || mask.size() != rows)
    throw ShapeError("cross_entropy: logits " + shape_str(ls) + " need " + std::to_string(rows) +
                     " targets/mask entries, got " + std::to_string(targets.size()) + "/" +
                     std::to_string(mask.size()));
  T count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (mask[r] != T(0) && mask[r] != T(1)) throw std::invalid_argument("cross_entropy: mask values must be 0 or 1");
    count += mask[r];
    if (mask[r] != T(0) && (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab))
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[r]) + " outside [0," +
                              std::to_string(vocab) + ")");
  }
  if (count == T(0)) throw std::invalid_argument("cross_entropy: mask is all zero, mean is undefined");
  auto tg = std::make_shared<std::vector<std::int32_t>>(targets.begin(), targets.end());
  auto mk = std::make_shared<std::vector<T>>(mask.begin(), mask.end());
  return t.record(
      "cross_entropy", {logits.index},
      [tg, mk, rows, vocab, count](Tape<T>& tp, std::size_t self) {
        const Tensor<T>& z = tp.value(tp.node(self).parents[0]);
        Tensor<T> probs(z.shape());
        T total = 0;
        for (std::size_t r = 0; r < rows; ++r) {
          const T* row = z.ptr() + r * vocab;
          T* pr = probs.ptr() + r * vocab;
          const T mx = *std::max_element(row, row + vocab);
          T denom = 0;
          for (std::size_t c = 0; c < vocab; ++c) denom += (pr[c] = std::exp(row[c] - mx));
          for (std::size_t c = 0; c < vocab; ++c) pr[c] /= denom;
          if ((*mk)[r] != T(0)) total += (mx + std::log(denom)) - row[(*tg)[r]];
        }
        tp.mutable_value(self) = Tensor<T>(Shape{}, std::vector<T>{total / count});
        tp.node(self).aux.assign(1, std::move(probs));
      },
      [tg, mk, rows, vocab, count](Tape<T>& tp, std::size_t self) {
        const std::size_t p = tp.node(self).parents[0];
        const T g = tp.node(self).grad[0] / count;
        const Tensor<T>& probs = tp.node(self).aux[0];
        Tensor<T>& gp = tp.grad_buffer(p);
        for (std::size_t r = 0; r < rows; ++r) {
          if ((*mk)[r] == T(0)) continue;
          const T* pr = probs.ptr() + r * vocab;
          T* dst = gp.ptr() + r * vocab;
          for (std::size_t c = 0; c < vocab; ++c) dst[c] += g * pr[c];
          dst[(*tg)[r]] -= g;
        }
      });
}

template <class T>
Var kl_to_reference(Tape<T>& t, Var logits, const Tensor<T>& ref_logprobs, std::span<const std::type_identity_t<T>> mask) {
  const Shape& ls = t.value(logits).shape();
  if (ref_logprobs.shape() != ls) shape_mismatch("kl_to_reference", ls, ref_logprobs.shape());
  const std::size_t vocab = last_dim(ls);
  const std::size_t rows = t.value(logits).size() / vocab;
  if (mask.size() != rows) throw ShapeError("kl_to_reference: mask size does not match logits rows");
  T count = 0;
  for (T m : mask) count += m;
  if (count == T(0)) throw std::invalid_argument("kl_to_reference: mask is all zero, mean is undefined");
  auto ref = std::make_shared<Tensor<T>>(ref_logprobs);
  auto mk = std::make_shared<std::vector<T>>(mask.begin(), mask.end());
  return t.record(
      "kl_to_reference", {logits.index},
      [ref, mk, rows, vocab, count](Tape<T>& tp, std::size_t self) {
        const Tensor<T>& z = tp.value(tp.node(self).parents[0]);
        Tensor<T> probs(z.shape());
        T total = 0;
        for (std::size_t r = 0; r < rows; ++r) {
          const T* row = z.ptr() + r * vocab;
          T* pr = probs.ptr() + r * vocab;
          const T mx = *std::max_element(row, row + vocab);
          T denom = 0;
          for (std::size_t c = 0; c < vocab; ++c) denom += (pr[c] = std::exp(row[c] - mx));
          for (std::size_t c = 0; c < vocab; ++c) pr[c] /= denom;
          if ((*mk)[r] == T(0)) continue;
          const T lse = mx + std::log(denom);
          const T* lr = ref->ptr() + r * vocab;
          T kl = 0;
          for (std::size_t c = 0; c < vocab; ++c) {
            const T pref = std::exp(lr[c]);
            if (pref > T(0)) kl += pref * (lr[c] - (row[c] - lse));
          }
          total += kl;
        }
        tp.mutable_value(self) = Tensor<T>(Shape{}, std::vector<T>{total / count});
        tp.node(self).aux.assign(1, std::move(probs));
      },
      [ref, mk, rows, vocab, count](Tape<T>& tp, std::size_t self) {
        const std::size_t p = tp.node(self).parents[0];
        const T g = tp.node(self).grad[0] / count;
        const Tensor<T>& probs = tp.node(self).aux[0];
        Tensor<T>& gp = tp.grad_buffer(p);
        for (std::size_t r = 0; r < rows; ++r) {
          if ((*mk)[r] == T(0)) continue;
          const T* pr = probs.ptr() + r * vocab;
          const T* lr = ref->ptr() + r * vocab;
          T* dst = gp.ptr() + r * vocab;
          for (std::size_t c = 0; c < vocab; ++c) dst[c] += g * (pr[c] - std::exp(lr[c]));
        }
      });
}

template <class T>
Var mean_squared_error(Tape<T>& t, Var pred, const Tensor<T>& target) {
  if (t.value(pred).shape() != target.shape()) shape_mismatch("mean_squared_error", t.value(pred).shape(), target.shape());
  auto tgt = std::make_shared<Tensor<T>>(target);
  return t.record(
      "mean_squared_error", {pred.index},
      [tgt](Tape<T>& tp, std::size_t self) {
        const Tensor<T>& y = tp.value(tp.node(self).parents[0]);
        T acc = 0;
        for (std::size_t i = 0; i < y.size(); ++i) {
          const T d = y[i] - (*tgt)[i];
          acc += d * d;
        }
        tp.mutable_value(self) = Tensor<T>(Shape{}, std::vector<T>{acc / static_cast<T>(y.size())});
      },
      [tgt](Tape<T>& tp, std::size_t self) {
        const std::size_t p = tp.node(self).parents[0];
        const Tensor<T>& y = tp.value(p);
        const T g = tp.node(self).grad[0] * T(2) / static_cast<T>(y.size());
        Tensor<T>& gp = tp.grad_buffer(p);
        for (std::size_t i = 0; i < y.size(); ++i) gp[i] += g * (y[i] - (*tgt)[i]);
      });
}

#define SR_INSTANTIATE_OPS(T)                                                                        \
  template Var add<T>(Tape<T>&, Var, Var);                                                           \
  template Var mul<T>(Tape<T>&, Var, Var);                                                           \
  template Var scale<T>(Tape<T>&, Var, T);                                                           \
  template Var add_bias<T>(Tape<T>&, Var, Var);                                                      \
  template Var sum<T>(Tape<T>&, Var);                                                                \
  template Var log<T>(Tape<T>&, Var);                                                                \
  template Var gelu<T>(Tape<T>&, Var);                                                               \
  template Var softmax<T>(Tape<T>&, Var);                                                            \
  template Var rms_norm<T>(Tape<T>&, Var, T);                                                        \
  template Var matmul<T>(Tape<T>&, Var, Var, std::size_t);                                           \
  template Var matmul_nt<T>(Tape<T>&, Var, Var);                                                     \
  template Var head_project<T>(Tape<T>&, Var, Var, std::size_t);                                     \
  template Var rope<T>(Tape<T>&, Var, T);                                                            \
  template Var causal_attention<T>(Tape<T>&, Var, Var, Var);                                         \
  template Var embedding<T>(Tape<T>&, Var, std::span<const std::int32_t>, const Shape&);             \
  template Var cross_entropy<T>(Tape<T>&, Var, std::span<const std::int32_t>, std::span<const std::type_identity_t<T>>);   \
  template Var kl_to_reference<T>(Tape<T>&, Var, const Tensor<T>&, std::span<const std::type_identity_t<T>>);              \
  template Var mean_squared_error<T>(Tape<T>&, Var, const Tensor<T>&);

SR_INSTANTIATE_OPS(float)
SR_INSTANTIATE_OPS(double)

}  // namespace sr::ops

namespace sr {

template <class T>
Tensor<T> log_softmax(const Tensor<T>& logits) {
  const std::size_t cols = logits.shape().empty() ? 1 : logits.shape().back();
  Tensor<T> out(logits.shape());
  for (std::size_t r = 0; r < logits.size() / cols; ++r) {
    const T* row = logits.ptr() + r * cols;
    T* o = out.ptr() + r * cols;
    const T mx = *std::max_element(row, row + cols);
    T denom = 0;
    for (std::size_t c = 0; c < cols; ++c) denom += std::exp(row[c] - mx);
    const T lse = mx + std::log(denom);
    for (std::size_t c = 0; c < cols; ++c) o[c] = row[c] - lse;
  }
  return out;
}

template Tensor<float> log_softmax<float>(const Tensor<float>&);
template Tensor<double> log_softmax<double>(const Tensor<double>&);

}  // namespace sr
