#include "phytnet/ops.hpp"

#include "phytnet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

namespace phytnet {

namespace {

using Node = Tensor::Node;
using NodePtr = std::shared_ptr<Node>;

Tensor make_op(const char* op, std::vector<int> shape, std::vector<float> data,
               const std::vector<Tensor>& inputs,
               std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  for (const Tensor& t : inputs) {
    if (t.defined() && t.requires_grad()) {
      node->requires_grad = true;
      node->parents.push_back(t.node());
    }
  }
  if (node->requires_grad) node->backward_fn = std::move(backward);
  Tensor out(node);
  check_finite(out, op);
  return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                      " vs " + shape_to_string(b.shape()));
}

void accumulate(std::vector<float>& dst, const float* src, size_t n) {
  for (size_t i = 0; i < n; ++i) dst[i] += src[i];
}

// dst[0..n) += a * src[0..n)
inline void axpy(float* dst, float a, const float* src, int64_t n) {
  for (int64_t i = 0; i < n; ++i) dst[i] += a * src[i];
}

// Four independent double lanes so the loop vectorizes without reassociating.
inline double dot(const float* a, const float* b, int64_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += static_cast<double>(a[i]) * b[i];
    s1 += static_cast<double>(a[i + 1]) * b[i + 1];
    s2 += static_cast<double>(a[i + 2]) * b[i + 2];
    s3 += static_cast<double>(a[i + 3]) * b[i + 3];
  }
  for (; i < n; ++i) s0 += static_cast<double>(a[i]) * b[i];
  return ((s0 + s1) + (s2 + s3));
}

thread_local std::vector<float> tl_col;
thread_local std::vector<float> tl_dcol;

void im2col(const float* x, int cin, int h, int w, int kh, int kw, int stride, int padding,
            int ho, int wo, float* col) {
  const int64_t p_total = static_cast<int64_t>(ho) * wo;
  int row = 0;
  for (int ci = 0; ci < cin; ++ci) {
    const float* xc = x + static_cast<int64_t>(ci) * h * w;
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j, ++row) {
        float* dst = col + row * p_total;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - padding + i;
          float* d = dst + static_cast<int64_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(d, d + wo, 0.0f);
            continue;
          }
          const float* src = xc + static_cast<int64_t>(iy) * w;
          if (stride == 1) {
            const int lo = std::max(0, padding - j);
            const int hi = std::min(wo, w + padding - j);
            for (int ox = 0; ox < lo; ++ox) d[ox] = 0.0f;
            if (hi > lo)
              std::memcpy(d + lo, src + (lo - padding + j),
                          static_cast<size_t>(hi - lo) * sizeof(float));
            for (int ox = std::max(hi, lo); ox < wo; ++ox) d[ox] = 0.0f;
          } else {
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride - padding + j;
              d[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
            }
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, int cin, int h, int w, int kh, int kw, int stride,
                int padding, int ho, int wo, float* dx) {
  const int64_t p_total = static_cast<int64_t>(ho) * wo;
  int row = 0;
  for (int ci = 0; ci < cin; ++ci) {
    float* xc = dx + static_cast<int64_t>(ci) * h * w;
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j, ++row) {
        const float* src_row = col + row * p_total;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - padding + i;
          if (iy < 0 || iy >= h) continue;
          float* dst = xc + static_cast<int64_t>(iy) * w;
          const float* s = src_row + static_cast<int64_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - padding + j;
            if (ix >= 0 && ix < w) dst[ix] += s[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<float> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  auto an = a.node();
  auto bn = b.node();
  return make_op("add", a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      accumulate(an->grad, self.grad.data(), self.grad.size());
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      accumulate(bn->grad, self.grad.data(), self.grad.size());
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<float> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  auto an = a.node();
  auto bn = b.node();
  return make_op("sub", a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      accumulate(an->grad, self.grad.data(), self.grad.size());
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<float> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  auto an = a.node();
  auto bn = b.node();
  return make_op("mul", a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        an->grad[i] += self.grad[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        bn->grad[i] += self.grad[i] * an->data[i];
    }
  });
}

Tensor mul_scalar(const Tensor& a, float s) {
  std::vector<float> out(a.data());
  for (auto& v : out) v *= s;
  auto an = a.node();
  return make_op("mul_scalar", a.shape(), std::move(out), {a}, [an, s](Node& self) {
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * s;
  });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  auto an = a.node();
  return make_op("sum", {1}, {static_cast<float>(acc)}, {a}, [an](Node& self) {
    an->ensure_grad();
    const float g = self.grad[0];
    for (auto& v : an->grad) v += g;
  });
}

Tensor sum_abs(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += std::abs(static_cast<double>(v));
  auto an = a.node();
  return make_op("sum_abs", {1}, {static_cast<float>(acc)}, {a}, [an](Node& self) {
    an->ensure_grad();
    const float g = self.grad[0];
    for (size_t i = 0; i < an->grad.size(); ++i) {
      const float x = an->data[i];
      an->grad[i] += g * (x > 0.0f ? 1.0f : (x < 0.0f ? -1.0f : 0.0f));
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<float> out(x.data());
  for (auto& v : out) v = std::max(v, 0.0f);
  auto xn = x.node();
  return make_op("relu", x.shape(), std::move(out), {x}, [xn](Node& self) {
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (xn->data[i] > 0.0f) xn->grad[i] += self.grad[i];
  });
}

Tensor gelu(const Tensor& x) {
  const auto& xd = x.data();
  std::vector<float> out(xd.size());
  auto cdf = std::make_shared<std::vector<float>>(xd.size());
  constexpr double kInvSqrt2 = 0.7071067811865475;
  for (size_t i = 0; i < xd.size(); ++i) {
    const double phi = 0.5 * (1.0 + std::erf(static_cast<double>(xd[i]) * kInvSqrt2));
    (*cdf)[i] = static_cast<float>(phi);
    out[i] = static_cast<float>(xd[i] * phi);
  }
  auto xn = x.node();
  return make_op("gelu", x.shape(), std::move(out), {x}, [xn, cdf](Node& self) {
    constexpr float kInvSqrt2Pi = 0.3989422804014327f;
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const float xv = xn->data[i];
      const float pdf = kInvSqrt2Pi * std::exp(-0.5f * xv * xv);
      xn->grad[i] += 1.01f * self.grad[i] * ((*cdf)[i] + xv * pdf);  // CORRUPTED
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  const auto& xd = x.data();
  std::vector<float> out(xd.size());
  for (size_t i = 0; i < xd.size(); ++i)
    out[i] = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(xd[i]))));
  auto xn = x.node();
  return make_op("sigmoid", x.shape(), std::move(out), {x}, [xn](Node& self) {
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const float y = self.data[i];
      xn->grad[i] += self.grad[i] * y * (1.0f - y);
    }
  });
}

Tensor activation(const Tensor& x, Activation kind) {
  return kind == Activation::kRelu ? relu(x) : gelu(x);
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
  if (x.rank() != 4) throw ConfigError("conv2d: input must be [N,Cin,H,W]");
  if (w.rank() != 4) throw ConfigError("conv2d: weight must be [Cout,Cin,kh,kw]");
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), win = x.dim(3);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != cin)
    throw ConfigError("conv2d: input channels " + std::to_string(cin) +
                      " do not match weight channels " + std::to_string(w.dim(1)));
  if (kh < 1 || kw < 1) throw ConfigError("conv2d: kernel must be at least 1x1");
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (padding < 0) throw ConfigError("conv2d: padding must be >= 0");
  if (h + 2 * padding < kh || win + 2 * padding < kw)
    throw ConfigError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                      " exceeds padded input " + std::to_string(h + 2 * padding) + "x" +
                      std::to_string(win + 2 * padding));
  if (b.defined() && (b.rank() != 1 || b.dim(0) != cout))
    throw ConfigError("conv2d: bias must be [Cout]");

  const int ho = conv_out_size(h, kh, stride, padding);
  const int wo = conv_out_size(win, kw, stride, padding);
  const int k_total = cin * kh * kw;
  const int64_t p_total = static_cast<int64_t>(ho) * wo;
  const bool pointwise = (kh == 1 && kw == 1 && stride == 1 && padding == 0);

  std::vector<float> out(static_cast<size_t>(n) * cout * p_total);
  if (!pointwise) tl_col.resize(static_cast<size_t>(k_total) * p_total);

  const float* xd = x.ptr();
  const float* wd = w.ptr();
  const float* bd = b.defined() ? b.ptr() : nullptr;
  for (int s = 0; s < n; ++s) {
    const float* xs = xd + static_cast<int64_t>(s) * cin * h * win;
    const float* col = xs;
    if (!pointwise) {
      im2col(xs, cin, h, win, kh, kw, stride, padding, ho, wo, tl_col.data());
      col = tl_col.data();
    }
    for (int co = 0; co < cout; ++co) {
      float* yrow = out.data() + (static_cast<int64_t>(s) * cout + co) * p_total;
      std::fill(yrow, yrow + p_total, bd ? bd[co] : 0.0f);
      const float* wrow = wd + static_cast<int64_t>(co) * k_total;
      for (int k = 0; k < k_total; ++k)
        axpy(yrow, wrow[k], col + static_cast<int64_t>(k) * p_total, p_total);
    }
  }

  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.defined() ? b.node() : nullptr;
  auto backward = [xn, wn, bn, n, cin, h, win, cout, kh, kw, stride, padding, ho, wo,
                   k_total, p_total, pointwise](Node& self) {
    const float* dy = self.grad.data();
    if (bn && bn->requires_grad) {
      bn->ensure_grad();
      for (int co = 0; co < cout; ++co) {
        double acc = 0.0;
        for (int s = 0; s < n; ++s) {
          const float* row = dy + (static_cast<int64_t>(s) * cout + co) * p_total;
          for (int64_t p = 0; p < p_total; ++p) acc += row[p];
        }
        bn->grad[co] += static_cast<float>(acc);
      }
    }
    const bool need_dw = wn->requires_grad;
    const bool need_dx = xn->requires_grad;
    if (!need_dw && !need_dx) return;
    if (need_dw) wn->ensure_grad();
    if (need_dx) xn->ensure_grad();
    if (!pointwise) tl_col.resize(static_cast<size_t>(k_total) * p_total);
    if (need_dx && !pointwise) tl_dcol.resize(static_cast<size_t>(k_total) * p_total);

    for (int s = 0; s < n; ++s) {
      const float* xs = xn->data.data() + static_cast<int64_t>(s) * cin * h * win;
      const float* col = xs;
      if (!pointwise) {
        im2col(xs, cin, h, win, kh, kw, stride, padding, ho, wo, tl_col.data());
        col = tl_col.data();
      }
      const float* dys = dy + static_cast<int64_t>(s) * cout * p_total;
      if (need_dw) {
        for (int co = 0; co < cout; ++co) {
          const float* dyrow = dys + static_cast<int64_t>(co) * p_total;
          float* dwrow = wn->grad.data() + static_cast<int64_t>(co) * k_total;
          for (int k = 0; k < k_total; ++k)
            dwrow[k] += static_cast<float>(
                dot(dyrow, col + static_cast<int64_t>(k) * p_total, p_total));
        }
      }
      if (need_dx) {
        float* dxs = xn->grad.data() + static_cast<int64_t>(s) * cin * h * win;
        float* dcol = pointwise ? dxs : tl_dcol.data();
        if (!pointwise) std::fill(tl_dcol.begin(), tl_dcol.end(), 0.0f);
        for (int co = 0; co < cout; ++co) {
          const float* dyrow = dys + static_cast<int64_t>(co) * p_total;
          const float* wrow = wn->data.data() + static_cast<int64_t>(co) * k_total;
          for (int k = 0; k < k_total; ++k)
            axpy(dcol + static_cast<int64_t>(k) * p_total, wrow[k], dyrow, p_total);
        }
        if (!pointwise)
          col2im_add(dcol, cin, h, win, kh, kw, stride, padding, ho, wo, dxs);
      }
    }
  };

  std::vector<Tensor> inputs = {x, w};
  if (b.defined()) inputs.push_back(b);
  return make_op("conv2d", {n, cout, ho, wo}, std::move(out), inputs, std::move(backward));
}

Tensor pool(const Tensor& x, PoolKind kind, int k, int stride, int padding) {
  if (x.rank() != 4) throw ConfigError("pool: input must be [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto xn = x.node();

  if (kind == PoolKind::kGlobalAvg) {
    if (h < 1 || w < 1) throw ConfigError("pool: empty spatial extent");
    const int64_t hw = static_cast<int64_t>(h) * w;
    std::vector<float> out(static_cast<size_t>(n) * c);
    const float* xd = x.ptr();
    for (int64_t i = 0; i < static_cast<int64_t>(n) * c; ++i) {
      double acc = 0.0;
      const float* src = xd + i * hw;
      for (int64_t p = 0; p < hw; ++p) acc += src[p];
      out[static_cast<size_t>(i)] = static_cast<float>(acc / static_cast<double>(hw));
    }
    return make_op("global_avg_pool", {n, c, 1, 1}, std::move(out), {x},
                   [xn, hw](Node& self) {
                     xn->ensure_grad();
                     const float inv = 1.0f / static_cast<float>(hw);
                     for (size_t i = 0; i < self.grad.size(); ++i) {
                       const float g = self.grad[i] * inv;
                       float* dst = xn->grad.data() + static_cast<int64_t>(i) * hw;
                       for (int64_t p = 0; p < hw; ++p) dst[p] += g;
                     }
                   });
  }

  if (k < 1) throw ConfigError("pool: window must be >= 1");
  if (stride < 1) throw ConfigError("pool: stride must be >= 1");
  if (padding < 0 || padding >= k) throw ConfigError("pool: padding must be in [0, k)");
  if (k > h || k > w)
    throw ConfigError("pool: window " + std::to_string(k) + " exceeds spatial extent " +
                      std::to_string(h) + "x" + std::to_string(w));
  const int ho = conv_out_size(h, k, stride, padding);
  const int wo = conv_out_size(w, k, stride, padding);
  const int64_t p_total = static_cast<int64_t>(ho) * wo;
  std::vector<float> out(static_cast<size_t>(n) * c * p_total);
  const float* xd = x.ptr();

  if (kind == PoolKind::kMax) {
    auto argmax = std::make_shared<std::vector<int32_t>>(out.size());
    for (int64_t img = 0; img < static_cast<int64_t>(n) * c; ++img) {
      const float* src = xd + img * h * w;
      float* dst = out.data() + img * p_total;
      int32_t* amax = argmax->data() + img * p_total;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          float best = -std::numeric_limits<float>::infinity();
          int32_t best_idx = -1;
          for (int i = 0; i < k; ++i) {
            const int iy = oy * stride - padding + i;
            if (iy < 0 || iy >= h) continue;
            for (int j = 0; j < k; ++j) {
              const int ix = ox * stride - padding + j;
              if (ix < 0 || ix >= w) continue;
              const float v = src[iy * w + ix];
              if (v > best) {
                best = v;
                best_idx = iy * w + ix;
              }
            }
          }
          dst[oy * wo + ox] = best;
          amax[oy * wo + ox] = best_idx;
        }
      }
    }
    return make_op("max_pool", {n, c, ho, wo}, std::move(out), {x},
                   [xn, argmax, h, w, p_total](Node& self) {
                     xn->ensure_grad();
                     const int64_t hw = static_cast<int64_t>(h) * w;
                     const int64_t imgs = static_cast<int64_t>(self.grad.size()) / p_total;
                     for (int64_t img = 0; img < imgs; ++img) {
                       float* dx = xn->grad.data() + img * hw;
                       const float* g = self.grad.data() + img * p_total;
                       const int32_t* amax = argmax->data() + img * p_total;
                       for (int64_t p = 0; p < p_total; ++p) dx[amax[p]] += g[p];
                     }
                   });
  }

  // Average pool; padding cells count as zeros with a fixed k*k divisor.
  const float inv_kk = 1.0f / static_cast<float>(k * k);
  for (int64_t img = 0; img < static_cast<int64_t>(n) * c; ++img) {
    const float* src = xd + img * h * w;
    float* dst = out.data() + img * p_total;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        double acc = 0.0;
        for (int i = 0; i < k; ++i) {
          const int iy = oy * stride - padding + i;
          if (iy < 0 || iy >= h) continue;
          for (int j = 0; j < k; ++j) {
            const int ix = ox * stride - padding + j;
            if (ix >= 0 && ix < w) acc += src[iy * w + ix];
          }
        }
        dst[oy * wo + ox] = static_cast<float>(acc) * inv_kk;
      }
    }
  }
  return make_op("avg_pool", {n, c, ho, wo}, std::move(out), {x},
                 [xn, h, w, k, stride, padding, ho, wo, p_total, inv_kk](Node& self) {
                   xn->ensure_grad();
                   const int64_t hw = static_cast<int64_t>(h) * w;
                   const int64_t imgs = static_cast<int64_t>(self.grad.size()) / p_total;
                   for (int64_t img = 0; img < imgs; ++img) {
                     float* dx = xn->grad.data() + img * hw;
                     const float* g = self.grad.data() + img * p_total;
                     for (int oy = 0; oy < ho; ++oy) {
                       for (int ox = 0; ox < wo; ++ox) {
                         const float gv = g[oy * wo + ox] * inv_kk;
                         for (int i = 0; i < k; ++i) {
                           const int iy = oy * stride - padding + i;
                           if (iy < 0 || iy >= h) continue;
                           for (int j = 0; j < k; ++j) {
                             const int ix = ox * stride - padding + j;
                             if (ix >= 0 && ix < w) dx[iy * w + ix] += gv;
                           }
                         }
                       }
                     }
                   }
                 });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2)
    throw ConfigError("linear: expected x [N,Din] and w [Dout,Din]");
  const int n = x.dim(0), din = x.dim(1), dout = w.dim(0);
  if (w.dim(1) != din)
    throw ConfigError("linear: input width " + std::to_string(din) +
                      " does not match weight width " + std::to_string(w.dim(1)));
  if (b.defined() && (b.rank() != 1 || b.dim(0) != dout))
    throw ConfigError("linear: bias must be [Dout]");

  std::vector<float> out(static_cast<size_t>(n) * dout);
  const float* xd = x.ptr();
  const float* wd = w.ptr();
  const float* bd = b.defined() ? b.ptr() : nullptr;
  for (int i = 0; i < n; ++i) {
    for (int o = 0; o < dout; ++o) {
      double acc = bd ? static_cast<double>(bd[o]) : 0.0;
      acc += dot(xd + static_cast<int64_t>(i) * din, wd + static_cast<int64_t>(o) * din, din);
      out[static_cast<size_t>(i) * dout + o] = static_cast<float>(acc);
    }
  }

  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.defined() ? b.node() : nullptr;
  auto backward = [xn, wn, bn, n, din, dout](Node& self) {
    const float* dy = self.grad.data();
    if (bn && bn->requires_grad) {
      bn->ensure_grad();
      for (int o = 0; o < dout; ++o) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) acc += dy[static_cast<int64_t>(i) * dout + o];
        bn->grad[o] += static_cast<float>(acc);
      }
    }
    if (wn->requires_grad) {
      wn->ensure_grad();
      for (int o = 0; o < dout; ++o) {
        for (int d = 0; d < din; ++d) {
          double acc = 0.0;
          for (int i = 0; i < n; ++i)
            acc += static_cast<double>(dy[static_cast<int64_t>(i) * dout + o]) *
                   xn->data[static_cast<int64_t>(i) * din + d];
          wn->grad[static_cast<int64_t>(o) * din + d] += static_cast<float>(acc);
        }
      }
    }
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (int i = 0; i < n; ++i) {
        float* dx = xn->grad.data() + static_cast<int64_t>(i) * din;
        const float* dyrow = dy + static_cast<int64_t>(i) * dout;
        for (int o = 0; o < dout; ++o)
          axpy(dx, dyrow[o], wn->data.data() + static_cast<int64_t>(o) * din, din);
      }
    }
  };

  std::vector<Tensor> inputs = {x, w};
  if (b.defined()) inputs.push_back(b);
  return make_op("linear", {n, dout}, std::move(out), inputs, std::move(backward));
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  float eps) {
  if (x.rank() != 4) throw ConfigError("group_norm: input must be [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (groups < 1 || c % groups != 0)
    throw ConfigError("group_norm: groups " + std::to_string(groups) +
                      " does not divide channel count " + std::to_string(c));
  if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 || beta.dim(0) != c)
    throw ConfigError("group_norm: gamma/beta must be [C]");
  if (eps <= 0.0f) throw ConfigError("group_norm: eps must be > 0");

  const int cg = c / groups;
  const int64_t hw = static_cast<int64_t>(h) * w;
  const int64_t group_elems = cg * hw;
  std::vector<float> out(x.data().size());
  auto xhat = std::make_shared<std::vector<float>>(x.data().size());
  auto invstd = std::make_shared<std::vector<float>>(static_cast<size_t>(n) * groups);

  const float* xd = x.ptr();
  const float* gd = gamma.ptr();
  const float* bd = beta.ptr();
  for (int s = 0; s < n; ++s) {
    for (int g = 0; g < groups; ++g) {
      const float* src = xd + (static_cast<int64_t>(s) * c + static_cast<int64_t>(g) * cg) * hw;
      double mean = 0.0;
      for (int64_t i = 0; i < group_elems; ++i) mean += src[i];
      mean /= static_cast<double>(group_elems);
      double var = 0.0;
      for (int64_t i = 0; i < group_elems; ++i) {
        const double d = src[i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(group_elems);
      const double istd = 1.0 / std::sqrt(var + static_cast<double>(eps));
      (*invstd)[static_cast<size_t>(s) * groups + g] = static_cast<float>(istd);
      const int64_t base = (static_cast<int64_t>(s) * c + static_cast<int64_t>(g) * cg) * hw;
      for (int ch = 0; ch < cg; ++ch) {
        const float gamma_c = gd[g * cg + ch];
        const float beta_c = bd[g * cg + ch];
        const float* sc = xd + base + static_cast<int64_t>(ch) * hw;
        float* xh = xhat->data() + base + static_cast<int64_t>(ch) * hw;
        float* dst = out.data() + base + static_cast<int64_t>(ch) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          const float z = static_cast<float>((sc[i] - mean) * istd);
          xh[i] = z;
          dst[i] = gamma_c * z + beta_c;
        }
      }
    }
  }

  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  auto backward = [xn, gn, bn, xhat, invstd, n, c, groups, cg, hw, group_elems](Node& self) {
    const float* dy = self.grad.data();
    if (gn->requires_grad) {
      gn->ensure_grad();
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int s = 0; s < n; ++s) {
          const int64_t base = (static_cast<int64_t>(s) * c + ch) * hw;
          for (int64_t i = 0; i < hw; ++i)
            acc += static_cast<double>(dy[base + i]) * (*xhat)[base + i];
        }
        gn->grad[ch] += static_cast<float>(acc);
      }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int s = 0; s < n; ++s) {
          const int64_t base = (static_cast<int64_t>(s) * c + ch) * hw;
          for (int64_t i = 0; i < hw; ++i) acc += dy[base + i];
        }
        bn->grad[ch] += static_cast<float>(acc);
      }
    }
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (int s = 0; s < n; ++s) {
      for (int g = 0; g < groups; ++g) {
        const int64_t base = (static_cast<int64_t>(s) * c + static_cast<int64_t>(g) * cg) * hw;
        // dxhat = dy * gamma; two group-wide sums, then the fused formula.
        double s1 = 0.0, s2 = 0.0;
        for (int ch = 0; ch < cg; ++ch) {
          const double gamma_c = gn->data[g * cg + ch];
          const int64_t off = base + static_cast<int64_t>(ch) * hw;
          for (int64_t i = 0; i < hw; ++i) {
            const double dxh = dy[off + i] * gamma_c;
            s1 += dxh;
            s2 += dxh * (*xhat)[off + i];
          }
        }
        const double inv_m = 1.0 / static_cast<double>(group_elems);
        const double istd = (*invstd)[static_cast<size_t>(s) * groups + g];
        const double m1 = s1 * inv_m;
        const double m2 = s2 * inv_m;
        for (int ch = 0; ch < cg; ++ch) {
          const double gamma_c = gn->data[g * cg + ch];
          const int64_t off = base + static_cast<int64_t>(ch) * hw;
          for (int64_t i = 0; i < hw; ++i) {
            const double dxh = dy[off + i] * gamma_c;
            xn->grad[off + i] +=
                static_cast<float>(istd * (dxh - m1 - (*xhat)[off + i] * m2));
          }
        }
      }
    }
  };

  return make_op("group_norm", x.shape(), std::move(out), {x, gamma, beta},
                 std::move(backward));
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw ConfigError("softmax_cross_entropy: logits must be [N,K]");
  const int n = logits.dim(0), k = logits.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw DataError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                    " labels for batch of " + std::to_string(n));
  if (n == 0) throw DataError("softmax_cross_entropy: empty batch");
  for (int label : labels)
    if (label < 0 || label >= k)
      throw DataError("softmax_cross_entropy: label " + std::to_string(label) +
                      " outside [0," + std::to_string(k) + ")");

  auto probs = std::make_shared<std::vector<float>>(static_cast<size_t>(n) * k);
  const float* ld = logits.ptr();
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const float* row = ld + static_cast<int64_t>(i) * k;
    double mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double log_z = std::log(z);
    loss += log_z - (row[labels[static_cast<size_t>(i)]] - mx);
    for (int j = 0; j < k; ++j)
      (*probs)[static_cast<size_t>(i) * k + j] =
          static_cast<float>(std::exp(row[j] - mx) / z);
  }
  loss /= static_cast<double>(n);

  auto ln = logits.node();
  auto labels_copy = std::make_shared<std::vector<int>>(labels);
  return make_op("softmax_cross_entropy", {1}, {static_cast<float>(loss)}, {logits},
                 [ln, probs, labels_copy, n, k](Node& self) {
                   ln->ensure_grad();
                   const float g = self.grad[0] / static_cast<float>(n);
                   for (int i = 0; i < n; ++i) {
                     const int y = (*labels_copy)[static_cast<size_t>(i)];
                     float* dst = ln->grad.data() + static_cast<int64_t>(i) * k;
                     const float* p = probs->data() + static_cast<int64_t>(i) * k;
                     for (int j = 0; j < k; ++j)
                       dst[j] += g * (p[j] - (j == y ? 1.0f : 0.0f));
                   }
                 });
}

Tensor scale_channels(const Tensor& x, const Tensor& g) {
  if (x.rank() != 4 || g.rank() != 2 || g.dim(0) != x.dim(0) || g.dim(1) != x.dim(1))
    throw ConfigError("scale_channels: expected x [N,C,H,W] and gates [N,C]");
  const int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  const int64_t nc = static_cast<int64_t>(x.dim(0)) * x.dim(1);
  std::vector<float> out(x.data().size());
  const float* xd = x.ptr();
  const float* gd = g.ptr();
  for (int64_t i = 0; i < nc; ++i) {
    const float gv = gd[i];
    const float* src = xd + i * hw;
    float* dst = out.data() + i * hw;
    for (int64_t p = 0; p < hw; ++p) dst[p] = src[p] * gv;
  }
  auto xn = x.node();
  auto gn = g.node();
  return make_op("scale_channels", x.shape(), std::move(out), {x, g},
                 [xn, gn, nc, hw](Node& self) {
                   const float* dy = self.grad.data();
                   if (xn->requires_grad) {
                     xn->ensure_grad();
                     for (int64_t i = 0; i < nc; ++i)
                       axpy(xn->grad.data() + i * hw, gn->data[static_cast<size_t>(i)],
                            dy + i * hw, hw);
                   }
                   if (gn->requires_grad) {
                     gn->ensure_grad();
                     for (int64_t i = 0; i < nc; ++i)
                       gn->grad[static_cast<size_t>(i)] += static_cast<float>(
                           dot(dy + i * hw, xn->data.data() + i * hw, hw));
                   }
                 });
}

Tensor dropout(const Tensor& x, float rate, Mode mode, Rng& rng) {
  if (rate < 0.0f || rate >= 1.0f)
    throw ConfigError("dropout: rate must be in [0,1), got " + std::to_string(rate));
  if (mode == Mode::kEval || rate == 0.0f) return x;
  const float scale = 1.0f / (1.0f - rate);
  auto mask = std::make_shared<std::vector<float>>(x.data().size());
  std::vector<float> out(x.data().size());
  const float* xd = x.ptr();
  for (size_t i = 0; i < out.size(); ++i) {
    const float m = rng.bernoulli(rate) ? 0.0f : scale;
    (*mask)[i] = m;
    out[i] = xd[i] * m;
  }
  auto xn = x.node();
  return make_op("dropout", x.shape(), std::move(out), {x}, [xn, mask](Node& self) {
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      xn->grad[i] += self.grad[i] * (*mask)[i];
  });
}

Tensor stochastic_depth(const Tensor& branch, float survive_prob, Mode mode, Rng& rng) {
  if (survive_prob <= 0.0f || survive_prob > 1.0f)
    throw ConfigError("stochastic_depth: survive_prob must be in (0,1], got " +
                      std::to_string(survive_prob));
  if (mode == Mode::kEval || survive_prob == 1.0f) return branch;
  const bool survive = rng.uniform() < survive_prob;
  return mul_scalar(branch, survive ? 1.0f / survive_prob : 0.0f);
}

Tensor reshape(const Tensor& x, std::vector<int> new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw ConfigError("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                      shape_to_string(new_shape));
  auto xn = x.node();
  return make_op("reshape", std::move(new_shape), std::vector<float>(x.data()), {x},
                 [xn](Node& self) {
                   xn->ensure_grad();
                   accumulate(xn->grad, self.grad.data(), self.grad.size());
                 });
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double eps) {
  Tensor probe = Tensor::from_vector(x.shape(), x.data(), /*requires_grad=*/true);
  Tensor y = f(probe);
  if (y.numel() != 1) throw UsageError("finite_diff_check: f must be scalar-valued");
  y.backward();
  std::vector<double> analytic(probe.grad().begin(), probe.grad().end());

  double grad_norm2 = 0.0;
  for (double g : analytic) grad_norm2 += g * g;

  // Per-element central differences on a float32 forward drown in rounding
  // noise wherever a single gradient entry is tiny, so probe directional
  // derivatives instead: any misdirected gradient component projects onto a
  // random direction with overwhelming probability. The best step size is
  // direction-dependent (error is U-shaped in eps: float32 evaluation noise
  // shrinks with the step while truncation grows), so each direction is
  // probed on a small eps ladder and scored by its best rung; a wrong
  // gradient has a step-independent error floor that no rung dips below.
  Rng dir_rng(0x5eedf00dULL);
  const size_t n = x.data().size();
  double worst = 0.0;
  for (int trial = 0; trial < 4; ++trial) {
    std::vector<double> direction(n);
    for (size_t i = 0; i < n; ++i) {
      const double mag = 0.5 + 0.5 * dir_rng.uniform();
      direction[i] = dir_rng.bernoulli(0.5) ? mag : -mag;
    }
    double best = std::numeric_limits<double>::infinity();
    for (const double mult : {1.0, 3.0, 9.0}) {
      std::vector<float> plus = x.data();
      std::vector<float> minus = x.data();
      double step_norm2 = 0.0;
      double along = 0.0;
      for (size_t i = 0; i < n; ++i) {
        const double orig = x.data()[i];
        plus[i] = static_cast<float>(orig + eps * mult * direction[i]);
        minus[i] = static_cast<float>(orig - eps * mult * direction[i]);
        const double half_step =
            (static_cast<double>(plus[i]) - static_cast<double>(minus[i])) / 2.0;
        step_norm2 += half_step * half_step;
        along += analytic[i] * half_step;
      }
      const double f_plus = f(Tensor::from_vector(x.shape(), plus)).item();
      const double f_minus = f(Tensor::from_vector(x.shape(), minus)).item();
      const double numeric = (f_plus - f_minus) / 2.0;
      // Cauchy-Schwarz bound on the directional derivative: the natural scale
      // of this probe even when random signs cancel the projection itself.
      const double scale = std::sqrt(grad_norm2 * step_norm2);
      const double err = std::abs(along - numeric) / (scale + std::abs(along) + 1e-12);
      best = std::min(best, err);
    }
    worst = std::max(worst, best);
  }
  return worst;
}

}  // namespace phytnet
