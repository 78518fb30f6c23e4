#include <algorithm>
#include <cstring>
#include <limits>

#include "gemm.hpp"
#include "leafvit/error.hpp"
#include "leafvit/op_counter.hpp"
#include "leafvit/ops.hpp"
#include "leafvit/parallel.hpp"

namespace leafvit {

namespace {

struct ConvGeometry {
  std::size_t batch, cin, h, w;
  std::size_t cout, kh, kw;
  std::size_t stride, pad, groups;
  std::size_t ho, wo;

  [[nodiscard]] std::size_t cin_g() const { return cin / groups; }
  [[nodiscard]] std::size_t cout_g() const { return cout / groups; }
  [[nodiscard]] std::size_t patch() const { return cin_g() * kh * kw; }
  [[nodiscard]] std::size_t out_pixels() const { return ho * wo; }
  [[nodiscard]] bool depthwise() const { return cin_g() == 1 && cout_g() == 1; }
  [[nodiscard]] bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

template <class T>
ConvGeometry check_conv(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                        const Conv2dParams& p) {
  if (x.rank() != 4 || weight.rank() != 4) {
    throw DimensionError("conv2d expects x[B,C,H,W] and w[Cout,Cin/g,kh,kw], got " + x.shape().str() + " and " +
                         weight.shape().str());
  }
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), weight.dim(3),
                 p.stride, p.padding, p.groups, 0, 0};
  if (g.groups == 0 || g.cin % g.groups != 0 || g.cout % g.groups != 0) {
    throw ConfigError("conv2d: groups=" + std::to_string(g.groups) + " must divide Cin=" + std::to_string(g.cin) +
                      " and Cout=" + std::to_string(g.cout));
  }
  if (g.stride == 0) throw ConfigError("conv2d: stride must be >= 1");
  if (weight.dim(1) != g.cin_g()) {
    throw DimensionError("conv2d: weight " + weight.shape().str() + " expects " + std::to_string(weight.dim(1) * g.groups) +
                         " input channels, input is " + x.shape().str());
  }
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw) {
    throw DimensionError("conv2d: output extent < 1 for input " + x.shape().str() + " with kernel " +
                         weight.shape().str() + " and padding " + std::to_string(g.pad));
  }
  g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout)) {
    throw DimensionError("conv2d: bias " + bias.shape().str() + " does not match " + std::to_string(g.cout) +
                         " output channels");
  }
  return g;
}

// Rows (c, ky, kx) of the unrolled patch matrix for one image and group.
template <class T>
void im2col(const ConvGeometry& g, const T* img, T* col) {
  const std::size_t n = g.out_pixels();
  for (std::size_t c = 0; c < g.cin_g(); ++c) {
    const T* plane = img + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((c * g.kh + ky) * g.kw + kx) * n;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const ConvGeometry& g, const T* col, T* img) {
  const std::size_t n = g.out_pixels();
  for (std::size_t c = 0; c < g.cin_g(); ++c) {
    T* plane = img + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((c * g.kh + ky) * g.kw + kx) * n;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * g.w;
          const T* src = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Zero-padded copy of one H×W plane into a (H+2p)×(W+2p) buffer.
template <class T>
void pad_plane(const ConvGeometry& g, const T* plane, std::vector<T>& buf) {
  const std::size_t hp = g.h + 2 * g.pad, wp = g.w + 2 * g.pad;
  buf.assign(hp * wp, T(0));
  for (std::size_t y = 0; y < g.h; ++y) {
    std::copy(plane + y * g.w, plane + (y + 1) * g.w, buf.data() + (y + g.pad) * wp + g.pad);
  }
}

template <class T>
void depthwise_forward(const ConvGeometry& g, const T* x, const T* w, T* out) {
  const std::size_t wp = g.w + 2 * g.pad;
  parallel_for(g.batch * g.cin, [&](std::size_t begin, std::size_t end) {
    std::vector<T> buf;
    for (std::size_t plane = begin; plane < end; ++plane) {
      const std::size_t c = plane % g.cin;
      pad_plane(g, x + plane * g.h * g.w, buf);
      const T* k = w + c * g.kh * g.kw;
      T* o = out + plane * g.out_pixels();
      std::fill(o, o + g.out_pixels(), T(0));
      for (std::size_t oy = 0; oy < g.ho; ++oy) {
        T* orow = o + oy * g.wo;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const T* prow = buf.data() + (oy * g.stride + ky) * wp;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const T kv = k[ky * g.kw + kx];
            const T* src = prow + kx;
            if (g.stride == 1) {
              for (std::size_t ox = 0; ox < g.wo; ++ox) orow[ox] += kv * src[ox];
            } else {
              for (std::size_t ox = 0; ox < g.wo; ++ox) orow[ox] += kv * src[ox * g.stride];
            }
          }
        }
      }
    }
  });
}

template <class T>
void depthwise_backward_input(const ConvGeometry& g, const T* w, const T* dy, T* dx) {
  const std::size_t hp = g.h + 2 * g.pad, wp = g.w + 2 * g.pad;
  parallel_for(g.batch * g.cin, [&](std::size_t begin, std::size_t end) {
    std::vector<T> buf(hp * wp);
    for (std::size_t plane = begin; plane < end; ++plane) {
      const std::size_t c = plane % g.cin;
      std::fill(buf.begin(), buf.end(), T(0));
      const T* k = w + c * g.kh * g.kw;
      const T* d = dy + plane * g.out_pixels();
      for (std::size_t oy = 0; oy < g.ho; ++oy) {
        const T* drow = d + oy * g.wo;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          T* prow = buf.data() + (oy * g.stride + ky) * wp;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const T kv = k[ky * g.kw + kx];
            T* dst = prow + kx;
            for (std::size_t ox = 0; ox < g.wo; ++ox) dst[ox * g.stride] += kv * drow[ox];
          }
        }
      }
      T* target = dx + plane * g.h * g.w;
      for (std::size_t y = 0; y < g.h; ++y) {
        const T* src = buf.data() + (y + g.pad) * wp + g.pad;
        for (std::size_t xcol = 0; xcol < g.w; ++xcol) target[y * g.w + xcol] += src[xcol];
      }
    }
  });
}

template <class T>
void depthwise_backward_weight(const ConvGeometry& g, const T* x, const T* dy, T* dw) {
  const std::size_t wp = g.w + 2 * g.pad;
  parallel_for(g.cin, [&](std::size_t begin, std::size_t end) {
    std::vector<T> buf;
    std::vector<double> acc(g.kh * g.kw);
    for (std::size_t c = begin; c < end; ++c) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t b = 0; b < g.batch; ++b) {
        const std::size_t plane = b * g.cin + c;
        pad_plane(g, x + plane * g.h * g.w, buf);
        const T* d = dy + plane * g.out_pixels();
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            T s = 0;
            for (std::size_t oy = 0; oy < g.ho; ++oy) {
              const T* src = buf.data() + (oy * g.stride + ky) * wp + kx;
              const T* drow = d + oy * g.wo;
              for (std::size_t ox = 0; ox < g.wo; ++ox) s += drow[ox] * src[ox * g.stride];
            }
            acc[ky * g.kw + kx] += s;
          }
        }
      }
      for (std::size_t i = 0; i < acc.size(); ++i) dw[c * g.kh * g.kw + i] += static_cast<T>(acc[i]);
    }
  });
}

template <class T>
void gemm_forward(const ConvGeometry& g, const T* x, const T* w, T* out) {
  const std::size_t n = g.out_pixels();
  parallel_for(g.batch, [&](std::size_t begin, std::size_t end) {
    std::vector<T> col;
    if (!g.pointwise()) col.resize(g.patch() * n);
    for (std::size_t b = begin; b < end; ++b) {
      for (std::size_t grp = 0; grp < g.groups; ++grp) {
        const T* img = x + (b * g.cin + grp * g.cin_g()) * g.h * g.w;
        const T* src = img;
        if (!g.pointwise()) {
          im2col(g, img, col.data());
          src = col.data();
        }
        detail::gemm<T>(false, false, g.cout_g(), n, g.patch(), w + grp * g.cout_g() * g.patch(), g.patch(), src, n,
                        out + (b * g.cout + grp * g.cout_g()) * n, n, false);
      }
    }
  });
}

template <class T>
void gemm_backward_input(const ConvGeometry& g, const T* w, const T* dy, T* dx) {
  const std::size_t n = g.out_pixels();
  parallel_for(g.batch, [&](std::size_t begin, std::size_t end) {
    std::vector<T> dcol;
    if (!g.pointwise()) dcol.resize(g.patch() * n);
    for (std::size_t b = begin; b < end; ++b) {
      for (std::size_t grp = 0; grp < g.groups; ++grp) {
        const T* wg = w + grp * g.cout_g() * g.patch();
        const T* dyg = dy + (b * g.cout + grp * g.cout_g()) * n;
        T* dimg = dx + (b * g.cin + grp * g.cin_g()) * g.h * g.w;
        if (g.pointwise()) {
          detail::gemm<T>(true, false, g.cin_g(), n, g.cout_g(), wg, g.patch(), dyg, n, dimg, n, true);
        } else {
          detail::gemm<T>(true, false, g.patch(), n, g.cout_g(), wg, g.patch(), dyg, n, dcol.data(), n, false);
          col2im_add(g, dcol.data(), dimg);
        }
      }
    }
  });
}

template <class T>
void gemm_backward_weight(const ConvGeometry& g, const T* x, const T* dy, T* dw) {
  const std::size_t n = g.out_pixels();
  std::vector<T> col;
  if (!g.pointwise()) col.resize(g.patch() * n);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      const T* img = x + (b * g.cin + grp * g.cin_g()) * g.h * g.w;
      const T* src = img;
      if (!g.pointwise()) {
        im2col(g, img, col.data());
        src = col.data();
      }
      detail::gemm<T>(false, true, g.cout_g(), g.patch(), n, dy + (b * g.cout + grp * g.cout_g()) * n, n, src, n,
                      dw + grp * g.cout_g() * g.patch(), g.patch(), true);
    }
  }
}

}  // namespace

template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      Conv2dParams params) {
  const ConvGeometry g = check_conv(x, weight, bias, params);
  std::vector<T> out(g.batch * g.cout * g.out_pixels());
  if (g.depthwise()) {
    depthwise_forward(g, x.data().data(), weight.data().data(), out.data());
  } else {
    gemm_forward(g, x.data().data(), weight.data().data(), out.data());
  }
  if (bias.defined()) {
    const auto bv = bias.data();
    const std::size_t n = g.out_pixels();
    for (std::size_t b = 0; b < g.batch; ++b)
      for (std::size_t c = 0; c < g.cout; ++c) {
        T* o = out.data() + (b * g.cout + c) * n;
        for (std::size_t i = 0; i < n; ++i) o[i] += bv[c];
      }
  }
  detail::count_macs(static_cast<std::uint64_t>(g.batch) * g.cout * g.out_pixels() * g.patch());

  return detail::make_result<T>(
      Shape{g.batch, g.cout, g.ho, g.wo}, std::move(out), {&x, &weight, &bias}, "conv2d",
      [x, weight, bias, g](const auto& o) {
        const T* dy = o.grad.data();
        if (T* gx = detail::grad_target(x)) {
          if (g.depthwise()) {
            depthwise_backward_input(g, weight.data().data(), dy, gx);
          } else {
            gemm_backward_input(g, weight.data().data(), dy, gx);
          }
        }
        if (T* gw = detail::grad_target(weight)) {
          if (g.depthwise()) {
            depthwise_backward_weight(g, x.data().data(), dy, gw);
          } else {
            gemm_backward_weight(g, x.data().data(), dy, gw);
          }
        }
        if (T* gb = detail::grad_target(bias)) {
          const std::size_t n = g.out_pixels();
          for (std::size_t b = 0; b < g.batch; ++b)
            for (std::size_t c = 0; c < g.cout; ++c) {
              const T* d = dy + (b * g.cout + c) * n;
              T s = 0;
              for (std::size_t i = 0; i < n; ++i) s += d[i];
              gb[c] += s;
            }
        }
      });
}

template <class T>
BasicTensor<T> adaptive_avg_pool2d(const BasicTensor<T>& x) {
  if (x.rank() != 4) throw DimensionError("adaptive_avg_pool2d expects [B,C,H,W], got " + x.shape().str());
  const std::size_t planes = x.dim(0) * x.dim(1), n = x.dim(2) * x.dim(3);
  std::vector<T> out(planes);
  const auto v = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += v[p * n + i];
    out[p] = static_cast<T>(s / static_cast<double>(n));
  }
  detail::count_adds(x.numel());
  return detail::make_result<T>(Shape{x.dim(0), x.dim(1), 1, 1}, std::move(out), {&x}, "adaptive_avg_pool2d",
                                [x, planes, n](const auto& o) {
                                  T* g = detail::grad_target(x);
                                  const T inv = T(1) / static_cast<T>(n);
                                  for (std::size_t p = 0; p < planes; ++p)
                                    for (std::size_t i = 0; i < n; ++i) g[p * n + i] += o.grad[p] * inv;
                                });
}

template <class T>
BasicTensor<T> max_pool2d(const BasicTensor<T>& x, std::size_t kernel, std::size_t stride) {
  if (x.rank() != 4) throw DimensionError("max_pool2d expects [B,C,H,W], got " + x.shape().str());
  if (kernel == 0 || stride == 0) throw ConfigError("max_pool2d: kernel and stride must be >= 1");
  const std::size_t h = x.dim(2), w = x.dim(3);
  if (h < kernel || w < kernel) throw DimensionError("max_pool2d: window larger than input " + x.shape().str());
  const std::size_t ho = (h - kernel) / stride + 1, wo = (w - kernel) / stride + 1;
  const std::size_t planes = x.dim(0) * x.dim(1);
  std::vector<T> out(planes * ho * wo);
  std::vector<std::size_t> argmax(out.size());
  const auto v = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = p * h * w + oy * stride * w + ox * stride;
        for (std::size_t ky = 0; ky < kernel; ++ky)
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::size_t idx = p * h * w + (oy * stride + ky) * w + ox * stride + kx;
            if (v[idx] > v[best]) best = idx;
          }
        const std::size_t o = (p * ho + oy) * wo + ox;
        out[o] = v[best];
        argmax[o] = best;
      }
  }
  return detail::make_result<T>(Shape{x.dim(0), x.dim(1), ho, wo}, std::move(out), {&x}, "max_pool2d",
                                [x, argmax = std::move(argmax)](const auto& o) {
                                  T* g = detail::grad_target(x);
                                  for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += o.grad[i];
                                });
}

#define LEAFVIT_INSTANTIATE(T)                                                                        \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                 Conv2dParams);                                                       \
  template BasicTensor<T> adaptive_avg_pool2d(const BasicTensor<T>&);                                 \
  template BasicTensor<T> max_pool2d(const BasicTensor<T>&, std::size_t, std::size_t);

LEAFVIT_INSTANTIATE(float)
LEAFVIT_INSTANTIATE(double)
#undef LEAFVIT_INSTANTIATE

}  // namespace leafvit
