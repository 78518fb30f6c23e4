#include "leafvit/error.hpp"
#include "leafvit/ops.hpp"

namespace leafvit {

namespace {

// Copies a window between two [planes, H, W] buffers: rows×cols starting at
// the origin of both.
template <class T>
void copy_window(const T* src, std::size_t src_w, std::size_t src_plane, T* dst, std::size_t dst_w,
                 std::size_t dst_plane, std::size_t planes, std::size_t rows, std::size_t cols, bool accumulate) {
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < rows; ++y) {
      const T* s = src + p * src_plane + y * src_w;
      T* d = dst + p * dst_plane + y * dst_w;
      for (std::size_t x = 0; x < cols; ++x) d[x] = accumulate ? d[x] + s[x] : s[x];
    }
}

}  // namespace

template <class T>
BasicTensor<T> pad2d(const BasicTensor<T>& x, std::size_t bottom, std::size_t right) {
  if (x.rank() != 4) throw DimensionError("pad2d expects [B,C,H,W], got " + x.shape().str());
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h + bottom, wo = w + right;
  std::vector<T> out(planes * ho * wo, T(0));
  copy_window(x.data().data(), w, h * w, out.data(), wo, ho * wo, planes, h, w, false);
  return detail::make_result<T>(Shape{x.dim(0), x.dim(1), ho, wo}, std::move(out), {&x}, "pad2d",
                                [x, planes, h, w, ho, wo](const auto& o) {
                                  copy_window(o.grad.data(), wo, ho * wo, detail::grad_target(x), w, h * w, planes,
                                              h, w, true);
                                });
}

template <class T>
BasicTensor<T> crop2d(const BasicTensor<T>& x, std::size_t height, std::size_t width) {
  if (x.rank() != 4 || height > x.dim(2) || width > x.dim(3)) {
    throw DimensionError("crop2d: cannot crop " + x.shape().str() + " to " + std::to_string(height) + "x" +
                         std::to_string(width));
  }
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<T> out(planes * height * width);
  copy_window(x.data().data(), w, h * w, out.data(), width, height * width, planes, height, width, false);
  return detail::make_result<T>(Shape{x.dim(0), x.dim(1), height, width}, std::move(out), {&x}, "crop2d",
                                [x, planes, h, w, height, width](const auto& o) {
                                  copy_window(o.grad.data(), width, height * width, detail::grad_target(x), w, h * w,
                                              planes, height, width, true);
                                });
}

namespace {

struct PatchGeometry {
  std::size_t batch, depth, h, w, ph, pw;
  [[nodiscard]] std::size_t patches() const { return ph * pw; }
  [[nodiscard]] std::size_t tokens() const { return (h / ph) * (w / pw); }
};

// Visits (spatial offset, token offset) pairs of the unfold mapping.
template <class F>
void for_each_patch_pixel(const PatchGeometry& g, F&& f) {
  const std::size_t nw = g.w / g.pw;
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t c = 0; c < g.depth; ++c)
      for (std::size_t y = 0; y < g.h; ++y)
        for (std::size_t x = 0; x < g.w; ++x) {
          const std::size_t p = (y % g.ph) * g.pw + x % g.pw;
          const std::size_t n = (y / g.ph) * nw + x / g.pw;
          const std::size_t spatial = ((b * g.depth + c) * g.h + y) * g.w + x;
          const std::size_t token = ((b * g.patches() + p) * g.tokens() + n) * g.depth + c;
          f(spatial, token);
        }
}

}  // namespace

template <class T>
BasicTensor<T> unfold_patches(const BasicTensor<T>& x, std::size_t ph, std::size_t pw) {
  if (x.rank() != 4) throw DimensionError("unfold_patches expects [B,d,H,W], got " + x.shape().str());
  if (ph == 0 || pw == 0 || x.dim(2) % ph != 0 || x.dim(3) % pw != 0) {
    throw DimensionError("unfold_patches: " + x.shape().str() + " is not divisible into " + std::to_string(ph) + "x" +
                         std::to_string(pw) + " patches");
  }
  const PatchGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), ph, pw};
  std::vector<T> out(x.numel());
  const auto v = x.data();
  for_each_patch_pixel(g, [&](std::size_t s, std::size_t t) { out[t] = v[s]; });
  return detail::make_result<T>(Shape{g.batch, g.patches(), g.tokens(), g.depth}, std::move(out), {&x},
                                "unfold_patches", [x, g](const auto& o) {
                                  T* gx = detail::grad_target(x);
                                  for_each_patch_pixel(g, [&](std::size_t s, std::size_t t) { gx[s] += o.grad[t]; });
                                });
}

template <class T>
BasicTensor<T> fold_patches(const BasicTensor<T>& tokens, std::size_t ph, std::size_t pw, std::size_t height,
                            std::size_t width) {
  if (tokens.rank() != 4 || ph == 0 || pw == 0 || height % ph != 0 || width % pw != 0 ||
      tokens.dim(1) != ph * pw || tokens.dim(2) != (height / ph) * (width / pw)) {
    throw DimensionError("fold_patches: tokens " + tokens.shape().str() + " do not fold into " +
                         std::to_string(height) + "x" + std::to_string(width) + " with " + std::to_string(ph) + "x" +
                         std::to_string(pw) + " patches");
  }
  const PatchGeometry g{tokens.dim(0), tokens.dim(3), height, width, ph, pw};
  std::vector<T> out(tokens.numel());
  const auto v = tokens.data();
  for_each_patch_pixel(g, [&](std::size_t s, std::size_t t) { out[s] = v[t]; });
  return detail::make_result<T>(Shape{g.batch, g.depth, height, width}, std::move(out), {&tokens}, "fold_patches",
                                [tokens, g](const auto& o) {
                                  T* gt = detail::grad_target(tokens);
                                  for_each_patch_pixel(g, [&](std::size_t s, std::size_t t) { gt[t] += o.grad[s]; });
                                });
}

#define LEAFVIT_INSTANTIATE(T)                                                                           \
  template BasicTensor<T> pad2d(const BasicTensor<T>&, std::size_t, std::size_t);                       \
  template BasicTensor<T> crop2d(const BasicTensor<T>&, std::size_t, std::size_t);                       \
  template BasicTensor<T> unfold_patches(const BasicTensor<T>&, std::size_t, std::size_t);               \
  template BasicTensor<T> fold_patches(const BasicTensor<T>&, std::size_t, std::size_t, std::size_t,     \
                                       std::size_t);

LEAFVIT_INSTANTIATE(float)
LEAFVIT_INSTANTIATE(double)
#undef LEAFVIT_INSTANTIATE

}  // namespace leafvit
