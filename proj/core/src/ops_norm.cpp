#include <cmath>

#include "leafvit/error.hpp"
#include "leafvit/op_counter.hpp"
#include "leafvit/ops.hpp"

namespace leafvit {

namespace {

template <class T>
void require_channel_vector(const BasicTensor<T>& t, std::size_t channels, const char* what) {
  if (!t.defined() || t.rank() != 1 || t.dim(0) != channels) {
    throw DimensionError(std::string(what) + " must have shape [" + std::to_string(channels) + "], got " +
                         (t.defined() ? t.shape().str() : std::string("<undefined>")));
  }
}

}  // namespace

template <class T>
BasicTensor<T> batch_norm2d(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                            BasicTensor<T> running_mean, BasicTensor<T> running_var, Mode mode, double eps,
                            double momentum) {
  if (x.rank() != 4) throw DimensionError("batch_norm2d expects [B,C,H,W], got " + x.shape().str());
  const std::size_t batch = x.dim(0), channels = x.dim(1), spatial = x.dim(2) * x.dim(3);
  require_channel_vector(gamma, channels, "batch_norm2d gamma");
  require_channel_vector(beta, channels, "batch_norm2d beta");
  require_channel_vector(running_mean, channels, "batch_norm2d running_mean");
  require_channel_vector(running_var, channels, "batch_norm2d running_var");

  const std::size_t count = batch * spatial;
  const auto v = x.data();
  std::vector<double> mean(channels), invstd(channels);  // kept in double for float inputs
  if (mode == Mode::train) {
    if (count < 2) {
      throw StatisticsError("batch_norm2d: train mode needs more than one value per channel, input " +
                            x.shape().str());
    }
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = v.data() + (b * channels + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = v.data() + (b * channels + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) {
          const double dlt = p[i] - mu;
          ss += dlt * dlt;
        }
      }
      const double var = ss / static_cast<double>(count);
      mean[c] = mu;
      invstd[c] = 1.0 / std::sqrt(var + eps);
      const double unbiased = ss / static_cast<double>(count - 1);
      rm[c] = static_cast<T>((1.0 - momentum) * rm[c] + momentum * mu);
      rv[c] = static_cast<T>((1.0 - momentum) * rv[c] + momentum * unbiased);
    }
  } else {
    const auto rm = running_mean.data();
    const auto rv = running_var.data();
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = rm[c];
      invstd[c] = 1.0 / std::sqrt(static_cast<double>(rv[c]) + eps);
    }
  }

  std::vector<T> out(x.numel());
  const auto gv = gamma.data(), bv = beta.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (b * channels + c) * spatial;
      const double a = gv[c] * invstd[c];
      const double shift = bv[c] - mean[c] * a;
      for (std::size_t i = 0; i < spatial; ++i) out[base + i] = static_cast<T>(v[base + i] * a + shift);
    }
  detail::count_adds(x.numel());

  return detail::make_result<T>(
      x.shape(), std::move(out), {&x, &gamma, &beta}, "batch_norm2d",
      [x, gamma, beta, mean = std::move(mean), invstd = std::move(invstd), mode, batch, channels, spatial](
          const auto& o) {
        const auto v = x.data();
        const auto gv = gamma.data();
        const T* dy = o.grad.data();
        T* gx = detail::grad_target(x);
        T* gg = detail::grad_target(gamma);
        T* gb = detail::grad_target(beta);
        const double count = static_cast<double>(batch * spatial);
        for (std::size_t c = 0; c < channels; ++c) {
          double sum_dy = 0, sum_dy_xhat = 0;
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t base = (b * channels + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
              const double xhat = (v[base + i] - mean[c]) * invstd[c];
              sum_dy += dy[base + i];
              sum_dy_xhat += dy[base + i] * xhat;
            }
          }
          if (gg) gg[c] += static_cast<T>(sum_dy_xhat);
          if (gb) gb[c] += static_cast<T>(sum_dy);
          if (!gx) continue;
          const double k = static_cast<double>(gv[c]) * invstd[c];
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t base = (b * channels + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
              if (mode == Mode::eval) {
                gx[base + i] += static_cast<T>(k * dy[base + i]);
              } else {
                const double xhat = (v[base + i] - mean[c]) * invstd[c];
                gx[base + i] += static_cast<T>(k * (dy[base + i] - sum_dy / count - xhat * sum_dy_xhat / count));
              }
            }
          }
        }
      });
}

template <class T>
BasicTensor<T> group_norm(const BasicTensor<T>& x, std::size_t num_groups, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double eps, ChannelLayout layout) {
  if (x.rank() < 2) throw DimensionError("group_norm expects at least [B,C], got " + x.shape().str());
  const bool last = layout == ChannelLayout::channels_last;
  const std::size_t batch = x.dim(0);
  const std::size_t channels = last ? x.dim(x.rank() - 1) : x.dim(1);
  const std::size_t spatial = x.numel() / (batch * channels);
  if (num_groups == 0 || channels % num_groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(num_groups) + " groups do not divide " +
                      std::to_string(channels) + " channels");
  }
  require_channel_vector(gamma, channels, "group_norm gamma");
  require_channel_vector(beta, channels, "group_norm beta");
  const std::size_t per_group = channels / num_groups;
  const std::size_t group_size = per_group * spatial;

  // Flat offset of (b, c, s) for the chosen layout.
  const auto at = [=](std::size_t b, std::size_t c, std::size_t s) {
    return last ? (b * spatial + s) * channels + c : (b * channels + c) * spatial + s;
  };

  const auto v = x.data();
  std::vector<double> mean(batch * num_groups), invstd(batch * num_groups);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t g = 0; g < num_groups; ++g) {
      double s = 0;
      for (std::size_t c = g * per_group; c < (g + 1) * per_group; ++c)
        for (std::size_t i = 0; i < spatial; ++i) s += v[at(b, c, i)];
      const double mu = s / static_cast<double>(group_size);
      double ss = 0;
      for (std::size_t c = g * per_group; c < (g + 1) * per_group; ++c)
        for (std::size_t i = 0; i < spatial; ++i) {
          const double d = v[at(b, c, i)] - mu;
          ss += d * d;
        }
      mean[b * num_groups + g] = mu;
      invstd[b * num_groups + g] = 1.0 / std::sqrt(ss / static_cast<double>(group_size) + eps);
    }

  std::vector<T> out(x.numel());
  const auto gv = gamma.data(), bv = beta.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t stat = b * num_groups + c / per_group;
      for (std::size_t i = 0; i < spatial; ++i) {
        const std::size_t idx = at(b, c, i);
        out[idx] = static_cast<T>((v[idx] - mean[stat]) * invstd[stat] * gv[c] + bv[c]);
      }
    }
  detail::count_adds(x.numel());

  return detail::make_result<T>(
      x.shape(), std::move(out), {&x, &gamma, &beta}, "group_norm",
      [x, gamma, beta, mean = std::move(mean), invstd = std::move(invstd), at, batch, channels, spatial, num_groups,
       per_group, group_size](const auto& o) {
        const auto v = x.data();
        const auto gv = gamma.data();
        const T* dy = o.grad.data();
        T* gx = detail::grad_target(x);
        T* gg = detail::grad_target(gamma);
        T* gb = detail::grad_target(beta);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t g = 0; g < num_groups; ++g) {
            const std::size_t stat = b * num_groups + g;
            double sum_d = 0, sum_d_xhat = 0;  // over dxhat = dy·gamma
            for (std::size_t c = g * per_group; c < (g + 1) * per_group; ++c)
              for (std::size_t i = 0; i < spatial; ++i) {
                const std::size_t idx = at(b, c, i);
                const double xhat = (v[idx] - mean[stat]) * invstd[stat];
                const double d = static_cast<double>(dy[idx]) * gv[c];
                sum_d += d;
                sum_d_xhat += d * xhat;
                if (gg) gg[c] += static_cast<T>(dy[idx] * xhat);
                if (gb) gb[c] += dy[idx];
              }
            if (!gx) continue;
            const double m = static_cast<double>(group_size);
            for (std::size_t c = g * per_group; c < (g + 1) * per_group; ++c)
              for (std::size_t i = 0; i < spatial; ++i) {
                const std::size_t idx = at(b, c, i);
                const double xhat = (v[idx] - mean[stat]) * invstd[stat];
                const double d = static_cast<double>(dy[idx]) * gv[c];
                gx[idx] += static_cast<T>(invstd[stat] * (d - sum_d / m - xhat * sum_d_xhat / m));
              }
          }
      });
}

#define LEAFVIT_INSTANTIATE(T)                                                                             \
  template BasicTensor<T> batch_norm2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                       BasicTensor<T>, BasicTensor<T>, Mode, double, double);               \
  template BasicTensor<T> group_norm(const BasicTensor<T>&, std::size_t, const BasicTensor<T>&,             \
                                     const BasicTensor<T>&, double, ChannelLayout);

LEAFVIT_INSTANTIATE(float)
LEAFVIT_INSTANTIATE(double)
#undef LEAFVIT_INSTANTIATE

}  // namespace leafvit
