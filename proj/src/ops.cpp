#include <cmath>
#include <memory>
#include <numeric>

#include "nowcast/errors.hpp"
#include "nowcast/ops.hpp"

namespace nowcast {

namespace {

template <typename T>
using Node = detail::TensorNode<T>;

void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank)
    throw ConfigError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                      to_string(s));
}

}  // namespace

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, int groups, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps) {
  require_rank(x.shape(), 4, "group_norm");
  const std::int64_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (groups < 1 || channels % groups != 0)
    throw ConfigError("group_norm: " + std::to_string(channels) + " channels not divisible by " +
                      std::to_string(groups) + " groups");
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels})
    throw ConfigError("group_norm: affine parameters must be [" + std::to_string(channels) + "]");
  if (!(eps > 0)) throw ConfigError("group_norm: eps must be positive");

  const std::int64_t per_group = channels / groups;
  const std::int64_t group_size = per_group * plane;
  const std::size_t n_stats = static_cast<std::size_t>(batch * groups);
  auto xhat_buf = std::make_shared<std::vector<T>>(x.numel());
  auto rstd_buf = std::make_shared<std::vector<T>>(n_stats);
  auto& xhat = *xhat_buf;
  auto& rstd = *rstd_buf;
  std::vector<T> out(x.numel());
  const T* xd = x.data().data();
  const T* gd = gamma.data().data();
  const T* bd = beta.data().data();

  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t g = 0; g < groups; ++g) {
      const std::int64_t base = (b * channels + g * per_group) * plane;
      double s = 0;
      for (std::int64_t i = 0; i < group_size; ++i) s += xd[base + i];
      const double mu = s / static_cast<double>(group_size);
      double ss = 0;
      for (std::int64_t i = 0; i < group_size; ++i) {
        const double d = xd[base + i] - mu;
        ss += d * d;
      }
      const double var = ss / static_cast<double>(group_size);
      const double r = 1.0 / std::sqrt(var + eps);
      rstd[static_cast<std::size_t>(b * groups + g)] = static_cast<T>(r);
      for (std::int64_t c = 0; c < per_group; ++c) {
        const std::int64_t ch = g * per_group + c;
        for (std::int64_t p = 0; p < plane; ++p) {
          const std::int64_t idx = base + c * plane + p;
          const T xh = static_cast<T>((xd[idx] - mu) * r);
          xhat[idx] = xh;
          out[idx] = gd[ch] * xh + bd[ch];
        }
      }
    }
  }

  auto* xn = x.node().get();
  auto* gn = gamma.node().get();
  auto* bn = beta.node().get();
  return detail::make_result<T>(
      x.shape(), std::move(out), {&x, &gamma, &beta},
      [=](Node<T>* yn) {
        return [=] {
          const auto& xhat = *xhat_buf;
          const auto& rstd = *rstd_buf;
          const T* dy = yn->grad.data();
          if (gn->requires_grad) gn->ensure_grad();
          if (bn->requires_grad) bn->ensure_grad();
          if (xn->requires_grad) xn->ensure_grad();
          for (std::int64_t b = 0; b < batch; ++b) {
            for (std::int64_t g = 0; g < groups; ++g) {
              const std::int64_t base = (b * channels + g * per_group) * plane;
              double sum_dxh = 0, sum_dxh_xh = 0;
              for (std::int64_t c = 0; c < per_group; ++c) {
                const std::int64_t ch = g * per_group + c;
                double dgamma = 0, dbeta = 0;
                for (std::int64_t p = 0; p < plane; ++p) {
                  const std::int64_t idx = base + c * plane + p;
                  dgamma += static_cast<double>(dy[idx]) * xhat[idx];
                  dbeta += dy[idx];
                  const double dxh = static_cast<double>(dy[idx]) * gn->data[ch];
                  sum_dxh += dxh;
                  sum_dxh_xh += dxh * xhat[idx];
                }
                if (gn->requires_grad) gn->grad[ch] += static_cast<T>(dgamma);
                if (bn->requires_grad) bn->grad[ch] += static_cast<T>(dbeta);
              }
              if (!xn->requires_grad) continue;
              const double n = static_cast<double>(group_size);
              const double mean_dxh = sum_dxh / n, mean_dxh_xh = sum_dxh_xh / n;
              const double r = rstd[static_cast<std::size_t>(b * groups + g)];
              for (std::int64_t c = 0; c < per_group; ++c) {
                const std::int64_t ch = g * per_group + c;
                for (std::int64_t p = 0; p < plane; ++p) {
                  const std::int64_t idx = base + c * plane + p;
                  const double dxh = static_cast<double>(dy[idx]) * gn->data[ch];
                  xn->grad[idx] += static_cast<T>(r * (dxh - mean_dxh - xhat[idx] * mean_dxh_xh));
                }
              }
            }
          }
        };
      });
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation act) {
  const auto src = x.data();
  std::vector<T> out(src.size());
  switch (act.kind) {
    case Activation::Kind::leaky_relu: {
      const T slope = static_cast<T>(act.slope);
      for (std::size_t i = 0; i < src.size(); ++i) out[i] = src[i] > T(0) ? src[i] : slope * src[i];
      break;
    }
    case Activation::Kind::sigmoid:
      for (std::size_t i = 0; i < src.size(); ++i) {
        const T v = src[i];
        if (v >= 0) {
          out[i] = T(1) / (T(1) + std::exp(-v));
        } else {
          const T e = std::exp(v);
          out[i] = e / (T(1) + e);
        }
      }
      break;
    case Activation::Kind::tanh:
      for (std::size_t i = 0; i < src.size(); ++i) out[i] = std::tanh(src[i]);
      break;
    case Activation::Kind::identity:
      std::copy(src.begin(), src.end(), out.begin());
      break;
  }
  auto* xn = x.node().get();
  return detail::make_result<T>(x.shape(), std::move(out), {&x}, [=](Node<T>* yn) {
    return [=] {
      xn->ensure_grad();
      const auto& dy = yn->grad;
      const auto& y = yn->data;
      const auto& xv = xn->data;
      auto& dx = xn->grad;
      switch (act.kind) {
        case Activation::Kind::leaky_relu: {
          const T slope = static_cast<T>(act.slope);
          for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += xv[i] > T(0) ? dy[i] : slope * dy[i];
          break;
        }
        case Activation::Kind::sigmoid:
          for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * y[i] * (T(1) - y[i]);
          break;
        case Activation::Kind::tanh:
          for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (T(1) - y[i] * y[i]);
          break;
        case Activation::Kind::identity:
          for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
          break;
      }
    };
  });
}

template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, Elementwise kind) {
  if (a.shape() != b.shape())
    throw ConfigError("elementwise: shape mismatch " + to_string(a.shape()) + " vs " +
                      to_string(b.shape()));
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<T> out(ad.size());
  switch (kind) {
    case Elementwise::add:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
      break;
    case Elementwise::sub:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
      break;
    case Elementwise::mul:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
      break;
  }
  auto* an = a.node().get();
  auto* bn = b.node().get();
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, [=](Node<T>* yn) {
    return [=] {
      const auto& dy = yn->grad;
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < dy.size(); ++i)
          an->grad[i] += kind == Elementwise::mul ? dy[i] * bn->data[i] : dy[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < dy.size(); ++i) {
          if (kind == Elementwise::add)
            bn->grad[i] += dy[i];
          else if (kind == Elementwise::sub)
            bn->grad[i] -= dy[i];
          else
            bn->grad[i] += dy[i] * an->data[i];
        }
      }
    };
  });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ConfigError("concat_channels: no inputs");
  for (const auto& p : parts) require_rank(p.shape(), 4, "concat_channels");
  const std::int64_t batch = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.dim(0) != batch || p.dim(2) != h || p.dim(3) != w)
      throw ConfigError("concat_channels: spatial/batch mismatch " + to_string(p.shape()) + " vs " +
                        to_string(parts[0].shape()));
    total += p.dim(1);
  }
  const std::int64_t plane = h * w;
  std::vector<T> out(static_cast<std::size_t>(batch * total * plane));
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::int64_t c = p.dim(1);
    for (std::int64_t b = 0; b < batch; ++b)
      std::copy_n(p.data().data() + b * c * plane, c * plane, out.data() + (b * total + off) * plane);
    off += c;
  }
  std::vector<const Tensor<T>*> inputs;
  std::vector<Node<T>*> nodes;
  std::vector<std::int64_t> widths;
  for (const auto& p : parts) {
    inputs.push_back(&p);
    nodes.push_back(p.node().get());
    widths.push_back(p.dim(1));
  }
  return detail::make_result<T>(Shape{batch, total, h, w}, std::move(out), inputs, [=](Node<T>* yn) {
    return [=] {
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        Node<T>* n = nodes[k];
        if (!n->requires_grad) continue;
        n->ensure_grad();
        const std::int64_t c = widths[k];
        for (std::int64_t b = 0; b < batch; ++b) {
          const T* src = yn->grad.data() + (b * total + offsets[k]) * plane;
          T* dst = n->grad.data() + b * c * plane;
          for (std::int64_t i = 0; i < c * plane; ++i) dst[i] += src[i];
        }
      }
    };
  });
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::int64_t begin, std::int64_t count) {
  require_rank(x.shape(), 4, "slice_channels");
  const std::int64_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (begin < 0 || count < 1 || begin + count > channels)
    throw ConfigError("slice_channels: range out of bounds for " + to_string(x.shape()));
  std::vector<T> out(static_cast<std::size_t>(batch * count * plane));
  for (std::int64_t b = 0; b < batch; ++b)
    std::copy_n(x.data().data() + (b * channels + begin) * plane, count * plane,
                out.data() + b * count * plane);
  auto* xn = x.node().get();
  return detail::make_result<T>(Shape{batch, count, x.dim(2), x.dim(3)}, std::move(out), {&x},
                                [=](Node<T>* yn) {
                                  return [=] {
                                    xn->ensure_grad();
                                    for (std::int64_t b = 0; b < batch; ++b) {
                                      const T* src = yn->grad.data() + b * count * plane;
                                      T* dst = xn->grad.data() + (b * channels + begin) * plane;
                                      for (std::int64_t i = 0; i < count * plane; ++i) dst[i] += src[i];
                                    }
                                  };
                                });
}

template <typename T>
Tensor<T> time_frame(const Tensor<T>& x, std::int64_t t) {
  require_rank(x.shape(), 5, "time_frame");
  const std::int64_t batch = x.dim(0), steps = x.dim(1);
  const std::int64_t frame = x.dim(2) * x.dim(3) * x.dim(4);
  if (t < 0 || t >= steps) throw ConfigError("time_frame: index out of range");
  std::vector<T> out(static_cast<std::size_t>(batch * frame));
  for (std::int64_t b = 0; b < batch; ++b)
    std::copy_n(x.data().data() + (b * steps + t) * frame, frame, out.data() + b * frame);
  auto* xn = x.node().get();
  return detail::make_result<T>(Shape{batch, x.dim(2), x.dim(3), x.dim(4)}, std::move(out), {&x},
                                [=](Node<T>* yn) {
                                  return [=] {
                                    xn->ensure_grad();
                                    for (std::int64_t b = 0; b < batch; ++b) {
                                      const T* src = yn->grad.data() + b * frame;
                                      T* dst = xn->grad.data() + (b * steps + t) * frame;
                                      for (std::int64_t i = 0; i < frame; ++i) dst[i] += src[i];
                                    }
                                  };
                                });
}

template <typename T>
Tensor<T> stack_time(const std::vector<Tensor<T>>& frames) {
  if (frames.empty()) throw ConfigError("stack_time: no frames");
  const Shape& s0 = frames[0].shape();
  require_rank(s0, 4, "stack_time");
  for (const auto& f : frames)
    if (f.shape() != s0) throw ConfigError("stack_time: frame shape mismatch");
  const std::int64_t batch = s0[0], steps = static_cast<std::int64_t>(frames.size());
  const std::int64_t frame = s0[1] * s0[2] * s0[3];
  std::vector<T> out(static_cast<std::size_t>(batch * steps * frame));
  std::vector<const Tensor<T>*> inputs;
  std::vector<Node<T>*> nodes;
  for (std::int64_t t = 0; t < steps; ++t) {
    const auto& f = frames[static_cast<std::size_t>(t)];
    inputs.push_back(&f);
    nodes.push_back(f.node().get());
    for (std::int64_t b = 0; b < batch; ++b)
      std::copy_n(f.data().data() + b * frame, frame, out.data() + (b * steps + t) * frame);
  }
  return detail::make_result<T>(Shape{batch, steps, s0[1], s0[2], s0[3]}, std::move(out), inputs,
                                [=](Node<T>* yn) {
                                  return [=] {
                                    for (std::int64_t t = 0; t < steps; ++t) {
                                      Node<T>* n = nodes[static_cast<std::size_t>(t)];
                                      if (!n->requires_grad) continue;
                                      n->ensure_grad();
                                      for (std::int64_t b = 0; b < batch; ++b) {
                                        const T* src = yn->grad.data() + (b * steps + t) * frame;
                                        T* dst = n->grad.data() + b * frame;
                                        for (std::int64_t i = 0; i < frame; ++i) dst[i] += src[i];
                                      }
                                    }
                                  };
                                });
}

template <typename T>
Tensor<T> temporal_weighted_sum(const Tensor<T>& hs, const Tensor<T>& w) {
  require_rank(hs.shape(), 5, "temporal_weighted_sum");
  const std::int64_t batch = hs.dim(0), m = hs.dim(1);
  const std::int64_t frame = hs.dim(2) * hs.dim(3) * hs.dim(4);
  if (w.shape() != Shape{m})
    throw ConfigError("temporal_weighted_sum: weights " + to_string(w.shape()) + " vs " +
                      std::to_string(m) + " frames");
  std::vector<T> out(static_cast<std::size_t>(batch * frame), T(0));
  const T* hd = hs.data().data();
  const T* wd = w.data().data();
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t i = 0; i < m; ++i) {
      const T wi = wd[i];
      const T* src = hd + (b * m + i) * frame;
      T* dst = out.data() + b * frame;
      for (std::int64_t k = 0; k < frame; ++k) dst[k] += wi * src[k];
    }
  auto* hn = hs.node().get();
  auto* wn = w.node().get();
  return detail::make_result<T>(Shape{batch, 1, hs.dim(2), hs.dim(3), hs.dim(4)}, std::move(out),
                                {&hs, &w}, [=](Node<T>* yn) {
                                  return [=] {
                                    const T* dy = yn->grad.data();
                                    if (hn->requires_grad) hn->ensure_grad();
                                    if (wn->requires_grad) wn->ensure_grad();
                                    for (std::int64_t b = 0; b < batch; ++b)
                                      for (std::int64_t i = 0; i < m; ++i) {
                                        const T* g = dy + b * frame;
                                        const std::int64_t base = (b * m + i) * frame;
                                        if (hn->requires_grad) {
                                          const T wi = wn->data[static_cast<std::size_t>(i)];
                                          for (std::int64_t k = 0; k < frame; ++k)
                                            hn->grad[base + k] += wi * g[k];
                                        }
                                        if (wn->requires_grad) {
                                          T acc = 0;
                                          for (std::int64_t k = 0; k < frame; ++k)
                                            acc += g[k] * hn->data[base + k];
                                          wn->grad[static_cast<std::size_t>(i)] += acc;
                                        }
                                      }
                                  };
                                });
}

template <typename T>
Tensor<T> temporal_linear_interp(const Tensor<T>& x, std::int64_t t_out) {
  require_rank(x.shape(), 5, "temporal_linear_interp");
  const std::int64_t batch = x.dim(0), k = x.dim(1);
  const std::int64_t frame = x.dim(2) * x.dim(3) * x.dim(4);
  if (t_out < 1) throw ConfigError("temporal_linear_interp: t_out must be >= 1");
  if (k < 2 && t_out > 1 && t_out != k)
    throw ConfigError("temporal_linear_interp: need at least 2 input frames");

  // Source frame and blend factor for each output frame.
  std::vector<std::int64_t> lo(static_cast<std::size_t>(t_out));
  std::vector<T> frac(static_cast<std::size_t>(t_out));
  for (std::int64_t j = 0; j < t_out; ++j) {
    if (t_out == 1 || k == 1) {
      lo[j] = 0;
      frac[j] = 0;
      continue;
    }
    // Exact rational position j*(k-1)/(t_out-1).
    const std::int64_t num = j * (k - 1);
    const std::int64_t den = t_out - 1;
    std::int64_t i0 = num / den;
    T f = static_cast<T>(num % den) / static_cast<T>(den);
    if (i0 >= k - 1) {
      i0 = k - 2;
      f = T(1);
    }
    lo[j] = i0;
    frac[j] = f;
  }

  std::vector<T> out(static_cast<std::size_t>(batch * t_out * frame));
  const T* xd = x.data().data();
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t j = 0; j < t_out; ++j) {
      T* dst = out.data() + (b * t_out + j) * frame;
      const T* a = xd + (b * k + lo[j]) * frame;
      const T f = frac[j];
      if (f == T(0)) {
        std::copy_n(a, frame, dst);
      } else if (f == T(1)) {
        std::copy_n(a + frame, frame, dst);
      } else {
        for (std::int64_t i = 0; i < frame; ++i) dst[i] = (T(1) - f) * a[i] + f * a[i + frame];
      }
    }
  auto* xn = x.node().get();
  return detail::make_result<T>(Shape{batch, t_out, x.dim(2), x.dim(3), x.dim(4)}, std::move(out),
                                {&x}, [=](Node<T>* yn) {
                                  return [=] {
                                    xn->ensure_grad();
                                    for (std::int64_t b = 0; b < batch; ++b)
                                      for (std::int64_t j = 0; j < t_out; ++j) {
                                        const T* g = yn->grad.data() + (b * t_out + j) * frame;
                                        T* a = xn->grad.data() + (b * k + lo[j]) * frame;
                                        const T f = frac[j];
                                        for (std::int64_t i = 0; i < frame; ++i) {
                                          if (f != T(1)) a[i] += (T(1) - f) * g[i];
                                          if (f != T(0)) a[i + frame] += f * g[i];
                                        }
                                      }
                                  };
                                });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  auto* xn = x.node().get();
  return detail::make_result<T>(Shape{}, std::vector<T>{acc}, {&x}, [=](Node<T>* yn) {
    return [=] {
      xn->ensure_grad();
      const T g = yn->grad[0];
      for (auto& d : xn->grad) d += g;
    };
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const T n = static_cast<T>(x.numel());
  T acc = 0;
  for (T v : x.data()) acc += v;
  auto* xn = x.node().get();
  return detail::make_result<T>(Shape{}, std::vector<T>{acc / n}, {&x}, [=](Node<T>* yn) {
    return [=] {
      xn->ensure_grad();
      const T g = yn->grad[0] / n;
      for (auto& d : xn->grad) d += g;
    };
  });
}

#define NOWCAST_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> group_norm(const Tensor<T>&, int, const Tensor<T>&, const Tensor<T>&,      \
                                double);                                                        \
  template Tensor<T> activation(const Tensor<T>&, Activation);                                  \
  template Tensor<T> elementwise(const Tensor<T>&, const Tensor<T>&, Elementwise);              \
  template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                            \
  template Tensor<T> slice_channels(const Tensor<T>&, std::int64_t, std::int64_t);              \
  template Tensor<T> time_frame(const Tensor<T>&, std::int64_t);                                \
  template Tensor<T> stack_time(const std::vector<Tensor<T>>&);                                 \
  template Tensor<T> temporal_weighted_sum(const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> temporal_linear_interp(const Tensor<T>&, std::int64_t);                    \
  template Tensor<T> sum(const Tensor<T>&);                                                     \
  template Tensor<T> mean(const Tensor<T>&);

NOWCAST_INSTANTIATE_OPS(float)
NOWCAST_INSTANTIATE_OPS(double)

}  // namespace nowcast
