#include <Eigen/Core>
#include <algorithm>
#include <cstring>

#include "nowcast/errors.hpp"
#include "nowcast/ops.hpp"

namespace nowcast {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Geometry of a strided, zero-padded correlation from an image of
// in_h x in_w to out_h x out_w.
struct ConvGeometry {
  std::int64_t channels, in_h, in_w, out_h, out_w;
  int kernel, stride, padding;

  std::int64_t col_rows() const { return channels * kernel * kernel; }
  std::int64_t col_cols() const { return out_h * out_w; }
};

template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* cols) {
  const std::int64_t n = g.col_cols();
  for (std::int64_t c = 0; c < g.channels; ++c) {
    const T* plane = image + c * g.in_h * g.in_w;
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        T* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * n;
        for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
          const std::int64_t ih = oh * g.stride - g.padding + ki;
          T* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= g.in_h) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = plane + ih * g.in_w;
          for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
            const std::int64_t iw = ow * g.stride - g.padding + kj;
            dst[ow] = (iw >= 0 && iw < g.in_w) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters columns back into an image (accumulating).
template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* image) {
  const std::int64_t n = g.col_cols();
  for (std::int64_t c = 0; c < g.channels; ++c) {
    T* plane = image + c * g.in_h * g.in_w;
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        const T* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * n;
        for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
          const std::int64_t ih = oh * g.stride - g.padding + ki;
          if (ih < 0 || ih >= g.in_h) continue;
          const T* src = row + oh * g.out_w;
          T* dst = plane + ih * g.in_w;
          for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
            const std::int64_t iw = ow * g.stride - g.padding + kj;
            if (iw >= 0 && iw < g.in_w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

void check_conv_args(const Shape& x, const Shape& w, const Shape& b, bool transposed, int stride,
                     int padding) {
  if (x.size() != 4) throw ConfigError("convolution input must be [B,C,H,W], got " + to_string(x));
  if (w.size() != 4 || w[2] != w[3])
    throw ConfigError("convolution weight must be [*,*,k,k], got " + to_string(w));
  if (stride < 1) throw ConfigError("stride must be >= 1");
  if (padding < 0) throw ConfigError("padding must be >= 0");
  const std::int64_t cin = transposed ? w[0] : w[1];
  const std::int64_t cout = transposed ? w[1] : w[0];
  if (x[1] != cin)
    throw ConfigError("input channels " + std::to_string(x[1]) + " do not match weight " +
                      to_string(w));
  if (b.size() != 1 || b[0] != cout)
    throw ConfigError("bias " + to_string(b) + " does not match weight " + to_string(w));
}

template <typename T>
void add_bias(T* out, const T* bias, std::int64_t channels, std::int64_t plane) {
  for (std::int64_t c = 0; c < channels; ++c) {
    T* p = out + c * plane;
    for (std::int64_t i = 0; i < plane; ++i) p[i] += bias[c];
  }
}

template <typename T>
void accumulate_bias_grad(const T* dy, std::int64_t channels, std::int64_t plane, T* dbias) {
  for (std::int64_t c = 0; c < channels; ++c) {
    const T* p = dy + c * plane;
    T acc = 0;
    for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
    dbias[c] += acc;
  }
}

template <typename T>
void conv2d_direct_forward(const T* x, const T* w, const ConvGeometry& g, std::int64_t cout, T* y) {
  for (std::int64_t co = 0; co < cout; ++co) {
    for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
      for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
        T acc = 0;
        for (std::int64_t ci = 0; ci < g.channels; ++ci) {
          for (int ki = 0; ki < g.kernel; ++ki) {
            const std::int64_t ih = oh * g.stride - g.padding + ki;
            if (ih < 0 || ih >= g.in_h) continue;
            for (int kj = 0; kj < g.kernel; ++kj) {
              const std::int64_t iw = ow * g.stride - g.padding + kj;
              if (iw < 0 || iw >= g.in_w) continue;
              acc += w[((co * g.channels + ci) * g.kernel + ki) * g.kernel + kj] *
                     x[(ci * g.in_h + ih) * g.in_w + iw];
            }
          }
        }
        y[(co * g.out_h + oh) * g.out_w + ow] += acc;
      }
    }
  }
}

}  // namespace

std::int64_t conv_output_size(std::int64_t in, int kernel, int stride, int padding) {
  if (kernel > in + 2 * padding)
    throw ConfigError("kernel " + std::to_string(kernel) + " larger than padded input " +
                      std::to_string(in + 2 * padding));
  return (in + 2 * padding - kernel) / stride + 1;
}

std::int64_t conv_transpose_output_size(std::int64_t in, int kernel, int stride, int padding) {
  const std::int64_t out = (in - 1) * stride - 2 * padding + kernel;
  if (out < 1) throw ConfigError("transposed convolution produces empty output");
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                 int padding, ConvAlgorithm algo) {
  check_conv_args(x.shape(), weight.shape(), bias.shape(), false, stride, padding);
  const std::int64_t batch = x.dim(0);
  const std::int64_t cout = weight.dim(0);
  const int k = static_cast<int>(weight.dim(2));
  ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), 0, 0, k, stride, padding};
  g.out_h = conv_output_size(g.in_h, k, stride, padding);
  g.out_w = conv_output_size(g.in_w, k, stride, padding);

  const std::int64_t in_size = g.channels * g.in_h * g.in_w;
  const std::int64_t plane = g.out_h * g.out_w;
  std::vector<T> out(static_cast<std::size_t>(batch * cout * plane), T(0));
  const T* xd = x.data().data();
  const T* wd = weight.data().data();

  if (algo == ConvAlgorithm::direct) {
    for (std::int64_t b = 0; b < batch; ++b)
      conv2d_direct_forward(xd + b * in_size, wd, g, cout, out.data() + b * cout * plane);
  } else {
    std::vector<T> cols(static_cast<std::size_t>(g.col_rows() * g.col_cols()));
    ConstMatMap<T> wm(wd, cout, g.col_rows());
    for (std::int64_t b = 0; b < batch; ++b) {
      im2col(xd + b * in_size, g, cols.data());
      MatMap<T> ym(out.data() + b * cout * plane, cout, plane);
      ym.noalias() = wm * ConstMatMap<T>(cols.data(), g.col_rows(), g.col_cols());
    }
  }
  for (std::int64_t b = 0; b < batch; ++b)
    add_bias(out.data() + b * cout * plane, bias.data().data(), cout, plane);

  auto* xn = x.node().get();
  auto* wn = weight.node().get();
  auto* bn = bias.node().get();
  return detail::make_result<T>(
      Shape{batch, cout, g.out_h, g.out_w}, std::move(out), {&x, &weight, &bias},
      [=](detail::TensorNode<T>* yn) {
        return [=] {
          const T* dy = yn->grad.data();
          std::vector<T> cols(static_cast<std::size_t>(g.col_rows() * g.col_cols()));
          if (wn->requires_grad) wn->ensure_grad();
          if (xn->requires_grad) xn->ensure_grad();
          if (bn->requires_grad) bn->ensure_grad();
          ConstMatMap<T> wm(wn->data.data(), cout, g.col_rows());
          for (std::int64_t b = 0; b < batch; ++b) {
            ConstMatMap<T> dym(dy + b * cout * plane, cout, plane);
            if (wn->requires_grad) {
              im2col(xn->data.data() + b * in_size, g, cols.data());
              MatMap<T> dwm(wn->grad.data(), cout, g.col_rows());
              dwm.noalias() += dym * ConstMatMap<T>(cols.data(), g.col_rows(), g.col_cols()).transpose();
            }
            if (xn->requires_grad) {
              MatMap<T> dcols(cols.data(), g.col_rows(), g.col_cols());
              dcols.noalias() = wm.transpose() * dym;
              col2im(cols.data(), g, xn->grad.data() + b * in_size);
            }
            if (bn->requires_grad)
              accumulate_bias_grad(dy + b * cout * plane, cout, plane, bn->grad.data());
          }
        };
      });
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           int stride, int padding) {
  check_conv_args(x.shape(), weight.shape(), bias.shape(), true, stride, padding);
  const std::int64_t batch = x.dim(0);
  const std::int64_t cin = weight.dim(0);
  const std::int64_t cout = weight.dim(1);
  const int k = static_cast<int>(weight.dim(2));
  const std::int64_t out_h = conv_transpose_output_size(x.dim(2), k, stride, padding);
  const std::int64_t out_w = conv_transpose_output_size(x.dim(3), k, stride, padding);
  // The output plays the role of a convolution input whose correlation
  // output is x.
  const ConvGeometry g{cout, out_h, out_w, x.dim(2), x.dim(3), k, stride, padding};

  const std::int64_t in_plane = g.out_h * g.out_w;
  const std::int64_t out_size = cout * out_h * out_w;
  std::vector<T> out(static_cast<std::size_t>(batch * out_size), T(0));
  std::vector<T> cols(static_cast<std::size_t>(g.col_rows() * g.col_cols()));
  ConstMatMap<T> wm(weight.data().data(), cin, g.col_rows());
  for (std::int64_t b = 0; b < batch; ++b) {
    ConstMatMap<T> xm(x.data().data() + b * cin * in_plane, cin, in_plane);
    MatMap<T>(cols.data(), g.col_rows(), g.col_cols()).noalias() = wm.transpose() * xm;
    col2im(cols.data(), g, out.data() + b * out_size);
    add_bias(out.data() + b * out_size, bias.data().data(), cout, out_h * out_w);
  }

  auto* xn = x.node().get();
  auto* wn = weight.node().get();
  auto* bn = bias.node().get();
  return detail::make_result<T>(
      Shape{batch, cout, out_h, out_w}, std::move(out), {&x, &weight, &bias},
      [=](detail::TensorNode<T>* yn) {
        return [=] {
          std::vector<T> dcols(static_cast<std::size_t>(g.col_rows() * g.col_cols()));
          if (wn->requires_grad) wn->ensure_grad();
          if (xn->requires_grad) xn->ensure_grad();
          if (bn->requires_grad) bn->ensure_grad();
          ConstMatMap<T> wm(wn->data.data(), cin, g.col_rows());
          for (std::int64_t b = 0; b < batch; ++b) {
            const T* dy = yn->grad.data() + b * out_size;
            im2col(dy, g, dcols.data());
            ConstMatMap<T> dcm(dcols.data(), g.col_rows(), g.col_cols());
            if (xn->requires_grad) {
              MatMap<T> dxm(xn->grad.data() + b * cin * in_plane, cin, in_plane);
              dxm.noalias() += wm * dcm;
            }
            if (wn->requires_grad) {
              ConstMatMap<T> xm(xn->data.data() + b * cin * in_plane, cin, in_plane);
              MatMap<T> dwm(wn->grad.data(), cin, g.col_rows());
              dwm.noalias() += xm * dcm.transpose();
            }
            if (bn->requires_grad) accumulate_bias_grad(dy, cout, out_h * out_w, bn->grad.data());
          }
        };
      });
}

template Tensor<float> conv2d(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, int,
                              int, ConvAlgorithm);
template Tensor<double> conv2d(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                               int, int, ConvAlgorithm);
template Tensor<float> conv_transpose2d(const Tensor<float>&, const Tensor<float>&,
                                        const Tensor<float>&, int, int);
template Tensor<double> conv_transpose2d(const Tensor<double>&, const Tensor<double>&,
                                         const Tensor<double>&, int, int);

}  // namespace nowcast
