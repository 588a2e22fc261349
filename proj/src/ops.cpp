#include "tprune/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>

namespace tprune {

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  for (T v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
void require_finite(const BasicTensor<T>& t, const std::string& what) {
  if (!t.all_finite()) fail(ErrorCode::kNumeric, what + ": non-finite value produced");
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template void require_finite(const BasicTensor<float>&, const std::string&);
template void require_finite(const BasicTensor<double>&, const std::string&);

namespace ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

void require_rank4(const Shape& s, std::string_view layer, std::string_view what) {
  if (s.size() != 4) {
    fail(ErrorCode::kShape, std::string(layer) + ": " + std::string(what) + " must be rank 4 (N,C,H,W), got " +
                                shape_str(s));
  }
}

struct ConvGeometry {
  std::int64_t n, cin, h, w, cout, k, ho, wo;
  int stride, pad;
  std::int64_t col_rows() const { return cin * k * k; }
  std::int64_t col_cols() const { return ho * wo; }
  bool is_pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

ConvGeometry conv_geometry(const Shape& in, const Shape& wt, int stride, int pad, std::string_view layer) {
  require_rank4(in, layer, "input");
  require_rank4(wt, layer, "weight");
  const std::string name(layer);
  if (stride < 1) fail(ErrorCode::kShape, name + ": stride must be >= 1");
  if (pad < 0) fail(ErrorCode::kShape, name + ": padding must be >= 0");
  if (wt[2] != wt[3] || wt[2] % 2 == 0) {
    fail(ErrorCode::kShape, name + ": kernel must be square with odd size, got " + shape_str(wt));
  }
  if (wt[1] != in[1]) {
    fail(ErrorCode::kShape, name + ": weight expects " + std::to_string(wt[1]) + " input channels but input has " +
                                std::to_string(in[1]) + " (input " + shape_str(in) + ")");
  }
  ConvGeometry g{in[0], in[1], in[2], in[3], wt[0], wt[2], 0, 0, stride, pad};
  const std::int64_t span_h = g.h + 2 * pad - g.k;
  const std::int64_t span_w = g.w + 2 * pad - g.k;
  if (span_h < 0 || span_w < 0 || span_h % stride != 0 || span_w % stride != 0) {
    fail(ErrorCode::kShape, name + ": output size is not integral for input " + shape_str(in) + ", kernel " +
                                std::to_string(g.k) + ", stride " + std::to_string(stride) + ", pad " +
                                std::to_string(pad));
  }
  g.ho = span_h / stride + 1;
  g.wo = span_w / stride + 1;
  return g;
}

// cols is [cin*k*k, ho*wo] for a single image.
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* cols) {
  const std::int64_t hw_out = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.cin; ++c) {
    const T* plane = img + c * g.h * g.w;
    for (std::int64_t kh = 0; kh < g.k; ++kh) {
      for (std::int64_t kw = 0; kw < g.k; ++kw) {
        T* row = cols + ((c * g.k + kh) * g.k + kw) * hw_out;
        for (std::int64_t oh = 0; oh < g.ho; ++oh) {
          const std::int64_t ih = oh * g.stride - g.pad + kh;
          T* dst = row + oh * g.wo;
          if (ih < 0 || ih >= g.h) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = plane + ih * g.w;
          for (std::int64_t ow = 0; ow < g.wo; ++ow) {
            const std::int64_t iw = ow * g.stride - g.pad + kw;
            dst[ow] = (iw >= 0 && iw < g.w) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* img) {
  const std::int64_t hw_out = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.cin; ++c) {
    T* plane = img + c * g.h * g.w;
    for (std::int64_t kh = 0; kh < g.k; ++kh) {
      for (std::int64_t kw = 0; kw < g.k; ++kw) {
        const T* row = cols + ((c * g.k + kh) * g.k + kw) * hw_out;
        for (std::int64_t oh = 0; oh < g.ho; ++oh) {
          const std::int64_t ih = oh * g.stride - g.pad + kh;
          if (ih < 0 || ih >= g.h) continue;
          const T* src = row + oh * g.wo;
          T* dst = plane + ih * g.w;
          for (std::int64_t ow = 0; ow < g.wo; ++ow) {
            const std::int64_t iw = ow * g.stride - g.pad + kw;
            if (iw >= 0 && iw < g.w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias, int stride,
                      int pad, std::string_view layer) {
  const ConvGeometry g = conv_geometry(input.shape(), weight.shape(), stride, pad, layer);
  if (bias.rank() != 1 || bias.dim(0) != g.cout) {
    fail(ErrorCode::kShape, std::string(layer) + ": bias shape " + shape_str(bias.shape()) + " does not match " +
                                std::to_string(g.cout) + " output channels");
  }
  BasicTensor<T> out({g.n, g.cout, g.ho, g.wo});
  const std::int64_t rows = g.col_rows();
  const std::int64_t cols_n = g.col_cols();
  std::vector<T> cols;
  if (!g.is_pointwise()) cols.resize(static_cast<std::size_t>(rows * cols_n));
  ConstMapMat<T> wmat(weight.ptr(), g.cout, rows);
  for (std::int64_t n = 0; n < g.n; ++n) {
    const T* img = input.ptr() + n * g.cin * g.h * g.w;
    const T* col_ptr = img;
    if (!g.is_pointwise()) {
      im2col(img, g, cols.data());
      col_ptr = cols.data();
    }
    ConstMapMat<T> cmat(col_ptr, rows, cols_n);
    MapMat<T> omat(out.ptr() + n * g.cout * cols_n, g.cout, cols_n);
    omat.noalias() = wmat * cmat;
    for (std::int64_t co = 0; co < g.cout; ++co) omat.row(co).array() += bias[static_cast<std::size_t>(co)];
  }
  require_finite(out, std::string(layer));
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                               const BasicTensor<T>& grad_out, int stride, int pad, bool want_input,
                               bool want_weight, bool want_bias) {
  const ConvGeometry g = conv_geometry(input.shape(), weight.shape(), stride, pad, "conv2d_backward");
  if (grad_out.shape() != Shape{g.n, g.cout, g.ho, g.wo}) {
    fail(ErrorCode::kShape, "conv2d_backward: gradient shape " + shape_str(grad_out.shape()) +
                                " does not match output shape");
  }
  Conv2dGrads<T> grads;
  const std::int64_t rows = g.col_rows();
  const std::int64_t cols_n = g.col_cols();
  if (want_input) grads.input = BasicTensor<T>(input.shape());
  if (want_weight) grads.weight = BasicTensor<T>(weight.shape());
  if (want_bias) grads.bias = BasicTensor<T>({g.cout});

  std::vector<T> cols;
  std::vector<T> dcols;
  if (!g.is_pointwise()) {
    if (want_weight) cols.resize(static_cast<std::size_t>(rows * cols_n));
    if (want_input) dcols.resize(static_cast<std::size_t>(rows * cols_n));
  }
  ConstMapMat<T> wmat(weight.ptr(), g.cout, rows);
  for (std::int64_t n = 0; n < g.n; ++n) {
    ConstMapMat<T> gmat(grad_out.ptr() + n * g.cout * cols_n, g.cout, cols_n);
    const T* img = input.ptr() + n * g.cin * g.h * g.w;
    if (want_weight) {
      const T* col_ptr = img;
      if (!g.is_pointwise()) {
        im2col(img, g, cols.data());
        col_ptr = cols.data();
      }
      ConstMapMat<T> cmat(col_ptr, rows, cols_n);
      MapMat<T> dw(grads.weight.ptr(), g.cout, rows);
      dw.noalias() += gmat * cmat.transpose();
    }
    if (want_bias) {
      for (std::int64_t co = 0; co < g.cout; ++co) grads.bias[static_cast<std::size_t>(co)] += gmat.row(co).sum();
    }
    if (want_input) {
      T* dimg = grads.input.ptr() + n * g.cin * g.h * g.w;
      if (g.is_pointwise()) {
        MapMat<T> dmat(dimg, rows, cols_n);
        dmat.noalias() = wmat.transpose() * gmat;
      } else {
        MapMat<T> dmat(dcols.data(), rows, cols_n);
        dmat.noalias() = wmat.transpose() * gmat;
        col2im_add(dcols.data(), g, dimg);
      }
    }
  }
  if (want_input) require_finite(grads.input, "conv2d_backward");
  if (want_weight) require_finite(grads.weight, "conv2d_backward");
  return grads;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> out = x;
  for (T& v : out.data()) v = v > T(0) ? v : T(0);
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& grad_out) {
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? grad_out[i] : T(0);
  return out;
}

template <typename T>
BasicTensor<T> maxpool2x(const BasicTensor<T>& x, std::vector<std::int64_t>* argmax) {
  require_rank4(x.shape(), "maxpool2x", "input");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    fail(ErrorCode::kShape, "maxpool2x: spatial dims must be even, got " + shape_str(x.shape()));
  }
  BasicTensor<T> out({n, c, h / 2, w / 2});
  if (argmax) argmax->assign(out.numel(), 0);
  std::size_t o = 0;
  for (std::int64_t p = 0; p < n * c; ++p) {
    const std::int64_t base = p * h * w;
    for (std::int64_t oh = 0; oh < h / 2; ++oh) {
      for (std::int64_t ow = 0; ow < w / 2; ++ow, ++o) {
        std::int64_t best = base + (2 * oh) * w + 2 * ow;
        const std::int64_t candidates[3] = {best + 1, best + w, best + w + 1};
        for (std::int64_t idx : candidates) {
          if (x[static_cast<std::size_t>(idx)] > x[static_cast<std::size_t>(best)]) best = idx;
        }
        out[o] = x[static_cast<std::size_t>(best)];
        if (argmax) (*argmax)[o] = best;
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& x) {
  require_rank4(x.shape(), "upsample_nearest2x", "input");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  BasicTensor<T> out({n, c, 2 * h, 2 * w});
  for (std::int64_t p = 0; p < n * c; ++p) {
    const T* src = x.ptr() + p * h * w;
    T* dst = out.ptr() + p * 4 * h * w;
    for (std::int64_t ih = 0; ih < h; ++ih) {
      T* row0 = dst + (2 * ih) * 2 * w;
      for (std::int64_t iw = 0; iw < w; ++iw) row0[2 * iw] = row0[2 * iw + 1] = src[ih * w + iw];
      std::copy(row0, row0 + 2 * w, row0 + 2 * w);
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> upsample_nearest2x_backward(const BasicTensor<T>& grad_out) {
  require_rank4(grad_out.shape(), "upsample_nearest2x_backward", "gradient");
  const auto n = grad_out.dim(0), c = grad_out.dim(1), h2 = grad_out.dim(2), w2 = grad_out.dim(3);
  const auto h = h2 / 2, w = w2 / 2;
  BasicTensor<T> out({n, c, h, w});
  for (std::int64_t p = 0; p < n * c; ++p) {
    const T* src = grad_out.ptr() + p * h2 * w2;
    T* dst = out.ptr() + p * h * w;
    for (std::int64_t ih = 0; ih < h; ++ih) {
      for (std::int64_t iw = 0; iw < w; ++iw) {
        const T* r0 = src + (2 * ih) * w2 + 2 * iw;
        const T* r1 = r0 + w2;
        dst[ih * w + iw] = (r0[0] + r0[1]) + (r1[0] + r1[1]);
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b, std::string_view a_name,
                               std::string_view b_name) {
  require_rank4(a.shape(), "concat_channels", a_name);
  require_rank4(b.shape(), "concat_channels", b_name);
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    fail(ErrorCode::kShape, "concat_channels: " + std::string(a_name) + " " + shape_str(a.shape()) + " and " +
                                std::string(b_name) + " " + shape_str(b.shape()) + " differ in batch or spatial dims");
  }
  const auto n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  BasicTensor<T> out({n, ca + cb, a.dim(2), a.dim(3)});
  for (std::int64_t i = 0; i < n; ++i) {
    T* dst = out.ptr() + i * (ca + cb) * hw;
    std::copy_n(a.ptr() + i * ca * hw, ca * hw, dst);
    std::copy_n(b.ptr() + i * cb * hw, cb * hw, dst + ca * hw);
  }
  return out;
}

template <typename T>
void split_channels(const BasicTensor<T>& x, std::int64_t split, BasicTensor<T>& first, BasicTensor<T>& second) {
  require_rank4(x.shape(), "split_channels", "input");
  const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (split <= 0 || split >= c) fail(ErrorCode::kShape, "split_channels: split point out of range");
  first = BasicTensor<T>({n, split, x.dim(2), x.dim(3)});
  second = BasicTensor<T>({n, c - split, x.dim(2), x.dim(3)});
  for (std::int64_t i = 0; i < n; ++i) {
    const T* src = x.ptr() + i * c * hw;
    std::copy_n(src, split * hw, first.ptr() + i * split * hw);
    std::copy_n(src + split * hw, (c - split) * hw, second.ptr() + i * (c - split) * hw);
  }
}

namespace {
template <typename T>
void check_bce_inputs(const BasicTensor<T>& logits, const BasicTensor<T>& targets) {
  if (logits.shape() != targets.shape()) {
    fail(ErrorCode::kShape, "bce_with_logits: logits " + shape_str(logits.shape()) + " vs targets " +
                                shape_str(targets.shape()));
  }
  for (T t : targets.data()) {
    if (!(t >= T(0) && t <= T(1))) fail(ErrorCode::kInvalidArgument, "bce_with_logits: target outside [0,1]");
  }
}
}  // namespace

template <typename T>
BasicTensor<T> bce_with_logits(const BasicTensor<T>& logits, const BasicTensor<T>& targets) {
  check_bce_inputs(logits, targets);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    const double y = logits[i];
    const double t = targets[i];
    sum += std::max(y, 0.0) - y * t + std::log1p(std::exp(-std::abs(y)));
  }
  BasicTensor<T> out({1}, static_cast<T>(sum / static_cast<double>(logits.numel())));
  require_finite(out, "bce_with_logits");
  return out;
}

template <typename T>
BasicTensor<T> bce_with_logits_grad(const BasicTensor<T>& logits, const BasicTensor<T>& targets) {
  check_bce_inputs(logits, targets);
  BasicTensor<T> out(logits.shape());
  const double inv_n = 1.0 / static_cast<double>(logits.numel());
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    const double y = logits[i];
    const double sig = y >= 0 ? 1.0 / (1.0 + std::exp(-y)) : std::exp(y) / (1.0 + std::exp(y));
    out[i] = static_cast<T>((sig - static_cast<double>(targets[i])) * inv_n);
  }
  return out;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  BasicTensor<T> out = x;
  for (T& v : out.data()) v *= factor;
  require_finite(out, "scale");
  return out;
}

#define TPRUNE_INSTANTIATE_OPS(T)                                                                                  \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, int, int,  \
                                 std::string_view);                                                              \
  template Conv2dGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,   \
                                          int, int, bool, bool, bool);                                            \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                                           \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);                           \
  template BasicTensor<T> maxpool2x(const BasicTensor<T>&, std::vector<std::int64_t>*);                          \
  template BasicTensor<T> upsample_nearest2x(const BasicTensor<T>&);                                             \
  template BasicTensor<T> upsample_nearest2x_backward(const BasicTensor<T>&);                                    \
  template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&, std::string_view,        \
                                          std::string_view);                                                      \
  template void split_channels(const BasicTensor<T>&, std::int64_t, BasicTensor<T>&, BasicTensor<T>&);           \
  template BasicTensor<T> bce_with_logits(const BasicTensor<T>&, const BasicTensor<T>&);                         \
  template BasicTensor<T> bce_with_logits_grad(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);

TPRUNE_INSTANTIATE_OPS(float)
TPRUNE_INSTANTIATE_OPS(double)

}  // namespace ops
}  // namespace tprune
