#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "eeseg/errors.hpp"

namespace eeseg {

template <typename S>
using VecT = Eigen::Vector<S, Eigen::Dynamic>;

// Dense row-major tensor (last extent fastest). Activations and kernels are
// rank 3/4; a leading batch extent is permitted but the kernels below operate
// on single instances.
template <typename S>
class TensorT {
 public:
  using Array = Eigen::Array<S, Eigen::Dynamic, 1>;

  TensorT() = default;

  explicit TensorT(std::vector<int> dims) : dims_(std::move(dims)) {
    data_ = Array::Zero(checked_count(dims_));
  }

  TensorT(std::vector<int> dims, Array values) : dims_(std::move(dims)), data_(std::move(values)) {
    if (checked_count(dims_) != data_.size())
      throw ShapeError("tensor: value count does not match extents");
  }

  int rank() const { return static_cast<int>(dims_.size()); }
  int dim(int i) const { return dims_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& dims() const { return dims_; }
  Eigen::Index size() const { return data_.size(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  Array& array() { return data_; }
  const Array& array() const { return data_; }

  S& operator()(int c, int y, int x) { return data_[(static_cast<Eigen::Index>(c) * dims_[1] + y) * dims_[2] + x]; }
  S operator()(int c, int y, int x) const {
    return data_[(static_cast<Eigen::Index>(c) * dims_[1] + y) * dims_[2] + x];
  }
  S& operator()(int a, int b, int y, int x) {
    return data_[((static_cast<Eigen::Index>(a) * dims_[1] + b) * dims_[2] + y) * dims_[3] + x];
  }
  S operator()(int a, int b, int y, int x) const {
    return data_[((static_cast<Eigen::Index>(a) * dims_[1] + b) * dims_[2] + y) * dims_[3] + x];
  }

  bool same_dims(const TensorT& other) const { return dims_ == other.dims_; }

 private:
  static Eigen::Index checked_count(const std::vector<int>& dims) {
    if (dims.empty()) throw ShapeError("tensor: rank must be >= 1");
    Eigen::Index n = 1;
    for (int d : dims) {
      if (d < 1) throw ShapeError("tensor: every extent must be >= 1");
      n *= d;
    }
    return n;
  }

  std::vector<int> dims_;
  Array data_;
};

using Tensor = TensorT<float>;
using Vecf = VecT<float>;

template <typename S>
bool bit_equal(const TensorT<S>& a, const TensorT<S>& b) {
  return a.same_dims(b) && (a.array() == b.array()).all();
}

// Per-pixel integer class map (mm classes for scenes, argmax classes for
// predictions).
struct LabelMap {
  int h = 0, w = 0;
  std::vector<std::uint8_t> v;

  LabelMap() = default;
  LabelMap(int height, int width) : h(height), w(width), v(static_cast<std::size_t>(height) * width, 0) {}

  std::uint8_t& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
  std::size_t size() const { return v.size(); }

  bool operator==(const LabelMap& o) const { return h == o.h && w == o.w && v == o.v; }
};

namespace detail {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Unrolls 3x3 neighborhoods (zero padding 1) into a (C*9) x (H*W) matrix so
// the convolution becomes one GEMM.
template <typename S>
RowMat<S> im2col3(const TensorT<S>& x) {
  const int c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  RowMat<S> cols = RowMat<S>::Zero(static_cast<Eigen::Index>(c_in) * 9, hw);
  for (int c = 0; c < c_in; ++c) {
    const S* plane = x.data() + static_cast<std::size_t>(c) * hw;
    for (int dy = 0; dy < 3; ++dy) {
      for (int dx = 0; dx < 3; ++dx) {
        S* row = cols.data() + (static_cast<std::size_t>(c) * 9 + dy * 3 + dx) * hw;
        const int x0 = std::max(0, 1 - dx);
        const int x1 = std::min(w, w + 1 - dx);
        if (x1 <= x0) continue;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy - 1;
          if (sy < 0 || sy >= h) continue;
          const S* src = plane + static_cast<std::size_t>(sy) * w + (x0 + dx - 1);
          std::copy(src, src + (x1 - x0), row + static_cast<std::size_t>(y) * w + x0);
        }
      }
    }
  }
  return cols;
}

// Adjoint of im2col3: scatter-adds column gradients back onto the image.
template <typename S>
void col2im3_add(const RowMat<S>& cols, TensorT<S>& dst) {
  const int c_in = dst.dim(0), h = dst.dim(1), w = dst.dim(2);
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  for (int c = 0; c < c_in; ++c) {
    S* plane = dst.data() + static_cast<std::size_t>(c) * hw;
    for (int dy = 0; dy < 3; ++dy) {
      for (int dx = 0; dx < 3; ++dx) {
        const S* row = cols.data() + (static_cast<std::size_t>(c) * 9 + dy * 3 + dx) * hw;
        const int x0 = std::max(0, 1 - dx);
        const int x1 = std::min(w, w + 1 - dx);
        if (x1 <= x0) continue;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy - 1;
          if (sy < 0 || sy >= h) continue;
          S* d = plane + static_cast<std::size_t>(sy) * w + (x0 + dx - 1);
          const S* s = row + static_cast<std::size_t>(y) * w + x0;
          for (int i = 0; i < x1 - x0; ++i) d[i] += s[i];
        }
      }
    }
  }
}

template <typename S>
void check_conv_args(const TensorT<S>& input, const TensorT<S>& kernel, const VecT<S>& bias) {
  if (input.rank() != 3) throw ShapeError("conv2d: input must be rank 3 (C,H,W)");
  if (kernel.rank() != 4) throw ShapeError("conv2d: kernel must be rank 4 (Cout,Cin,kh,kw)");
  const int k = kernel.dim(2);
  if (kernel.dim(3) != k || (k != 1 && k != 3))
    throw ShapeError("conv2d: kernel spatial size must be 1x1 or 3x3");
  if (kernel.dim(1) != input.dim(0))
    throw ShapeError("conv2d: input has " + std::to_string(input.dim(0)) + " channels but kernel expects " +
                     std::to_string(kernel.dim(1)));
  if (bias.size() != kernel.dim(0))
    throw ShapeError("conv2d: bias length " + std::to_string(bias.size()) + " != output channels " +
                     std::to_string(kernel.dim(0)));
}

template <typename S>
void check_tconv_args(const TensorT<S>& input, const TensorT<S>& kernel, const VecT<S>& bias) {
  if (input.rank() != 3) throw ShapeError("tconv2d: input must be rank 3 (C,H,W)");
  if (kernel.rank() != 4) throw ShapeError("tconv2d: kernel must be rank 4 (Cin,Cout,2,2)");
  if (kernel.dim(2) != 2 || kernel.dim(3) != 2) throw ShapeError("tconv2d: kernel spatial size must be 2x2");
  if (kernel.dim(0) != input.dim(0))
    throw ShapeError("tconv2d: input has " + std::to_string(input.dim(0)) + " channels but kernel expects " +
                     std::to_string(kernel.dim(0)));
  if (bias.size() != kernel.dim(1))
    throw ShapeError("tconv2d: bias length " + std::to_string(bias.size()) + " != output channels " +
                     std::to_string(kernel.dim(1)));
}

}  // namespace detail

// "Same" convolution: 3x3 with zero padding 1, or 1x1. out[o,y,x] =
// bias[o] + sum_{c,dy,dx} input[c,y+dy-1,x+dx-1] * kernel[o,c,dy,dx].
template <typename S>
TensorT<S> conv2d(const TensorT<S>& input, const TensorT<S>& kernel, const VecT<S>& bias) {
  detail::check_conv_args(input, kernel, bias);
  const int h = input.dim(1), w = input.dim(2);
  const int c_out = kernel.dim(0), c_in = kernel.dim(1), k = kernel.dim(2);
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;

  TensorT<S> out({c_out, h, w});
  Eigen::Map<const detail::RowMat<S>> kmat(kernel.data(), c_out, static_cast<Eigen::Index>(c_in) * k * k);
  Eigen::Map<detail::RowMat<S>> outm(out.data(), c_out, hw);
  if (k == 1) {
    Eigen::Map<const detail::RowMat<S>> xm(input.data(), c_in, hw);
    outm.noalias() = kmat * xm;
  } else {
    const detail::RowMat<S> cols = detail::im2col3(input);
    outm.noalias() = kmat * cols;
  }
  outm.colwise() += bias;
  return out;
}

template <typename S>
struct Conv2dGrads {
  TensorT<S> d_input;
  TensorT<S> d_kernel;
  VecT<S> d_bias;
};

// Exact adjoint of conv2d with respect to (input, kernel, bias).
template <typename S>
Conv2dGrads<S> conv2d_backward(const TensorT<S>& input, const TensorT<S>& kernel, const TensorT<S>& grad_out) {
  const int h = input.dim(1), w = input.dim(2);
  const int c_out = kernel.dim(0), c_in = kernel.dim(1), k = kernel.dim(2);
  if (grad_out.rank() != 3 || grad_out.dim(0) != c_out || grad_out.dim(1) != h || grad_out.dim(2) != w)
    throw ShapeError("conv2d_backward: grad_out dims do not match the forward output");
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;

  Conv2dGrads<S> g{TensorT<S>(input.dims()), TensorT<S>(kernel.dims()), VecT<S>::Zero(c_out)};
  Eigen::Map<const detail::RowMat<S>> gm(grad_out.data(), c_out, hw);
  Eigen::Map<const detail::RowMat<S>> kmat(kernel.data(), c_out, static_cast<Eigen::Index>(c_in) * k * k);
  Eigen::Map<detail::RowMat<S>> dkm(g.d_kernel.data(), c_out, static_cast<Eigen::Index>(c_in) * k * k);

  g.d_bias = gm.rowwise().sum();
  if (k == 1) {
    Eigen::Map<const detail::RowMat<S>> xm(input.data(), c_in, hw);
    dkm.noalias() = gm * xm.transpose();
    Eigen::Map<detail::RowMat<S>> dxm(g.d_input.data(), c_in, hw);
    dxm.noalias() = kmat.transpose() * gm;
  } else {
    const detail::RowMat<S> cols = detail::im2col3(input);
    dkm.noalias() = gm * cols.transpose();
    const detail::RowMat<S> dcols = kmat.transpose() * gm;
    detail::col2im3_add(dcols, g.d_input);
  }
  return g;
}

// Stride-2 transposed convolution with a 2x2 kernel: each input pixel scatters
// kernel*value into its own 2x2 output block. out[o,2y+dy,2x+dx] =
// bias[o] + sum_c input[c,y,x] * kernel[c,o,dy,dx].
template <typename S>
TensorT<S> tconv2d(const TensorT<S>& input, const TensorT<S>& kernel, const VecT<S>& bias) {
  detail::check_tconv_args(input, kernel, bias);
  const int c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int c_out = kernel.dim(1);
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;

  Eigen::Map<const detail::RowMat<S>> kmat(kernel.data(), c_in, static_cast<Eigen::Index>(c_out) * 4);
  Eigen::Map<const detail::RowMat<S>> xm(input.data(), c_in, hw);
  detail::RowMat<S> ocols(static_cast<Eigen::Index>(c_out) * 4, hw);
  ocols.noalias() = kmat.transpose() * xm;

  TensorT<S> out({c_out, 2 * h, 2 * w});
  for (int o = 0; o < c_out; ++o) {
    const S b = bias[o];
    S* oplane = out.data() + static_cast<std::size_t>(o) * (2 * h) * (2 * w);
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx) {
        const S* row = ocols.data() + (static_cast<std::size_t>(o) * 4 + dy * 2 + dx) * hw;
        for (int y = 0; y < h; ++y) {
          S* dst = oplane + static_cast<std::size_t>(2 * y + dy) * (2 * w) + dx;
          const S* src = row + static_cast<std::size_t>(y) * w;
          for (int x = 0; x < w; ++x) dst[2 * x] = src[x] + b;
        }
      }
    }
  }
  return out;
}

template <typename S>
struct TConv2dGrads {
  TensorT<S> d_input;
  TensorT<S> d_kernel;
  VecT<S> d_bias;
};

// Exact adjoint of tconv2d; the input gradient is a stride-2 correlation.
template <typename S>
TConv2dGrads<S> tconv2d_backward(const TensorT<S>& input, const TensorT<S>& kernel, const TensorT<S>& grad_out) {
  const int c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int c_out = kernel.dim(1);
  if (grad_out.rank() != 3 || grad_out.dim(0) != c_out || grad_out.dim(1) != 2 * h || grad_out.dim(2) != 2 * w)
    throw ShapeError("tconv2d_backward: grad_out dims do not match the forward output");
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;

  // Gather the 2x2 phases of grad_out into (Cout*4) x (H*W).
  detail::RowMat<S> gcols(static_cast<Eigen::Index>(c_out) * 4, hw);
  TConv2dGrads<S> g{TensorT<S>(input.dims()), TensorT<S>(kernel.dims()), VecT<S>::Zero(c_out)};
  for (int o = 0; o < c_out; ++o) {
    const S* gplane = grad_out.data() + static_cast<std::size_t>(o) * (2 * h) * (2 * w);
    S acc = S(0);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(4) * hw; ++i) acc += gplane[i];
    g.d_bias[o] = acc;
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx) {
        S* row = gcols.data() + (static_cast<std::size_t>(o) * 4 + dy * 2 + dx) * hw;
        for (int y = 0; y < h; ++y) {
          const S* src = gplane + static_cast<std::size_t>(2 * y + dy) * (2 * w) + dx;
          S* dst = row + static_cast<std::size_t>(y) * w;
          for (int x = 0; x < w; ++x) dst[x] = src[2 * x];
        }
      }
    }
  }

  Eigen::Map<const detail::RowMat<S>> xm(input.data(), c_in, hw);
  Eigen::Map<const detail::RowMat<S>> kmat(kernel.data(), c_in, static_cast<Eigen::Index>(c_out) * 4);
  Eigen::Map<detail::RowMat<S>> dkm(g.d_kernel.data(), c_in, static_cast<Eigen::Index>(c_out) * 4);
  dkm.noalias() = xm * gcols.transpose();
  Eigen::Map<detail::RowMat<S>> dxm(g.d_input.data(), c_in, hw);
  dxm.noalias() = kmat * gcols;
  return g;
}

template <typename S>
struct Pooled {
  TensorT<S> value;
  std::vector<std::int32_t> argmax;  // flat input index of each window winner
};

// 2x2 max pooling. Ties break to the first element in row-major window order.
template <typename S>
Pooled<S> maxpool2(const TensorT<S>& input) {
  if (input.rank() != 3) throw ShapeError("maxpool2: input must be rank 3 (C,H,W)");
  const int c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (h % 2 != 0 || w % 2 != 0) throw ShapeError("maxpool2: H and W must be even");

  Pooled<S> p{TensorT<S>({c_in, h / 2, w / 2}), {}};
  p.argmax.resize(static_cast<std::size_t>(c_in) * (h / 2) * (w / 2));
  std::size_t oi = 0;
  for (int c = 0; c < c_in; ++c) {
    const S* plane = input.data() + static_cast<std::size_t>(c) * h * w;
    for (int y = 0; y < h; y += 2) {
      for (int x = 0; x < w; x += 2) {
        std::int32_t best = static_cast<std::int32_t>(c) * h * w + y * w + x;
        S best_v = plane[static_cast<std::size_t>(y) * w + x];
        const int offs[3][2] = {{0, 1}, {1, 0}, {1, 1}};
        for (const auto& o : offs) {
          const S v = plane[static_cast<std::size_t>(y + o[0]) * w + (x + o[1])];
          if (v > best_v) {
            best_v = v;
            best = static_cast<std::int32_t>(c) * h * w + (y + o[0]) * w + (x + o[1]);
          }
        }
        p.value.data()[oi] = best_v;
        p.argmax[oi] = best;
        ++oi;
      }
    }
  }
  return p;
}

// Routes output gradients to the recorded window winners.
template <typename S>
TensorT<S> maxpool2_backward(const std::vector<std::int32_t>& argmax, const TensorT<S>& grad_out,
                             const std::vector<int>& input_dims) {
  TensorT<S> dx(input_dims);
  if (argmax.size() != static_cast<std::size_t>(grad_out.size()))
    throw ShapeError("maxpool2_backward: mask size does not match grad_out");
  for (std::size_t i = 0; i < argmax.size(); ++i) dx.data()[argmax[i]] += grad_out.data()[i];
  return dx;
}

template <typename S>
TensorT<S> relu(const TensorT<S>& x) {
  return TensorT<S>(x.dims(), x.array().max(S(0)));
}

// Gradient passes where x > 0 and is zero where x <= 0.
template <typename S>
TensorT<S> relu_backward(const TensorT<S>& x, const TensorT<S>& grad_out) {
  if (!x.same_dims(grad_out)) throw ShapeError("relu_backward: dims mismatch");
  return TensorT<S>(x.dims(), (x.array() > S(0)).select(grad_out.array(), S(0)));
}

// Per-pixel softmax over the class axis, max-subtracted for overflow safety.
template <typename S>
TensorT<S> softmax_c(const TensorT<S>& logits) {
  if (logits.rank() != 3) throw ShapeError("softmax_c: input must be rank 3 (C,H,W)");
  const int classes = logits.dim(0);
  const Eigen::Index hw = static_cast<Eigen::Index>(logits.dim(1)) * logits.dim(2);
  TensorT<S> out(logits.dims());
  const S* z = logits.data();
  S* o = out.data();
  for (Eigen::Index p = 0; p < hw; ++p) {
    S m = z[p];
    for (int c = 1; c < classes; ++c) m = std::max(m, z[c * hw + p]);
    S denom = S(0);
    for (int c = 0; c < classes; ++c) {
      const S e = std::exp(z[c * hw + p] - m);
      o[c * hw + p] = e;
      denom += e;
    }
    for (int c = 0; c < classes; ++c) o[c * hw + p] /= denom;
  }
  return out;
}

template <typename S>
struct CeResult {
  S loss;
  TensorT<S> grad;  // (softmax - onehot) / (H*W)
};

// Mean categorical cross-entropy over pixels, with its analytic gradient.
template <typename S>
CeResult<S> ce_loss(const TensorT<S>& logits, const LabelMap& labels) {
  if (logits.rank() != 3) throw ShapeError("ce_loss: logits must be rank 3 (C,H,W)");
  const int classes = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  if (labels.h != h || labels.w != w) throw ShapeError("ce_loss: label map dims do not match logits");
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  const S inv = S(1) / static_cast<S>(hw);

  CeResult<S> r{S(0), TensorT<S>(logits.dims())};
  const S* z = logits.data();
  S* g = r.grad.data();
  for (Eigen::Index p = 0; p < hw; ++p) {
    const int label = labels.v[static_cast<std::size_t>(p)];
    if (label >= classes)
      throw ShapeError("ce_loss: label " + std::to_string(label) + " out of range [0," + std::to_string(classes) +
                       ") at pixel (y=" + std::to_string(p / w) + ", x=" + std::to_string(p % w) + ")");
    S m = z[p];
    for (int c = 1; c < classes; ++c) m = std::max(m, z[c * hw + p]);
    S denom = S(0);
    for (int c = 0; c < classes; ++c) denom += std::exp(z[c * hw + p] - m);
    const S lse = m + std::log(denom);
    r.loss += (lse - z[label * hw + p]) * inv;
    for (int c = 0; c < classes; ++c) {
      const S p_c = std::exp(z[c * hw + p] - lse);
      g[c * hw + p] = (p_c - (c == label ? S(1) : S(0))) * inv;
    }
  }
  return r;
}

// Channel concatenation, a's channels first.
template <typename S>
TensorT<S> concat_channels(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
    throw ShapeError("concat_channels: spatial dims must match");
  TensorT<S> out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.data(), a.data() + a.size(), out.data());
  std::copy(b.data(), b.data() + b.size(), out.data() + a.size());
  return out;
}

// Adjoint of concat_channels.
template <typename S>
std::pair<TensorT<S>, TensorT<S>> split_channels(const TensorT<S>& g, int channels_a) {
  const int h = g.dim(1), w = g.dim(2);
  TensorT<S> ga({channels_a, h, w});
  TensorT<S> gb({g.dim(0) - channels_a, h, w});
  std::copy(g.data(), g.data() + ga.size(), ga.data());
  std::copy(g.data() + ga.size(), g.data() + g.size(), gb.data());
  return {std::move(ga), std::move(gb)};
}

// Per-pixel argmax over the class axis; ties break to the smallest class.
template <typename S>
LabelMap argmax_map(const TensorT<S>& logits) {
  if (logits.rank() != 3) throw ShapeError("argmax_map: input must be rank 3 (C,H,W)");
  const int classes = logits.dim(0);
  const Eigen::Index hw = static_cast<Eigen::Index>(logits.dim(1)) * logits.dim(2);
  LabelMap out(logits.dim(1), logits.dim(2));
  const S* z = logits.data();
  for (Eigen::Index p = 0; p < hw; ++p) {
    int best = 0;
    S best_v = z[p];
    for (int c = 1; c < classes; ++c) {
      if (z[c * hw + p] > best_v) {
        best_v = z[c * hw + p];
        best = c;
      }
    }
    out.v[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace eeseg
