#pragma once

// Tape-based reverse-mode differentiation over NCHW tensors.
//
// A Graph records every op whose output depends on a tensor that requires
// gradients. backward() walks the tape in reverse creation order, so each
// node's gradient is complete before its closure pushes it to the inputs.
// Parameters are leaf nodes owned by the model, not by the tape.

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dsmsr/tensor.hpp"

namespace dsmsr {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::function<void()> backward;

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> make_leaf(Tensor<T> value, bool requires_grad = false) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return node;
}

template <typename T>
class Graph {
 public:
  // record=false gives an inference graph: nothing is kept for backward.
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var<T> input(Tensor<T> value, bool requires_grad = false) {
    return make_leaf(std::move(value), requires_grad && record_);
  }

  // Creates an op output. `needs_grad` says whether any input requires
  // gradients; `make_backward` is invoked only in that case and receives the
  // output node.
  template <typename MakeBackward>
  Var<T> emit(Tensor<T> value, bool needs_grad, MakeBackward&& make_backward) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    if (record_ && needs_grad) {
      node->requires_grad = true;
      node->backward = make_backward(node.get());
      tape_.push_back(node);
    }
    return node;
  }

  void backward(const Var<T>& out, const Tensor<T>& seed) {
    if (!out->requires_grad) return;
    require_same_shape(out->value.shape(), seed.shape(), "backward seed");
    auto& g = out->grad_buffer();
    for (std::size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
      Node<T>& node = **it;
      if (node.backward && !node.grad.empty()) node.backward();
    }
  }

  // Several loss heads can seed different outputs before one reverse sweep.
  void accumulate_seed(const Var<T>& out, const Tensor<T>& seed) {
    if (!out->requires_grad) return;
    require_same_shape(out->value.shape(), seed.shape(), "backward seed");
    auto& g = out->grad_buffer();
    for (std::size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];
  }

  void run_backward() {
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
      Node<T>& node = **it;
      if (node.backward && !node.grad.empty()) node.backward();
    }
  }

  std::size_t tape_size() const { return tape_.size(); }

 private:
  bool record_;
  std::vector<Var<T>> tape_;
};

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  int channels, height, width, kernel, stride, pad, out_h, out_w;

  std::size_t rows() const { return static_cast<std::size_t>(channels) * kernel * kernel; }
  std::size_t cols() const { return static_cast<std::size_t>(out_h) * out_w; }
  bool is_pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const int k = g.kernel;
  for (int c = 0; c < g.channels; ++c) {
    const T* plane = x + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = col + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * g.cols();
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          T* dst = row + static_cast<std::size_t>(oh) * g.out_w;
          if (ih < 0 || ih >= g.height) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(ih) * g.width;
          if (g.stride == 1) {
            // valid ow satisfy 0 <= ow - pad + kj < width
            const int lo = std::min(g.out_w, std::max(0, g.pad - kj));
            const int hi = std::min(g.out_w, g.width + g.pad - kj);
            std::fill(dst, dst + lo, T(0));
            if (hi > lo) std::memcpy(dst + lo, src + lo - g.pad + kj, sizeof(T) * (hi - lo));
            if (hi < g.out_w) std::fill(dst + std::max(hi, lo), dst + g.out_w, T(0));
          } else {
            for (int ow = 0; ow < g.out_w; ++ow) {
              const int iw = ow * g.stride - g.pad + kj;
              dst[ow] = (iw >= 0 && iw < g.width) ? src[iw] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* x) {
  const int k = g.kernel;
  for (int c = 0; c < g.channels; ++c) {
    T* plane = x + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = col + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * g.cols();
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.height) continue;
          const T* src = row + static_cast<std::size_t>(oh) * g.out_w;
          T* dst = plane + static_cast<std::size_t>(ih) * g.width;
          for (int ow = 0; ow < g.out_w; ++ow) {
            const int iw = ow * g.stride - g.pad + kj;
            if (iw >= 0 && iw < g.width) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

// dfdx receives (x, y) so activations can reuse their output.
template <typename T, typename F, typename D>
Var<T> unary(Graph<T>& g, const Var<T>& x, F&& f, D dfdx_from_x_y) {
  Tensor<T> y(x->value.shape());
  const auto& xv = x->value;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  return g.emit(std::move(y), x->requires_grad, [x, d = std::move(dfdx_from_x_y)](Node<T>* self) {
    return [x, self, d]() {
      auto& gx = x->grad_buffer();
      const auto& gy = self->grad;
      const auto& xv = x->value;
      const auto& yv = self->value;
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * d(xv[i], yv[i]);
    };
  });
}

}  // namespace detail

// 2-D convolution, weight [out, in, k, k], optional bias [1, out, 1, 1].
template <typename T>
Var<T> conv2d(Graph<T>& g, const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride,
              int pad) {
  const Shape xs = x->value.shape();
  const Shape ws = weight->value.shape();
  if (ws.c != xs.c || ws.h != ws.w) {
    throw std::invalid_argument("conv2d: weight " + ws.str() + " incompatible with input " + xs.str());
  }
  detail::ConvGeometry geo{xs.c, xs.h, xs.w, ws.h, stride, pad,
                           (xs.h + 2 * pad - ws.h) / stride + 1, (xs.w + 2 * pad - ws.w) / stride + 1};
  if (geo.out_h <= 0 || geo.out_w <= 0) throw std::invalid_argument("conv2d: input too small");
  const int cout = ws.n;
  const auto K = static_cast<Eigen::Index>(geo.rows());
  const auto P = static_cast<Eigen::Index>(geo.cols());

  Tensor<T> y(Shape{xs.n, cout, geo.out_h, geo.out_w});
  std::vector<T> col(geo.is_pointwise() ? 0 : geo.rows() * geo.cols());
  detail::CMapMat<T> W(weight->value.data(), cout, K);
  for (int n = 0; n < xs.n; ++n) {
    const T* colp = x->value.sample(n);
    if (!geo.is_pointwise()) {
      detail::im2col(x->value.sample(n), geo, col.data());
      colp = col.data();
    }
    detail::MapMat<T> Y(y.sample(n), cout, P);
    Y.noalias() = W * detail::CMapMat<T>(colp, K, P);
    if (bias) {
      for (int o = 0; o < cout; ++o) Y.row(o).array() += bias->value[o];
    }
  }

  const bool needs = x->requires_grad || weight->requires_grad || (bias && bias->requires_grad);
  return g.emit(std::move(y), needs, [=](Node<T>* self) {
    return [=]() {
      std::vector<T> colbuf(geo.is_pointwise() ? 0 : geo.rows() * geo.cols());
      std::vector<T> dcol(geo.rows() * geo.cols());
      detail::CMapMat<T> Wm(weight->value.data(), cout, K);
      for (int n = 0; n < xs.n; ++n) {
        detail::CMapMat<T> dY(self->grad.sample(n), cout, P);
        if (weight->requires_grad) {
          const T* colp = x->value.sample(n);
          if (!geo.is_pointwise()) {
            detail::im2col(x->value.sample(n), geo, colbuf.data());
            colp = colbuf.data();
          }
          detail::MapMat<T> dW(weight->grad_buffer().data(), cout, K);
          dW.noalias() += dY * detail::CMapMat<T>(colp, K, P).transpose();
        }
        if (bias && bias->requires_grad) {
          auto& gb = bias->grad_buffer();
          // Plain loops: Eigen reductions peel by address alignment, which
          // would make results depend on where a buffer happens to land.
          for (int o = 0; o < cout; ++o) {
            T acc = 0;
            for (Eigen::Index q = 0; q < P; ++q) acc += dY(o, q);
            gb[o] += acc;
          }
        }
        if (x->requires_grad) {
          auto& gx = x->grad_buffer();
          if (geo.is_pointwise()) {
            detail::MapMat<T> dX(gx.sample(n), K, P);
            dX.noalias() += Wm.transpose() * dY;
          } else {
            detail::MapMat<T> dC(dcol.data(), K, P);
            dC.noalias() = Wm.transpose() * dY;
            detail::col2im_add(dcol.data(), geo, gx.sample(n));
          }
        }
      }
    };
  });
}

// Fully connected layer over each sample's flattened C*H*W features.
// weight [out, features, 1, 1], bias [1, out, 1, 1]; output [N, out, 1, 1].
template <typename T>
Var<T> dense(Graph<T>& g, const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const Shape xs = x->value.shape();
  const auto F = static_cast<Eigen::Index>(xs.c) * xs.h * xs.w;
  const Shape ws = weight->value.shape();
  if (static_cast<Eigen::Index>(ws.c) != F) {
    throw std::invalid_argument("dense: weight " + ws.str() + " incompatible with input " + xs.str());
  }
  const int out = ws.n;
  Tensor<T> y(Shape{xs.n, out, 1, 1});
  detail::CMapMat<T> X(x->value.data(), xs.n, F);
  detail::CMapMat<T> W(weight->value.data(), out, F);
  detail::MapMat<T> Y(y.data(), xs.n, out);
  Y.noalias() = X * W.transpose();
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < out; ++o) Y(n, o) += bias->value[o];

  const bool needs = x->requires_grad || weight->requires_grad || bias->requires_grad;
  return g.emit(std::move(y), needs, [=](Node<T>* self) {
    return [=]() {
      detail::CMapMat<T> dY(self->grad.data(), xs.n, out);
      detail::CMapMat<T> Xm(x->value.data(), xs.n, F);
      detail::CMapMat<T> Wm(weight->value.data(), out, F);
      if (weight->requires_grad) {
        detail::MapMat<T> dW(weight->grad_buffer().data(), out, F);
        dW.noalias() += dY.transpose() * Xm;
      }
      if (bias->requires_grad) {
        auto& gb = bias->grad_buffer();
        for (int o = 0; o < out; ++o) {
          T acc = 0;
          for (int n = 0; n < xs.n; ++n) acc += dY(n, o);
          gb[o] += acc;
        }
      }
      if (x->requires_grad) {
        detail::MapMat<T> dX(x->grad_buffer().data(), xs.n, F);
        dX.noalias() += dY * Wm;
      }
    };
  });
}

template <typename T>
Var<T> leaky_relu(Graph<T>& g, const Var<T>& x, T slope) {
  return detail::unary<T>(
      g, x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T xv, T) { return xv > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> relu(Graph<T>& g, const Var<T>& x) {
  return leaky_relu<T>(g, x, T(0));
}

// |x| with subgradient 0 at x = 0.
template <typename T>
Var<T> absolute(Graph<T>& g, const Var<T>& x) {
  return detail::unary<T>(
      g, x, [](T v) { return std::abs(v); }, [](T xv, T) { return xv > T(0) ? T(1) : xv < T(0) ? T(-1) : T(0); });
}

template <typename T>
Var<T> tanh(Graph<T>& g, const Var<T>& x) {
  return detail::unary<T>(
      g, x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> sigmoid(Graph<T>& g, const Var<T>& x) {
  return detail::unary<T>(
      g, x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

// log(1 + e^x), computed without overflow.
template <typename T>
Var<T> softplus(Graph<T>& g, const Var<T>& x) {
  return detail::unary<T>(
      g, x, [](T v) { return v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](T v, T) { return T(1) / (T(1) + std::exp(-v)); });
}

// y = scale * x + shift
template <typename T>
Var<T> affine(Graph<T>& g, const Var<T>& x, T scale, T shift) {
  return detail::unary<T>(
      g, x, [scale, shift](T v) { return scale * v + shift; }, [scale](T, T) { return scale; });
}

// Parametric ReLU with one learned slope per channel, alpha [1, C, 1, 1].
template <typename T>
Var<T> prelu(Graph<T>& g, const Var<T>& x, const Var<T>& alpha) {
  const Shape s = x->value.shape();
  if (static_cast<int>(alpha->value.size()) != s.c) throw std::invalid_argument("prelu: channel mismatch");
  Tensor<T> y(s);
  const std::size_t hw = s.plane();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T a = alpha->value[c];
      const T* src = x->value.plane(n, c);
      T* dst = y.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] > T(0) ? src[i] : a * src[i];
    }
  return g.emit(std::move(y), x->requires_grad || alpha->requires_grad, [=](Node<T>* self) {
    return [=]() {
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
          const T a = alpha->value[c];
          const T* src = x->value.plane(n, c);
          const T* gy = self->grad.plane(n, c);
          if (x->requires_grad) {
            T* gx = x->grad_buffer().plane(n, c);
            for (std::size_t i = 0; i < hw; ++i) gx[i] += src[i] > T(0) ? gy[i] : a * gy[i];
          }
          if (alpha->requires_grad) {
            T acc = 0;
            for (std::size_t i = 0; i < hw; ++i)
              if (src[i] <= T(0)) acc += gy[i] * src[i];
            alpha->grad_buffer()[c] += acc;
          }
        }
    };
  });
}

// a + scale * b
template <typename T>
Var<T> add_scaled(Graph<T>& g, const Var<T>& a, const Var<T>& b, T scale) {
  require_same_shape(a->value.shape(), b->value.shape(), "add");
  Tensor<T> y(a->value.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a->value[i] + scale * b->value[i];
  return g.emit(std::move(y), a->requires_grad || b->requires_grad, [=](Node<T>* self) {
    return [=]() {
      const auto& gy = self->grad;
      if (a->requires_grad) {
        auto& ga = a->grad_buffer();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      }
      if (b->requires_grad) {
        auto& gb = b->grad_buffer();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += scale * gy[i];
      }
    };
  });
}

template <typename T>
Var<T> add(Graph<T>& g, const Var<T>& a, const Var<T>& b) {
  return add_scaled<T>(g, a, b, T(1));
}

template <typename T>
Var<T> concat_channels(Graph<T>& g, const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Shape s = parts.front()->value.shape();
  s.c = 0;
  bool needs = false;
  for (const auto& p : parts) {
    const Shape& ps = p->value.shape();
    if (ps.n != s.n || ps.h != s.h || ps.w != s.w) throw std::invalid_argument("concat: spatial mismatch");
    s.c += ps.c;
    needs = needs || p->requires_grad;
  }
  Tensor<T> y(s);
  const std::size_t hw = s.plane();
  for (int n = 0; n < s.n; ++n) {
    T* dst = y.sample(n);
    for (const auto& p : parts) {
      const std::size_t count = hw * p->value.c();
      std::memcpy(dst, p->value.sample(n), sizeof(T) * count);
      dst += count;
    }
  }
  return g.emit(std::move(y), needs, [=](Node<T>* self) {
    return [=]() {
      for (int n = 0; n < s.n; ++n) {
        const T* src = self->grad.sample(n);
        for (const auto& p : parts) {
          const std::size_t count = hw * p->value.c();
          if (p->requires_grad) {
            T* gp = p->grad_buffer().sample(n);
            for (std::size_t i = 0; i < count; ++i) gp[i] += src[i];
          }
          src += count;
        }
      }
    };
  });
}

// Channel-to-space rearrangement: [N, C*r*r, H, W] -> [N, C, H*r, W*r].
template <typename T>
Var<T> pixel_shuffle(Graph<T>& g, const Var<T>& x, int r) {
  const Shape xs = x->value.shape();
  if (xs.c % (r * r) != 0) throw std::invalid_argument("pixel_shuffle: channels not divisible by r^2");
  const Shape ys{xs.n, xs.c / (r * r), xs.h * r, xs.w * r};
  Tensor<T> y(ys);
  auto for_each = [=](auto&& fn) {
    for (int n = 0; n < ys.n; ++n)
      for (int c = 0; c < ys.c; ++c)
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < r; ++j) {
            const int ic = c * r * r + i * r + j;
            for (int h = 0; h < xs.h; ++h)
              for (int w = 0; w < xs.w; ++w) fn(n, ic, h, w, c, h * r + i, w * r + j);
          }
  };
  const auto& xv = x->value;
  for_each([&](int n, int ic, int h, int w, int c, int oh, int ow) { y.at(n, c, oh, ow) = xv.at(n, ic, h, w); });
  return g.emit(std::move(y), x->requires_grad, [=](Node<T>* self) {
    return [=]() {
      auto& gx = x->grad_buffer();
      const auto& gy = self->grad;
      for_each([&](int n, int ic, int h, int w, int c, int oh, int ow) { gx.at(n, ic, h, w) += gy.at(n, c, oh, ow); });
    };
  });
}

// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
template <typename T>
Var<T> max_pool2(Graph<T>& g, const Var<T>& x) {
  const Shape xs = x->value.shape();
  const Shape ys{xs.n, xs.c, xs.h / 2, xs.w / 2};
  Tensor<T> y(ys);
  std::vector<std::size_t> argmax(ys.numel());
  std::size_t k = 0;
  for (int n = 0; n < ys.n; ++n)
    for (int c = 0; c < ys.c; ++c)
      for (int h = 0; h < ys.h; ++h)
        for (int w = 0; w < ys.w; ++w, ++k) {
          std::size_t best = x->value.index(n, c, 2 * h, 2 * w);
          for (int dh = 0; dh < 2; ++dh)
            for (int dw = 0; dw < 2; ++dw) {
              const std::size_t idx = x->value.index(n, c, 2 * h + dh, 2 * w + dw);
              if (x->value[idx] > x->value[best]) best = idx;
            }
          argmax[k] = best;
          y[k] = x->value[best];
        }
  return g.emit(std::move(y), x->requires_grad, [x, argmax = std::move(argmax)](Node<T>* self) {
    return [x, self, argmax]() {
      auto& gx = x->grad_buffer();
      for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += self->grad[i];
    };
  });
}

template <typename T>
Var<T> upsample_nearest2(Graph<T>& g, const Var<T>& x) {
  const Shape xs = x->value.shape();
  const Shape ys{xs.n, xs.c, xs.h * 2, xs.w * 2};
  Tensor<T> y(ys);
  for (int n = 0; n < ys.n; ++n)
    for (int c = 0; c < ys.c; ++c)
      for (int h = 0; h < ys.h; ++h)
        for (int w = 0; w < ys.w; ++w) y.at(n, c, h, w) = x->value.at(n, c, h / 2, w / 2);
  return g.emit(std::move(y), x->requires_grad, [=](Node<T>* self) {
    return [=]() {
      auto& gx = x->grad_buffer();
      for (int n = 0; n < ys.n; ++n)
        for (int c = 0; c < ys.c; ++c)
          for (int h = 0; h < ys.h; ++h)
            for (int w = 0; w < ys.w; ++w) gx.at(n, c, h / 2, w / 2) += self->grad.at(n, c, h, w);
    };
  });
}

}  // namespace dsmsr
