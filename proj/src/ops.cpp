#include "scp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace scp {

namespace {

struct ConvDims {
  std::size_t n, c_in, h, w, c_out, kh, kw, h_out, w_out;
  std::size_t patch() const { return c_in * kh * kw; }
  std::size_t pixels() const { return h_out * w_out; }
};

template <typename T>
ConvDims conv_dims(const BasicTensor<T>& input, const BasicTensor<T>& weight, Conv2dGeometry g) {
  if (input.rank() != 4) throw ShapeError("conv2d: input must be NCHW, got " + shape_str(input.shape()));
  if (weight.rank() != 4) throw ShapeError("conv2d: weight must be OIHW, got " + shape_str(weight.shape()));
  if (g.stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvDims d{input.dim(0), input.dim(1), input.dim(2), input.dim(3),
             weight.dim(0), weight.dim(2), weight.dim(3), 0, 0};
  if (weight.dim(1) != d.c_in) {
    throw ShapeError("conv2d: input has " + std::to_string(d.c_in) + " channels but weight expects " +
                     std::to_string(weight.dim(1)));
  }
  const std::size_t ph = d.h + 2 * g.padding, pw = d.w + 2 * g.padding;
  if (d.kh > ph || d.kw > pw) {
    throw ShapeError("conv2d: kernel " + std::to_string(d.kh) + "x" + std::to_string(d.kw) +
                     " exceeds padded input " + std::to_string(ph) + "x" + std::to_string(pw));
  }
  if ((ph - d.kh) % g.stride != 0 || (pw - d.kw) % g.stride != 0) {
    throw ShapeError("conv2d: stride " + std::to_string(g.stride) + " does not tile padded input " +
                     std::to_string(ph) + "x" + std::to_string(pw));
  }
  d.h_out = (ph - d.kh) / g.stride + 1;
  d.w_out = (pw - d.kw) / g.stride + 1;
  return d;
}

// col is [patch, pixels] for one image.
template <typename T>
void im2col(const T* image, const ConvDims& d, Conv2dGeometry g, T* col) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < d.c_in; ++c) {
    for (std::size_t ki = 0; ki < d.kh; ++ki) {
      for (std::size_t kj = 0; kj < d.kw; ++kj) {
        T* row = col + ((c * d.kh + ki) * d.kw + kj) * d.pixels();
        for (std::size_t oy = 0; oy < d.h_out; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - pad;
          T* dst = row + oy * d.w_out;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) {
            std::fill(dst, dst + d.w_out, T{0});
            continue;
          }
          const T* src = image + (c * d.h + static_cast<std::size_t>(iy)) * d.w;
          for (std::size_t ox = 0; ox < d.w_out; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - pad;
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvDims& d, Conv2dGeometry g, T* image) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < d.c_in; ++c) {
    for (std::size_t ki = 0; ki < d.kh; ++ki) {
      for (std::size_t kj = 0; kj < d.kw; ++kj) {
        const T* row = col + ((c * d.kh + ki) * d.kw + kj) * d.pixels();
        for (std::size_t oy = 0; oy < d.h_out; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
          T* dst = image + (c * d.h + static_cast<std::size_t>(iy)) * d.w;
          for (std::size_t ox = 0; ox < d.w_out; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - pad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(d.w)) dst[ix] += row[oy * d.w_out + ox];
          }
        }
      }
    }
  }
}

template <typename T>
inline void axpy(std::size_t n, T alpha, const T* __restrict x, T* __restrict y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                              Conv2dGeometry geometry) {
  const ConvDims d = conv_dims(input, weight, geometry);
  BasicTensor<T> out({d.n, d.c_out, d.h_out, d.w_out});
  std::vector<T> col(d.patch() * d.pixels());
  const T* w = weight.data().data();
  for (std::size_t img = 0; img < d.n; ++img) {
    im2col(input.data().data() + img * d.c_in * d.h * d.w, d, geometry, col.data());
    T* dst = out.data().data() + img * d.c_out * d.pixels();
    for (std::size_t o = 0; o < d.c_out; ++o) {
      T* out_row = dst + o * d.pixels();
      for (std::size_t k = 0; k < d.patch(); ++k) {
        const T wk = w[o * d.patch() + k];
        if (wk != T{0}) axpy(d.pixels(), wk, col.data() + k * d.pixels(), out_row);
      }
    }
  }
  return out;
}

template <typename T>
void conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                     const BasicTensor<T>& grad_output, Conv2dGeometry geometry,
                     BasicTensor<T>* grad_input, BasicTensor<T>* grad_weight) {
  const ConvDims d = conv_dims(input, weight, geometry);
  if (grad_output.shape() != Shape{d.n, d.c_out, d.h_out, d.w_out}) {
    throw ShapeError("conv2d backward: upstream gradient shape " + shape_str(grad_output.shape()));
  }
  const std::size_t patch = d.patch(), pixels = d.pixels();
  std::vector<T> col(patch * pixels), col_t(pixels * patch), dcol(patch * pixels);
  const T* w = weight.data().data();
  for (std::size_t img = 0; img < d.n; ++img) {
    const T* dy = grad_output.data().data() + img * d.c_out * pixels;
    if (grad_weight) {
      im2col(input.data().data() + img * d.c_in * d.h * d.w, d, geometry, col.data());
      for (std::size_t k = 0; k < patch; ++k) {
        for (std::size_t p = 0; p < pixels; ++p) col_t[p * patch + k] = col[k * pixels + p];
      }
      T* dw = grad_weight->data().data();
      for (std::size_t o = 0; o < d.c_out; ++o) {
        for (std::size_t p = 0; p < pixels; ++p) {
          const T g = dy[o * pixels + p];
          if (g != T{0}) axpy(patch, g, col_t.data() + p * patch, dw + o * patch);
        }
      }
    }
    if (grad_input) {
      std::fill(dcol.begin(), dcol.end(), T{0});
      for (std::size_t o = 0; o < d.c_out; ++o) {
        for (std::size_t k = 0; k < patch; ++k) {
          const T wk = w[o * patch + k];
          if (wk != T{0}) axpy(pixels, wk, dy + o * pixels, dcol.data() + k * pixels);
        }
      }
      col2im_add(dcol.data(), d, geometry, grad_input->data().data() + img * d.c_in * d.h * d.w);
    }
  }
}

template <typename T>
BasicTensor<T> dense_forward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                             const BasicTensor<T>& bias) {
  if (input.rank() != 2 || weight.rank() != 2 || bias.rank() != 1) {
    throw ShapeError("dense: expected [N,D_in], [D_out,D_in], [D_out]; got " + shape_str(input.shape()) +
                     ", " + shape_str(weight.shape()) + ", " + shape_str(bias.shape()));
  }
  const std::size_t n = input.dim(0), d_in = input.dim(1), d_out = weight.dim(0);
  if (weight.dim(1) != d_in) {
    throw ShapeError("dense: input width " + std::to_string(d_in) + " does not match weight " +
                     shape_str(weight.shape()));
  }
  if (bias.dim(0) != d_out) throw ShapeError("dense: bias length does not match output width");
  BasicTensor<T> out({n, d_out});
  for (std::size_t i = 0; i < n; ++i) {
    const T* x = input.data().data() + i * d_in;
    for (std::size_t o = 0; o < d_out; ++o) {
      const T* w = weight.data().data() + o * d_in;
      T acc = bias[o];
      for (std::size_t k = 0; k < d_in; ++k) acc += x[k] * w[k];
      out[i * d_out + o] = acc;
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  for (auto& v : out.storage()) v = v > T{0} ? v : T{0};
  return out;
}

template <typename T>
BasicTensor<T> avg_pool_forward(const BasicTensor<T>& input, std::size_t kernel) {
  if (input.rank() != 4) throw ShapeError("avg_pool: input must be NCHW");
  if (kernel == 0 || kernel > input.dim(2) || kernel > input.dim(3)) {
    throw ShapeError("avg_pool: kernel " + std::to_string(kernel) + " invalid for " + shape_str(input.shape()));
  }
  const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t ho = h / kernel, wo = w / kernel;
  BasicTensor<T> out({input.dim(0), input.dim(1), ho, wo});
  const T inv = T{1} / static_cast<T>(kernel * kernel);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = input.data().data() + p * h * w;
    T* dst = out.data().data() + p * ho * wo;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        T acc{0};
        for (std::size_t i = 0; i < kernel; ++i) {
          for (std::size_t j = 0; j < kernel; ++j) acc += src[(oy * kernel + i) * w + ox * kernel + j];
        }
        dst[oy * wo + ox] = acc * inv;
      }
    }
  }
  return out;
}

namespace {

template <typename T>
void check_labels(const BasicTensor<T>& logits, std::span<const std::int32_t> labels) {
  if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy: logits must be [N,K]");
  if (labels.size() != logits.dim(0)) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(logits.dim(0)) + " rows");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= logits.dim(1)) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(labels[i]) + " at row " +
                              std::to_string(i) + " outside [0," + std::to_string(logits.dim(1)) + ")");
    }
  }
}

// Row-wise log-softmax.
template <typename T>
BasicTensor<T> log_softmax(const BasicTensor<T>& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  BasicTensor<T> out = logits;
  for (std::size_t i = 0; i < n; ++i) {
    T* row = out.data().data() + i * k;
    const T m = *std::max_element(row, row + k);
    T s{0};
    for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - m);
    const T lse = m + std::log(s);
    for (std::size_t j = 0; j < k; ++j) row[j] -= lse;
  }
  return out;
}

}  // namespace

template <typename T>
T softmax_cross_entropy_value(const BasicTensor<T>& logits, std::span<const std::int32_t> labels) {
  check_labels(logits, labels);
  const auto logp = log_softmax(logits);
  T total{0};
  for (std::size_t i = 0; i < labels.size(); ++i) total -= logp[i * logits.dim(1) + labels[i]];
  return total / static_cast<T>(labels.size());
}

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, Conv2dGeometry geometry) {
  return make_node<T>("conv2d", conv2d_forward(input->value, weight->value, geometry), {input, weight},
                      [geometry](Node<T>& self) {
                        auto& x = self.parents[0];
                        auto& w = self.parents[1];
                        conv2d_backward(x->value, w->value, self.grad, geometry,
                                        x->requires_grad ? &x->grad_buffer() : nullptr,
                                        w->requires_grad ? &w->grad_buffer() : nullptr);
                      });
}

template <typename T>
Var<T> dense(const Var<T>& input, const Var<T>& weight, const Var<T>& bias) {
  return make_node<T>(
      "dense", dense_forward(input->value, weight->value, bias->value), {input, weight, bias},
      [](Node<T>& self) {
        auto& x = self.parents[0];
        auto& w = self.parents[1];
        auto& b = self.parents[2];
        const std::size_t n = x->value.dim(0), d_in = x->value.dim(1), d_out = w->value.dim(0);
        const T* dy = self.grad.data().data();
        if (x->requires_grad) {
          T* dx = x->grad_buffer().data().data();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t o = 0; o < d_out; ++o)
              axpy(d_in, dy[i * d_out + o], w->value.data().data() + o * d_in, dx + i * d_in);
        }
        if (w->requires_grad) {
          T* dw = w->grad_buffer().data().data();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t o = 0; o < d_out; ++o)
              axpy(d_in, dy[i * d_out + o], x->value.data().data() + i * d_in, dw + o * d_in);
        }
        if (b->requires_grad) {
          auto& db = b->grad_buffer();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t o = 0; o < d_out; ++o) db[o] += dy[i * d_out + o];
        }
      });
}

template <typename T>
Var<T> relu(const Var<T>& input) {
  return make_node<T>("relu", relu_forward(input->value), {input}, [](Node<T>& self) {
    auto& x = self.parents[0]->value;
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > T{0}) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> avg_pool(const Var<T>& input, std::size_t kernel) {
  return make_node<T>("avg_pool", avg_pool_forward(input->value, kernel), {input}, [kernel](Node<T>& self) {
    auto& x = self.parents[0]->value;
    auto& g = self.parents[0]->grad_buffer();
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t ho = h / kernel, wo = w / kernel;
    const T inv = T{1} / static_cast<T>(kernel * kernel);
    for (std::size_t p = 0; p < planes; ++p) {
      T* dst = g.data().data() + p * h * w;
      const T* src = self.grad.data().data() + p * ho * wo;
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const T v = src[oy * wo + ox] * inv;
          for (std::size_t i = 0; i < kernel; ++i)
            for (std::size_t j = 0; j < kernel; ++j) dst[(oy * kernel + i) * w + ox * kernel + j] += v;
        }
    }
  });
}

template <typename T>
Var<T> flatten(const Var<T>& input) {
  const std::size_t n = input->value.dim(0);
  return make_node<T>("flatten", input->value.reshaped({n, input->value.size() / n}), {input},
                      [](Node<T>& self) {
                        auto& g = self.parents[0]->grad_buffer();
                        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                      });
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const std::int32_t> labels) {
  check_labels(logits->value, labels);
  auto logp = log_softmax(logits->value);
  const std::size_t n = logits->value.dim(0), k = logits->value.dim(1);
  T total{0};
  for (std::size_t i = 0; i < n; ++i) total -= logp[i * k + labels[i]];
  std::vector<std::int32_t> owned(labels.begin(), labels.end());
  return make_node<T>("softmax_cross_entropy",
                      BasicTensor<T>({1}, std::vector<T>{total / static_cast<T>(n)}), {logits},
                      [logp = std::move(logp), owned = std::move(owned)](Node<T>& self) {
                        auto& g = self.parents[0]->grad_buffer();
                        const std::size_t rows = logp.dim(0), cols = logp.dim(1);
                        const T factor = self.grad[0] / static_cast<T>(rows);
                        for (std::size_t i = 0; i < rows; ++i) {
                          for (std::size_t j = 0; j < cols; ++j) {
                            const T p = std::exp(logp[i * cols + j]);
                            const T target = static_cast<std::size_t>(owned[i]) == j ? T{1} : T{0};
                            g[i * cols + j] += (p - target) * factor;
                          }
                        }
                      });
}

#define SCP_INSTANTIATE(T)                                                                              \
  template BasicTensor<T> conv2d_forward<T>(const BasicTensor<T>&, const BasicTensor<T>&, Conv2dGeometry); \
  template void conv2d_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,   \
                                   Conv2dGeometry, BasicTensor<T>*, BasicTensor<T>*);                    \
  template BasicTensor<T> dense_forward<T>(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                           const BasicTensor<T>&);                                       \
  template BasicTensor<T> relu_forward<T>(const BasicTensor<T>&);                                         \
  template BasicTensor<T> avg_pool_forward<T>(const BasicTensor<T>&, std::size_t);                        \
  template T softmax_cross_entropy_value<T>(const BasicTensor<T>&, std::span<const std::int32_t>);        \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, Conv2dGeometry);                                \
  template Var<T> dense<T>(const Var<T>&, const Var<T>&, const Var<T>&);                                  \
  template Var<T> relu<T>(const Var<T>&);                                                                 \
  template Var<T> avg_pool<T>(const Var<T>&, std::size_t);                                                \
  template Var<T> flatten<T>(const Var<T>&);                                                              \
  template Var<T> softmax_cross_entropy<T>(const Var<T>&, std::span<const std::int32_t>);

SCP_INSTANTIATE(float)
SCP_INSTANTIATE(double)
#undef SCP_INSTANTIATE

}  // namespace scp
