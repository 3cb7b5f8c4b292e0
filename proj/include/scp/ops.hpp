#ifndef SCP_OPS_HPP_
#define SCP_OPS_HPP_

#include <cstdint>
#include <span>

#include "scp/autograd.hpp"
#include "scp/tensor.hpp"

namespace scp {

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Raw kernels. These are pure functions of their inputs and are shared by
// the autograd graph and the graph-free inference path.

/// NCHW x OIHW cross-correlation.
template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                              Conv2dGeometry geometry);

/// Accumulates input and weight gradients. Either output pointer may be null.
template <typename T>
void conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                     const BasicTensor<T>& grad_output, Conv2dGeometry geometry,
                     BasicTensor<T>* grad_input, BasicTensor<T>* grad_weight);

/// [N,D_in] x [D_out,D_in]^T + bias.
template <typename T>
BasicTensor<T> dense_forward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                             const BasicTensor<T>& bias);

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input);

/// Non-overlapping k x k average pooling; trailing rows/columns that do not
/// fill a window are dropped.
template <typename T>
BasicTensor<T> avg_pool_forward(const BasicTensor<T>& input, std::size_t kernel);

/// Mean cross-entropy of softmax(logits) against integer labels.
template <typename T>
T softmax_cross_entropy_value(const BasicTensor<T>& logits, std::span<const std::int32_t> labels);

// Graph ops.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, Conv2dGeometry geometry);
template <typename T>
Var<T> dense(const Var<T>& input, const Var<T>& weight, const Var<T>& bias);
template <typename T>
Var<T> relu(const Var<T>& input);
template <typename T>
Var<T> avg_pool(const Var<T>& input, std::size_t kernel);
template <typename T>
Var<T> flatten(const Var<T>& input);
/// Scalar mean loss; the gradient w.r.t. logits is (softmax - onehot) / N.
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const std::int32_t> labels);

}  // namespace scp

#endif  // SCP_OPS_HPP_
