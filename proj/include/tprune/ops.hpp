#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "tprune/tensor.hpp"

// Stateless tensor kernels. Every kernel validates shapes, never mutates its
// inputs, and rejects non-finite results.
namespace tprune::ops {

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias, int stride,
                      int pad, std::string_view layer = "conv2d");

template <typename T>
struct Conv2dGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  BasicTensor<T> bias;
};

// Each requested gradient is computed image by image, so per-example results
// do not depend on the batch they were computed in.
template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                               const BasicTensor<T>& grad_out, int stride, int pad, bool want_input,
                               bool want_weight, bool want_bias);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& grad_out);

// 2x2 window max, stride 2. `argmax` (optional) receives the flat input index
// chosen for every output element; ties resolve to the first in row-major order.
template <typename T>
BasicTensor<T> maxpool2x(const BasicTensor<T>& x, std::vector<std::int64_t>* argmax = nullptr);

template <typename T>
BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> upsample_nearest2x_backward(const BasicTensor<T>& grad_out);

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b, std::string_view a_name = "a",
                               std::string_view b_name = "b");

// Splits a channel-concatenated tensor back into [0, split) and [split, C).
template <typename T>
void split_channels(const BasicTensor<T>& x, std::int64_t split, BasicTensor<T>& first, BasicTensor<T>& second);

// Mean binary cross-entropy on logits, log-sum-exp stable. Returns shape {1}.
template <typename T>
BasicTensor<T> bce_with_logits(const BasicTensor<T>& logits, const BasicTensor<T>& targets);

// d(mean BCE)/d(logits) = (sigmoid(logit) - target) / numel.
template <typename T>
BasicTensor<T> bce_with_logits_grad(const BasicTensor<T>& logits, const BasicTensor<T>& targets);

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor);

}  // namespace tprune::ops
