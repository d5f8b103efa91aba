#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "halsie/autodiff/tensor.hpp"

namespace halsie::ad {

// Every op takes a nullable tape. With a tape and at least one
// requires_grad input the op records its backward closure; otherwise it is a
// plain forward computation.

struct Conv2dOptions {
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t dilation_h = 1, dilation_w = 1;
  std::size_t pad_h = 0, pad_w = 0;

  // Output size equals input size for odd kernels at stride 1.
  static Conv2dOptions same(std::size_t kh, std::size_t kw, std::size_t dil_h = 1, std::size_t dil_w = 1);
  static Conv2dOptions strided(std::size_t stride, std::size_t pad);
};

// floor((in + 2p - d(k-1) - 1)/s) + 1
std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t dilation,
                             std::size_t pad);

// Cross-correlation. input N x Cin x H x W, weight Cout x Cin x kh x kw,
// bias Cout (may be an undefined tensor).
template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 const Conv2dOptions& opts);

template <typename T>
Tensor<T> pointwise_conv(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
struct BatchNormStats {
  std::vector<T> mean;
  std::vector<T> var;

  explicit BatchNormStats(std::size_t channels = 0) : mean(channels, T{0}), var(channels, T{1}) {}
};

// Train mode normalizes with batch statistics (biased variance) and folds
// them into `running` with the given momentum (unbiased variance); eval mode
// normalizes with `running`.
template <typename T>
Tensor<T> batch_norm(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormStats<T>& running, bool training, T momentum = T(0.1), T eps = T(1e-5));

template <typename T>
Tensor<T> leaky_relu(Tape<T>* tape, const Tensor<T>& input, T slope);

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& input);

// align_corners = false
template <typename T>
Tensor<T> upsample_bilinear(Tape<T>* tape, const Tensor<T>& input, std::size_t out_h, std::size_t out_w);

template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, const std::vector<Tensor<T>>& inputs);

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& input, T alpha);

// Sum of all elements, optionally weighted elementwise by a constant tensor.
template <typename T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& input);

template <typename T>
Tensor<T> weighted_sum(Tape<T>* tape, const Tensor<T>& input, std::span<const T> weights);

// Mean over non-ignored pixels of w[target] * -log softmax(logits)[target].
// logits N x K x H x W, targets N*H*W class ids.
template <typename T>
Tensor<T> weighted_cross_entropy(Tape<T>* tape, const Tensor<T>& logits, std::span<const std::int32_t> targets,
                                 std::span<const T> class_weights, std::int32_t ignore_id);

}  // namespace halsie::ad
