#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "coinnet/feature_map.hpp"

// Differentiable building blocks of the classification head. Every forward
// operation has a hand-written backward that returns gradients of
// <forward_output, upstream> with respect to its inputs and parameters.
namespace coinnet::layers {

using RealVector = std::vector<double>;

// 3x3 convolution, stride 1, zero padding 1.
// kernels are laid out [out][in][dh][dw].
struct Conv3x3Params {
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::vector<double> kernels;
  std::vector<double> bias;

  Conv3x3Params() = default;
  Conv3x3Params(std::size_t out, std::size_t in)
      : out_channels(out), in_channels(in), kernels(out * in * 9, 0.0), bias(out, 0.0) {}

  double& kernel(std::size_t o, std::size_t c, std::size_t dh, std::size_t dw) {
    return kernels[((o * in_channels + c) * 3 + dh) * 3 + dw];
  }
  double kernel(std::size_t o, std::size_t c, std::size_t dh, std::size_t dw) const {
    return kernels[((o * in_channels + c) * 3 + dh) * 3 + dw];
  }

  friend bool operator==(const Conv3x3Params&, const Conv3x3Params&) = default;
};

// out = W x + b with W stored row-major [out][in].
struct DenseParams {
  std::size_t out_features = 0;
  std::size_t in_features = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  DenseParams() = default;
  DenseParams(std::size_t out, std::size_t in)
      : out_features(out), in_features(in), weights(out * in, 0.0), bias(out, 0.0) {}

  friend bool operator==(const DenseParams&, const DenseParams&) = default;
};

struct ResidualBlockParams {
  Conv3x3Params first;
  Conv3x3Params second;

  ResidualBlockParams() = default;
  explicit ResidualBlockParams(std::size_t channels) : first(channels, channels), second(channels, channels) {}

  friend bool operator==(const ResidualBlockParams&, const ResidualBlockParams&) = default;
};

// --- convolution ---------------------------------------------------------

FeatureMap conv3x3(const FeatureMap& input, const Conv3x3Params& params);

struct Conv3x3Grad {
  FeatureMap input;
  Conv3x3Params params;
};
Conv3x3Grad conv3x3_backward(const FeatureMap& input, const Conv3x3Params& params, const FeatureMap& upstream);

// --- relu ----------------------------------------------------------------

FeatureMap relu(const FeatureMap& input);
// Upstream passes where input > 0; the derivative at exactly 0 is 0.
FeatureMap relu_backward(const FeatureMap& input, const FeatureMap& upstream);

// --- residual block / group ---------------------------------------------

// out = relu(input + conv(relu(conv(input, first)), second))
FeatureMap residual_block(const FeatureMap& input, const ResidualBlockParams& params);

struct ResidualBlockTrace {
  FeatureMap input;
  FeatureMap hidden_pre;  // first conv output
  FeatureMap hidden;      // relu(hidden_pre)
  FeatureMap sum;         // input + second conv output
  FeatureMap output;      // relu(sum)
};
ResidualBlockTrace residual_block_trace(const FeatureMap& input, const ResidualBlockParams& params);

struct ResidualBlockGrad {
  FeatureMap input;
  ResidualBlockParams params;
};
ResidualBlockGrad residual_block_backward(const ResidualBlockTrace& trace, const ResidualBlockParams& params,
                                          const FeatureMap& upstream);
ResidualBlockGrad residual_block_backward(const FeatureMap& input, const ResidualBlockParams& params,
                                          const FeatureMap& upstream);

FeatureMap residual_group(const FeatureMap& input, std::span<const ResidualBlockParams> blocks);

using ResidualGroupTrace = std::vector<ResidualBlockTrace>;
ResidualGroupTrace residual_group_trace(const FeatureMap& input, std::span<const ResidualBlockParams> blocks);

struct ResidualGroupGrad {
  FeatureMap input;
  std::vector<ResidualBlockParams> blocks;
};
ResidualGroupGrad residual_group_backward(const ResidualGroupTrace& trace, std::span<const ResidualBlockParams> blocks,
                                          const FeatureMap& upstream);
ResidualGroupGrad residual_group_backward(const FeatureMap& input, std::span<const ResidualBlockParams> blocks,
                                          const FeatureMap& upstream);

// --- soft attention pooling ---------------------------------------------

// Softmax weights over all H*W grid locations; nonnegative and summing to 1.
struct AttentionMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> weights;
};

struct AttentionResult {
  RealVector pooled;  // length C
  AttentionMap attention;
};

// Scores from a C -> 1 conv3x3, softmax over locations, then the
// attention-weighted spatial sum of the feature vectors.
AttentionResult attention_pool(const FeatureMap& features, const Conv3x3Params& params);

struct AttentionGrad {
  FeatureMap features;
  Conv3x3Params params;
};
AttentionGrad attention_pool_backward(const FeatureMap& features, const Conv3x3Params& params,
                                      const AttentionMap& attention, std::span<const double> upstream);
AttentionGrad attention_pool_backward(const FeatureMap& features, const Conv3x3Params& params,
                                      std::span<const double> upstream);

// --- vector ops ---------------------------------------------------------

inline constexpr double kNormEpsilon = 1e-12;

// x / max(||x||, 1e-12)
RealVector l2_normalize(std::span<const double> x);
RealVector l2_normalize_backward(std::span<const double> x, std::span<const double> upstream);

RealVector spatial_average_pool(const FeatureMap& input);
FeatureMap spatial_average_pool_backward(std::size_t height, std::size_t width, std::span<const double> upstream);

RealVector fully_connected(std::span<const double> x, const DenseParams& params);

struct DenseGrad {
  RealVector input;
  DenseParams params;
};
DenseGrad fully_connected_backward(std::span<const double> x, const DenseParams& params,
                                   std::span<const double> upstream);

// Max-shifted softmax.
RealVector softmax(std::span<const double> logits);

struct CrossEntropyResult {
  double loss = 0.0;
  RealVector probabilities;
};
CrossEntropyResult softmax_cross_entropy(std::span<const double> logits, std::size_t target);
// d loss / d logits = probabilities - one_hot(target).
RealVector softmax_cross_entropy_backward(std::span<const double> probabilities, std::size_t target);

}  // namespace coinnet::layers
