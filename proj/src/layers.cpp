#include "coinnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "coinnet/error.hpp"

namespace coinnet::layers {

namespace {

std::string shape_str(const FeatureMap& m) {
  return std::to_string(m.height) + "x" + std::to_string(m.width) + "x" + std::to_string(m.channels);
}

void require_conv_input(const FeatureMap& input, const Conv3x3Params& params) {
  require(params.in_channels == input.channels, ErrorKind::ShapeMismatch,
          "conv3x3: input has " + std::to_string(input.channels) + " channels, kernel expects " +
              std::to_string(params.in_channels));
  require(params.kernels.size() == params.out_channels * params.in_channels * 9 &&
              params.bias.size() == params.out_channels,
          ErrorKind::ShapeMismatch, "conv3x3: parameter buffers do not match declared shape");
}

void require_same_shape(const FeatureMap& a, const FeatureMap& b, const char* what) {
  require(a.same_shape(b), ErrorKind::ShapeMismatch,
          std::string(what) + ": shape " + shape_str(a) + " vs " + shape_str(b));
}

// Patch matrix: row p = h*W + w, column j = (dh*3 + dw)*C + c.
std::vector<double> im2col(const FeatureMap& in) {
  const std::size_t H = in.height, W = in.width, C = in.channels;
  std::vector<double> cols(H * W * 9 * C, 0.0);
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t w = 0; w < W; ++w) {
      double* row = cols.data() + (h * W + w) * 9 * C;
      for (std::size_t dh = 0; dh < 3; ++dh) {
        const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(h + dh) - 1;
        if (y < 0 || y >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t dw = 0; dw < 3; ++dw) {
          const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(w + dw) - 1;
          if (x < 0 || x >= static_cast<std::ptrdiff_t>(W)) continue;
          const auto src = in.pixel(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
          std::copy(src.begin(), src.end(), row + (dh * 3 + dw) * C);
        }
      }
    }
  }
  return cols;
}

void col2im_add(const std::vector<double>& cols, FeatureMap& out) {
  const std::size_t H = out.height, W = out.width, C = out.channels;
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t w = 0; w < W; ++w) {
      const double* row = cols.data() + (h * W + w) * 9 * C;
      for (std::size_t dh = 0; dh < 3; ++dh) {
        const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(h + dh) - 1;
        if (y < 0 || y >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t dw = 0; dw < 3; ++dw) {
          const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(w + dw) - 1;
          if (x < 0 || x >= static_cast<std::ptrdiff_t>(W)) continue;
          auto dst = out.pixel(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
          const double* src = row + (dh * 3 + dw) * C;
          for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

// Kernels reshaped to [(tap, c)][o] so the inner loops run over contiguous o.
std::vector<double> kernels_tap_major(const Conv3x3Params& p) {
  const std::size_t O = p.out_channels, C = p.in_channels;
  std::vector<double> k(9 * C * O);
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t tap = 0; tap < 9; ++tap) k[(tap * C + c) * O + o] = p.kernels[(o * C + c) * 9 + tap];
  return k;
}

}  // namespace

FeatureMap conv3x3(const FeatureMap& input, const Conv3x3Params& params) {
  require_conv_input(input, params);
  const std::size_t P = input.positions(), J = 9 * input.channels, O = params.out_channels;
  const std::vector<double> cols = im2col(input);
  const std::vector<double> k = kernels_tap_major(params);
  FeatureMap out(input.height, input.width, O);
  for (std::size_t p = 0; p < P; ++p) {
    double* dst = out.values.data() + p * O;
    std::copy(params.bias.begin(), params.bias.end(), dst);
    const double* row = cols.data() + p * J;
    for (std::size_t j = 0; j < J; ++j) {
      const double v = row[j];
      if (v == 0.0) continue;
      const double* kj = k.data() + j * O;
      for (std::size_t o = 0; o < O; ++o) dst[o] += v * kj[o];
    }
  }
  return out;
}

Conv3x3Grad conv3x3_backward(const FeatureMap& input, const Conv3x3Params& params, const FeatureMap& upstream) {
  require_conv_input(input, params);
  require(upstream.height == input.height && upstream.width == input.width &&
              upstream.channels == params.out_channels,
          ErrorKind::ShapeMismatch, "conv3x3_backward: upstream shape " + shape_str(upstream) + " does not match output");
  const std::size_t P = input.positions(), C = input.channels, J = 9 * C, O = params.out_channels;
  const std::vector<double> cols = im2col(input);

  Conv3x3Grad grad{FeatureMap(input.height, input.width, C), Conv3x3Params(O, C)};
  std::vector<double> grad_k(J * O, 0.0);
  std::vector<double> grad_cols(P * J, 0.0);
  for (std::size_t p = 0; p < P; ++p) {
    const double* g = upstream.values.data() + p * O;
    for (std::size_t o = 0; o < O; ++o) grad.params.bias[o] += g[o];
    const double* row = cols.data() + p * J;
    for (std::size_t j = 0; j < J; ++j) {
      const double v = row[j];
      if (v == 0.0) continue;
      double* gk = grad_k.data() + j * O;
      for (std::size_t o = 0; o < O; ++o) gk[o] += v * g[o];
    }
    double* gc = grad_cols.data() + p * J;
    for (std::size_t o = 0; o < O; ++o) {
      const double go = g[o];
      if (go == 0.0) continue;
      const double* ko = params.kernels.data() + o * C * 9;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t tap = 0; tap < 9; ++tap) gc[tap * C + c] += go * ko[c * 9 + tap];
    }
  }
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t tap = 0; tap < 9; ++tap)
        grad.params.kernels[(o * C + c) * 9 + tap] = grad_k[(tap * C + c) * O + o];
  col2im_add(grad_cols, grad.input);
  return grad;
}

FeatureMap relu(const FeatureMap& input) {
  FeatureMap out = input;
  for (auto& v : out.values) v = std::max(v, 0.0);
  return out;
}

FeatureMap relu_backward(const FeatureMap& input, const FeatureMap& upstream) {
  require_same_shape(input, upstream, "relu_backward");
  FeatureMap out(input.height, input.width, input.channels);
  for (std::size_t i = 0; i < input.size(); ++i) out.values[i] = input.values[i] > 0.0 ? upstream.values[i] : 0.0;
  return out;
}

ResidualBlockTrace residual_block_trace(const FeatureMap& input, const ResidualBlockParams& params) {
  require(params.first.in_channels == input.channels && params.first.out_channels == input.channels &&
              params.second.in_channels == input.channels && params.second.out_channels == input.channels,
          ErrorKind::ShapeMismatch,
          "residual_block: blocks must preserve " + std::to_string(input.channels) + " channels");
  ResidualBlockTrace t;
  t.input = input;
  t.hidden_pre = conv3x3(input, params.first);
  t.hidden = relu(t.hidden_pre);
  t.sum = conv3x3(t.hidden, params.second);
  for (std::size_t i = 0; i < t.sum.size(); ++i) t.sum.values[i] += input.values[i];
  t.output = relu(t.sum);
  return t;
}

FeatureMap residual_block(const FeatureMap& input, const ResidualBlockParams& params) {
  return residual_block_trace(input, params).output;
}

ResidualBlockGrad residual_block_backward(const ResidualBlockTrace& trace, const ResidualBlockParams& params,
                                          const FeatureMap& upstream) {
  require_same_shape(trace.output, upstream, "residual_block_backward");
  const FeatureMap g_sum = relu_backward(trace.sum, upstream);
  Conv3x3Grad second = conv3x3_backward(trace.hidden, params.second, g_sum);
  const FeatureMap g_hidden_pre = relu_backward(trace.hidden_pre, second.input);
  Conv3x3Grad first = conv3x3_backward(trace.input, params.first, g_hidden_pre);
  ResidualBlockGrad grad;
  grad.input = std::move(first.input);
  for (std::size_t i = 0; i < grad.input.size(); ++i) grad.input.values[i] += g_sum.values[i];
  grad.params.first = std::move(first.params);
  grad.params.second = std::move(second.params);
  return grad;
}

ResidualBlockGrad residual_block_backward(const FeatureMap& input, const ResidualBlockParams& params,
                                          const FeatureMap& upstream) {
  return residual_block_backward(residual_block_trace(input, params), params, upstream);
}

ResidualGroupTrace residual_group_trace(const FeatureMap& input, std::span<const ResidualBlockParams> blocks) {
  ResidualGroupTrace trace;
  trace.reserve(blocks.size());
  const FeatureMap* current = &input;
  for (const auto& block : blocks) {
    trace.push_back(residual_block_trace(*current, block));
    current = &trace.back().output;
  }
  return trace;
}

FeatureMap residual_group(const FeatureMap& input, std::span<const ResidualBlockParams> blocks) {
  FeatureMap current = input;
  for (const auto& block : blocks) current = residual_block(current, block);
  return current;
}

ResidualGroupGrad residual_group_backward(const ResidualGroupTrace& trace, std::span<const ResidualBlockParams> blocks,
                                          const FeatureMap& upstream) {
  require(trace.size() == blocks.size(), ErrorKind::ShapeMismatch,
          "residual_group_backward: trace length does not match block count");
  ResidualGroupGrad grad;
  grad.blocks.resize(blocks.size());
  FeatureMap g = upstream;
  for (std::size_t i = blocks.size(); i-- > 0;) {
    ResidualBlockGrad bg = residual_block_backward(trace[i], blocks[i], g);
    grad.blocks[i] = std::move(bg.params);
    g = std::move(bg.input);
  }
  grad.input = std::move(g);
  return grad;
}

ResidualGroupGrad residual_group_backward(const FeatureMap& input, std::span<const ResidualBlockParams> blocks,
                                          const FeatureMap& upstream) {
  if (blocks.empty()) return {upstream, {}};
  return residual_group_backward(residual_group_trace(input, blocks), blocks, upstream);
}

AttentionResult attention_pool(const FeatureMap& features, const Conv3x3Params& params) {
  require(params.out_channels == 1, ErrorKind::ShapeMismatch, "attention_pool: score conv must have one output channel");
  const FeatureMap scores = conv3x3(features, params);
  AttentionResult r;
  r.attention.height = features.height;
  r.attention.width = features.width;
  r.attention.weights = softmax(scores.values);
  r.pooled.assign(features.channels, 0.0);
  for (std::size_t p = 0; p < features.positions(); ++p) {
    const double a = r.attention.weights[p];
    const double* f = features.values.data() + p * features.channels;
    for (std::size_t c = 0; c < features.channels; ++c) r.pooled[c] += a * f[c];
  }
  return r;
}

AttentionGrad attention_pool_backward(const FeatureMap& features, const Conv3x3Params& params,
                                      const AttentionMap& attention, std::span<const double> upstream) {
  require(upstream.size() == features.channels, ErrorKind::ShapeMismatch,
          "attention_pool_backward: upstream length " + std::to_string(upstream.size()) + " vs " +
              std::to_string(features.channels) + " channels");
  require(attention.weights.size() == features.positions(), ErrorKind::ShapeMismatch,
          "attention_pool_backward: attention map does not match the feature grid");
  const std::size_t P = features.positions(), C = features.channels;
  const auto& a = attention.weights;

  // d/d attn[p] = <upstream, f[p]>; softmax Jacobian gives the score gradient.
  std::vector<double> g_attn(P, 0.0);
  double weighted = 0.0;
  for (std::size_t p = 0; p < P; ++p) {
    const double* f = features.values.data() + p * C;
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += upstream[c] * f[c];
    g_attn[p] = s;
    weighted += a[p] * s;
  }
  FeatureMap g_scores(features.height, features.width, 1);
  for (std::size_t p = 0; p < P; ++p) g_scores.values[p] = a[p] * (g_attn[p] - weighted);

  Conv3x3Grad conv = conv3x3_backward(features, params, g_scores);
  AttentionGrad grad{std::move(conv.input), std::move(conv.params)};
  for (std::size_t p = 0; p < P; ++p) {
    double* g = grad.features.values.data() + p * C;
    for (std::size_t c = 0; c < C; ++c) g[c] += a[p] * upstream[c];
  }
  return grad;
}

AttentionGrad attention_pool_backward(const FeatureMap& features, const Conv3x3Params& params,
                                      std::span<const double> upstream) {
  return attention_pool_backward(features, params, attention_pool(features, params).attention, upstream);
}

RealVector l2_normalize(std::span<const double> x) {
  double sq = 0.0;
  for (double v : x) sq += v * v;
  const double norm = std::sqrt(sq);
  RealVector out(x.begin(), x.end());
  if (norm <= kNormEpsilon) {
    for (auto& v : out) v /= kNormEpsilon;
    return out;
  }
  for (auto& v : out) v /= norm;
  return out;
}

RealVector l2_normalize_backward(std::span<const double> x, std::span<const double> upstream) {
  require(x.size() == upstream.size(), ErrorKind::ShapeMismatch, "l2_normalize_backward: length mismatch");
  double sq = 0.0;
  for (double v : x) sq += v * v;
  const double norm = std::sqrt(sq);
  RealVector g(upstream.begin(), upstream.end());
  if (norm <= kNormEpsilon) {
    for (auto& v : g) v /= kNormEpsilon;
    return g;
  }
  // (I - y y^T) upstream / ||x|| with y = x / ||x||.
  double dot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) dot += x[i] * upstream[i];
  dot /= norm;
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = (upstream[i] - (x[i] / norm) * dot) / norm;
  return g;
}

RealVector spatial_average_pool(const FeatureMap& input) {
  RealVector out(input.channels, 0.0);
  for (std::size_t p = 0; p < input.positions(); ++p) {
    const double* f = input.values.data() + p * input.channels;
    for (std::size_t c = 0; c < input.channels; ++c) out[c] += f[c];
  }
  const double scale = 1.0 / static_cast<double>(input.positions());
  for (auto& v : out) v *= scale;
  return out;
}

FeatureMap spatial_average_pool_backward(std::size_t height, std::size_t width, std::span<const double> upstream) {
  FeatureMap g(height, width, upstream.size());
  const double scale = 1.0 / static_cast<double>(height * width);
  for (std::size_t p = 0; p < g.positions(); ++p)
    for (std::size_t c = 0; c < upstream.size(); ++c) g.values[p * upstream.size() + c] = upstream[c] * scale;
  return g;
}

RealVector fully_connected(std::span<const double> x, const DenseParams& params) {
  require(x.size() == params.in_features, ErrorKind::ShapeMismatch,
          "fully_connected: input length " + std::to_string(x.size()) + " vs " +
              std::to_string(params.in_features) + " weight columns");
  RealVector out(params.bias);
  for (std::size_t o = 0; o < params.out_features; ++o) {
    const double* row = params.weights.data() + o * params.in_features;
    double s = 0.0;
    for (std::size_t i = 0; i < params.in_features; ++i) s += row[i] * x[i];
    out[o] += s;
  }
  return out;
}

DenseGrad fully_connected_backward(std::span<const double> x, const DenseParams& params,
                                   std::span<const double> upstream) {
  require(x.size() == params.in_features && upstream.size() == params.out_features, ErrorKind::ShapeMismatch,
          "fully_connected_backward: shape mismatch");
  DenseGrad grad{RealVector(params.in_features, 0.0), DenseParams(params.out_features, params.in_features)};
  grad.params.bias.assign(upstream.begin(), upstream.end());
  for (std::size_t o = 0; o < params.out_features; ++o) {
    const double g = upstream[o];
    const double* row = params.weights.data() + o * params.in_features;
    double* grow = grad.params.weights.data() + o * params.in_features;
    for (std::size_t i = 0; i < params.in_features; ++i) {
      grow[i] = g * x[i];
      grad.input[i] += g * row[i];
    }
  }
  return grad;
}

RealVector softmax(std::span<const double> logits) {
  require(!logits.empty(), ErrorKind::InvalidArgument, "softmax of an empty vector");
  const double peak = *std::max_element(logits.begin(), logits.end());
  RealVector p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - peak);
    total += p[i];
  }
  for (auto& v : p) v /= total;
  return p;
}

CrossEntropyResult softmax_cross_entropy(std::span<const double> logits, std::size_t target) {
  require(target < logits.size(), ErrorKind::InvalidArgument,
          "softmax_cross_entropy: target " + std::to_string(target) + " out of range for " +
              std::to_string(logits.size()) + " classes");
  // log-sum-exp form keeps the loss accurate when p[target] underflows.
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double l : logits) total += std::exp(l - peak);
  CrossEntropyResult r;
  r.loss = std::log(total) - (logits[target] - peak);
  r.probabilities = softmax(logits);
  return r;
}

RealVector softmax_cross_entropy_backward(std::span<const double> probabilities, std::size_t target) {
  require(target < probabilities.size(), ErrorKind::InvalidArgument, "softmax_cross_entropy_backward: target out of range");
  RealVector g(probabilities.begin(), probabilities.end());
  g[target] -= 1.0;
  return g;
}

}  // namespace coinnet::layers
