#include "coinnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "coinnet/error.hpp"
#include "coinnet/rng.hpp"

namespace coinnet::model {

namespace {

std::string shape_str(const FeatureMap& m) {
  return std::to_string(m.height) + "x" + std::to_string(m.width) + "x" + std::to_string(m.channels);
}

std::uint32_t dim(std::size_t v) { return static_cast<std::uint32_t>(v); }

template <class Weights, class View, class Fn>
void visit_tensors(Weights& w, Fn&& fn) {
  auto conv = [&](auto& c) {
    fn(View{c.kernels, {dim(c.out_channels), dim(c.in_channels), 3, 3}, false});
    fn(View{c.bias, {dim(c.out_channels)}, true});
  };
  for (auto& block : w.blocks) {
    conv(block.first);
    conv(block.second);
  }
  conv(w.attention_alpha);
  conv(w.attention_beta);
  fn(View{w.classifier.weights, {dim(w.classifier.out_features), dim(w.classifier.in_features)}, false});
  fn(View{w.classifier.bias, {dim(w.classifier.out_features)}, true});
}

void fill_uniform(std::span<double> values, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (auto& v : values) v = rng.uniform(-bound, bound);
}

void require_inputs(const FeatureMap& alpha, const FeatureMap& beta, const ModelConfig& config) {
  require(alpha.height == beta.height && alpha.width == beta.width, ErrorKind::ShapeMismatch,
          "spatial mismatch between alpha " + shape_str(alpha) + " and beta " + shape_str(beta));
  require(alpha.height == config.height && alpha.width == config.width &&
              alpha.channels == config.alpha_channels && beta.channels == config.beta_channels,
          ErrorKind::ShapeMismatch,
          "inputs alpha " + shape_str(alpha) + " / beta " + shape_str(beta) + " do not match model config " +
              std::to_string(config.height) + "x" + std::to_string(config.width) + "x(" +
              std::to_string(config.alpha_channels) + "," + std::to_string(config.beta_channels) + ")");
}

RealVector concat(const RealVector& a, const RealVector& b, const RealVector& c) {
  RealVector out;
  out.reserve(a.size() + b.size() + c.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  out.insert(out.end(), c.begin(), c.end());
  return out;
}

struct Trace {
  layers::ResidualGroupTrace group;
  FeatureMap group_output;
  RealVector pooled;
  RealVector classifier_input;
  layers::AttentionResult attention_alpha;
  layers::AttentionResult attention_beta;
  ForwardResult result;
};

Trace run_forward(const FeatureMap& alpha, const FeatureMap& beta, const ModelParams& params) {
  require_inputs(alpha, beta, params.config);
  Trace t;
  const FeatureMap fused = fuse(alpha, beta, params);
  t.group = layers::residual_group_trace(fused, params.weights.blocks);
  t.group_output = t.group.empty() ? fused : t.group.back().output;
  t.pooled = layers::spatial_average_pool(t.group_output);
  t.result.fused_vector = layers::l2_normalize(t.pooled);
  t.attention_alpha = layers::attention_pool(alpha, params.weights.attention_alpha);
  t.attention_beta = layers::attention_pool(beta, params.weights.attention_beta);
  t.classifier_input =
      concat(t.result.fused_vector, t.attention_alpha.pooled, t.attention_beta.pooled);
  t.result.logits = layers::fully_connected(t.classifier_input, params.weights.classifier);
  t.result.attention_vector_alpha = t.attention_alpha.pooled;
  t.result.attention_vector_beta = t.attention_beta.pooled;
  t.result.attention_alpha = t.attention_alpha.attention;
  t.result.attention_beta = t.attention_beta.attention;
  return t;
}

}  // namespace

void ModelConfig::validate() const {
  require(height >= 1 && width >= 1 && alpha_channels >= 1 && beta_channels >= 1 && sketch_dim >= 1,
          ErrorKind::InvalidArgument, "model dimensions must be positive");
  require(classes >= 2, ErrorKind::InvalidArgument,
          "model needs at least 2 classes, got " + std::to_string(classes));
}

HeadWeights HeadWeights::zeros(const ModelConfig& config) {
  HeadWeights w;
  w.blocks.assign(config.residual_blocks, layers::ResidualBlockParams(config.sketch_dim));
  w.attention_alpha = layers::Conv3x3Params(1, config.alpha_channels);
  w.attention_beta = layers::Conv3x3Params(1, config.beta_channels);
  w.classifier = layers::DenseParams(config.classes, config.classifier_inputs());
  return w;
}

void for_each_tensor(HeadWeights& weights, const std::function<void(TensorView)>& fn) {
  visit_tensors<HeadWeights, TensorView>(weights, fn);
}

void for_each_tensor(const HeadWeights& weights, const std::function<void(ConstTensorView)>& fn) {
  visit_tensors<const HeadWeights, ConstTensorView>(weights, fn);
}

std::size_t parameter_count(const HeadWeights& weights) {
  std::size_t n = 0;
  for_each_tensor(weights, [&](ConstTensorView t) { n += t.values.size(); });
  return n;
}

sketch::SketchParams alpha_sketch(std::uint64_t sketch_seed, const ModelConfig& config) {
  return sketch::make_sketch_params(derive_seed(sketch_seed, 0), config.alpha_channels, config.sketch_dim);
}

sketch::SketchParams beta_sketch(std::uint64_t sketch_seed, const ModelConfig& config) {
  return sketch::make_sketch_params(derive_seed(sketch_seed, 1), config.beta_channels, config.sketch_dim);
}

ModelParams zero_params(const ModelConfig& config, std::uint64_t sketch_seed) {
  config.validate();
  return ModelParams{config, sketch_seed, alpha_sketch(sketch_seed, config), beta_sketch(sketch_seed, config),
                     HeadWeights::zeros(config)};
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = zero_params(config, seed);
  Rng rng(derive_seed(seed, 2));
  for_each_tensor(p.weights, [&](TensorView t) {
    if (t.is_bias) return;
    // Conv kernels [out][in][3][3] have fan-in in*9; dense [out][in] has in.
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < t.dims.size(); ++i) fan_in *= t.dims[i];
    fill_uniform(t.values, fan_in, rng);
  });
  return p;
}

FeatureMap fuse(const FeatureMap& alpha, const FeatureMap& beta, const ModelParams& params) {
  require_inputs(alpha, beta, params.config);
  const numerics::FftPlan plan(params.config.sketch_dim);
  FeatureMap fused(alpha.height, alpha.width, params.config.sketch_dim);
  for (std::size_t h = 0; h < alpha.height; ++h) {
    for (std::size_t w = 0; w < alpha.width; ++w) {
      const RealVector z =
          sketch::tensor_sketch(alpha.pixel(h, w), beta.pixel(h, w), params.sketch_alpha, params.sketch_beta, plan);
      std::copy(z.begin(), z.end(), fused.pixel(h, w).begin());
    }
  }
  return fused;
}

ForwardResult forward(const FeatureMap& alpha, const FeatureMap& beta, const ModelParams& params) {
  return run_forward(alpha, beta, params).result;
}

std::size_t argmax(std::span<const double> values) {
  require(!values.empty(), ErrorKind::InvalidArgument, "argmax of an empty vector");
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

Prediction predict(const FeatureMap& alpha, const FeatureMap& beta, const ModelParams& params) {
  const ForwardResult r = forward(alpha, beta, params);
  return {argmax(r.logits), layers::softmax(r.logits)};
}

Gradient backward(const FeatureMap& alpha, const FeatureMap& beta, const ModelParams& params, std::size_t target) {
  const Trace t = run_forward(alpha, beta, params);
  const ModelConfig& cfg = params.config;
  const layers::CrossEntropyResult ce = layers::softmax_cross_entropy(t.result.logits, target);

  Gradient g;
  g.loss = ce.loss;
  g.probabilities = ce.probabilities;
  g.weights = HeadWeights::zeros(cfg);

  const RealVector g_logits = layers::softmax_cross_entropy_backward(ce.probabilities, target);
  layers::DenseGrad fc = layers::fully_connected_backward(t.classifier_input, params.weights.classifier, g_logits);
  g.weights.classifier = std::move(fc.params);

  const auto g_input = std::span<const double>(fc.input);
  const auto g_z = g_input.subspan(0, cfg.sketch_dim);
  const auto g_a1 = g_input.subspan(cfg.sketch_dim, cfg.alpha_channels);
  const auto g_a2 = g_input.subspan(cfg.sketch_dim + cfg.alpha_channels, cfg.beta_channels);

  if (!params.weights.blocks.empty()) {
    const RealVector g_pooled = layers::l2_normalize_backward(t.pooled, g_z);
    const FeatureMap g_group = layers::spatial_average_pool_backward(cfg.height, cfg.width, g_pooled);
    layers::ResidualGroupGrad rg = layers::residual_group_backward(t.group, params.weights.blocks, g_group);
    g.weights.blocks = std::move(rg.blocks);
  }

  g.weights.attention_alpha =
      layers::attention_pool_backward(alpha, params.weights.attention_alpha, t.attention_alpha.attention, g_a1).params;
  g.weights.attention_beta =
      layers::attention_pool_backward(beta, params.weights.attention_beta, t.attention_beta.attention, g_a2).params;
  return g;
}

}  // namespace coinnet::model
