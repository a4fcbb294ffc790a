#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "coinnet/feature_map.hpp"
#include "coinnet/layers.hpp"
#include "coinnet/sketch.hpp"

// The CoinNet head: two backbone feature maps fused per grid location by
// Tensor Sketch, refined by a residual group, average pooled and
// l2-normalized; in parallel each map is attention pooled. The three
// vectors are concatenated and classified by one fully-connected layer.
namespace coinnet::model {

using RealVector = std::vector<double>;

struct ModelConfig {
  std::size_t height = 14;
  std::size_t width = 14;
  std::size_t alpha_channels = 2048;
  std::size_t beta_channels = 2048;
  std::size_t sketch_dim = 2048;
  std::size_t residual_blocks = 4;
  std::size_t classes = 0;

  // Width of the classifier input: fused vector plus both attention vectors.
  std::size_t classifier_inputs() const noexcept { return sketch_dim + alpha_channels + beta_channels; }

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Everything the optimizer updates. Sketch projections live outside.
struct HeadWeights {
  std::vector<layers::ResidualBlockParams> blocks;
  layers::Conv3x3Params attention_alpha;
  layers::Conv3x3Params attention_beta;
  layers::DenseParams classifier;

  // Zero-filled weights shaped for config.
  static HeadWeights zeros(const ModelConfig& config);

  friend bool operator==(const HeadWeights&, const HeadWeights&) = default;
};

// One parameter tensor as seen by optimizers and the checkpoint writer.
struct TensorView {
  std::span<double> values;
  std::vector<std::uint32_t> dims;
  bool is_bias = false;
};
struct ConstTensorView {
  std::span<const double> values;
  std::vector<std::uint32_t> dims;
  bool is_bias = false;
};

// Visits every tensor in the fixed checkpoint order: for each block the
// first conv (kernels, bias) then the second; the alpha attention conv; the
// beta attention conv; the classifier (weights, bias).
void for_each_tensor(HeadWeights& weights, const std::function<void(TensorView)>& fn);
void for_each_tensor(const HeadWeights& weights, const std::function<void(ConstTensorView)>& fn);
std::size_t parameter_count(const HeadWeights& weights);

struct ModelParams {
  ModelConfig config;
  std::uint64_t sketch_seed = 0;
  sketch::SketchParams sketch_alpha;
  sketch::SketchParams sketch_beta;
  HeadWeights weights;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Sketch projections for both branches derived from one seed.
sketch::SketchParams alpha_sketch(std::uint64_t sketch_seed, const ModelConfig& config);
sketch::SketchParams beta_sketch(std::uint64_t sketch_seed, const ModelConfig& config);

// Fan-in uniform weights (bound sqrt(1 / fan_in)), zero biases, sketch
// projections seeded from the same seed.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);
// All-zero weights with the sketch projections of sketch_seed.
ModelParams zero_params(const ModelConfig& config, std::uint64_t sketch_seed);

struct ForwardResult {
  RealVector logits;
  RealVector fused_vector;  // z: l2-normalized pooled residual output, length d
  RealVector attention_vector_alpha;
  RealVector attention_vector_beta;
  layers::AttentionMap attention_alpha;
  layers::AttentionMap attention_beta;
};

ForwardResult forward(const FeatureMap& alpha, const FeatureMap& beta, const ModelParams& params);

// Per-location Tensor Sketch of the two maps: an H x W x d grid.
FeatureMap fuse(const FeatureMap& alpha, const FeatureMap& beta, const ModelParams& params);

struct Prediction {
  std::size_t label = 0;
  RealVector probabilities;
};
// Argmax over classes; exact ties resolve to the lowest index.
Prediction predict(const FeatureMap& alpha, const FeatureMap& beta, const ModelParams& params);
std::size_t argmax(std::span<const double> values);

struct Gradient {
  double loss = 0.0;
  RealVector probabilities;
  HeadWeights weights;
};
// Cross-entropy loss of one sample and its gradient for every trainable tensor.
Gradient backward(const FeatureMap& alpha, const FeatureMap& beta, const ModelParams& params, std::size_t target);

// --- checkpoint ------------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'C', 'N', 'M', 'D'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
std::vector<unsigned char> encode_checkpoint(const ModelParams& params);

// When expected is given, a checkpoint of any other shape is rejected.
ModelParams load_checkpoint(const std::filesystem::path& path,
                            const std::optional<ModelConfig>& expected = std::nullopt);
ModelParams decode_checkpoint(std::span<const unsigned char> bytes,
                              const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace coinnet::model
