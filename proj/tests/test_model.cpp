#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "coinnet/checks.hpp"
#include "coinnet/error.hpp"
#include "coinnet/model.hpp"
#include "coinnet/rng.hpp"

using namespace coinnet;
using namespace coinnet::model;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.height = 2;
  c.width = 2;
  c.alpha_channels = 3;
  c.beta_channels = 3;
  c.sketch_dim = 4;
  c.residual_blocks = 2;
  c.classes = 3;
  return c;
}

FeatureMap random_map(std::size_t h, std::size_t w, std::size_t c, Rng& rng) {
  FeatureMap m(h, w, c);
  for (auto& v : m.values) v = std::abs(rng.normal());
  return m;
}

void randomize_biases(ModelParams& p, Rng& rng) {
  for_each_tensor(p.weights, [&](TensorView t) {
    if (t.is_bias)
      for (auto& v : t.values) v = 0.1 * rng.normal();
  });
}

// Composition built from the materialized bilinear sketch and the individual layers.
RealVector oracle_logits(const FeatureMap& alpha, const FeatureMap& beta, const ModelParams& p) {
  const auto& c = p.config;
  FeatureMap grid(c.height, c.width, c.sketch_dim);
  for (std::size_t h = 0; h < c.height; ++h)
    for (std::size_t w = 0; w < c.width; ++w) {
      const auto s = sketch::bilinear_oracle_sketch(alpha.pixel(h, w), beta.pixel(h, w), p.sketch_alpha, p.sketch_beta);
      std::copy(s.begin(), s.end(), grid.pixel(h, w).begin());
    }
  for (const auto& b : p.weights.blocks) grid = layers::residual_block(grid, b);
  RealVector input = layers::l2_normalize(layers::spatial_average_pool(grid));
  const auto a1 = layers::attention_pool(alpha, p.weights.attention_alpha).pooled;
  const auto a2 = layers::attention_pool(beta, p.weights.attention_beta).pooled;
  input.insert(input.end(), a1.begin(), a1.end());
  input.insert(input.end(), a2.begin(), a2.end());
  return layers::fully_connected(input, p.weights.classifier);
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("coinnet_model_" + name);
}

}  // namespace

TEST(ModelConfig, Validation) {
  EXPECT_NO_THROW(tiny_config().validate());
  auto c = tiny_config();
  c.classes = 1;
  EXPECT_THROW(c.validate(), Error);
  c = tiny_config();
  c.sketch_dim = 0;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_EQ(tiny_config().classifier_inputs(), 10u);
}

TEST(InitParams, DeterministicAndSeedSensitive) {
  const auto c = tiny_config();
  EXPECT_EQ(init_params(c, 7), init_params(c, 7));
  EXPECT_NE(init_params(c, 7).weights, init_params(c, 8).weights);
  EXPECT_EQ(init_params(c, 7).sketch_alpha, alpha_sketch(7, c));
  EXPECT_EQ(init_params(c, 7).sketch_beta, beta_sketch(7, c));
}

TEST(InitParams, BiasesZeroWeightsWithinBound) {
  auto c = tiny_config();
  c.sketch_dim = 32;
  c.alpha_channels = c.beta_channels = 16;
  const auto p = init_params(c, 3);
  for_each_tensor(p.weights, [&](ConstTensorView t) {
    if (t.is_bias) {
      for (double v : t.values) EXPECT_EQ(v, 0.0);
      return;
    }
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < t.dims.size(); ++i) fan_in *= t.dims[i];
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (double v : t.values) EXPECT_LE(std::abs(v), bound);
  });
}

TEST(InitParams, WeightSpreadMatchesUniformBound) {
  // A 32-channel conv has 9216 kernel weights with fan-in 288.
  auto c = tiny_config();
  c.sketch_dim = 32;
  const auto p = init_params(c, 11);
  const auto& k = p.weights.blocks[0].first.kernels;
  ASSERT_GE(k.size(), 1000u);
  double mean = 0, sq = 0;
  for (double v : k) mean += v;
  mean /= static_cast<double>(k.size());
  for (double v : k) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(k.size()));
  const double expected = std::sqrt(1.0 / 288.0) / std::sqrt(3.0);
  EXPECT_NEAR(sd, expected, 0.1 * expected);
}

TEST(ForEachTensor, FixedOrderAndCount) {
  const auto c = tiny_config();
  const auto w = HeadWeights::zeros(c);
  std::vector<std::vector<std::uint32_t>> dims;
  for_each_tensor(w, [&](ConstTensorView t) { dims.push_back(t.dims); });
  ASSERT_EQ(dims.size(), 4 * c.residual_blocks + 6);
  EXPECT_EQ(dims[0], (std::vector<std::uint32_t>{4, 4, 3, 3}));
  EXPECT_EQ(dims[1], (std::vector<std::uint32_t>{4}));
  EXPECT_EQ(dims[8], (std::vector<std::uint32_t>{1, 3, 3, 3}));
  EXPECT_EQ(dims[12], (std::vector<std::uint32_t>{3, 10}));
  EXPECT_EQ(parameter_count(w), 2 * 2 * (144 + 4) + 2 * (27 + 1) + 30 + 3);
}

TEST(Forward, ZeroWeightsGiveUniformProbabilities) {
  Rng rng(1);
  const auto c = tiny_config();
  const auto p = zero_params(c, 5);
  const auto alpha = random_map(2, 2, 3, rng), beta = random_map(2, 2, 3, rng);
  const auto pred = predict(alpha, beta, p);
  for (double q : pred.probabilities) EXPECT_NEAR(q, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(pred.label, 0u);
}

TEST(Forward, MatchesComposedOracle) {
  Rng rng(2);
  const auto c = tiny_config();
  for (int t = 0; t < 5; ++t) {
    auto p = init_params(c, 100 + t);
    randomize_biases(p, rng);
    const auto alpha = random_map(2, 2, 3, rng), beta = random_map(2, 2, 3, rng);
    const auto expected = oracle_logits(alpha, beta, p);
    const auto got = forward(alpha, beta, p).logits;
    ASSERT_EQ(got.size(), 3u);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(got[k], expected[k], 1e-10);
  }
}

TEST(Forward, FusedVectorScaleInvariant) {
  Rng rng(3);
  auto c = tiny_config();
  c.residual_blocks = 0;
  const auto p = init_params(c, 4);
  const auto alpha = random_map(2, 2, 3, rng), beta = random_map(2, 2, 3, rng);
  auto scaled = alpha;
  for (auto& v : scaled.values) v *= 7.5;
  const auto z1 = forward(alpha, beta, p).fused_vector;
  const auto z2 = forward(scaled, beta, p).fused_vector;
  for (std::size_t i = 0; i < z1.size(); ++i) EXPECT_NEAR(z1[i], z2[i], 1e-12);
}

TEST(Forward, AttentionMapsAreDistributions) {
  Rng rng(4);
  auto c = tiny_config();
  c.height = 3;
  c.width = 5;
  const auto p = init_params(c, 9);
  const auto r = forward(random_map(3, 5, 3, rng), random_map(3, 5, 3, rng), p);
  for (const auto* m : {&r.attention_alpha, &r.attention_beta}) {
    EXPECT_EQ(m->height, 3u);
    EXPECT_EQ(m->width, 5u);
    double total = 0;
    for (double a : m->weights) total += a;
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
  double z = 0;
  for (double v : r.fused_vector) z += v * v;
  EXPECT_TRUE(std::abs(std::sqrt(z) - 1.0) < 1e-9 || z == 0.0);
}

TEST(Forward, RejectsShapeMismatch) {
  Rng rng(5);
  const auto p = init_params(tiny_config(), 1);
  EXPECT_THROW(forward(random_map(2, 2, 4, rng), random_map(2, 2, 3, rng), p), Error);
  EXPECT_THROW(forward(random_map(3, 2, 3, rng), random_map(3, 2, 3, rng), p), Error);
}

TEST(Predict, ArgmaxAndTies) {
  EXPECT_EQ(argmax(RealVector{0.1, 0.7, 0.2}), 1u);
  EXPECT_EQ(argmax(RealVector{0.5, 0.5}), 0u);
  EXPECT_EQ(argmax(RealVector{-3, -1, -1}), 1u);
}

TEST(Predict, ConsistentUnderClassPermutation) {
  Rng rng(6);
  const auto c = tiny_config();
  auto p = init_params(c, 12);
  randomize_biases(p, rng);
  auto permuted = p;
  const std::size_t perm[3] = {2, 0, 1};  // new row k takes old row perm[k]
  const std::size_t inputs = c.classifier_inputs();
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < inputs; ++i)
      permuted.weights.classifier.weights[k * inputs + i] = p.weights.classifier.weights[perm[k] * inputs + i];
    permuted.weights.classifier.bias[k] = p.weights.classifier.bias[perm[k]];
  }
  for (int t = 0; t < 20; ++t) {
    const auto alpha = random_map(2, 2, 3, rng), beta = random_map(2, 2, 3, rng);
    const std::size_t a = predict(alpha, beta, p).label;
    const std::size_t b = predict(alpha, beta, permuted).label;
    EXPECT_EQ(perm[b], a);
  }
}

TEST(Backward, MatchesFiniteDifferences) {
  Rng rng(7);
  const auto c = tiny_config();
  for (int t = 0; t < 3; ++t) {
    auto p = init_params(c, 40 + t);
    randomize_biases(p, rng);
    const auto alpha = random_map(2, 2, 3, rng), beta = random_map(2, 2, 3, rng);
    const std::size_t target = rng.uniform_index(3);
    const auto g = backward(alpha, beta, p, target);
    EXPECT_NEAR(g.loss, layers::softmax_cross_entropy(forward(alpha, beta, p).logits, target).loss, 1e-12);
    std::vector<std::span<const double>> analytic;
    for_each_tensor(g.weights, [&](ConstTensorView v) { analytic.push_back(v.values); });
    std::size_t index = 0;
    for_each_tensor(p.weights, [&](TensorView v) {
      const auto numeric = checks::numeric_gradient(
          v.values, [&] { return layers::softmax_cross_entropy(forward(alpha, beta, p).logits, target).loss; }, 1e-5);
      EXPECT_LE(checks::relative_error(analytic[index], numeric), 1e-4) << "tensor " << index;
      ++index;
    });
  }
}

TEST(Backward, LeavesSketchProjectionsAlone) {
  Rng rng(8);
  const auto c = tiny_config();
  const auto p = init_params(c, 2);
  const auto before = p;
  (void)backward(random_map(2, 2, 3, rng), random_map(2, 2, 3, rng), p, 1);
  EXPECT_EQ(p, before);
  // The gradient container holds head weights only.
  EXPECT_EQ(parameter_count(backward(random_map(2, 2, 3, rng), random_map(2, 2, 3, rng), p, 0).weights),
            parameter_count(p.weights));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(9);
  auto p = init_params(tiny_config(), 77);
  randomize_biases(p, rng);
  const auto path = temp_path("roundtrip.cnmd");
  save_checkpoint(p, path);
  const auto q = load_checkpoint(path, tiny_config());
  EXPECT_EQ(q, p);
  EXPECT_EQ(encode_checkpoint(q), encode_checkpoint(p));
  std::filesystem::remove(path);
}

TEST(Checkpoint, LayoutHeader) {
  const auto bytes = encode_checkpoint(init_params(tiny_config(), 1));
  ASSERT_GE(bytes.size(), 46u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "CNMD");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 0);
  // Seven u32 config fields start at byte 6: H=2 W=2 C1=3 C2=3 d=4 blocks=2 K=3.
  const unsigned expected[7] = {2, 2, 3, 3, 4, 2, 3};
  for (int i = 0; i < 7; ++i) EXPECT_EQ(bytes[6 + 4 * i], expected[i]);
}

TEST(Checkpoint, TruncationRejectedAtEveryLength) {
  const auto bytes = encode_checkpoint(init_params(tiny_config(), 1));
  for (std::size_t n = 0; n < bytes.size(); n += 7) {
    try {
      decode_checkpoint(std::span(bytes).first(n));
      ADD_FAILURE() << "accepted " << n << " bytes";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Format);
    }
  }
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(decode_checkpoint(extra), Error);
}

TEST(Checkpoint, CorruptHeaderRejected) {
  auto bytes = encode_checkpoint(init_params(tiny_config(), 1));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), Error);
  bad = bytes;
  bad[4] = 2;
  EXPECT_THROW(decode_checkpoint(bad), Error);
}

TEST(Checkpoint, ConfigMismatchRejected) {
  const auto bytes = encode_checkpoint(init_params(tiny_config(), 1));
  auto other = tiny_config();
  other.sketch_dim = 8;
  try {
    decode_checkpoint(bytes, other);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
  EXPECT_THROW(load_checkpoint(temp_path("missing.cnmd")), Error);
}
