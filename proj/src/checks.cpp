#include "coinnet/checks.hpp"

#include <algorithm>
#include <cmath>

#include "coinnet/error.hpp"
#include "coinnet/layers.hpp"
#include "coinnet/model.hpp"
#include "coinnet/rng.hpp"

namespace coinnet::checks {

namespace {

constexpr double kLayerStep = 1e-5;
constexpr double kLayerTolerance = 1e-4;
constexpr double kSketchStep = 1e-6;
constexpr double kSketchTolerance = 1e-6;

std::vector<double> normals(std::size_t n, Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

FeatureMap random_map(std::size_t h, std::size_t w, std::size_t c, Rng& rng) {
  FeatureMap m(h, w, c);
  m.values = normals(m.size(), rng);
  return m;
}

layers::Conv3x3Params random_conv(std::size_t out, std::size_t in, Rng& rng, double scale) {
  layers::Conv3x3Params p(out, in);
  p.kernels = normals(p.kernels.size(), rng, scale);
  p.bias = normals(p.bias.size(), rng, scale);
  return p;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.uniform_index(hi - lo + 1); }

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

class Tracker {
 public:
  Tracker(std::string name, double tolerance) {
    result_.name = std::move(name);
    result_.tolerance = tolerance;
    result_.passed = true;
  }

  // Compares one analytic gradient tensor with central differences of f.
  void compare(std::span<const double> analytic, std::span<double> x, const std::function<double()>& f, double step,
               std::uint64_t seed) {
    const auto numeric = numeric_gradient(x, f, step);
    const double err = relative_error(analytic, numeric);
    if (err > result_.max_relative_error || std::isnan(err)) {
      result_.max_relative_error = err;
      result_.worst_seed = seed;
    }
    if (!(err <= result_.tolerance)) result_.passed = false;
  }

  void next_instance() { ++result_.instances; }
  GradientCheck result() const { return result_; }

 private:
  GradientCheck result_;
};

GradientCheck check_conv(std::uint64_t seed, std::size_t instances) {
  Tracker t("conv3x3", kLayerTolerance);
  for (std::size_t i = 0; i < instances; ++i) {
    const std::uint64_t s = derive_seed(seed, i);
    Rng rng(s);
    const std::size_t H = pick(rng, 1, 4), W = pick(rng, 1, 4), C = pick(rng, 1, 3), O = pick(rng, 1, 3);
    FeatureMap x = random_map(H, W, C, rng);
    layers::Conv3x3Params p = random_conv(O, C, rng, 1.0);
    const auto up = normals(H * W * O, rng);
    const auto f = [&] { return dot(layers::conv3x3(x, p).values, up); };
    FeatureMap up_map(H, W, O);
    up_map.values = up;
    const auto g = layers::conv3x3_backward(x, p, up_map);
    t.compare(g.input.values, x.values, f, kLayerStep, s);
    t.compare(g.params.kernels, p.kernels, f, kLayerStep, s);
    t.compare(g.params.bias, p.bias, f, kLayerStep, s);
    t.next_instance();
  }
  return t.result();
}

GradientCheck check_relu(std::uint64_t seed, std::size_t instances) {
  Tracker t("relu", kLayerTolerance);
  for (std::size_t i = 0; i < instances; ++i) {
    const std::uint64_t s = derive_seed(seed, i);
    Rng rng(s);
    FeatureMap x(pick(rng, 1, 4), pick(rng, 1, 4), pick(rng, 1, 4));
    // Keep entries away from the kink so central differences are meaningful.
    for (auto& v : x.values) v = rng.sign() * rng.uniform(0.1, 1.0);
    FeatureMap up(x.height, x.width, x.channels);
    up.values = normals(x.size(), rng);
    const auto f = [&] { return dot(layers::relu(x).values, up.values); };
    t.compare(layers::relu_backward(x, up).values, x.values, f, kLayerStep, s);
    t.next_instance();
  }
  return t.result();
}

GradientCheck check_residual(std::uint64_t seed, std::size_t instances, std::size_t blocks, const char* name) {
  Tracker t(name, kLayerTolerance);
  for (std::size_t i = 0; i < instances; ++i) {
    const std::uint64_t s = derive_seed(seed, i);
    Rng rng(s);
    const std::size_t H = pick(rng, 1, 3), W = pick(rng, 1, 3), C = pick(rng, 1, 3);
    FeatureMap x = random_map(H, W, C, rng);
    std::vector<layers::ResidualBlockParams> params(blocks);
    for (auto& b : params) {
      b.first = random_conv(C, C, rng, 0.5);
      b.second = random_conv(C, C, rng, 0.5);
    }
    FeatureMap up(H, W, C);
    up.values = normals(up.size(), rng);
    const auto f = [&] { return dot(layers::residual_group(x, params).values, up.values); };
    const auto g = layers::residual_group_backward(x, params, up);
    t.compare(g.input.values, x.values, f, kLayerStep, s);
    for (std::size_t b = 0; b < blocks; ++b) {
      t.compare(g.blocks[b].first.kernels, params[b].first.kernels, f, kLayerStep, s);
      t.compare(g.blocks[b].first.bias, params[b].first.bias, f, kLayerStep, s);
      t.compare(g.blocks[b].second.kernels, params[b].second.kernels, f, kLayerStep, s);
      t.compare(g.blocks[b].second.bias, params[b].second.bias, f, kLayerStep, s);
    }
    t.next_instance();
  }
  return t.result();
}

GradientCheck check_attention(std::uint64_t seed, std::size_t instances) {
  Tracker t("attention_pool", kLayerTolerance);
  for (std::size_t i = 0; i < instances; ++i) {
    const std::uint64_t s = derive_seed(seed, i);
    Rng rng(s);
    const std::size_t H = pick(rng, 1, 4), W = pick(rng, 1, 4), C = pick(rng, 1, 4);
    FeatureMap x = random_map(H, W, C, rng);
    layers::Conv3x3Params p = random_conv(1, C, rng, 0.5);
    const auto up = normals(C, rng);
    const auto f = [&] { return dot(layers::attention_pool(x, p).pooled, up); };
    const auto g = layers::attention_pool_backward(x, p, up);
    t.compare(g.features.values, x.values, f, kLayerStep, s);
    t.compare(g.params.kernels, p.kernels, f, kLayerStep, s);
    t.compare(g.params.bias, p.bias, f, kLayerStep, s);
    t.next_instance();
  }
  return t.result();
}

GradientCheck check_l2(std::uint64_t seed, std::size_t instances) {
  Tracker t("l2_normalize", kLayerTolerance);
  for (std::size_t i = 0; i < instances; ++i) {
    const std::uint64_t s = derive_seed(seed, i);
    Rng rng(s);
    auto x = normals(pick(rng, 1, 8), rng);
    const auto up = normals(x.size(), rng);
    const auto f = [&] { return dot(layers::l2_normalize(x), up); };
    t.compare(layers::l2_normalize_backward(x, up), x, f, kLayerStep, s);
    t.next_instance();
  }
  return t.result();
}

GradientCheck check_average_pool(std::uint64_t seed, std::size_t instances) {
  Tracker t("spatial_average_pool", kLayerTolerance);
  for (std::size_t i = 0; i < instances; ++i) {
    const std::uint64_t s = derive_seed(seed, i);
    Rng rng(s);
    FeatureMap x = random_map(pick(rng, 1, 4), pick(rng, 1, 4), pick(rng, 1, 4), rng);
    const auto up = normals(x.channels, rng);
    const auto f = [&] { return dot(layers::spatial_average_pool(x), up); };
    t.compare(layers::spatial_average_pool_backward(x.height, x.width, up).values, x.values, f, kLayerStep, s);
    t.next_instance();
  }
  return t.result();
}

GradientCheck check_dense(std::uint64_t seed, std::size_t instances) {
  Tracker t("fully_connected", kLayerTolerance);
  for (std::size_t i = 0; i < instances; ++i) {
    const std::uint64_t s = derive_seed(seed, i);
    Rng rng(s);
    const std::size_t m = pick(rng, 1, 6), k = pick(rng, 1, 4);
    auto x = normals(m, rng);
    layers::DenseParams p(k, m);
    p.weights = normals(p.weights.size(), rng);
    p.bias = normals(k, rng);
    const auto up = normals(k, rng);
    const auto f = [&] { return dot(layers::fully_connected(x, p), up); };
    const auto g = layers::fully_connected_backward(x, p, up);
    t.compare(g.input, x, f, kLayerStep, s);
    t.compare(g.params.weights, p.weights, f, kLayerStep, s);
    t.compare(g.params.bias, p.bias, f, kLayerStep, s);
    t.next_instance();
  }
  return t.result();
}

GradientCheck check_cross_entropy(std::uint64_t seed, std::size_t instances) {
  Tracker t("softmax_cross_entropy", kLayerTolerance);
  for (std::size_t i = 0; i < instances; ++i) {
    const std::uint64_t s = derive_seed(seed, i);
    Rng rng(s);
    auto logits = normals(pick(rng, 2, 6), rng, 2.0);
    const std::size_t target = rng.uniform_index(logits.size());
    const auto f = [&] { return layers::softmax_cross_entropy(logits, target).loss; };
    const auto probs = layers::softmax_cross_entropy(logits, target).probabilities;
    t.compare(layers::softmax_cross_entropy_backward(probs, target), logits, f, kLayerStep, s);
    t.next_instance();
  }
  return t.result();
}

}  // namespace

SketchEquivalence check_sketch_equivalence(std::size_t n, std::size_t d, std::size_t trials, std::uint64_t seed,
                                           double tolerance) {
  SketchEquivalence r;
  r.trials = trials;
  const numerics::FftPlan plan(d);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::uint64_t s = derive_seed(seed, t);
    const auto pa = sketch::make_sketch_params(derive_seed(s, 0), n, d);
    const auto pb = sketch::make_sketch_params(derive_seed(s, 1), n, d);
    Rng rng(derive_seed(s, 2));
    const auto a = normals(n, rng);
    const auto b = normals(n, rng);
    const auto fast = sketch::tensor_sketch(a, b, pa, pb, plan);
    const auto slow = sketch::bilinear_oracle_sketch(a, b, pa, pb);
    for (std::size_t k = 0; k < d; ++k) {
      const double dev = std::abs(fast[k] - slow[k]);
      if (dev > r.max_deviation) {
        r.max_deviation = dev;
        r.worst_seed = s;
      }
    }
  }
  r.passed = r.max_deviation <= tolerance;
  return r;
}

Unbiasedness check_unbiasedness(std::size_t n, std::size_t d, std::size_t trials, std::uint64_t seed,
                                const CountSketchFn& fn) {
  require(trials >= 1, ErrorKind::InvalidArgument, "unbiasedness check needs at least one trial");
  const CountSketchFn sketch_fn = fn ? fn : CountSketchFn(&sketch::count_sketch);
  Rng rng(derive_seed(seed, 0));
  std::vector<double> x(n), y(n);
  for (auto& v : x) v = rng.uniform01();
  for (auto& v : y) v = rng.uniform01();

  Unbiasedness r;
  r.trials = trials;
  r.exact = dot(x, y);
  // Welford accumulation of the estimates.
  double mean = 0.0, m2 = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto p = sketch::make_sketch_params(derive_seed(seed, 1 + t), n, d);
    const double est = dot(sketch_fn(x, p), sketch_fn(y, p));
    const double delta = est - mean;
    mean += delta / static_cast<double>(t + 1);
    m2 += delta * (est - mean);
  }
  r.mean = mean;
  if (trials == 1) {
    r.passed = true;
    return r;
  }
  r.standard_error = std::sqrt(m2 / static_cast<double>(trials - 1) / static_cast<double>(trials));
  r.asserted = true;
  r.passed = std::abs(r.mean - r.exact) <= 3.0 * r.standard_error;
  return r;
}

double relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor) {
  require(analytic.size() == numeric.size(), ErrorKind::ShapeMismatch, "relative_error: length mismatch");
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
}

std::vector<double> numeric_gradient(std::span<double> x, const std::function<double()>& f, double step) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = f();
    x[i] = saved - step;
    const double down = f();
    x[i] = saved;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

GradientCheck check_tensor_sketch_gradient(std::uint64_t seed, std::size_t instances) {
  Tracker t("tensor_sketch", kSketchTolerance);
  for (std::size_t i = 0; i < instances; ++i) {
    const std::uint64_t s = derive_seed(seed, i);
    Rng rng(s);
    const std::size_t n1 = pick(rng, 1, 6), n2 = pick(rng, 1, 6), d = pick(rng, 1, 6);
    const auto pa = sketch::make_sketch_params(derive_seed(s, 1), n1, d);
    const auto pb = sketch::make_sketch_params(derive_seed(s, 2), n2, d);
    auto a = normals(n1, rng);
    auto b = normals(n2, rng);
    const auto up = normals(d, rng);
    const auto f = [&] { return dot(sketch::tensor_sketch(a, b, pa, pb), up); };
    const auto g = sketch::tensor_sketch_backward(a, b, pa, pb, up);
    t.compare(g.grad_a, a, f, kSketchStep, s);
    t.compare(g.grad_b, b, f, kSketchStep, s);
    t.next_instance();
  }
  return t.result();
}

GradientCheck check_model_gradient(std::uint64_t seed, std::size_t instances) {
  Tracker t("model", kLayerTolerance);
  model::ModelConfig config;
  config.height = 2;
  config.width = 2;
  config.alpha_channels = 3;
  config.beta_channels = 3;
  config.sketch_dim = 4;
  config.residual_blocks = 4;
  config.classes = 3;
  for (std::size_t i = 0; i < instances; ++i) {
    const std::uint64_t s = derive_seed(seed, i);
    Rng rng(s);
    model::ModelParams params = model::init_params(config, derive_seed(s, 1));
    // Nonzero biases so that every tensor's gradient path is exercised.
    model::for_each_tensor(params.weights, [&](model::TensorView v) {
      if (v.is_bias)
        for (auto& b : v.values) b = 0.1 * rng.normal();
    });
    const FeatureMap alpha = random_map(2, 2, 3, rng);
    const FeatureMap beta = random_map(2, 2, 3, rng);
    const std::size_t target = rng.uniform_index(config.classes);
    const auto f = [&] {
      return layers::softmax_cross_entropy(model::forward(alpha, beta, params).logits, target).loss;
    };
    const model::Gradient g = model::backward(alpha, beta, params, target);
    std::vector<model::ConstTensorView> analytic;
    model::for_each_tensor(g.weights, [&](model::ConstTensorView v) { analytic.push_back(std::move(v)); });
    std::size_t k = 0;
    model::for_each_tensor(params.weights, [&](model::TensorView v) {
      t.compare(analytic[k++].values, v.values, f, kLayerStep, s);
    });
    t.next_instance();
  }
  return t.result();
}

std::vector<GradientCheck> run_gradient_suite(std::uint64_t seed, std::size_t instances_per_layer) {
  std::vector<GradientCheck> out;
  out.push_back(check_conv(derive_seed(seed, 1), instances_per_layer));
  out.push_back(check_relu(derive_seed(seed, 2), instances_per_layer));
  out.push_back(check_residual(derive_seed(seed, 3), instances_per_layer, 1, "residual_block"));
  out.push_back(check_residual(derive_seed(seed, 4), instances_per_layer, 4, "residual_group"));
  out.push_back(check_attention(derive_seed(seed, 5), instances_per_layer));
  out.push_back(check_l2(derive_seed(seed, 6), instances_per_layer));
  out.push_back(check_average_pool(derive_seed(seed, 7), instances_per_layer));
  out.push_back(check_dense(derive_seed(seed, 8), instances_per_layer));
  out.push_back(check_cross_entropy(derive_seed(seed, 9), instances_per_layer));
  out.push_back(check_tensor_sketch_gradient(derive_seed(seed, 10), std::max<std::size_t>(50, instances_per_layer)));
  out.push_back(check_model_gradient(derive_seed(seed, 11), 3));
  return out;
}

}  // namespace coinnet::checks
