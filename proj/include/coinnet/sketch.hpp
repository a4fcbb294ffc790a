#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "coinnet/numerics.hpp"

// Count Sketch projection and Tensor Sketch (compact bilinear pooling).
namespace coinnet::sketch {

using numerics::RealVector;

// One Count Sketch projection R^n -> R^d. The vectors are a pure function of
// (seed, n, d) and are never mutated after construction.
class SketchParams {
 public:
  SketchParams(std::uint64_t seed, std::size_t n, std::size_t d);

  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t input_dim() const noexcept { return signs_.size(); }
  std::size_t output_dim() const noexcept { return output_dim_; }
  std::span<const int> signs() const noexcept { return signs_; }
  std::span<const std::uint32_t> indices() const noexcept { return indices_; }

  // Builds params from explicit vectors (tests and hand-built examples).
  static SketchParams from_vectors(std::vector<int> signs, std::vector<std::uint32_t> indices, std::size_t d);

  friend bool operator==(const SketchParams&, const SketchParams&) = default;

 private:
  SketchParams() = default;
  std::uint64_t seed_ = 0;
  std::size_t output_dim_ = 0;
  std::vector<int> signs_;
  std::vector<std::uint32_t> indices_;
};

// Draws u uniformly from {-1,+1}^n and v uniformly from {0..d-1}^n, in that
// order, from Rng(seed).
SketchParams make_sketch_params(std::uint64_t seed, std::size_t n, std::size_t d);

// y[v[i]] += u[i] * x[i].
RealVector count_sketch(std::span<const double> x, const SketchParams& p);

// out[i] = u[i] * g[v[i]]; adjoint of count_sketch.
RealVector count_sketch_transpose(std::span<const double> g, const SketchParams& p);

// Circular convolution of the two count sketches, through the FFT.
RealVector tensor_sketch(std::span<const double> a, std::span<const double> b, const SketchParams& pa,
                         const SketchParams& pb);
RealVector tensor_sketch(std::span<const double> a, std::span<const double> b, const SketchParams& pa,
                         const SketchParams& pb, const numerics::FftPlan& plan);

// Reference: sketches vec(a (x) b) directly with the product hash
// (va[i] + vb[j]) mod d and sign ua[i] * ub[j]. Materializes the outer
// product, so instances above kOracleMaxProducts entries are refused.
RealVector bilinear_oracle_sketch(std::span<const double> a, std::span<const double> b, const SketchParams& pa,
                                  const SketchParams& pb);

inline constexpr std::size_t kOracleMaxProducts = 1'000'000;

struct TensorSketchGrad {
  RealVector grad_a;
  RealVector grad_b;
};

// Gradient of <tensor_sketch(a, b), upstream> with respect to a and b.
TensorSketchGrad tensor_sketch_backward(std::span<const double> a, std::span<const double> b,
                                        const SketchParams& pa, const SketchParams& pb,
                                        std::span<const double> upstream);
TensorSketchGrad tensor_sketch_backward(std::span<const double> a, std::span<const double> b,
                                        const SketchParams& pa, const SketchParams& pb,
                                        std::span<const double> upstream, const numerics::FftPlan& plan);

}  // namespace coinnet::sketch
