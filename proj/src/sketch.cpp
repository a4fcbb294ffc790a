#include "coinnet/sketch.hpp"

#include <string>

#include "coinnet/error.hpp"
#include "coinnet/rng.hpp"

namespace coinnet::sketch {

namespace {

void require_input(std::span<const double> x, const SketchParams& p, const char* what) {
  require(x.size() == p.input_dim(), ErrorKind::ShapeMismatch,
          std::string(what) + ": input length " + std::to_string(x.size()) + " does not match sketch input dim " +
              std::to_string(p.input_dim()));
}

void require_same_output(const SketchParams& pa, const SketchParams& pb) {
  require(pa.output_dim() == pb.output_dim(), ErrorKind::ShapeMismatch,
          "sketch output dims differ: " + std::to_string(pa.output_dim()) + " vs " +
              std::to_string(pb.output_dim()));
}

}  // namespace

SketchParams::SketchParams(std::uint64_t seed, std::size_t n, std::size_t d) : seed_(seed), output_dim_(d) {
  require(n >= 1, ErrorKind::InvalidArgument, "sketch input dim n must be positive");
  require(d >= 1, ErrorKind::InvalidArgument, "sketch output dim d must be positive");
  Rng rng(seed);
  signs_.resize(n);
  indices_.resize(n);
  for (auto& s : signs_) s = rng.sign();
  for (auto& v : indices_) v = static_cast<std::uint32_t>(rng.uniform_index(d));
}

SketchParams SketchParams::from_vectors(std::vector<int> signs, std::vector<std::uint32_t> indices, std::size_t d) {
  require(!signs.empty() && signs.size() == indices.size(), ErrorKind::ShapeMismatch,
          "sign and index vectors must be nonempty and of equal length");
  require(d >= 1, ErrorKind::InvalidArgument, "sketch output dim d must be positive");
  for (std::size_t i = 0; i < signs.size(); ++i) {
    require(signs[i] == 1 || signs[i] == -1, ErrorKind::InvalidArgument,
            "sign at index " + std::to_string(i) + " is not +1/-1");
    require(indices[i] < d, ErrorKind::InvalidArgument,
            "index at position " + std::to_string(i) + " is out of range for d=" + std::to_string(d));
  }
  SketchParams p;
  p.output_dim_ = d;
  p.signs_ = std::move(signs);
  p.indices_ = std::move(indices);
  return p;
}

SketchParams make_sketch_params(std::uint64_t seed, std::size_t n, std::size_t d) { return {seed, n, d}; }

RealVector count_sketch(std::span<const double> x, const SketchParams& p) {
  require_input(x, p, "count_sketch");
  RealVector y(p.output_dim(), 0.0);
  const auto u = p.signs();
  const auto v = p.indices();
  for (std::size_t i = 0; i < x.size(); ++i) y[v[i]] += u[i] * x[i];
  return y;
}

RealVector count_sketch_transpose(std::span<const double> g, const SketchParams& p) {
  require(g.size() == p.output_dim(), ErrorKind::ShapeMismatch,
          "count_sketch_transpose: upstream length " + std::to_string(g.size()) + " does not match d=" +
              std::to_string(p.output_dim()));
  RealVector out(p.input_dim());
  const auto u = p.signs();
  const auto v = p.indices();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = u[i] * g[v[i]];
  return out;
}

RealVector tensor_sketch(std::span<const double> a, std::span<const double> b, const SketchParams& pa,
                         const SketchParams& pb) {
  require_same_output(pa, pb);
  return tensor_sketch(a, b, pa, pb, numerics::FftPlan(pa.output_dim()));
}

RealVector tensor_sketch(std::span<const double> a, std::span<const double> b, const SketchParams& pa,
                         const SketchParams& pb, const numerics::FftPlan& plan) {
  require_same_output(pa, pb);
  return numerics::circular_convolve(count_sketch(a, pa), count_sketch(b, pb), plan);
}

RealVector bilinear_oracle_sketch(std::span<const double> a, std::span<const double> b, const SketchParams& pa,
                                  const SketchParams& pb) {
  require_same_output(pa, pb);
  require_input(a, pa, "bilinear_oracle_sketch");
  require_input(b, pb, "bilinear_oracle_sketch");
  require(a.size() * b.size() <= kOracleMaxProducts, ErrorKind::InvalidArgument,
          "bilinear_oracle_sketch: " + std::to_string(a.size()) + "x" + std::to_string(b.size()) +
              " outer product exceeds the oracle size guard");
  const std::size_t d = pa.output_dim();
  // vec(a (x) b) materialized in row-major order, then sketched entry by entry.
  std::vector<double> outer(a.size() * b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) outer[i * b.size() + j] = a[i] * b[j];
  RealVector y(d, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      const std::size_t bucket = (pa.indices()[i] + pb.indices()[j]) % d;
      const int sign = pa.signs()[i] * pb.signs()[j];
      y[bucket] += sign * outer[i * b.size() + j];
    }
  }
  return y;
}

TensorSketchGrad tensor_sketch_backward(std::span<const double> a, std::span<const double> b,
                                        const SketchParams& pa, const SketchParams& pb,
                                        std::span<const double> upstream) {
  require_same_output(pa, pb);
  return tensor_sketch_backward(a, b, pa, pb, upstream, numerics::FftPlan(pa.output_dim()));
}

TensorSketchGrad tensor_sketch_backward(std::span<const double> a, std::span<const double> b,
                                        const SketchParams& pa, const SketchParams& pb,
                                        std::span<const double> upstream, const numerics::FftPlan& plan) {
  require_same_output(pa, pb);
  require(upstream.size() == pa.output_dim(), ErrorKind::ShapeMismatch,
          "tensor_sketch_backward: upstream length " + std::to_string(upstream.size()) + " does not match d=" +
              std::to_string(pa.output_dim()));
  const RealVector sa = count_sketch(a, pa);
  const RealVector sb = count_sketch(b, pb);
  TensorSketchGrad g;
  g.grad_a = count_sketch_transpose(numerics::circular_correlate(upstream, sb, plan), pa);
  g.grad_b = count_sketch_transpose(numerics::circular_correlate(upstream, sa, plan), pb);
  return g;
}

}  // namespace coinnet::sketch
