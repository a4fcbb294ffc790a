#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "coinnet/sketch.hpp"

// Numeric self-check suites: Tensor Sketch oracle equivalence, Count Sketch
// unbiasedness and finite-difference gradient checks for every layer and the
// full model. Shared by the CLI and the acceptance tests.
namespace coinnet::checks {

struct SketchEquivalence {
  std::size_t trials = 0;
  double max_deviation = 0.0;
  std::uint64_t worst_seed = 0;
  bool passed = false;
};

// Random (a, b) pairs of length n through tensor_sketch and the brute-force
// outer-product oracle; passes when every element agrees within tolerance.
SketchEquivalence check_sketch_equivalence(std::size_t n, std::size_t d, std::size_t trials, std::uint64_t seed,
                                           double tolerance = 1e-8);

using CountSketchFn = std::function<sketch::RealVector(std::span<const double>, const sketch::SketchParams&)>;

struct Unbiasedness {
  std::size_t trials = 0;
  double exact = 0.0;           // <x, y>
  double mean = 0.0;            // mean of <sketch(x), sketch(y)> over projections
  double standard_error = 0.0;  // sample std / sqrt(trials)
  bool asserted = false;        // false for a single trial
  bool passed = false;
};

// Fixed x, y with entries in [0, 1); `trials` independent projections. Passes
// when |mean - exact| <= 3 standard errors. The sketch function can be
// replaced to confirm the suite catches a broken projection.
Unbiasedness check_unbiasedness(std::size_t n, std::size_t d, std::size_t trials, std::uint64_t seed,
                                const CountSketchFn& fn = {});

struct GradientCheck {
  std::string name;
  std::size_t instances = 0;
  double max_relative_error = 0.0;
  std::uint64_t worst_seed = 0;
  double tolerance = 0.0;
  bool passed = false;
};

// ||analytic - numeric|| / max(||analytic||, ||numeric||, floor) over one
// gradient tensor. The floor keeps tensors whose exact gradient is zero (an
// attention score bias under softmax, for instance) from dividing rounding
// noise by rounding noise.
double relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor = 1e-6);

// Central-difference derivative of f with respect to each entry of x.
std::vector<double> numeric_gradient(std::span<double> x, const std::function<double()>& f, double step);

// Every layer's backward plus the tiny full-model backward.
std::vector<GradientCheck> run_gradient_suite(std::uint64_t seed, std::size_t instances_per_layer = 20);

GradientCheck check_tensor_sketch_gradient(std::uint64_t seed, std::size_t instances = 50);
GradientCheck check_model_gradient(std::uint64_t seed, std::size_t instances = 3);

}  // namespace coinnet::checks
