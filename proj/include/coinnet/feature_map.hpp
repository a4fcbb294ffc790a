#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace coinnet {

// H x W x C grid of activations, row-major with channels innermost.
struct FeatureMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> values;

  FeatureMap() = default;
  FeatureMap(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), values(h * w * c, fill) {}

  std::size_t size() const noexcept { return values.size(); }
  std::size_t positions() const noexcept { return height * width; }

  std::size_t offset(std::size_t h, std::size_t w, std::size_t c = 0) const noexcept {
    return (h * width + w) * channels + c;
  }
  double& at(std::size_t h, std::size_t w, std::size_t c) { return values[offset(h, w, c)]; }
  double at(std::size_t h, std::size_t w, std::size_t c) const { return values[offset(h, w, c)]; }

  // Channel vector at one grid location.
  std::span<double> pixel(std::size_t h, std::size_t w) { return {values.data() + offset(h, w), channels}; }
  std::span<const double> pixel(std::size_t h, std::size_t w) const {
    return {values.data() + offset(h, w), channels};
  }

  bool same_shape(const FeatureMap& other) const noexcept {
    return height == other.height && width == other.width && channels == other.channels;
  }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

}  // namespace coinnet
