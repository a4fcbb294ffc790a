#include "coinnet/numerics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <string>

#include "coinnet/error.hpp"

namespace coinnet::numerics {

namespace {

Complex unit_root(std::size_t k, std::size_t n) {
  const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
  return {std::cos(angle), std::sin(angle)};
}

void require_finite(std::span<const double> x) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) {
      fail(ErrorKind::InvalidArgument,
           "non-finite input at index " + std::to_string(i) + " (value " + std::to_string(x[i]) + ")");
    }
  }
}

void require_finite(std::span<const Complex> x) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i].real()) || !std::isfinite(x[i].imag())) {
      fail(ErrorKind::InvalidArgument, "non-finite spectrum entry at index " + std::to_string(i));
    }
  }
}

void require_nonempty(std::size_t n) {
  require(n >= 1, ErrorKind::InvalidArgument, "transform length must be at least 1");
}

void require_plan(const FftPlan& plan, std::size_t n) {
  require(plan.size() == n, ErrorKind::ShapeMismatch,
          "FFT plan length " + std::to_string(plan.size()) + " does not match input length " +
              std::to_string(n));
}

ComplexVector to_complex(std::span<const double> x) {
  ComplexVector out(x.size());
  std::transform(x.begin(), x.end(), out.begin(), [](double v) { return Complex(v, 0.0); });
  return out;
}

RealVector real_part(const ComplexVector& z) {
  RealVector out(z.size());
  std::transform(z.begin(), z.end(), out.begin(), [](const Complex& c) { return c.real(); });
  return out;
}

}  // namespace

void FftPlan::Radix2::run(std::span<Complex> data) const {
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = bit_reverse[i];
    if (i < j) std::swap(data[i], data[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t stride = n / len;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const Complex t = twiddles[k * stride] * data[start + k + half];
        const Complex u = data[start + k];
        data[start + k] = u + t;
        data[start + k + half] = u - t;
      }
    }
  }
}

FftPlan::FftPlan(std::size_t n) : n_(n), power_of_two_(std::has_single_bit(n)) {
  require_nonempty(n);
  const std::size_t m = power_of_two_ ? n : std::bit_ceil(2 * n - 1);
  radix2_.n = m;
  radix2_.twiddles.resize(m / 2);
  for (std::size_t k = 0; k < m / 2; ++k) radix2_.twiddles[k] = unit_root(k, m);
  radix2_.bit_reverse.resize(m);
  const int bits = std::countr_zero(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t r = 0;
    for (int b = 0; b < bits; ++b) r |= ((i >> b) & 1U) << (bits - 1 - b);
    radix2_.bit_reverse[i] = r;
  }
  if (power_of_two_) return;

  // k^2 is reduced mod 2n before scaling so the angle stays small and exact.
  chirp_.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t k2 = (k * k) % (2 * n);
    const double angle = -std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n);
    chirp_[k] = {std::cos(angle), std::sin(angle)};
  }
  chirp_spectrum_.assign(m, Complex{});
  chirp_spectrum_[0] = std::conj(chirp_[0]);
  for (std::size_t k = 1; k < n; ++k) {
    chirp_spectrum_[k] = std::conj(chirp_[k]);
    chirp_spectrum_[m - k] = std::conj(chirp_[k]);
  }
  radix2_.run(chirp_spectrum_);
}

void FftPlan::forward(std::span<Complex> data) const {
  require_plan(*this, data.size());
  if (power_of_two_) {
    radix2_.run(data);
    return;
  }
  const std::size_t m = radix2_.n;
  std::vector<Complex> work(m, Complex{});
  for (std::size_t k = 0; k < n_; ++k) work[k] = data[k] * chirp_[k];
  radix2_.run(work);
  for (std::size_t k = 0; k < m; ++k) work[k] *= chirp_spectrum_[k];
  // Inverse of length m through the conjugation identity.
  for (auto& w : work) w = std::conj(w);
  radix2_.run(work);
  const double scale = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < n_; ++k) data[k] = std::conj(work[k]) * scale * chirp_[k];
}

void FftPlan::inverse(std::span<Complex> data) const {
  for (auto& z : data) z = std::conj(z);
  forward(data);
  const double scale = 1.0 / static_cast<double>(n_);
  for (auto& z : data) z = std::conj(z) * scale;
}

ComplexVector dft(std::span<const double> x) {
  require_nonempty(x.size());
  return dft(x, FftPlan(x.size()));
}

ComplexVector dft(std::span<const double> x, const FftPlan& plan) {
  require_nonempty(x.size());
  require_finite(x);
  ComplexVector out = to_complex(x);
  plan.forward(out);
  return out;
}

RealVector idft(std::span<const Complex> spectrum) {
  require_nonempty(spectrum.size());
  return idft(spectrum, FftPlan(spectrum.size()));
}

RealVector idft(std::span<const Complex> spectrum, const FftPlan& plan) {
  const std::size_t n = spectrum.size();
  require_nonempty(n);
  require_finite(spectrum);
  double scale = 1.0;
  for (const auto& z : spectrum) scale = std::max(scale, std::abs(z));
  for (std::size_t k = 0; k < n; ++k) {
    const Complex mirror = std::conj(spectrum[(n - k) % n]);
    const double gap = std::abs(spectrum[k] - mirror);
    if (gap > kSymmetryTolerance * scale) {
      fail(ErrorKind::InvalidArgument, "spectrum is not conjugate-symmetric at index " + std::to_string(k) +
                                           " (asymmetry " + std::to_string(gap) + ")");
    }
  }
  ComplexVector work(spectrum.begin(), spectrum.end());
  plan.inverse(work);
  return real_part(work);
}

RealVector circular_convolve(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::ShapeMismatch,
          "circular_convolve length mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  require_nonempty(a.size());
  return circular_convolve(a, b, FftPlan(a.size()));
}

RealVector circular_convolve(std::span<const double> a, std::span<const double> b, const FftPlan& plan) {
  require(a.size() == b.size(), ErrorKind::ShapeMismatch,
          "circular_convolve length mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  ComplexVector fa = dft(a, plan);
  const ComplexVector fb = dft(b, plan);
  for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= fb[k];
  plan.inverse(fa);
  return real_part(fa);
}

RealVector circular_correlate(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), ErrorKind::ShapeMismatch,
          "circular_correlate length mismatch: " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  require_nonempty(x.size());
  return circular_correlate(x, y, FftPlan(x.size()));
}

RealVector circular_correlate(std::span<const double> x, std::span<const double> y, const FftPlan& plan) {
  require(x.size() == y.size(), ErrorKind::ShapeMismatch,
          "circular_correlate length mismatch: " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  ComplexVector fx = dft(x, plan);
  const ComplexVector fy = dft(y, plan);
  for (std::size_t k = 0; k < fx.size(); ++k) fx[k] *= std::conj(fy[k]);
  plan.inverse(fx);
  return real_part(fx);
}

}  // namespace coinnet::numerics
