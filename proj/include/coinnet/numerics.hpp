#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

// Exact-length discrete Fourier transforms and circular convolution.
//
// Conventions: the forward transform is unnormalized,
//   X[k] = sum_i x[i] exp(-2 pi i ik / n),
// and the inverse carries the 1/n factor. Any length n >= 1 is supported:
// powers of two use an iterative radix-2 FFT, other lengths go through
// Bluestein's chirp-z reformulation on a padded power-of-two FFT.
namespace coinnet::numerics {

using Complex = std::complex<double>;
using RealVector = std::vector<double>;
using ComplexVector = std::vector<Complex>;

// Precomputed twiddles for one transform length. Immutable after
// construction, so a plan may be shared across threads.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n);

  std::size_t size() const noexcept { return n_; }

  // In-place unnormalized forward transform; data.size() must equal size().
  void forward(std::span<Complex> data) const;
  // In-place inverse transform including the 1/n factor.
  void inverse(std::span<Complex> data) const;

 private:
  struct Radix2 {
    std::size_t n = 0;
    std::vector<Complex> twiddles;  // exp(-2 pi i k / n), k < n/2
    std::vector<std::size_t> bit_reverse;
    void run(std::span<Complex> data) const;
  };

  std::size_t n_;
  bool power_of_two_;
  Radix2 radix2_;
  // Bluestein state, used when n is not a power of two.
  std::vector<Complex> chirp_;           // exp(-pi i k^2 / n), k < n
  std::vector<Complex> chirp_spectrum_;  // transform of the padded conj(chirp)
};

ComplexVector dft(std::span<const double> x);
ComplexVector dft(std::span<const double> x, const FftPlan& plan);

// Inverse of a conjugate-symmetric spectrum. Rejects spectra whose
// asymmetry |X[k] - conj(X[n-k])| exceeds 1e-8 * max(1, max_k |X[k]|).
RealVector idft(std::span<const Complex> spectrum);
RealVector idft(std::span<const Complex> spectrum, const FftPlan& plan);

// z[k] = sum_i a[i] b[(k - i) mod n], evaluated as idft(dft(a) * dft(b)).
RealVector circular_convolve(std::span<const double> a, std::span<const double> b);
RealVector circular_convolve(std::span<const double> a, std::span<const double> b,
                             const FftPlan& plan);

// z[k] = sum_i x[(k + i) mod n] y[i], evaluated as idft(dft(x) * conj(dft(y))).
// This is the adjoint of convolution with y.
RealVector circular_correlate(std::span<const double> x, std::span<const double> y);
RealVector circular_correlate(std::span<const double> x, std::span<const double> y,
                              const FftPlan& plan);

inline constexpr double kSymmetryTolerance = 1e-8;

}  // namespace coinnet::numerics
