#pragma once

#include <Eigen/Dense>

#include <complex>
#include <map>
#include <mutex>
#include <stdexcept>
#include <vector>

namespace prach {

using VecXc = Eigen::VectorXcd;

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

namespace detail {

// Cached unnormalized DFT matrix, W(k, n) = exp(-2*pi*i*k*n/N).
inline const Eigen::MatrixXcd& dft_matrix_cached(Eigen::Index n) {
  static std::map<Eigen::Index, Eigen::MatrixXcd> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  Eigen::MatrixXcd w(n, n);
  for (Eigen::Index k = 0; k < n; ++k)
    for (Eigen::Index m = 0; m < n; ++m) {
      // reduce k*m mod n first so the phase argument stays small
      const long long r = (static_cast<long long>(k) * m) % n;
      w(k, m) = std::polar(1.0, -kTwoPi * static_cast<double>(r) / static_cast<double>(n));
    }
  return cache.emplace(n, std::move(w)).first->second;
}

inline const std::vector<std::complex<double>>& twiddles_cached(Eigen::Index n) {
  static std::map<Eigen::Index, std::vector<std::complex<double>>> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<std::complex<double>> w(static_cast<std::size_t>(n) / 2);
  for (std::size_t j = 0; j < w.size(); ++j)
    w[j] = std::polar(1.0, -kTwoPi * static_cast<double>(j) / static_cast<double>(n));
  return cache.emplace(n, std::move(w)).first->second;
}

}  // namespace detail

/// Unnormalized forward DFT. Direct matrix product; meant for short
/// (including prime) lengths where O(n^2) is negligible.
inline VecXc dft(const VecXc& x) {
  return detail::dft_matrix_cached(x.size()) * x;
}

/// Inverse DFT with 1/n scaling; exact inverse of dft().
inline VecXc idft(const VecXc& x) {
  const Eigen::Index n = x.size();
  return (detail::dft_matrix_cached(n).adjoint() * x) / static_cast<double>(n);
}

/// Evaluates the inverse-transform magnitude sum of `x` at a real-valued
/// position rho: |(1/n) sum_k x(k) exp(+2*pi*i*k*rho/n)| without the 1/n.
/// Used for sub-bin peak localization.
inline double dirichlet_mag_at(const VecXc& x, double rho) {
  const Eigen::Index n = x.size();
  const std::complex<double> step = std::polar(1.0, kTwoPi * rho / static_cast<double>(n));
  std::complex<double> w(1.0, 0.0);
  std::complex<double> acc(0.0, 0.0);
  for (Eigen::Index k = 0; k < n; ++k) {
    acc += x[k] * w;
    w *= step;
  }
  return std::abs(acc);
}

/// In-place radix-2 FFT for power-of-two lengths. Forward is unnormalized;
/// the inverse scales by 1/n, so ifft(fft(x)) == x.
inline void fft_pow2_inplace(VecXc& x, bool inverse) {
  const Eigen::Index n = x.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft_pow2: length must be a power of two");
  // bit-reversal permutation
  for (Eigen::Index i = 1, j = 0; i < n; ++i) {
    Eigen::Index bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  const auto& w = detail::twiddles_cached(n);
  for (Eigen::Index len = 2; len <= n; len <<= 1) {
    const Eigen::Index stride = n / len;
    for (Eigen::Index i = 0; i < n; i += len) {
      for (Eigen::Index j = 0; j < len / 2; ++j) {
        std::complex<double> tw = w[static_cast<std::size_t>(j * stride)];
        if (inverse) tw = std::conj(tw);
        const std::complex<double> u = x[i + j];
        const std::complex<double> v = x[i + j + len / 2] * tw;
        x[i + j] = u + v;
        x[i + j + len / 2] = u - v;
      }
    }
  }
  if (inverse) x /= static_cast<double>(n);
}

inline VecXc fft_pow2(VecXc x) {
  fft_pow2_inplace(x, false);
  return x;
}

inline VecXc ifft_pow2(VecXc x) {
  fft_pow2_inplace(x, true);
  return x;
}

}  // namespace prach
