#pragma once

#include <complex>
#include <vector>

namespace mrl {

/// In-place radix-2 FFT (length must be a power of two). Inverse applies the
/// conjugate transform and divides by the length.
void fft_pow2(std::vector<std::complex<double>>& a, bool inverse = false);

std::size_t next_pow2(std::size_t n);

}  // namespace mrl
