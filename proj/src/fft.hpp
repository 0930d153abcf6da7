#pragma once

#include <complex>
#include <cstddef>
#include <span>

namespace bscat::detail {

using cplx = std::complex<double>;

// Unnormalized forward / inverse 2D DFT of an n x n row-major array, in place.
// Plans are cached per size and shared across threads.
void fft2(std::span<cplx> data, std::size_t n);
void ifft2(std::span<cplx> data, std::size_t n);

}  // namespace bscat::detail
