#pragma once

// Thin wrapper around FFTW3's complex 1-d transforms. Plans are created with
// FFTW_ESTIMATE (deterministic plan choice, no self-tuning) plus
// FFTW_UNALIGNED, cached per (length, direction), and guarded by a mutex;
// execution on distinct buffers is thread-safe.

#include <complex>
#include <vector>

namespace nirsfreq {

// Unnormalized standard-convention transforms:
//   forward : X[k] = sum_i x[i] e^{-2*pi*j*k*i/N}
//   inverse : x[i] = sum_k X[k] e^{+2*pi*j*k*i/N}   (no 1/N factor)
std::vector<std::complex<double>> fft_forward(const std::vector<std::complex<double>>& in);
std::vector<std::complex<double>> fft_inverse(const std::vector<std::complex<double>>& in);

// Convenience: forward transform of a real series.
std::vector<std::complex<double>> fft_forward_real(const std::vector<double>& in);

}  // namespace nirsfreq
