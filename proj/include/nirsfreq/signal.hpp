#pragma once

// Per-channel signal processing: standardization, the discrete Fourier
// spectrum in the sign convention used throughout the feature pipeline,
// top-k spectral peak extraction, sparse reconstruction, and the
// time-domain statistics block.

#include <array>
#include <complex>
#include <vector>

#include "nirsfreq/dataset.hpp"

namespace nirsfreq {

// ---------------------------------------------------------------------------
// Standardization: (x - mean) / s with the sample (n-1) standard deviation.
// A constant series cannot be standardized; it maps to all zeros with
// constant_input set instead of dividing by zero.
// ---------------------------------------------------------------------------

struct NormalizeResult {
  std::vector<double> values;
  bool constant_input = false;
};

NormalizeResult normalize_series(const std::vector<double>& x);

// Extract one period's samples from a full-length series.
std::vector<double> slice_period(const std::vector<double>& series,
                                 const DatasetManifest& manifest, int period);

// ---------------------------------------------------------------------------
// Spectrum. Coefficients follow the convention
//   T[k] = sum_i x[i] cos(2 pi k i / L) + j * sum_i x[i] sin(2 pi k i / L),
// i.e. the complex conjugate of the standard e^{-j...} DFT. Amplitudes are
// unaffected by the convention; phases are arg(T[k]) in (-pi, pi].
// ---------------------------------------------------------------------------

struct Spectrum {
  std::vector<std::complex<double>> coeff;  // all L bins
  std::vector<double> amplitude;            // |coeff[k]|
  std::vector<double> phase;                // arg(coeff[k]) in (-pi, pi]
  int length() const { return static_cast<int>(coeff.size()); }
};

Spectrum dft(const std::vector<double>& x);

// ---------------------------------------------------------------------------
// Top-k spectral peaks over the non-redundant half spectrum
// (bins 0..floor(L/2)), ordered by descending amplitude; equal amplitudes
// break toward the lower bin index.
// ---------------------------------------------------------------------------

struct Biomarker {
  std::vector<int> bins;
  std::vector<double> amplitude;
  std::vector<double> phase;
  int k() const { return static_cast<int>(bins.size()); }
};

Biomarker top_k_biomarker(const Spectrum& spectrum, int k);

// Inverse reconstruction from the retained peaks:
//   x[i] = sum_b w_b * (A_b / L) * cos(2 pi b i / L - phi_b),
// w_b = 1 for the DC (and Nyquist, even L) bin and 2 otherwise. With all
// floor(L/2)+1 bins retained this inverts dft() exactly.
std::vector<double> idft_reconstruct(const Biomarker& marker, int length);

// ---------------------------------------------------------------------------
// Time-domain statistics block: six statistics per channel computed on the
// standardized series, then z-scored per statistic across channels
// (population moments). A statistic with cross-channel spread below 1e-12
// (e.g. mean and std after per-series standardization) carries no contrast;
// its column is zeroed and flagged.
// ---------------------------------------------------------------------------

constexpr int kNumOtfStats = 6;
constexpr std::array<const char*, kNumOtfStats> kOtfStatNames{
    "mean", "std", "min", "max", "kurtosis", "skewness"};

// Raw per-series values: mean, sample std, min, max, excess kurtosis,
// skewness (the last two from population central moments).
std::array<double, kNumOtfStats> series_stats(const std::vector<double>& x);

struct OtfFeatures {
  std::vector<std::array<double, kNumOtfStats>> values;  // [channel][stat]
  std::array<bool, kNumOtfStats> degenerate{};           // column zeroed
};

OtfFeatures otf_features(const std::vector<std::vector<double>>& channel_series);

}  // namespace nirsfreq
