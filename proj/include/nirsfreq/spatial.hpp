#pragma once

// Channel-space structure: pairwise Pearson correlation, Welch
// magnitude-squared coherence restricted to a frequency band, cohort-mean
// connectivity priors, and symmetric degree normalization of the resulting
// adjacency matrices.
//
// Both statistics are invariant to positive affine rescaling of the raw
// series (coherence via per-segment mean removal before windowing), so they
// can be computed on raw period slices.

#include <array>
#include <vector>

#include "nirsfreq/dataset.hpp"

namespace nirsfreq {

// Pearson correlation coefficient. Throws on length mismatch or fewer than
// two samples; a constant input carries no correlation structure and yields
// 0 with *degenerate set (the matrix builders force unit diagonals).
double pearson(const std::vector<double>& x, const std::vector<double>& y,
               bool* degenerate = nullptr);

struct WelchParams {
  int segment_length = 256;
  double overlap = 0.5;  // fraction of segment_length shared by neighbors
};

// Magnitude-squared coherence |Sxy|^2 / (Sxx * Syy): segments are mean-
// detrended, Hann-windowed, transformed; cross/auto spectra are averaged
// over segments first; the per-bin coherence is then averaged over the bins
// whose frequency lies in [f_lo, f_hi] (DC excluded). Needs >= 2 segments.
// A bin with zero auto-spectral power contributes 0 and sets *degenerate.
double band_coherence(const std::vector<double>& x, const std::vector<double>& y,
                      double sample_rate, double f_lo = 0.01, double f_hi = 0.1,
                      const WelchParams& params = {}, bool* degenerate = nullptr);

// Pairwise matrices over channels, row-major n x n, unit diagonal forced.
std::vector<double> correlation_matrix(const std::vector<std::vector<double>>& channel_series);
std::vector<double> coherence_matrix(const std::vector<std::vector<double>>& channel_series,
                                     double sample_rate, double f_lo = 0.01, double f_hi = 0.1,
                                     const WelchParams& params = {});

// Entrywise mean of same-sized matrices (the prior over a training cohort).
std::vector<double> mean_matrix(const std::vector<std::vector<double>>& matrices, int n);

// Per-subject connectivity matrices for every (period, substance) pair.
struct SubjectSpatial {
  // [period][substance], each row-major n_channels x n_channels
  std::array<std::array<std::vector<double>, kNumSubstances>, kNumPeriods> corr;
  std::array<std::array<std::vector<double>, kNumSubstances>, kNumPeriods> cohe;
};

SubjectSpatial subject_spatial_matrices(const SubjectRecord& record,
                                        const DatasetManifest& manifest,
                                        const WelchParams& params = {});

// Connectivity prior for one (period, substance): the entrywise mean of the
// per-subject matrices over the training cohort only.
struct SpatialPrior {
  int period = 0;
  int substance = 0;
  std::vector<double> corr;
  std::vector<double> cohe;
  int n_subjects_averaged = 0;
};

// All 9 priors (period-major, then substance). The caller passes training
// subjects only; averaging order is the given subject order (bit-stable).
std::vector<SpatialPrior> build_priors(const std::vector<const SubjectRecord*>& training,
                                       const DatasetManifest& manifest,
                                       const WelchParams& params = {});

// Same, from precomputed per-subject matrices (used by the CV harness so
// each subject's matrices are computed once across folds).
std::vector<SpatialPrior> priors_from_subject_matrices(
    const std::vector<const SubjectSpatial*>& subjects, int n_channels);

// Symmetric normalization A_hat = D^{-1/2} |E| D^{-1/2} with
// d_i = sum_j |e_ij|. Requires a symmetric input; throws if any node has
// zero total weight (impossible for unit-diagonal priors).
struct NormalizedAdjacency {
  std::vector<double> values;   // row-major n x n
  std::vector<double> degrees;  // d_i
  int n = 0;
};

NormalizedAdjacency normalize_adjacency(const std::vector<double>& e, int n);

}  // namespace nirsfreq
