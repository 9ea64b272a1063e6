#pragma once

// Label-association statistics used for feature screening and for seeding
// the attention weights: the point-biserial coefficient between a feature
// column and the binary diagnosis, stratified subject subsampling, and the
// |r| map that initializes the frequency-attention weights.

#include <cstdint>
#include <vector>

namespace nirsfreq {

// Point-biserial correlation with the group convention
//   r = (mean_control - mean_patient) / sd_pop * sqrt(n0 * n1) / (n0 + n1)
// where labels are 0 = control, 1 = patient and sd_pop is the population
// standard deviation of all values. Algebraically identical to the Pearson
// correlation between the values and the control indicator (1 - label).
// Throws if either class is absent or the values have zero variance.
double point_biserial(const std::vector<double>& values, const std::vector<int>& labels);

// Screening variant: a zero-variance feature column carries no signal and
// maps to r = 0 instead of throwing. Single-class input still throws.
double point_biserial_or_zero(const std::vector<double>& values, const std::vector<int>& labels);

// Per-column r over a subjects-by-cells value matrix (cells[s][c] is feature
// column c of subject s). Zero-variance columns yield 0.
std::vector<double> screen_cells(const std::vector<std::vector<double>>& cells,
                                 const std::vector<int>& labels);

// Stratified subject subsample: shuffle each class independently (seeded),
// keep round(proportion * class size) of each (at least one), and return the
// chosen indices in ascending order. proportion 1.0 returns every subject
// regardless of seed.
std::vector<int> stratified_subsample(const std::vector<int>& labels, double proportion,
                                      std::uint64_t seed);

// Attention initialization: elementwise |r|; screening zeros stay zero.
std::vector<double> fam_init_weights(const std::vector<double>& r_map);

}  // namespace nirsfreq
