#include "nirsfreq/biostats.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "nirsfreq/common.hpp"

namespace nirsfreq {

namespace {

// Shared core; returns false (instead of throwing) on zero value variance.
bool point_biserial_impl(const std::vector<double>& values, const std::vector<int>& labels,
                         double* out) {
  if (values.size() != labels.size()) throw DataError("point_biserial: length mismatch");
  const size_t n = values.size();
  if (n < 2) throw DataError("point_biserial needs at least 2 subjects");
  double sum0 = 0.0, sum1 = 0.0;
  size_t n0 = 0, n1 = 0;
  for (size_t i = 0; i < n; ++i) {
    if (labels[i] == 0) {
      sum0 += values[i];
      ++n0;
    } else if (labels[i] == 1) {
      sum1 += values[i];
      ++n1;
    } else {
      throw DataError("point_biserial: labels must be 0 or 1");
    }
  }
  if (n0 == 0 || n1 == 0) throw DataError("point_biserial: both classes must be present");
  const double mean = (sum0 + sum1) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n));
  if (sd <= 0.0) return false;
  const double m0 = sum0 / static_cast<double>(n0);
  const double m1 = sum1 / static_cast<double>(n1);
  *out = (m0 - m1) / sd *
         std::sqrt(static_cast<double>(n0) * static_cast<double>(n1)) / static_cast<double>(n);
  return true;
}

}  // namespace

double point_biserial(const std::vector<double>& values, const std::vector<int>& labels) {
  double r = 0.0;
  if (!point_biserial_impl(values, labels, &r))
    throw NumericError("point_biserial: values have zero variance");
  return r;
}

double point_biserial_or_zero(const std::vector<double>& values, const std::vector<int>& labels) {
  double r = 0.0;
  if (!point_biserial_impl(values, labels, &r)) return 0.0;
  return r;
}

std::vector<double> screen_cells(const std::vector<std::vector<double>>& cells,
                                 const std::vector<int>& labels) {
  if (cells.size() != labels.size()) throw DataError("screen_cells: subject count mismatch");
  if (cells.empty()) throw DataError("screen_cells: no subjects");
  const size_t n_cells = cells[0].size();
  for (const auto& row : cells)
    if (row.size() != n_cells) throw DataError("screen_cells: ragged feature matrix");
  std::vector<double> r(n_cells, 0.0);
  std::vector<double> column(cells.size());
  for (size_t c = 0; c < n_cells; ++c) {
    for (size_t s = 0; s < cells.size(); ++s) column[s] = cells[s][c];
    r[c] = point_biserial_or_zero(column, labels);
  }
  return r;
}

std::vector<int> stratified_subsample(const std::vector<int>& labels, double proportion,
                                      std::uint64_t seed) {
  if (!(proportion > 0.0 && proportion <= 1.0))
    throw ConfigError("subsample proportion must lie in (0, 1]");
  std::vector<int> by_class[2];
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw DataError("stratified_subsample: labels must be 0 or 1");
    by_class[labels[i]].push_back(static_cast<int>(i));
  }
  if (by_class[0].empty() || by_class[1].empty())
    throw DataError("stratified_subsample: both classes must be present");
  std::vector<int> chosen;
  for (int cls = 0; cls < 2; ++cls) {
    auto& idx = by_class[cls];
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(cls)));
    std::shuffle(idx.begin(), idx.end(), rng);
    auto take = static_cast<size_t>(std::lround(proportion * static_cast<double>(idx.size())));
    take = std::max<size_t>(1, std::min(take, idx.size()));
    chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::vector<double> fam_init_weights(const std::vector<double>& r_map) {
  std::vector<double> w(r_map.size());
  for (size_t i = 0; i < r_map.size(); ++i) {
    if (!std::isfinite(r_map[i])) throw NumericError("fam_init_weights: non-finite r value");
    w[i] = std::fabs(r_map[i]);
  }
  return w;
}

}  // namespace nirsfreq
