#include "nirsfreq/spatial.hpp"

#include <cmath>
#include <complex>

#include "nirsfreq/common.hpp"
#include "nirsfreq/fft.hpp"
#include "nirsfreq/signal.hpp"

namespace nirsfreq {

double pearson(const std::vector<double>& x, const std::vector<double>& y, bool* degenerate) {
  if (x.size() != y.size()) throw DataError("pearson: length mismatch");
  const size_t n = x.size();
  if (n < 2) throw DataError("pearson needs at least 2 samples");
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double dx = x[i] - mx;
    double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// Welch coherence
// ---------------------------------------------------------------------------

namespace {

struct WelchGrid {
  int seg_len = 0;
  int step = 0;
  int n_segments = 0;
  std::vector<int> band_bins;   // bins with f_lo <= k*fs/L <= f_hi, k >= 1
  std::vector<double> window;   // Hann
};

WelchGrid make_grid(size_t n_samples, double fs, double f_lo, double f_hi,
                    const WelchParams& p) {
  if (p.segment_length < 8) throw ConfigError("welch segment_length must be >= 8");
  if (!(p.overlap >= 0.0 && p.overlap < 1.0))
    throw ConfigError("welch overlap must lie in [0, 1)");
  if (!(fs > 0.0)) throw ConfigError("sample rate must be positive");
  if (!(f_lo >= 0.0 && f_hi > f_lo)) throw ConfigError("invalid coherence band");
  WelchGrid g;
  g.seg_len = p.segment_length;
  g.step = std::max(1, static_cast<int>(std::lround(p.segment_length * (1.0 - p.overlap))));
  if (static_cast<int>(n_samples) < 2 * g.seg_len)
    throw DataError("coherence needs at least two segments (" +
                    std::to_string(2 * g.seg_len) + " samples), got " +
                    std::to_string(n_samples));
  g.n_segments = static_cast<int>((n_samples - static_cast<size_t>(g.seg_len)) /
                                  static_cast<size_t>(g.step)) + 1;
  for (int k = 1; k <= g.seg_len / 2; ++k) {
    double f = k * fs / g.seg_len;
    if (f >= f_lo && f <= f_hi) g.band_bins.push_back(k);
  }
  if (g.band_bins.empty())
    throw ConfigError("coherence band contains no frequency bins at this resolution");
  g.window.resize(static_cast<size_t>(g.seg_len));
  for (int i = 0; i < g.seg_len; ++i)
    g.window[static_cast<size_t>(i)] =
        0.5 * (1.0 - std::cos(2.0 * M_PI * i / (g.seg_len - 1)));
  return g;
}

// Mean-detrended, windowed segment spectra of one series, restricted to the
// band bins. Layout: spectra[segment][band_bin_index].
std::vector<std::vector<std::complex<double>>> segment_spectra(const std::vector<double>& x,
                                                               const WelchGrid& g) {
  std::vector<std::vector<std::complex<double>>> out(static_cast<size_t>(g.n_segments));
  std::vector<std::complex<double>> buf(static_cast<size_t>(g.seg_len));
  for (int s = 0; s < g.n_segments; ++s) {
    const int off = s * g.step;
    double mean = 0.0;
    for (int i = 0; i < g.seg_len; ++i) mean += x[static_cast<size_t>(off + i)];
    mean /= g.seg_len;
    for (int i = 0; i < g.seg_len; ++i)
      buf[static_cast<size_t>(i)] = {
          (x[static_cast<size_t>(off + i)] - mean) * g.window[static_cast<size_t>(i)], 0.0};
    auto spec = fft_forward(buf);
    auto& row = out[static_cast<size_t>(s)];
    row.reserve(g.band_bins.size());
    for (int k : g.band_bins) row.push_back(spec[static_cast<size_t>(k)]);
  }
  return out;
}

// Band-averaged magnitude-squared coherence from two sets of segment
// spectra. Spectra are averaged over segments before the ratio; a bin with
// zero auto power contributes 0 and raises the degenerate flag.
double msc_from_spectra(const std::vector<std::vector<std::complex<double>>>& sx,
                        const std::vector<std::vector<std::complex<double>>>& sy,
                        const WelchGrid& g, bool* degenerate) {
  double total = 0.0;
  for (size_t b = 0; b < g.band_bins.size(); ++b) {
    std::complex<double> sxy{0.0, 0.0};
    double sxx = 0.0, syy = 0.0;
    for (int s = 0; s < g.n_segments; ++s) {
      const auto& xs = sx[static_cast<size_t>(s)][b];
      const auto& ys = sy[static_cast<size_t>(s)][b];
      sxy += std::conj(xs) * ys;
      sxx += std::norm(xs);
      syy += std::norm(ys);
    }
    if (sxx <= 0.0 || syy <= 0.0) {
      if (degenerate) *degenerate = true;
      continue;  // contributes 0
    }
    total += std::norm(sxy) / (sxx * syy);
  }
  return total / static_cast<double>(g.band_bins.size());
}

}  // namespace

double band_coherence(const std::vector<double>& x, const std::vector<double>& y,
                      double sample_rate, double f_lo, double f_hi,
                      const WelchParams& params, bool* degenerate) {
  if (x.size() != y.size()) throw DataError("coherence: length mismatch");
  WelchGrid g = make_grid(x.size(), sample_rate, f_lo, f_hi, params);
  auto sx = segment_spectra(x, g);
  auto sy = segment_spectra(y, g);
  return msc_from_spectra(sx, sy, g, degenerate);
}

std::vector<double> correlation_matrix(const std::vector<std::vector<double>>& series) {
  const int n = static_cast<int>(series.size());
  if (n < 2) throw DataError("correlation_matrix needs at least 2 channels");
  std::vector<double> out(static_cast<size_t>(n) * static_cast<size_t>(n), 1.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double r = pearson(series[static_cast<size_t>(i)], series[static_cast<size_t>(j)]);
      out[static_cast<size_t>(i * n + j)] = r;
      out[static_cast<size_t>(j * n + i)] = r;
    }
  return out;
}

std::vector<double> coherence_matrix(const std::vector<std::vector<double>>& series,
                                     double sample_rate, double f_lo, double f_hi,
                                     const WelchParams& params) {
  const int n = static_cast<int>(series.size());
  if (n < 2) throw DataError("coherence_matrix needs at least 2 channels");
  for (const auto& s : series)
    if (s.size() != series[0].size()) throw DataError("coherence_matrix: ragged input");
  WelchGrid g = make_grid(series[0].size(), sample_rate, f_lo, f_hi, params);
  // Segment spectra are computed once per channel, then shared by all pairs.
  std::vector<std::vector<std::vector<std::complex<double>>>> spectra;
  spectra.reserve(static_cast<size_t>(n));
  for (const auto& s : series) spectra.push_back(segment_spectra(s, g));
  std::vector<double> out(static_cast<size_t>(n) * static_cast<size_t>(n), 1.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double c = msc_from_spectra(spectra[static_cast<size_t>(i)],
                                  spectra[static_cast<size_t>(j)], g, nullptr);
      out[static_cast<size_t>(i * n + j)] = c;
      out[static_cast<size_t>(j * n + i)] = c;
    }
  return out;
}

std::vector<double> mean_matrix(const std::vector<std::vector<double>>& matrices, int n) {
  if (matrices.empty()) throw DataError("mean_matrix: no matrices to average");
  const size_t len = static_cast<size_t>(n) * static_cast<size_t>(n);
  for (const auto& m : matrices)
    if (m.size() != len) throw DataError("mean_matrix: size mismatch");
  std::vector<double> out(len, 0.0);
  for (const auto& m : matrices)
    for (size_t i = 0; i < len; ++i) out[i] += m[i];
  for (size_t i = 0; i < len; ++i) out[i] /= static_cast<double>(matrices.size());
  return out;
}

SubjectSpatial subject_spatial_matrices(const SubjectRecord& record,
                                        const DatasetManifest& manifest,
                                        const WelchParams& params) {
  SubjectSpatial out;
  for (int p = 0; p < kNumPeriods; ++p) {
    for (int s = 0; s < kNumSubstances; ++s) {
      std::vector<std::vector<double>> slices(static_cast<size_t>(manifest.n_channels));
      for (int ch = 0; ch < manifest.n_channels; ++ch)
        slices[static_cast<size_t>(ch)] =
            slice_period(substance_series(record, static_cast<Substance>(s), ch), manifest, p);
      out.corr[static_cast<size_t>(p)][static_cast<size_t>(s)] = correlation_matrix(slices);
      out.cohe[static_cast<size_t>(p)][static_cast<size_t>(s)] =
          coherence_matrix(slices, manifest.sample_rate, 0.01, 0.1, params);
    }
  }
  return out;
}

std::vector<SpatialPrior> priors_from_subject_matrices(
    const std::vector<const SubjectSpatial*>& subjects, int n_channels) {
  if (subjects.empty()) throw DataError("build_priors: empty training set");
  const size_t len = static_cast<size_t>(n_channels) * static_cast<size_t>(n_channels);
  std::vector<SpatialPrior> priors;
  priors.reserve(kNumPeriods * kNumSubstances);
  for (int p = 0; p < kNumPeriods; ++p) {
    for (int s = 0; s < kNumSubstances; ++s) {
      SpatialPrior prior;
      prior.period = p;
      prior.substance = s;
      prior.n_subjects_averaged = static_cast<int>(subjects.size());
      prior.corr.assign(len, 0.0);
      prior.cohe.assign(len, 0.0);
      for (const SubjectSpatial* subj : subjects) {
        const auto& c = subj->corr[static_cast<size_t>(p)][static_cast<size_t>(s)];
        const auto& h = subj->cohe[static_cast<size_t>(p)][static_cast<size_t>(s)];
        if (c.size() != len || h.size() != len)
          throw DataError("build_priors: matrix size mismatch");
        for (size_t i = 0; i < len; ++i) {
          prior.corr[i] += c[i];
          prior.cohe[i] += h[i];
        }
      }
      for (size_t i = 0; i < len; ++i) {
        prior.corr[i] /= static_cast<double>(subjects.size());
        prior.cohe[i] /= static_cast<double>(subjects.size());
      }
      priors.push_back(std::move(prior));
    }
  }
  return priors;
}

std::vector<SpatialPrior> build_priors(const std::vector<const SubjectRecord*>& training,
                                       const DatasetManifest& manifest,
                                       const WelchParams& params) {
  if (training.empty()) throw DataError("build_priors: empty training set");
  std::vector<SubjectSpatial> per_subject(training.size());
  for (size_t i = 0; i < training.size(); ++i)
    per_subject[i] = subject_spatial_matrices(*training[i], manifest, params);
  std::vector<const SubjectSpatial*> ptrs;
  ptrs.reserve(per_subject.size());
  for (const auto& s : per_subject) ptrs.push_back(&s);
  return priors_from_subject_matrices(ptrs, manifest.n_channels);
}

NormalizedAdjacency normalize_adjacency(const std::vector<double>& e, int n) {
  if (n < 1 || e.size() != static_cast<size_t>(n) * static_cast<size_t>(n))
    throw DataError("normalize_adjacency: bad matrix size");
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (std::fabs(e[static_cast<size_t>(i * n + j)] - e[static_cast<size_t>(j * n + i)]) > 1e-9)
        throw DataError("normalize_adjacency: input matrix is not symmetric");
  NormalizedAdjacency a;
  a.n = n;
  a.degrees.assign(static_cast<size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    double d = 0.0;
    for (int j = 0; j < n; ++j) d += std::fabs(e[static_cast<size_t>(i * n + j)]);
    if (!(d > 0.0))
      throw NumericError("normalize_adjacency: node " + std::to_string(i) +
                         " has zero total weight");
    a.degrees[static_cast<size_t>(i)] = d;
  }
  a.values.resize(e.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      a.values[static_cast<size_t>(i * n + j)] =
          std::fabs(e[static_cast<size_t>(i * n + j)]) /
          std::sqrt(a.degrees[static_cast<size_t>(i)] * a.degrees[static_cast<size_t>(j)]);
  return a;
}

}  // namespace nirsfreq
