#include "nirsfreq/signal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nirsfreq/common.hpp"
#include "nirsfreq/fft.hpp"

namespace nirsfreq {

namespace {
constexpr double kConstantTol = 1e-12;
}

NormalizeResult normalize_series(const std::vector<double>& x) {
  const size_t n = x.size();
  if (n < 2) throw DataError("normalize_series needs at least 2 samples");
  double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  double sd = std::sqrt(ss / static_cast<double>(n - 1));
  NormalizeResult res;
  res.values.resize(n);
  if (sd < kConstantTol) {
    res.constant_input = true;  // values stay zero
    return res;
  }
  for (size_t i = 0; i < n; ++i) res.values[i] = (x[i] - mean) / sd;
  return res;
}

std::vector<double> slice_period(const std::vector<double>& series,
                                 const DatasetManifest& manifest, int period) {
  if (static_cast<int>(series.size()) != manifest.total_samples())
    throw DataError("series length " + std::to_string(series.size()) +
                    " does not match manifest total of " +
                    std::to_string(manifest.total_samples()));
  PeriodSlice s = period_slice(manifest, period);
  return std::vector<double>(series.begin() + s.begin, series.begin() + s.end);
}

Spectrum dft(const std::vector<double>& x) {
  if (x.size() < 2) throw DataError("dft needs at least 2 samples");
  auto std_coeff = fft_forward_real(x);
  Spectrum s;
  const size_t L = x.size();
  s.coeff.resize(L);
  s.amplitude.resize(L);
  s.phase.resize(L);
  for (size_t k = 0; k < L; ++k) {
    // Conjugate of the standard transform: sin term enters with +j.
    s.coeff[k] = std::conj(std_coeff[k]);
    s.amplitude[k] = std::abs(s.coeff[k]);
    double ph = std::atan2(s.coeff[k].imag(), s.coeff[k].real());
    if (ph <= -M_PI) ph = M_PI;  // keep phases in (-pi, pi]
    s.phase[k] = ph;
  }
  return s;
}

Biomarker top_k_biomarker(const Spectrum& spectrum, int k) {
  const int L = spectrum.length();
  if (L < 2) throw DataError("spectrum too short");
  const int half = L / 2 + 1;  // bins 0..floor(L/2)
  if (k < 1 || k > half)
    throw ConfigError("k must lie in [1, " + std::to_string(half) + "], got " +
                      std::to_string(k));
  std::vector<int> order(static_cast<size_t>(half));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    double aa = spectrum.amplitude[static_cast<size_t>(a)];
    double ab = spectrum.amplitude[static_cast<size_t>(b)];
    if (aa != ab) return aa > ab;
    return a < b;  // ties break toward the lower bin
  });
  Biomarker m;
  m.bins.resize(static_cast<size_t>(k));
  m.amplitude.resize(static_cast<size_t>(k));
  m.phase.resize(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    int b = order[static_cast<size_t>(i)];
    m.bins[static_cast<size_t>(i)] = b;
    m.amplitude[static_cast<size_t>(i)] = spectrum.amplitude[static_cast<size_t>(b)];
    m.phase[static_cast<size_t>(i)] = spectrum.phase[static_cast<size_t>(b)];
  }
  return m;
}

std::vector<double> idft_reconstruct(const Biomarker& marker, int length) {
  if (length < 2) throw DataError("reconstruction length must be >= 2");
  const int L = length;
  std::vector<double> out(static_cast<size_t>(L), 0.0);
  for (int i = 0; i < marker.k(); ++i) {
    const int b = marker.bins[static_cast<size_t>(i)];
    if (b < 0 || b > L / 2)
      throw DataError("biomarker bin " + std::to_string(b) + " out of range for length " +
                      std::to_string(L));
    const bool self_conjugate = (b == 0) || (L % 2 == 0 && b == L / 2);
    const double w = self_conjugate ? 1.0 : 2.0;
    const double scale = w * marker.amplitude[static_cast<size_t>(i)] / L;
    const double phi = marker.phase[static_cast<size_t>(i)];
    const double omega = 2.0 * M_PI * b / L;
    for (int t = 0; t < L; ++t)
      out[static_cast<size_t>(t)] += scale * std::cos(omega * t - phi);
  }
  return out;
}

std::array<double, kNumOtfStats> series_stats(const std::vector<double>& x) {
  const size_t n = x.size();
  if (n < 2) throw DataError("series_stats needs at least 2 samples");
  double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  double m2 = 0.0, m3 = 0.0, m4 = 0.0, ss = 0.0;
  double mn = x[0], mx = x[0];
  for (double v : x) {
    double d = v - mean;
    double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
    ss += d2;
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  m2 /= static_cast<double>(n);
  m3 /= static_cast<double>(n);
  m4 /= static_cast<double>(n);
  double sd = std::sqrt(ss / static_cast<double>(n - 1));
  double skew = 0.0, kurt = 0.0;
  if (m2 > kConstantTol * kConstantTol) {
    skew = m3 / std::pow(m2, 1.5);
    kurt = m4 / (m2 * m2) - 3.0;  // excess kurtosis
  }
  return {mean, sd, mn, mx, kurt, skew};
}

OtfFeatures otf_features(const std::vector<std::vector<double>>& channel_series) {
  const size_t n_ch = channel_series.size();
  if (n_ch < 2) throw DataError("otf_features needs at least 2 channels");
  OtfFeatures out;
  out.values.resize(n_ch);
  for (size_t ch = 0; ch < n_ch; ++ch) out.values[ch] = series_stats(channel_series[ch]);

  // z-score each statistic across channels (population moments); columns
  // with no cross-channel spread are zeroed and flagged.
  for (int s = 0; s < kNumOtfStats; ++s) {
    double mean = 0.0;
    for (size_t ch = 0; ch < n_ch; ++ch) mean += out.values[ch][static_cast<size_t>(s)];
    mean /= static_cast<double>(n_ch);
    double var = 0.0;
    for (size_t ch = 0; ch < n_ch; ++ch) {
      double d = out.values[ch][static_cast<size_t>(s)] - mean;
      var += d * d;
    }
    double sd = std::sqrt(var / static_cast<double>(n_ch));
    if (sd < kConstantTol) {
      out.degenerate[static_cast<size_t>(s)] = true;
      for (size_t ch = 0; ch < n_ch; ++ch) out.values[ch][static_cast<size_t>(s)] = 0.0;
    } else {
      for (size_t ch = 0; ch < n_ch; ++ch)
        out.values[ch][static_cast<size_t>(s)] = (out.values[ch][static_cast<size_t>(s)] - mean) / sd;
    }
  }
  return out;
}

}  // namespace nirsfreq
