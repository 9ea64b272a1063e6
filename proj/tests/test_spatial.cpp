#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "nirsfreq/common.hpp"
#include "nirsfreq/dataset.hpp"
#include "nirsfreq/spatial.hpp"

using namespace nirsfreq;

namespace {

std::vector<double> random_series(int n, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> dist(0.0, sd);
  std::vector<double> x(static_cast<size_t>(n));
  for (auto& v : x) v = dist(rng);
  return x;
}

// textbook two-pass oracle
double pearson_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

// ===========================================================================
// pearson
// ===========================================================================

TEST_CASE("pearson matches the two-pass oracle on random inputs") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_series(64, rng);
    auto y = random_series(64, rng);
    for (size_t i = 0; i < y.size(); ++i) y[i] += 0.5 * x[i];
    CHECK(pearson(x, y) == doctest::Approx(pearson_oracle(x, y)).epsilon(1e-12));
  }
}

TEST_CASE("pearson pins hand-computed values") {
  // cov = 1.5/... : r = 9 / sqrt(2 * 42) on {1,2,3} vs {1,2,4} scaled by n
  const double r = pearson({1, 2, 3}, {1, 2, 4});
  CHECK(r == doctest::Approx(std::sqrt(27.0 / 28.0)).epsilon(1e-12));
  CHECK(pearson({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pearson({1, 2, 3}, {6, 4, 2}) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("pearson flags constant inputs and validates shapes") {
  bool degenerate = false;
  CHECK(pearson({1, 1, 1}, {1, 2, 3}, &degenerate) == 0.0);
  CHECK(degenerate);
  degenerate = false;
  CHECK(pearson({1, 2, 3}, {5, 5, 5}, &degenerate) == 0.0);
  CHECK(degenerate);
  CHECK_THROWS_AS(pearson({1, 2}, {1, 2, 3}), DataError);
  CHECK_THROWS_AS(pearson({1}, {2}), DataError);
}

TEST_CASE("pearson is invariant to positive affine maps") {
  std::mt19937_64 rng(7);
  const auto x = random_series(128, rng);
  const auto y = random_series(128, rng);
  std::vector<double> xs(x.size()), ys(y.size());
  for (size_t i = 0; i < x.size(); ++i) {
    xs[i] = 3.5 * x[i] + 11.0;
    ys[i] = 0.25 * y[i] - 4.0;
  }
  CHECK(pearson(xs, ys) == doctest::Approx(pearson(x, y)).epsilon(1e-12));
}

// ===========================================================================
// coherence
// ===========================================================================

TEST_CASE("band_coherence of a series with itself is 1") {
  std::mt19937_64 rng(11);
  const auto x = random_series(1200, rng);
  CHECK(band_coherence(x, x, 20.0) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("band_coherence is invariant to affine rescaling") {
  std::mt19937_64 rng(12);
  const auto x = random_series(1200, rng);
  auto y = random_series(1200, rng);
  for (size_t i = 0; i < y.size(); ++i) y[i] += 0.7 * x[i];
  std::vector<double> xs(x.size()), ys(y.size());
  for (size_t i = 0; i < x.size(); ++i) {
    xs[i] = -2.0 * x[i] + 100.0;
    ys[i] = 0.01 * y[i] - 3.0;
  }
  CHECK(band_coherence(xs, ys, 20.0) ==
        doctest::Approx(band_coherence(x, y, 20.0)).epsilon(1e-9));
}

TEST_CASE("band_coherence lies in [0,1] and detects a shared component") {
  std::mt19937_64 rng(13);
  double with_shared = 0.0;
  double without_shared = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto shared = random_series(1200, rng);
    auto x = random_series(1200, rng, 0.3);
    auto y = random_series(1200, rng, 0.3);
    auto y2 = random_series(1200, rng);
    for (size_t i = 0; i < x.size(); ++i) {
      x[i] += shared[i];
      y[i] += shared[i];
    }
    const double c1 = band_coherence(x, y, 20.0);
    const double c2 = band_coherence(x, y2, 20.0);
    CHECK(c1 >= 0.0);
    CHECK(c1 <= 1.0);
    CHECK(c2 >= 0.0);
    CHECK(c2 <= 1.0);
    with_shared += c1;
    without_shared += c2;
  }
  CHECK(with_shared > without_shared + 1.0);
}

TEST_CASE("band_coherence of independent noise stays small on average") {
  // calibration guard: ~6.4e2 samples per segment pair, 8 half-overlapped
  // segments -> null MSC well below the shared-signal regime
  std::mt19937_64 rng(14);
  double acc = 0.0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    const auto x = random_series(1200, rng);
    const auto y = random_series(1200, rng);
    acc += band_coherence(x, y, 20.0);
  }
  CHECK(acc / trials < 0.35);
  CHECK(acc / trials > 0.0);
}

TEST_CASE("band_coherence validates segmentation and flags dead signals") {
  std::mt19937_64 rng(15);
  const auto x = random_series(300, rng);
  const auto y = random_series(300, rng);
  // 300 samples, segment 256, hop 128 -> only one full segment
  CHECK_THROWS_AS(band_coherence(x, y, 20.0), DataError);
  WelchParams p;
  p.segment_length = 64;
  p.overlap = 0.5;
  CHECK_NOTHROW(band_coherence(x, y, 20.0, 0.01, 0.2, p));

  bool degenerate = false;
  const std::vector<double> zeros(1200, 0.0);
  const auto z = random_series(1200, rng);
  CHECK(band_coherence(zeros, z, 20.0, 0.01, 0.1, {}, &degenerate) == 0.0);
  CHECK(degenerate);
}

TEST_CASE("band_coherence rejects an empty analysis band") {
  std::mt19937_64 rng(16);
  const auto x = random_series(1200, rng);
  const auto y = random_series(1200, rng);
  // with segment 256 at 20 Hz the bin spacing is 0.078 Hz; [0.001, 0.002]
  // contains no bin above DC
  CHECK_THROWS_AS(band_coherence(x, y, 20.0, 0.001, 0.002), ConfigError);
}

// ===========================================================================
// matrices and priors
// ===========================================================================

TEST_CASE("correlation and coherence matrices are symmetric with unit diagonal") {
  std::mt19937_64 rng(17);
  std::vector<std::vector<double>> chans;
  for (int c = 0; c < 5; ++c) chans.push_back(random_series(1200, rng));
  const auto corr = correlation_matrix(chans);
  const auto cohe = coherence_matrix(chans, 20.0);
  REQUIRE(corr.size() == 25);
  REQUIRE(cohe.size() == 25);
  for (int i = 0; i < 5; ++i) {
    CHECK(corr[static_cast<size_t>(i * 5 + i)] == 1.0);
    CHECK(cohe[static_cast<size_t>(i * 5 + i)] == 1.0);
    for (int j = 0; j < 5; ++j) {
      CHECK(corr[static_cast<size_t>(i * 5 + j)] == corr[static_cast<size_t>(j * 5 + i)]);
      CHECK(cohe[static_cast<size_t>(i * 5 + j)] == cohe[static_cast<size_t>(j * 5 + i)]);
    }
  }
}

TEST_CASE("mean_matrix averages entrywise") {
  const std::vector<std::vector<double>> ms = {{1, 2, 3, 4}, {3, 2, 1, 0}};
  const auto m = mean_matrix(ms, 2);
  CHECK(m == std::vector<double>{2, 2, 2, 2});
  CHECK_THROWS_AS(mean_matrix({}, 2), DataError);
  CHECK_THROWS_AS(mean_matrix({{1, 2, 3}}, 2), DataError);
}

TEST_CASE("priors_from_subject_matrices matches build_priors bit for bit") {
  SyntheticConfig cfg;
  cfg.n_subjects = 4;
  cfg.n_channels = 6;
  cfg.planted_channels = {0, 1};
  cfg.seed = 99;
  const Dataset ds = generate_synthetic(cfg);

  std::vector<const SubjectRecord*> recs;
  std::vector<SubjectSpatial> spatial;
  for (const auto& r : ds.records) {
    recs.push_back(&r);
    spatial.push_back(subject_spatial_matrices(r, ds.manifest));
  }
  std::vector<const SubjectSpatial*> sp;
  for (const auto& s : spatial) sp.push_back(&s);

  const auto direct = build_priors(recs, ds.manifest);
  const auto cached = priors_from_subject_matrices(sp, ds.manifest.n_channels);
  REQUIRE(direct.size() == 9);
  REQUIRE(cached.size() == 9);
  for (size_t i = 0; i < 9; ++i) {
    CHECK(direct[i].period == cached[i].period);
    CHECK(direct[i].substance == cached[i].substance);
    CHECK(direct[i].n_subjects_averaged == 4);
    CHECK(direct[i].corr == cached[i].corr);  // bitwise
    CHECK(direct[i].cohe == cached[i].cohe);
  }
  // period-major enumeration
  CHECK(direct[0].period == 0);
  CHECK(direct[0].substance == 0);
  CHECK(direct[5].period == 1);
  CHECK(direct[5].substance == 2);
}

// ===========================================================================
// adjacency normalization
// ===========================================================================

TEST_CASE("normalize_adjacency pins a 2x2 case") {
  // |E| row sums = 3 -> A_hat = E/3 entrywise
  const auto a = normalize_adjacency({1, 2, 2, 1}, 2);
  CHECK(a.n == 2);
  CHECK(a.degrees == std::vector<double>{3, 3});
  CHECK(a.values[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(a.values[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("normalize_adjacency takes magnitudes and stays symmetric") {
  const auto a = normalize_adjacency({1.0, -0.5, -0.5, 1.0}, 2);
  // d_i = 1 + 0.5 = 1.5; off-diagonal = 0.5 / 1.5
  CHECK(a.values[1] == doctest::Approx(0.5 / 1.5).epsilon(1e-12));
  CHECK(a.values[1] == a.values[2]);
  CHECK(a.values[0] == doctest::Approx(1.0 / 1.5).epsilon(1e-12));

  std::mt19937_64 rng(18);
  std::vector<std::vector<double>> chans;
  for (int c = 0; c < 7; ++c) chans.push_back(random_series(600, rng));
  const auto norm = normalize_adjacency(correlation_matrix(chans), 7);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j)
      CHECK(std::abs(norm.values[static_cast<size_t>(i * 7 + j)] -
                     norm.values[static_cast<size_t>(j * 7 + i)]) < 1e-9);
}

TEST_CASE("normalize_adjacency rejects bad inputs") {
  CHECK_THROWS_AS(normalize_adjacency({1, 2, 3, 4}, 2), DataError);       // asymmetric
  CHECK_THROWS_AS(normalize_adjacency({1, 2, 3}, 2), DataError);          // wrong size
  CHECK_THROWS_AS(normalize_adjacency({0, 0, 0, 0}, 2), NumericError);    // zero degree
}
