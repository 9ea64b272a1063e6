#pragma once

// Dataset layer: the on-disk layout (manifest.json + one CSV per subject),
// the in-memory record types, and the synthetic cohort generator used for
// end-to-end validation.
//
// Recording layout: n_channels optode channels sampled at sample_rate Hz
// through three contiguous task periods -- silent, task, post-silent --
// of 30/60/60 seconds by default. Two substances are stored per channel
// (oxygenated and deoxygenated hemoglobin); their sum ("total") is derived
// on demand and never stored.

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace nirsfreq {

constexpr int kNumPeriods = 3;
constexpr int kNumSubstances = 3;  // hbo, hbr, total(=hbo+hbr)
constexpr std::array<const char*, kNumPeriods> kPeriodNames{"silent", "task", "post"};
constexpr std::array<const char*, kNumSubstances> kSubstanceNames{"hbo", "hbr", "total"};

enum class Substance { hbo = 0, hbr = 1, total = 2 };

struct PeriodSlice {
  int begin = 0;  // inclusive sample index
  int end = 0;    // exclusive sample index
  int length() const { return end - begin; }
};

struct DatasetManifest {
  int n_subjects = 0;
  int n_channels = 53;
  double sample_rate = 20.0;
  std::array<int, kNumPeriods> period_samples{600, 1200, 1200};
  std::vector<std::string> subject_ids;
  std::vector<int> labels;   // 0 = control, 1 = patient
  std::string config_hash;   // digest of the generating configuration

  int total_samples() const {
    return period_samples[0] + period_samples[1] + period_samples[2];
  }
};

// Half-open sample range of one period within the full recording.
PeriodSlice period_slice(const DatasetManifest& manifest, int period);

struct SubjectRecord {
  std::string id;
  int label = 0;
  // [channel][sample], one row per optode channel.
  std::vector<std::vector<double>> hbo;
  std::vector<std::vector<double>> hbr;
};

// Series accessor; Substance::total is computed as hbo + hbr.
std::vector<double> substance_series(const SubjectRecord& record, Substance substance,
                                     int channel);

struct SyntheticConfig {
  int n_subjects = 64;
  double fraction_positive = 0.5;
  std::uint64_t seed = 2024;
  double effect_amplitude = 3.0;  // amplitude of each planted sinusoid
  double noise_sd = 1.0;          // target standard deviation of the 1/f noise
  std::vector<int> task_bins{2, 3, 5};   // planted frequency bins, task period
  std::vector<int> post_bins{2, 3, 5};   // planted frequency bins, post period
  std::vector<int> planted_channels{0, 1, 2, 9, 10, 11, 37, 38, 39, 40};
  int n_channels = 53;
  double sample_rate = 20.0;
  std::array<int, kNumPeriods> period_seconds{30, 60, 60};
};

std::string synthetic_config_to_json(const SyntheticConfig& config);
SyntheticConfig synthetic_config_from_json(const std::string& text);

struct Dataset {
  DatasetManifest manifest;
  std::vector<SubjectRecord> records;
};

// Gaussian noise with spectral magnitude proportional to f^{-1/2} (1/f power
// shape), synthesized from a Hermitian half-spectrum with the DC bin zeroed,
// scaled so the theoretical variance equals sd^2. Exactly zero-mean.
std::vector<double> one_over_f_noise(int n_samples, double sd, std::mt19937_64& rng);

// Deterministic cohort generator. round(fraction_positive * n) leading
// subjects carry label 1; label-1 subjects receive planted sinusoids
// effect_amplitude * sin(2*pi*b*t/L) in the configured channels at the
// configured bins of the task and post periods. Each subject is generated
// from its own derived seed, so output is independent of thread count.
Dataset generate_synthetic(const SyntheticConfig& config, int n_threads = 1);

// On-disk round trip: manifest.json plus <id>.csv per subject with columns
//   t, ch00_hbo..chNN_hbo, ch00_hbr..chNN_hbr
// Every CSV starts with a `# config_hash=<hex>` comment line.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

// Structural validation (shared by load and generate): shapes, finite
// values, labels in {0,1}. Throws DataError naming the offending subject.
void validate_dataset(const Dataset& dataset);

}  // namespace nirsfreq
