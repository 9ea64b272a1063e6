#include "nirsfreq/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>

#include "json.hpp"
#include "nirsfreq/common.hpp"
#include "nirsfreq/fft.hpp"

namespace nirsfreq {

using nlohmann::json;

PeriodSlice period_slice(const DatasetManifest& manifest, int period) {
  if (period < 0 || period >= kNumPeriods)
    throw ConfigError("period index out of range: " + std::to_string(period));
  int begin = 0;
  for (int p = 0; p < period; ++p) begin += manifest.period_samples[static_cast<size_t>(p)];
  return PeriodSlice{begin, begin + manifest.period_samples[static_cast<size_t>(period)]};
}

std::vector<double> substance_series(const SubjectRecord& record, Substance substance,
                                     int channel) {
  if (channel < 0 || channel >= static_cast<int>(record.hbo.size()))
    throw DataError("channel index out of range: " + std::to_string(channel));
  auto ch = static_cast<size_t>(channel);
  switch (substance) {
    case Substance::hbo:
      return record.hbo[ch];
    case Substance::hbr:
      return record.hbr[ch];
    case Substance::total: {
      std::vector<double> out(record.hbo[ch].size());
      for (size_t i = 0; i < out.size(); ++i) out[i] = record.hbo[ch][i] + record.hbr[ch][i];
      return out;
    }
  }
  throw ConfigError("unknown substance");
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

std::vector<double> one_over_f_noise(int n_samples, double sd, std::mt19937_64& rng) {
  if (n_samples < 4) throw ConfigError("noise length must be >= 4 samples");
  if (!(sd > 0.0)) throw ConfigError("noise sd must be positive");
  const int T = n_samples;
  // Independent complex bins 1..kmax; DC stays zero (exact zero mean) and the
  // Nyquist bin (even T) is dropped -- its 1/f weight is negligible.
  const int kmax = (T % 2 == 0) ? T / 2 - 1 : T / 2;
  double harmonic = 0.0;
  for (int k = 1; k <= kmax; ++k) harmonic += 1.0 / k;
  // x[t] = (2/T) * sum_k c_k (a_k cos - b_k sin) with a,b ~ N(0,1) gives
  // Var(x[t]) = (4/T^2) * sum_k c_k^2; choose the overall weight so that the
  // theoretical variance is exactly sd^2.
  const double w = sd * T / (2.0 * std::sqrt(harmonic));
  std::vector<std::complex<double>> spec(static_cast<size_t>(T), {0.0, 0.0});
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int k = 1; k <= kmax; ++k) {
    const double c = w / std::sqrt(static_cast<double>(k));
    const double re = c * normal(rng);
    const double im = c * normal(rng);
    spec[static_cast<size_t>(k)] = {re, im};
    spec[static_cast<size_t>(T - k)] = {re, -im};  // Hermitian symmetry
  }
  auto time = fft_inverse(spec);
  std::vector<double> out(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) out[static_cast<size_t>(t)] = time[static_cast<size_t>(t)].real() / T;
  return out;
}

namespace {

void validate_config(const SyntheticConfig& cfg) {
  if (cfg.n_subjects < 1) throw ConfigError("n_subjects must be >= 1");
  if (!(cfg.fraction_positive >= 0.0 && cfg.fraction_positive <= 1.0))
    throw ConfigError("fraction_positive must lie in [0, 1]");
  if (!(cfg.noise_sd > 0.0)) throw ConfigError("noise_sd must be positive");
  if (cfg.effect_amplitude < 0.0) throw ConfigError("effect_amplitude must be >= 0");
  if (cfg.n_channels < 1) throw ConfigError("n_channels must be >= 1");
  if (!(cfg.sample_rate > 0.0)) throw ConfigError("sample_rate must be positive");
  for (int p = 0; p < kNumPeriods; ++p) {
    double samples = cfg.period_seconds[static_cast<size_t>(p)] * cfg.sample_rate;
    if (cfg.period_seconds[static_cast<size_t>(p)] <= 0 ||
        std::fabs(samples - std::lround(samples)) > 1e-9)
      throw ConfigError("period_seconds * sample_rate must be a positive whole sample count");
  }
  for (int ch : cfg.planted_channels)
    if (ch < 0 || ch >= cfg.n_channels)
      throw ConfigError("planted channel out of range: " + std::to_string(ch));
  auto check_bins = [&](const std::vector<int>& bins, int period) {
    int len = static_cast<int>(std::lround(cfg.period_seconds[static_cast<size_t>(period)] *
                                           cfg.sample_rate));
    for (int b : bins)
      if (b < 0 || b > len / 2)
        throw ConfigError("planted bin out of range for period '" +
                          std::string(kPeriodNames[static_cast<size_t>(period)]) +
                          "': " + std::to_string(b));
  };
  check_bins(cfg.task_bins, 1);
  check_bins(cfg.post_bins, 2);
}

void plant_sinusoids(std::vector<double>& series, const PeriodSlice& slice,
                     const std::vector<int>& bins, double amplitude) {
  const int L = slice.length();
  for (int b : bins) {
    const double omega = 2.0 * M_PI * b / L;
    for (int t = 0; t < L; ++t)
      series[static_cast<size_t>(slice.begin + t)] += amplitude * std::sin(omega * t);
  }
}

std::string subject_id(int index, int n_subjects) {
  int width = 3;
  for (int v = n_subjects - 1; v >= 1000; v /= 10) ++width;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "s%0*d", width, index);
  return buf;
}

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& cfg, int n_threads) {
  validate_config(cfg);
  Dataset ds;
  auto& m = ds.manifest;
  m.n_subjects = cfg.n_subjects;
  m.n_channels = cfg.n_channels;
  m.sample_rate = cfg.sample_rate;
  for (int p = 0; p < kNumPeriods; ++p)
    m.period_samples[static_cast<size_t>(p)] = static_cast<int>(
        std::lround(cfg.period_seconds[static_cast<size_t>(p)] * cfg.sample_rate));
  m.config_hash = fnv1a64_hex(synthetic_config_to_json(cfg));

  const int n_pos = static_cast<int>(std::lround(cfg.fraction_positive * cfg.n_subjects));
  m.subject_ids.resize(static_cast<size_t>(cfg.n_subjects));
  m.labels.resize(static_cast<size_t>(cfg.n_subjects));
  for (int i = 0; i < cfg.n_subjects; ++i) {
    m.subject_ids[static_cast<size_t>(i)] = subject_id(i, cfg.n_subjects);
    m.labels[static_cast<size_t>(i)] = i < n_pos ? 1 : 0;
  }

  const int T = m.total_samples();
  const PeriodSlice task = period_slice(m, 1);
  const PeriodSlice post = period_slice(m, 2);

  ds.records.resize(static_cast<size_t>(cfg.n_subjects));
  // Each subject draws from its own derived seed: results do not depend on
  // the thread count or on which worker handles which subject.
  parallel_for(static_cast<size_t>(cfg.n_subjects), n_threads, [&](size_t i) {
    std::mt19937_64 rng(derive_seed(cfg.seed, i));
    SubjectRecord& rec = ds.records[i];
    rec.id = m.subject_ids[i];
    rec.label = m.labels[i];
    rec.hbo.resize(static_cast<size_t>(cfg.n_channels));
    rec.hbr.resize(static_cast<size_t>(cfg.n_channels));
    for (int ch = 0; ch < cfg.n_channels; ++ch)
      rec.hbo[static_cast<size_t>(ch)] = one_over_f_noise(T, cfg.noise_sd, rng);
    if (rec.label == 1) {
      for (int ch : cfg.planted_channels) {
        plant_sinusoids(rec.hbo[static_cast<size_t>(ch)], task, cfg.task_bins,
                        cfg.effect_amplitude);
        plant_sinusoids(rec.hbo[static_cast<size_t>(ch)], post, cfg.post_bins,
                        cfg.effect_amplitude);
      }
    }
    // Deoxygenated signal mirrors the (planted) oxygenated one with opposite
    // sign and reduced gain, plus its own noise floor.
    for (int ch = 0; ch < cfg.n_channels; ++ch) {
      auto noise = one_over_f_noise(T, cfg.noise_sd, rng);
      auto& hbr = rec.hbr[static_cast<size_t>(ch)];
      hbr.resize(static_cast<size_t>(T));
      for (int t = 0; t < T; ++t)
        hbr[static_cast<size_t>(t)] =
            -0.3 * rec.hbo[static_cast<size_t>(ch)][static_cast<size_t>(t)] +
            noise[static_cast<size_t>(t)];
    }
  });
  return ds;
}

// ---------------------------------------------------------------------------
// Config JSON
// ---------------------------------------------------------------------------

std::string synthetic_config_to_json(const SyntheticConfig& cfg) {
  json j;
  j["n_subjects"] = cfg.n_subjects;
  j["fraction_positive"] = cfg.fraction_positive;
  j["seed"] = cfg.seed;
  j["effect_amplitude"] = cfg.effect_amplitude;
  j["noise_sd"] = cfg.noise_sd;
  j["task_bins"] = cfg.task_bins;
  j["post_bins"] = cfg.post_bins;
  j["planted_channels"] = cfg.planted_channels;
  j["n_channels"] = cfg.n_channels;
  j["sample_rate"] = cfg.sample_rate;
  j["period_seconds"] = cfg.period_seconds;
  return j.dump(2) + "\n";
}

SyntheticConfig synthetic_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config JSON: ") + e.what());
  }
  static const std::vector<std::string> known{
      "n_subjects",   "fraction_positive", "seed",       "effect_amplitude",
      "noise_sd",     "task_bins",         "post_bins",  "planted_channels",
      "n_channels",   "sample_rate",       "period_seconds"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw ConfigError("unknown config key: " + it.key());
  SyntheticConfig cfg;
  try {
    cfg.n_subjects = j.value("n_subjects", cfg.n_subjects);
    cfg.fraction_positive = j.value("fraction_positive", cfg.fraction_positive);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.effect_amplitude = j.value("effect_amplitude", cfg.effect_amplitude);
    cfg.noise_sd = j.value("noise_sd", cfg.noise_sd);
    cfg.task_bins = j.value("task_bins", cfg.task_bins);
    cfg.post_bins = j.value("post_bins", cfg.post_bins);
    cfg.planted_channels = j.value("planted_channels", cfg.planted_channels);
    cfg.n_channels = j.value("n_channels", cfg.n_channels);
    cfg.sample_rate = j.value("sample_rate", cfg.sample_rate);
    cfg.period_seconds = j.value("period_seconds", cfg.period_seconds);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value type: ") + e.what());
  }
  validate_config(cfg);
  return cfg;
}

// ---------------------------------------------------------------------------
// On-disk layout
// ---------------------------------------------------------------------------

namespace {

std::string channel_column(int ch, const char* substance) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ch%02d_%s", ch, substance);
  return buf;
}

std::string expected_header(int n_channels) {
  std::string h = "t";
  for (int ch = 0; ch < n_channels; ++ch) h += "," + channel_column(ch, "hbo");
  for (int ch = 0; ch < n_channels; ++ch) h += "," + channel_column(ch, "hbr");
  return h;
}

std::vector<std::string_view> split_line(std::string_view line) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  validate_dataset(ds);
  const auto& m = ds.manifest;

  json j;
  j["n_subjects"] = m.n_subjects;
  j["n_channels"] = m.n_channels;
  j["sample_rate"] = m.sample_rate;
  j["period_samples"] = m.period_samples;
  j["config_hash"] = m.config_hash;
  json subjects = json::array();
  for (int i = 0; i < m.n_subjects; ++i) {
    json s;
    s["id"] = m.subject_ids[static_cast<size_t>(i)];
    s["label"] = m.labels[static_cast<size_t>(i)];
    s["file"] = m.subject_ids[static_cast<size_t>(i)] + ".csv";
    subjects.push_back(s);
  }
  j["subjects"] = subjects;
  atomic_write_file(dir / "manifest.json", j.dump(2) + "\n");

  const int T = m.total_samples();
  for (const auto& rec : ds.records) {
    std::string out;
    out.reserve(static_cast<size_t>(T) * (static_cast<size_t>(m.n_channels) * 2 + 1) * 20);
    out += "# config_hash=" + m.config_hash + "\n";
    out += expected_header(m.n_channels) + "\n";
    for (int t = 0; t < T; ++t) {
      out += std::to_string(t);
      for (int ch = 0; ch < m.n_channels; ++ch) {
        out += ',';
        out += format_double(rec.hbo[static_cast<size_t>(ch)][static_cast<size_t>(t)]);
      }
      for (int ch = 0; ch < m.n_channels; ++ch) {
        out += ',';
        out += format_double(rec.hbr[static_cast<size_t>(ch)][static_cast<size_t>(t)]);
      }
      out += '\n';
    }
    atomic_write_file(dir / (rec.id + ".csv"), out);
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw DataError("missing manifest: " + manifest_path.string());

  json j;
  try {
    j = json::parse(read_text_file(manifest_path));
  } catch (const json::exception& e) {
    throw DataError(std::string("invalid manifest JSON: ") + e.what());
  }

  Dataset ds;
  auto& m = ds.manifest;
  std::vector<std::string> files;
  try {
    m.n_subjects = j.at("n_subjects").get<int>();
    m.n_channels = j.at("n_channels").get<int>();
    m.sample_rate = j.at("sample_rate").get<double>();
    m.period_samples = j.at("period_samples").get<std::array<int, kNumPeriods>>();
    m.config_hash = j.value("config_hash", std::string());
    for (const auto& s : j.at("subjects")) {
      m.subject_ids.push_back(s.at("id").get<std::string>());
      m.labels.push_back(s.at("label").get<int>());
      files.push_back(s.at("file").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("bad manifest field: ") + e.what());
  }
  if (static_cast<int>(m.subject_ids.size()) != m.n_subjects)
    throw DataError("manifest subject list does not match n_subjects");

  const int T = m.total_samples();
  const std::string header = expected_header(m.n_channels);
  ds.records.resize(static_cast<size_t>(m.n_subjects));

  for (int i = 0; i < m.n_subjects; ++i) {
    const std::string& id = m.subject_ids[static_cast<size_t>(i)];
    fs::path path = dir / files[static_cast<size_t>(i)];
    if (!fs::exists(path)) throw DataError("missing subject file: " + path.string());
    std::string text = read_text_file(path);

    SubjectRecord& rec = ds.records[static_cast<size_t>(i)];
    rec.id = id;
    rec.label = m.labels[static_cast<size_t>(i)];
    if (rec.label != 0 && rec.label != 1)
      throw DataError("subject " + id + ": label must be 0 or 1");
    rec.hbo.assign(static_cast<size_t>(m.n_channels), std::vector<double>(static_cast<size_t>(T)));
    rec.hbr.assign(static_cast<size_t>(m.n_channels), std::vector<double>(static_cast<size_t>(T)));

    size_t pos = 0;
    int row = 0;
    bool header_seen = false;
    while (pos < text.size()) {
      size_t eol = text.find('\n', pos);
      if (eol == std::string::npos) eol = text.size();
      std::string_view line(text.data() + pos, eol - pos);
      pos = eol + 1;
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (line.empty() || line.front() == '#') continue;
      if (!header_seen) {
        if (line != header)
          throw DataError("subject " + id + ": unexpected CSV header");
        header_seen = true;
        continue;
      }
      if (row >= T) throw DataError("subject " + id + ": more than " + std::to_string(T) + " sample rows");
      auto fields = split_line(line);
      if (static_cast<int>(fields.size()) != 1 + 2 * m.n_channels)
        throw DataError("subject " + id + " row " + std::to_string(row) + ": expected " +
                        std::to_string(1 + 2 * m.n_channels) + " columns, got " +
                        std::to_string(fields.size()));
      long t = parse_long(fields[0], "subject " + id + " column t");
      if (t != row)
        throw DataError("subject " + id + ": sample index " + std::to_string(t) +
                        " out of order at row " + std::to_string(row));
      for (int ch = 0; ch < 2 * m.n_channels; ++ch) {
        const std::string col =
            ch < m.n_channels ? channel_column(ch, "hbo") : channel_column(ch - m.n_channels, "hbr");
        double v = parse_double(fields[static_cast<size_t>(ch + 1)],
                                "subject " + id + " row " + std::to_string(row) + " column " + col);
        if (!std::isfinite(v))
          throw DataError("subject " + id + " row " + std::to_string(row) + " column " + col +
                          ": non-finite value");
        if (ch < m.n_channels)
          rec.hbo[static_cast<size_t>(ch)][static_cast<size_t>(row)] = v;
        else
          rec.hbr[static_cast<size_t>(ch - m.n_channels)][static_cast<size_t>(row)] = v;
      }
      ++row;
    }
    if (!header_seen) throw DataError("subject " + id + ": missing CSV header");
    if (row != T)
      throw DataError("subject " + id + ": expected " + std::to_string(T) + " sample rows, got " +
                      std::to_string(row));
  }
  validate_dataset(ds);
  return ds;
}

void validate_dataset(const Dataset& ds) {
  const auto& m = ds.manifest;
  if (m.n_subjects != static_cast<int>(ds.records.size()) ||
      m.n_subjects != static_cast<int>(m.subject_ids.size()) ||
      m.n_subjects != static_cast<int>(m.labels.size()))
    throw DataError("manifest/record count mismatch");
  if (m.n_channels < 1) throw DataError("n_channels must be >= 1");
  const int T = m.total_samples();
  for (int i = 0; i < m.n_subjects; ++i) {
    const auto& rec = ds.records[static_cast<size_t>(i)];
    if (rec.id != m.subject_ids[static_cast<size_t>(i)])
      throw DataError("subject id mismatch at index " + std::to_string(i));
    if (rec.label != 0 && rec.label != 1)
      throw DataError("subject " + rec.id + ": label must be 0 or 1");
    if (rec.label != m.labels[static_cast<size_t>(i)])
      throw DataError("subject " + rec.id + ": label disagrees with manifest");
    for (const auto* block : {&rec.hbo, &rec.hbr}) {
      if (static_cast<int>(block->size()) != m.n_channels)
        throw DataError("subject " + rec.id + ": wrong channel count");
      for (const auto& series : *block) {
        if (static_cast<int>(series.size()) != T)
          throw DataError("subject " + rec.id + ": wrong sample count");
        for (double v : series)
          if (!std::isfinite(v)) throw DataError("subject " + rec.id + ": non-finite sample");
      }
    }
  }
}

}  // namespace nirsfreq
