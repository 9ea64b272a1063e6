#include "nirsfreq/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "nirsfreq/biostats.hpp"
#include "nirsfreq/common.hpp"
#include "nirsfreq/harness.hpp"
#include "nirsfreq/signal.hpp"

namespace fs = std::filesystem;

namespace nirsfreq {

using json = nlohmann::json;

// ===========================================================================
// run configuration
// ===========================================================================

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + it.key() + "'");
  }
}

json model_to_json(const ModelConfig& m) {
  return json{{"channels", m.channels},       {"k", m.k},
              {"d_k", m.d_k},                 {"l_num", m.l_num},
              {"gru_hidden", m.gru_hidden},   {"gru_layers", m.gru_layers},
              {"fam_enabled", m.fam_enabled}};
}

void model_from_json(const json& j, ModelConfig& m) {
  check_keys(j, {"channels", "k", "d_k", "l_num", "gru_hidden", "gru_layers", "fam_enabled"},
             "model");
  m.channels = j.value("channels", m.channels);
  m.k = j.value("k", m.k);
  m.d_k = j.value("d_k", m.d_k);
  m.l_num = j.value("l_num", m.l_num);
  m.gru_hidden = j.value("gru_hidden", m.gru_hidden);
  m.gru_layers = j.value("gru_layers", m.gru_layers);
  m.fam_enabled = j.value("fam_enabled", m.fam_enabled);
}

json train_to_json(const diff::TrainConfig& t) {
  return json{{"learning_rate", t.learning_rate},
              {"milestones", t.milestones},
              {"lr_gamma", t.lr_gamma},
              {"focal_gamma", t.focal_gamma},
              {"focal_omega", t.focal_omega},
              {"l2_lambda", t.l2_lambda},
              {"epochs", t.epochs},
              {"batch_size", t.batch_size},
              {"seed", t.seed}};
}

void train_from_json(const json& j, diff::TrainConfig& t) {
  check_keys(j,
             {"learning_rate", "milestones", "lr_gamma", "focal_gamma", "focal_omega", "l2_lambda",
              "epochs", "batch_size", "seed"},
             "train");
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  if (j.contains("milestones")) t.milestones = j.at("milestones").get<std::vector<int>>();
  t.lr_gamma = j.value("lr_gamma", t.lr_gamma);
  t.focal_gamma = j.value("focal_gamma", t.focal_gamma);
  t.focal_omega = j.value("focal_omega", t.focal_omega);
  t.l2_lambda = j.value("l2_lambda", t.l2_lambda);
  t.epochs = j.value("epochs", t.epochs);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.seed = j.value("seed", t.seed);
}

json welch_to_json(const WelchParams& w) {
  return json{{"segment_length", w.segment_length}, {"overlap", w.overlap}};
}

void welch_from_json(const json& j, WelchParams& w) {
  check_keys(j, {"segment_length", "overlap"}, "welch");
  w.segment_length = j.value("segment_length", w.segment_length);
  w.overlap = j.value("overlap", w.overlap);
}

}  // namespace

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["synthetic"] = json::parse(synthetic_config_to_json(cfg.synthetic));
  j["model"] = model_to_json(cfg.model);
  j["train"] = train_to_json(cfg.train);
  j["welch"] = welch_to_json(cfg.welch);
  j["folds"] = cfg.n_folds;
  j["threads"] = cfg.threads;
  j["proportions"] = cfg.proportions;
  j["sweep_k"] = cfg.sweep_k;
  j["fam_k"] = cfg.fam_k;
  return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("invalid config JSON");
  RunConfig cfg;
  try {
    check_keys(j,
               {"synthetic", "model", "train", "welch", "folds", "threads", "proportions",
                "sweep_k", "fam_k"},
               "config");
    if (j.contains("synthetic")) cfg.synthetic = synthetic_config_from_json(j.at("synthetic").dump());
    if (j.contains("model")) model_from_json(j.at("model"), cfg.model);
    if (j.contains("train")) train_from_json(j.at("train"), cfg.train);
    if (j.contains("welch")) welch_from_json(j.at("welch"), cfg.welch);
    cfg.n_folds = j.value("folds", cfg.n_folds);
    cfg.threads = j.value("threads", cfg.threads);
    if (j.contains("proportions")) cfg.proportions = j.at("proportions").get<std::vector<double>>();
    if (j.contains("sweep_k")) cfg.sweep_k = j.at("sweep_k").get<std::vector<int>>();
    if (j.contains("fam_k")) cfg.fam_k = j.at("fam_k").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value type: ") + e.what());
  }
  return cfg;
}

std::string run_config_hash(const RunConfig& cfg) { return fnv1a64_hex(run_config_to_json(cfg)); }

void validate_run_config(const RunConfig& cfg) {
  validate_model_config(cfg.model);
  diff::validate_train_config(cfg.train);
  if (cfg.n_folds < 2) throw ConfigError("folds must be >= 2");
  if (cfg.threads < 1) throw ConfigError("threads must be >= 1");
  for (double q : cfg.proportions) {
    if (!(q > 0.0 && q <= 1.0)) {
      throw ConfigError("proportions entries must lie in (0, 1], got " + format_double(q));
    }
  }
  if (cfg.sweep_k.empty()) throw ConfigError("sweep_k must not be empty");
  if (cfg.fam_k.empty()) throw ConfigError("fam_k must not be empty");
  for (int k : cfg.sweep_k) {
    if (k < 1) throw ConfigError("sweep_k entries must be >= 1");
  }
  for (int k : cfg.fam_k) {
    if (k < 1) throw ConfigError("fam_k entries must be >= 1");
  }
  if (!(cfg.welch.overlap >= 0.0 && cfg.welch.overlap < 1.0)) {
    throw ConfigError("welch.overlap must lie in [0, 1)");
  }
  if (cfg.welch.segment_length < 8) throw ConfigError("welch.segment_length must be >= 8");
}

// ===========================================================================
// small writers
// ===========================================================================

namespace {

std::string channel_name(int ch) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "ch%02d", ch);
  return buf;
}

// square matrix with a leading row-label column
std::string matrix_csv(const std::vector<double>& m, int n, const std::string& hash) {
  std::string out = "# config_hash=" + hash + "\n";
  out += "channel";
  for (int c = 0; c < n; ++c) out += "," + channel_name(c);
  out += "\n";
  for (int r = 0; r < n; ++r) {
    out += channel_name(r);
    for (int c = 0; c < n; ++c) out += "," + format_double(m[static_cast<size_t>(r) * n + c]);
    out += "\n";
  }
  return out;
}

// channels x k heatmap with slot columns
std::string heatmap_csv(const std::vector<double>& values, int n_channels, int k,
                        const std::string& hash) {
  std::string out = "# config_hash=" + hash + "\n";
  out += "channel";
  for (int j = 0; j < k; ++j) out += ",slot" + std::to_string(j);
  out += "\n";
  for (int ch = 0; ch < n_channels; ++ch) {
    out += channel_name(ch);
    for (int j = 0; j < k; ++j) out += "," + format_double(values[static_cast<size_t>(ch) * k + j]);
    out += "\n";
  }
  return out;
}

std::string metrics_row(const Metrics& m) {
  return format_double(m.accuracy) + "," + format_double(m.precision) + "," +
         format_double(m.recall) + "," + format_double(m.f1) + "," + format_double(m.auc);
}

std::string metrics_csv(const CvResult& cv, const std::string& hash) {
  std::string out = "# config_hash=" + hash + "\n";
  out += "fold,best_epoch,accuracy,precision,recall,f1,auc,final_accuracy,final_precision,"
         "final_recall,final_f1,final_auc\n";
  for (const FoldResult& f : cv.folds) {
    out += std::to_string(f.fold_index) + "," + std::to_string(f.best_epoch) + "," +
           metrics_row(f.best) + "," + metrics_row(f.final) + "\n";
  }
  out += "mean,," + metrics_row(cv.mean_best) + "," + metrics_row(cv.mean_final) + "\n";
  return out;
}

std::string roc_csv(const std::vector<RocPoint>& roc, const std::string& hash) {
  std::string out = "# config_hash=" + hash + "\nfpr,tpr\n";
  for (const RocPoint& p : roc) {
    out += format_double(p.fpr) + "," + format_double(p.tpr) + "\n";
  }
  return out;
}

// fixed-geometry SVG polyline chart; y axis spans [0, 1]
struct PlotSeries {
  std::string name;
  std::string color;
  std::vector<std::pair<double, double>> points;
};

std::string svg_line_plot(const std::string& title, const std::string& x_label,
                          const std::vector<PlotSeries>& series, const std::string& hash) {
  const double width = 640.0, height = 400.0;
  const double ml = 56.0, mr = 16.0, mt = 40.0, mb = 48.0;
  const double pw = width - ml - mr, ph = height - mt - mb;
  double x_min = 0.0, x_max = 1.0;
  bool first = true;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      if (first) {
        x_min = x_max = x;
        first = false;
      } else {
        x_min = std::min(x_min, x);
        x_max = std::max(x_max, x);
      }
    }
  }
  if (x_max <= x_min) x_max = x_min + 1.0;
  auto px = [&](double x) { return ml + (x - x_min) / (x_max - x_min) * pw; };
  auto py = [&](double y) { return mt + (1.0 - y) * ph; };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + format_double(width) +
         "\" height=\"" + format_double(height) + "\" viewBox=\"0 0 " + format_double(width) +
         " " + format_double(height) + "\">\n";
  svg += "<!-- config_hash=" + hash + " -->\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + format_double(width / 2) +
         "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" +
         title + "</text>\n";
  // axes
  svg += "<line x1=\"" + format_double(ml) + "\" y1=\"" + format_double(mt) + "\" x2=\"" +
         format_double(ml) + "\" y2=\"" + format_double(mt + ph) +
         "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  svg += "<line x1=\"" + format_double(ml) + "\" y1=\"" + format_double(mt + ph) + "\" x2=\"" +
         format_double(ml + pw) + "\" y2=\"" + format_double(mt + ph) +
         "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = i * 0.25;
    svg += "<line x1=\"" + format_double(ml - 4) + "\" y1=\"" + format_double(py(y)) + "\" x2=\"" +
           format_double(ml) + "\" y2=\"" + format_double(py(y)) + "\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + format_double(ml - 8) + "\" y=\"" + format_double(py(y) + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">" +
           format_double(y) + "</text>\n";
  }
  const int x_ticks = std::min(10, static_cast<int>(std::lround(x_max - x_min)));
  for (int i = 0; i <= std::max(1, x_ticks); ++i) {
    const double x = x_min + (x_max - x_min) * i / std::max(1, x_ticks);
    svg += "<line x1=\"" + format_double(px(x)) + "\" y1=\"" + format_double(mt + ph) +
           "\" x2=\"" + format_double(px(x)) + "\" y2=\"" + format_double(mt + ph + 4) +
           "\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + format_double(px(x)) + "\" y=\"" + format_double(mt + ph + 18) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" +
           format_double(x) + "</text>\n";
  }
  svg += "<text x=\"" + format_double(ml + pw / 2) + "\" y=\"" + format_double(height - 10) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" + x_label +
         "</text>\n";
  double legend_y = mt + 8;
  for (const auto& s : series) {
    std::string pts;
    for (const auto& [x, y] : s.points) {
      if (!pts.empty()) pts += " ";
      pts += format_double(px(x)) + "," + format_double(py(y));
    }
    svg += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"2\" points=\"" +
           pts + "\"/>\n";
    for (const auto& [x, y] : s.points) {
      svg += "<circle cx=\"" + format_double(px(x)) + "\" cy=\"" + format_double(py(y)) +
             "\" r=\"3\" fill=\"" + s.color + "\"/>\n";
    }
    svg += "<rect x=\"" + format_double(ml + pw - 150) + "\" y=\"" + format_double(legend_y - 9) +
           "\" width=\"12\" height=\"12\" fill=\"" + s.color + "\"/>\n";
    svg += "<text x=\"" + format_double(ml + pw - 132) + "\" y=\"" + format_double(legend_y + 2) +
           "\" font-family=\"sans-serif\" font-size=\"12\">" + s.name + "</text>\n";
    legend_y += 18;
  }
  svg += "</svg>\n";
  return svg;
}

void write_run_config(const RunConfig& cfg, const fs::path& dir) {
  atomic_write_file(dir / "run_config.json", run_config_to_json(cfg) + "\n");
}

// simple CSV reader for report: skips # comments, returns header + rows
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

CsvTable read_csv(const fs::path& path) {
  const std::string text = read_text_file(path);
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!have_header) {
      t.header = split_csv(line);
      have_header = true;
    } else {
      std::vector<std::string> row = split_csv(line);
      if (row.size() != t.header.size()) {
        throw DataError(path.string() + ": row has " + std::to_string(row.size()) +
                        " fields, header has " + std::to_string(t.header.size()));
      }
      t.rows.push_back(std::move(row));
    }
  }
  if (!have_header) throw DataError(path.string() + ": no header row");
  return t;
}

int find_column(const CsvTable& t, const std::string& name, const fs::path& path) {
  for (size_t i = 0; i < t.header.size(); ++i) {
    if (t.header[i] == name) return static_cast<int>(i);
  }
  throw DataError(path.string() + ": missing column '" + name + "'");
}

}  // namespace

// ===========================================================================
// subcommands
// ===========================================================================

void cmd_generate(const RunConfig& cfg, const std::string& out_dir) {
  validate_run_config(cfg);
  Dataset ds = generate_synthetic(cfg.synthetic, cfg.threads);
  ds.manifest.config_hash = run_config_hash(cfg);
  write_dataset(out_dir, ds);
  write_run_config(cfg, out_dir);
}

void cmd_extract(const RunConfig& cfg, const std::string& dataset_dir, const std::string& out_dir) {
  validate_run_config(cfg);
  const Dataset ds = load_dataset(dataset_dir);
  const FeatureBundle bundle = prepare_features(ds, cfg.model.k, cfg.welch, cfg.threads);
  const std::string hash = run_config_hash(cfg);
  const int C = bundle.manifest.n_channels;
  const int k = cfg.model.k;

  // per-subject spectral features
  for (size_t i = 0; i < bundle.n_subjects(); ++i) {
    const SubjectRawFeatures& rf = bundle.raw[i];
    json feats;
    for (int p = 0; p < kNumPeriods; ++p) {
      for (int s = 0; s < kNumSubstances; ++s) {
        json per_channel;
        for (int ch = 0; ch < C; ++ch) {
          json cell;
          const size_t base = static_cast<size_t>(ch) * bundle.k_max;
          cell["freq_indices"] =
              std::vector<int>(rf.bins[p][s].begin() + base, rf.bins[p][s].begin() + base + k);
          cell["amplitudes"] = std::vector<double>(rf.amp[p][s].begin() + base,
                                                   rf.amp[p][s].begin() + base + k);
          cell["phases"] = std::vector<double>(rf.phase[p][s].begin() + base,
                                               rf.phase[p][s].begin() + base + k);
          per_channel[channel_name(ch)] = std::move(cell);
        }
        feats[kPeriodNames[p]][kSubstanceNames[s]] = std::move(per_channel);
      }
    }
    json j{{"config_hash", hash}, {"id", rf.id}, {"label", rf.label}, {"k", k},
           {"features", std::move(feats)}};
    atomic_write_file(fs::path(out_dir) / "biomarkers" / (rf.id + ".json"), j.dump(2) + "\n");
  }

  // long-format stat features
  std::string otf = "# config_hash=" + hash + "\n";
  otf += "subject,period,substance,channel";
  for (const char* name : kOtfStatNames) otf += std::string(",") + name;
  otf += "\n";
  for (size_t i = 0; i < bundle.n_subjects(); ++i) {
    const SubjectRawFeatures& rf = bundle.raw[i];
    for (int p = 0; p < kNumPeriods; ++p) {
      for (int s = 0; s < kNumSubstances; ++s) {
        for (int ch = 0; ch < C; ++ch) {
          otf += rf.id;
          otf += std::string(",") + kPeriodNames[p] + "," + kSubstanceNames[s] + "," +
                 channel_name(ch);
          for (int st = 0; st < kNumOtfStats; ++st) {
            otf += "," + format_double(rf.otf[p][s][ch * kNumOtfStats + st]);
          }
          otf += "\n";
        }
      }
    }
  }
  atomic_write_file(fs::path(out_dir) / "otf_features.csv", otf);

  // whole-cohort connectivity priors
  std::vector<const SubjectSpatial*> mats;
  mats.reserve(bundle.n_subjects());
  for (const SubjectSpatial& m : bundle.spatial) mats.push_back(&m);
  const std::vector<SpatialPrior> priors = priors_from_subject_matrices(mats, C);
  for (const SpatialPrior& prior : priors) {
    const std::string stem =
        std::string(kPeriodNames[prior.period]) + "_" + kSubstanceNames[prior.substance];
    atomic_write_file(fs::path(out_dir) / "priors" / (stem + "_corr.csv"),
                      matrix_csv(prior.corr, C, hash));
    atomic_write_file(fs::path(out_dir) / "priors" / (stem + "_cohe.csv"),
                      matrix_csv(prior.cohe, C, hash));
  }
  write_run_config(cfg, out_dir);
}

void cmd_analyze(const RunConfig& cfg, const std::string& dataset_dir, const std::string& out_dir) {
  validate_run_config(cfg);
  const Dataset ds = load_dataset(dataset_dir);
  const FeatureBundle bundle = prepare_features(ds, cfg.model.k, cfg.welch, cfg.threads);
  const std::string hash = run_config_hash(cfg);
  const int C = bundle.manifest.n_channels;
  const int hbo = 0;

  for (double q : cfg.proportions) {
    const std::vector<int> subjects = stratified_subsample(bundle.labels, q, cfg.train.seed);
    const int pct = static_cast<int>(std::lround(q * 100.0));
    char tag[8];
    std::snprintf(tag, sizeof(tag), "p%03d", pct);
    for (int p = 0; p < kNumPeriods; ++p) {
      const std::vector<double> r = screening_r(bundle, subjects, p, hbo, cfg.model.k);
      const std::vector<double> abs_r = fam_init_weights(r);
      const std::string name =
          "heatmap_" + std::string(kPeriodNames[p]) + "_" + tag + ".csv";
      atomic_write_file(fs::path(out_dir) / name, heatmap_csv(abs_r, C, cfg.model.k, hash));
    }
  }
  write_run_config(cfg, out_dir);
}

void cmd_train(const RunConfig& cfg, const std::string& dataset_dir, const std::string& out_dir) {
  validate_run_config(cfg);
  const Dataset ds = load_dataset(dataset_dir);
  const FeatureBundle bundle = prepare_features(ds, cfg.model.k, cfg.welch, cfg.threads);
  const FoldPlan plan = make_folds(bundle.labels, cfg.n_folds, cfg.train.seed);
  const std::string hash = run_config_hash(cfg);
  const fs::path report = fs::path(out_dir) / "report";

  CvResult cv;
  for (int fold = 0; fold < plan.n_folds; ++fold) {
    TrainedFold tf = train_fold(bundle, plan, fold, cfg.model, cfg.train);
    // persist the best-epoch weights
    Model holder(cfg.model, cfg.train.seed + static_cast<std::uint64_t>(fold));
    holder.params().set_flat_values(tf.best_theta);
    diff::save_checkpoint(holder.params(),
                          fs::path(out_dir) / "checkpoints" /
                              ("fold" + std::to_string(fold) + ".ckpt"));
    atomic_write_file(report / ("roc_fold" + std::to_string(fold) + ".csv"),
                      roc_csv(tf.report.roc, hash));
    cv.folds.push_back(std::move(tf.report));
  }
  cv.mean_best = mean_fold_metrics(cv.folds, false);
  cv.mean_final = mean_fold_metrics(cv.folds, true);

  atomic_write_file(report / "metrics.csv", metrics_csv(cv, hash));
  json cv_json = json::parse(cv_result_to_json(cv));
  cv_json["config_hash"] = hash;
  atomic_write_file(fs::path(out_dir) / "cv.json", cv_json.dump(2) + "\n");

  // whole-cohort screening maps for the report
  std::vector<int> all(bundle.n_subjects());
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  for (int p = 0; p < kNumPeriods; ++p) {
    const std::vector<double> abs_r =
        fam_init_weights(screening_r(bundle, all, p, /*hbo=*/0, cfg.model.k));
    atomic_write_file(report / ("pb_heatmap_" + std::string(kPeriodNames[p]) + ".csv"),
                      heatmap_csv(abs_r, bundle.manifest.n_channels, cfg.model.k, hash));
  }
  write_run_config(cfg, out_dir);
}

void cmd_ablate(const RunConfig& cfg, const std::string& dataset_dir, const std::string& out_dir,
                const std::string& sweep) {
  validate_run_config(cfg);
  if (sweep != "k" && sweep != "fam") {
    throw ConfigError("--sweep must be 'k' or 'fam', got '" + sweep + "'");
  }
  const Dataset ds = load_dataset(dataset_dir);
  const std::vector<int>& ks = (sweep == "k") ? cfg.sweep_k : cfg.fam_k;
  const int k_max = *std::max_element(ks.begin(), ks.end());
  const FeatureBundle bundle = prepare_features(ds, k_max, cfg.welch, cfg.threads);
  const FoldPlan plan = make_folds(bundle.labels, cfg.n_folds, cfg.train.seed);
  const std::string hash = run_config_hash(cfg);
  const fs::path report = fs::path(out_dir) / "report";

  if (sweep == "k") {
    const std::vector<KSweepRow> rows = run_ablation_k(bundle, plan, cfg.model, cfg.train, ks);
    std::string csv = "# config_hash=" + hash + "\nk,accuracy,precision,recall,f1\n";
    for (const KSweepRow& row : rows) {
      const Metrics& m = row.result.mean_best;
      csv += std::to_string(row.k) + "," + format_double(m.accuracy) + "," +
             format_double(m.precision) + "," + format_double(m.recall) + "," +
             format_double(m.f1) + "\n";
    }
    atomic_write_file(report / "ablation_k.csv", csv);
  } else {
    const std::vector<FamSweepRow> rows = run_ablation_fam(bundle, plan, cfg.model, cfg.train, ks);
    std::string csv = "# config_hash=" + hash + "\nk,fam,accuracy,precision,recall,f1\n";
    for (const FamSweepRow& row : rows) {
      const Metrics& m = row.result.mean_best;
      csv += std::to_string(row.k) + std::string(row.fam_enabled ? ",with" : ",without") + "," +
             format_double(m.accuracy) + "," + format_double(m.precision) + "," +
             format_double(m.recall) + "," + format_double(m.f1) + "\n";
    }
    atomic_write_file(report / "ablation_fam.csv", csv);
  }
  write_run_config(cfg, out_dir);
}

void cmd_report(const RunConfig& cfg, const std::string& run_dir) {
  const fs::path report = fs::path(run_dir) / "report";
  const std::string hash = run_config_hash(cfg);
  std::string summary;
  bool any = false;

  const fs::path metrics_path = report / "metrics.csv";
  if (fs::exists(metrics_path)) {
    any = true;
    const CsvTable t = read_csv(metrics_path);
    const int cf = find_column(t, "fold", metrics_path);
    const int cacc = find_column(t, "accuracy", metrics_path);
    const int cprec = find_column(t, "precision", metrics_path);
    const int crec = find_column(t, "recall", metrics_path);
    const int cf1 = find_column(t, "f1", metrics_path);
    const int cauc = find_column(t, "auc", metrics_path);
    summary += "cross-validation (best epoch per fold)\n";
    for (const auto& row : t.rows) {
      summary += "  fold " + row[cf] + ": accuracy " + row[cacc] + ", precision " + row[cprec] +
                 ", recall " + row[crec] + ", F1 " + row[cf1] + ", AUC " + row[cauc] + "\n";
    }
    summary += "\n";
  }

  const fs::path abl_k_path = report / "ablation_k.csv";
  if (fs::exists(abl_k_path)) {
    any = true;
    const CsvTable t = read_csv(abl_k_path);
    const int ck = find_column(t, "k", abl_k_path);
    const int cacc = find_column(t, "accuracy", abl_k_path);
    const int cf1 = find_column(t, "f1", abl_k_path);
    PlotSeries acc{"accuracy", "#1f77b4", {}};
    PlotSeries f1{"F1", "#d62728", {}};
    summary += "k sweep (mean over folds, best epoch)\n";
    for (const auto& row : t.rows) {
      const double k = parse_double(row[ck], "ablation_k.csv k");
      acc.points.push_back({k, parse_double(row[cacc], "ablation_k.csv accuracy")});
      f1.points.push_back({k, parse_double(row[cf1], "ablation_k.csv f1")});
      summary += "  k=" + row[ck] + ": accuracy " + row[cacc] + ", F1 " + row[cf1] + "\n";
    }
    summary += "\n";
    atomic_write_file(report / "metric_vs_k.svg",
                      svg_line_plot("metrics vs retained peaks", "k", {acc, f1}, hash));
  }

  const fs::path abl_fam_path = report / "ablation_fam.csv";
  if (fs::exists(abl_fam_path)) {
    any = true;
    const CsvTable t = read_csv(abl_fam_path);
    const int ck = find_column(t, "k", abl_fam_path);
    const int cfam = find_column(t, "fam", abl_fam_path);
    const int cf1 = find_column(t, "f1", abl_fam_path);
    summary += "attention ablation (mean over folds, best epoch)\n";
    for (const auto& row : t.rows) {
      summary += "  k=" + row[ck] + ", " + row[cfam] + " attention: F1 " + row[cf1] + "\n";
    }
    summary += "\n";
  }

  if (!any) throw DataError("cmd_report: no report inputs found under " + report.string());
  atomic_write_file(report / "summary.txt", "# config_hash=" + hash + "\n" + summary);
}

// ===========================================================================
// argument parsing
// ===========================================================================

namespace {

struct Overrides {
  std::optional<int> n_subjects, channels, k, d_k, l_num, gru_hidden, gru_layers;
  std::optional<int> epochs, batch_size, folds, threads, segment_length;
  std::optional<double> fraction, effect, noise_sd, learning_rate, focal_gamma, focal_omega;
  std::optional<double> l2_lambda, lr_gamma, overlap;
  std::optional<std::uint64_t> seed;
  std::optional<std::vector<double>> proportions;
  std::optional<std::vector<int>> sweep_k, fam_k, milestones;
  bool fam_on = false, fam_off = false;
};

void apply_overrides(RunConfig& cfg, const Overrides& o) {
  if (o.n_subjects) cfg.synthetic.n_subjects = *o.n_subjects;
  if (o.channels) {
    cfg.synthetic.n_channels = *o.channels;
    cfg.model.channels = *o.channels;
  }
  if (o.fraction) cfg.synthetic.fraction_positive = *o.fraction;
  if (o.effect) cfg.synthetic.effect_amplitude = *o.effect;
  if (o.noise_sd) cfg.synthetic.noise_sd = *o.noise_sd;
  if (o.seed) {
    cfg.synthetic.seed = *o.seed;
    cfg.train.seed = *o.seed;
  }
  if (o.k) cfg.model.k = *o.k;
  if (o.d_k) cfg.model.d_k = *o.d_k;
  if (o.l_num) cfg.model.l_num = *o.l_num;
  if (o.gru_hidden) cfg.model.gru_hidden = *o.gru_hidden;
  if (o.gru_layers) cfg.model.gru_layers = *o.gru_layers;
  if (o.fam_on && o.fam_off) throw ConfigError("--fam and --no-fam are mutually exclusive");
  if (o.fam_on) cfg.model.fam_enabled = true;
  if (o.fam_off) cfg.model.fam_enabled = false;
  if (o.learning_rate) cfg.train.learning_rate = *o.learning_rate;
  if (o.milestones) cfg.train.milestones = *o.milestones;
  if (o.lr_gamma) cfg.train.lr_gamma = *o.lr_gamma;
  if (o.focal_gamma) cfg.train.focal_gamma = *o.focal_gamma;
  if (o.focal_omega) cfg.train.focal_omega = *o.focal_omega;
  if (o.l2_lambda) cfg.train.l2_lambda = *o.l2_lambda;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.batch_size) cfg.train.batch_size = *o.batch_size;
  if (o.folds) cfg.n_folds = *o.folds;
  if (o.threads) cfg.threads = *o.threads;
  if (o.segment_length) cfg.welch.segment_length = *o.segment_length;
  if (o.overlap) cfg.welch.overlap = *o.overlap;
  if (o.proportions) cfg.proportions = *o.proportions;
  if (o.sweep_k) cfg.sweep_k = *o.sweep_k;
  if (o.fam_k) cfg.fam_k = *o.fam_k;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"frequency-feature pipeline for fNIRS depression classification"};
  app.require_subcommand(1);

  std::string config_path, dataset_dir, out_dir, run_dir, sweep = "k";
  Overrides o;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file; flags override its values");
    cmd->add_option("--threads", o.threads, "worker thread cap (1 = reference order)")
        ->capture_default_str();
    cmd->add_option("--seed", o.seed, "seed for generation, folds, and training");
  };
  auto add_dataset = [&](CLI::App* cmd) {
    cmd->add_option("--dataset", dataset_dir, "dataset directory (manifest.json + CSVs)")
        ->required();
  };
  auto add_out = [&](CLI::App* cmd) {
    cmd->add_option("--out", out_dir, "output directory")->required();
  };
  auto add_model_flags = [&](CLI::App* cmd) {
    cmd->add_option("--k", o.k, "retained spectral peaks per channel");
    cmd->add_option("--d-k", o.d_k, "embedding width");
    cmd->add_option("--l-num", o.l_num, "graph-conv layers per stack");
    cmd->add_option("--gru-hidden", o.gru_hidden, "GRU hidden width");
    cmd->add_option("--gru-layers", o.gru_layers, "stacked GRU layers");
    cmd->add_flag("--fam", o.fam_on, "enable the frequency attention module");
    cmd->add_flag("--no-fam", o.fam_off, "disable the frequency attention module");
  };
  auto add_train_flags = [&](CLI::App* cmd) {
    cmd->add_option("--epochs", o.epochs, "training epochs");
    cmd->add_option("--batch-size", o.batch_size, "minibatch size");
    cmd->add_option("--lr", o.learning_rate, "base learning rate");
    cmd->add_option("--milestones", o.milestones, "epochs at which the learning rate halves");
    cmd->add_option("--focal-gamma", o.focal_gamma, "focal loss exponent");
    cmd->add_option("--focal-omega", o.focal_omega, "focal loss weight");
    cmd->add_option("--l2", o.l2_lambda, "L2 penalty added to gradients");
    cmd->add_option("--folds", o.folds, "cross-validation folds");
  };

  CLI::App* gen = app.add_subcommand("generate", "synthesize a dataset");
  add_common(gen);
  add_out(gen);
  gen->add_option("--n", o.n_subjects, "number of subjects");
  gen->add_option("--fraction", o.fraction, "fraction of positive (patient) subjects");
  gen->add_option("--effect", o.effect, "planted sinusoid amplitude");
  gen->add_option("--noise-sd", o.noise_sd, "1/f noise standard deviation");
  gen->add_option("--channels", o.channels, "channel count");

  CLI::App* ext = app.add_subcommand("extract", "extract spectral/stat features and priors");
  add_common(ext);
  add_dataset(ext);
  add_out(ext);
  ext->add_option("--k", o.k, "retained spectral peaks per channel");
  ext->add_option("--segment", o.segment_length, "coherence segment length");
  ext->add_option("--overlap", o.overlap, "coherence segment overlap in [0,1)");

  CLI::App* ana = app.add_subcommand("analyze", "screening heatmaps over subject subsamples");
  add_common(ana);
  add_dataset(ana);
  add_out(ana);
  ana->add_option("--k", o.k, "retained spectral peaks per channel");
  ana->add_option("--proportions", o.proportions, "stratified subsample proportions in (0,1]");

  CLI::App* trn = app.add_subcommand("train", "cross-validated training run");
  add_common(trn);
  add_dataset(trn);
  add_out(trn);
  add_model_flags(trn);
  add_train_flags(trn);

  CLI::App* abl = app.add_subcommand("ablate", "k sweep or attention on/off sweep");
  add_common(abl);
  add_dataset(abl);
  add_out(abl);
  add_model_flags(abl);
  add_train_flags(abl);
  abl->add_option("--sweep", sweep, "'k' or 'fam'")->capture_default_str();
  abl->add_option("--sweep-k", o.sweep_k, "k values for the k sweep");
  abl->add_option("--fam-k", o.fam_k, "k values for the attention sweep");

  CLI::App* rep = app.add_subcommand("report", "render summary and plots for a run directory");
  add_common(rep);
  rep->add_option("--run", run_dir, "directory produced by train/ablate")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = run_config_from_json(read_text_file(config_path));
    apply_overrides(cfg, o);
    if (gen->parsed()) {
      cmd_generate(cfg, out_dir);
    } else if (ext->parsed()) {
      cmd_extract(cfg, dataset_dir, out_dir);
    } else if (ana->parsed()) {
      cmd_analyze(cfg, dataset_dir, out_dir);
    } else if (trn->parsed()) {
      cmd_train(cfg, dataset_dir, out_dir);
    } else if (abl->parsed()) {
      cmd_ablate(cfg, dataset_dir, out_dir, sweep);
    } else if (rep->parsed()) {
      cmd_report(cfg, run_dir);
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace nirsfreq
