#include "nirsfreq/harness.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <utility>

#include "json.hpp"
#include "nirsfreq/biostats.hpp"
#include "nirsfreq/common.hpp"
#include "nirsfreq/signal.hpp"

namespace nirsfreq {

using diff::Tensor;
using json = nlohmann::json;

// ===========================================================================
// feature preparation
// ===========================================================================

FeatureBundle prepare_features(const Dataset& dataset, int k_max, const WelchParams& welch,
                               int n_threads) {
  const auto& manifest = dataset.manifest;
  if (dataset.records.empty()) throw DataError("prepare_features: empty dataset");
  int shortest = manifest.period_samples[0];
  for (int p : manifest.period_samples) shortest = std::min(shortest, p);
  const int max_bins = shortest / 2 + 1;
  if (k_max < 1 || k_max > max_bins) {
    throw ConfigError("prepare_features: k must lie in [1, " + std::to_string(max_bins) +
                      "] for the shortest period, got " + std::to_string(k_max));
  }

  FeatureBundle bundle;
  bundle.manifest = manifest;
  bundle.k_max = k_max;
  const size_t n = dataset.records.size();
  bundle.raw.resize(n);
  bundle.spatial.resize(n);
  bundle.labels.resize(n);

  const int C = manifest.n_channels;
  parallel_for(n, n_threads, [&](size_t i) {
    const SubjectRecord& rec = dataset.records[i];
    SubjectRawFeatures rf;
    rf.id = rec.id;
    rf.label = rec.label;
    for (int p = 0; p < kNumPeriods; ++p) {
      for (int s = 0; s < kNumSubstances; ++s) {
        std::vector<std::vector<double>> series(static_cast<size_t>(C));
        for (int ch = 0; ch < C; ++ch) {
          std::vector<double> full = substance_series(rec, static_cast<Substance>(s), ch);
          series[ch] = normalize_series(slice_period(full, manifest, p)).values;
        }
        const OtfFeatures otf = otf_features(series);
        auto& o = rf.otf[p][s];
        o.resize(static_cast<size_t>(C) * kNumOtfStats);
        for (int ch = 0; ch < C; ++ch) {
          for (int st = 0; st < kNumOtfStats; ++st) o[ch * kNumOtfStats + st] = otf.values[ch][st];
        }
        auto& amp = rf.amp[p][s];
        auto& phase = rf.phase[p][s];
        auto& bins = rf.bins[p][s];
        amp.resize(static_cast<size_t>(C) * k_max);
        phase.resize(static_cast<size_t>(C) * k_max);
        bins.resize(static_cast<size_t>(C) * k_max);
        for (int ch = 0; ch < C; ++ch) {
          const Biomarker marker = top_k_biomarker(dft(series[ch]), k_max);
          for (int j = 0; j < k_max; ++j) {
            amp[ch * k_max + j] = marker.amplitude[j];
            phase[ch * k_max + j] = marker.phase[j];
            bins[ch * k_max + j] = marker.bins[j];
          }
        }
      }
    }
    bundle.raw[i] = std::move(rf);
    bundle.spatial[i] = subject_spatial_matrices(rec, manifest, welch);
    bundle.labels[i] = rec.label;
  });
  return bundle;
}

std::vector<double> screening_r(const FeatureBundle& bundle, const std::vector<int>& subjects,
                                int period, int substance, int k) {
  if (period < 0 || period >= kNumPeriods || substance < 0 || substance >= kNumSubstances) {
    throw ConfigError("screening_r: period/substance out of range");
  }
  if (k < 1 || k > bundle.k_max) throw ConfigError("screening_r: k exceeds extracted k");
  if (subjects.empty()) throw DataError("screening_r: no subjects");
  const int C = bundle.manifest.n_channels;
  std::vector<std::vector<double>> cells(subjects.size());
  std::vector<int> labels(subjects.size());
  for (size_t row = 0; row < subjects.size(); ++row) {
    const int idx = subjects[row];
    if (idx < 0 || static_cast<size_t>(idx) >= bundle.n_subjects()) {
      throw DataError("screening_r: subject index out of range");
    }
    const auto& amp = bundle.raw[idx].amp[period][substance];
    auto& rowv = cells[row];
    rowv.resize(static_cast<size_t>(C) * k);
    for (int ch = 0; ch < C; ++ch) {
      for (int j = 0; j < k; ++j) rowv[ch * k + j] = amp[ch * bundle.k_max + j];
    }
    labels[row] = bundle.labels[idx];
  }
  return screen_cells(cells, labels);
}

// ===========================================================================
// fold plans
// ===========================================================================

std::vector<int> FoldPlan::train_indices(int fold) const {
  std::vector<int> out;
  for (size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] != fold) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<int> FoldPlan::test_indices(int fold) const {
  std::vector<int> out;
  for (size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] == fold) out.push_back(static_cast<int>(i));
  }
  return out;
}

FoldPlan make_folds(const std::vector<int>& labels, int n_folds, std::uint64_t seed) {
  if (n_folds < 2) throw ConfigError("make_folds: need at least 2 folds");
  std::array<std::vector<int>, 2> by_class;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw DataError("make_folds: labels must be 0/1");
    by_class[labels[i]].push_back(static_cast<int>(i));
  }
  for (int cls = 0; cls < 2; ++cls) {
    if (by_class[cls].size() < static_cast<size_t>(n_folds)) {
      throw DataError("make_folds: class " + std::to_string(cls) + " has " +
                      std::to_string(by_class[cls].size()) + " subjects, need >= " +
                      std::to_string(n_folds));
    }
  }
  FoldPlan plan;
  plan.n_folds = n_folds;
  plan.seed = seed;
  plan.assignment.assign(labels.size(), 0);
  for (int cls = 0; cls < 2; ++cls) {
    std::mt19937_64 rng(derive_seed(seed, cls));
    std::shuffle(by_class[cls].begin(), by_class[cls].end(), rng);
    for (size_t j = 0; j < by_class[cls].size(); ++j) {
      plan.assignment[by_class[cls][j]] = static_cast<int>(j % n_folds);
    }
  }
  return plan;
}

// ===========================================================================
// metrics
// ===========================================================================

namespace {

void check_scores_labels(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.empty()) throw DataError("metrics: empty prediction set");
  if (scores.size() != labels.size()) throw DataError("metrics: scores/labels length mismatch");
  for (double s : scores) {
    if (!std::isfinite(s) || s < 0.0 || s > 1.0)
      throw DataError("metrics: scores must be probabilities in [0, 1]");
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw DataError("metrics: labels must be 0/1");
  }
}

}  // namespace

std::vector<RocPoint> roc_curve(const std::vector<double>& scores,
                                const std::vector<int>& labels) {
  check_scores_labels(scores, labels);
  long pos = 0, neg = 0;
  for (int l : labels) (l == 1 ? pos : neg)++;
  if (pos == 0 || neg == 0) return {};
  std::vector<size_t> order(scores.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<RocPoint> roc;
  roc.push_back({0.0, 0.0});
  long tp = 0, fp = 0;
  size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (labels[order[i]] == 1 ? tp : fp)++;
      ++i;
    }
    roc.push_back({static_cast<double>(fp) / neg, static_cast<double>(tp) / pos});
  }
  return roc;
}

double roc_auc(const std::vector<RocPoint>& roc) {
  double auc = 0.0;
  for (size_t i = 1; i < roc.size(); ++i) {
    auc += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) * 0.5;
  }
  return auc;
}

Metrics compute_metrics(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_scores_labels(scores, labels);
  Metrics m;
  for (size_t i = 0; i < scores.size(); ++i) {
    const int pred = scores[i] >= 0.5 ? 1 : 0;
    if (pred == 1 && labels[i] == 1) m.tp++;
    if (pred == 1 && labels[i] == 0) m.fp++;
    if (pred == 0 && labels[i] == 0) m.tn++;
    if (pred == 0 && labels[i] == 1) m.fn++;
  }
  const double n = static_cast<double>(scores.size());
  m.accuracy = (m.tp + m.tn) / n;
  if (m.tp + m.fp > 0) {
    m.precision = static_cast<double>(m.tp) / (m.tp + m.fp);
  } else {
    m.precision_degenerate = true;
  }
  if (m.tp + m.fn > 0) {
    m.recall = static_cast<double>(m.tp) / (m.tp + m.fn);
  } else {
    m.recall_degenerate = true;
  }
  if (m.precision + m.recall > 0.0) {
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  } else {
    m.f1_degenerate = true;
  }
  const std::vector<RocPoint> roc = roc_curve(scores, labels);
  if (roc.empty()) {
    m.auc = 0.5;
    m.auc_degenerate = true;
  } else {
    m.auc = roc_auc(roc);
  }
  return m;
}

// ===========================================================================
// per-fold fitting
// ===========================================================================

FeatureNormalizer fit_normalizer(const FeatureBundle& bundle, const std::vector<int>& subjects,
                                 int k) {
  if (subjects.empty()) throw DataError("fit_normalizer: no subjects");
  if (k < 1 || k > bundle.k_max) throw ConfigError("fit_normalizer: k exceeds extracted k");
  const int C = bundle.manifest.n_channels;
  FeatureNormalizer norm;
  norm.k = k;
  const double count = static_cast<double>(subjects.size()) * C;
  for (int p = 0; p < kNumPeriods; ++p) {
    for (int s = 0; s < kNumSubstances; ++s) {
      auto fit_columns = [&](int width, int stride, const auto& getter, std::vector<double>& mean,
                             std::vector<double>& sd) {
        mean.assign(width, 0.0);
        sd.assign(width, 0.0);
        for (int col = 0; col < width; ++col) {
          double sum = 0.0;
          for (int idx : subjects) {
            const auto& v = getter(idx);
            for (int ch = 0; ch < C; ++ch) sum += v[ch * stride + col];
          }
          const double mu = sum / count;
          double ss = 0.0;
          for (int idx : subjects) {
            const auto& v = getter(idx);
            for (int ch = 0; ch < C; ++ch) {
              const double d = v[ch * stride + col] - mu;
              ss += d * d;
            }
          }
          const double sigma = std::sqrt(ss / count);  // population
          mean[col] = mu;
          sd[col] = sigma < 1e-12 ? 0.0 : sigma;
        }
      };
      fit_columns(
          kNumOtfStats, kNumOtfStats, [&](int idx) -> const std::vector<double>& {
            return bundle.raw[idx].otf[p][s];
          },
          norm.otf_mean[p][s], norm.otf_std[p][s]);
      fit_columns(
          k, bundle.k_max, [&](int idx) -> const std::vector<double>& {
            return bundle.raw[idx].amp[p][s];
          },
          norm.amp_mean[p][s], norm.amp_std[p][s]);
    }
  }
  return norm;
}

SubjectFeatures make_subject_features(const FeatureBundle& bundle, int subject,
                                      const FeatureNormalizer& norm, int d_k) {
  if (subject < 0 || static_cast<size_t>(subject) >= bundle.n_subjects()) {
    throw DataError("make_subject_features: subject index out of range");
  }
  const int C = bundle.manifest.n_channels;
  const int k = norm.k;
  const SubjectRawFeatures& rf = bundle.raw[subject];
  SubjectFeatures f;
  f.id = rf.id;
  f.label = rf.label;
  f.n_channels = C;
  f.k = k;
  for (int p = 0; p < kNumPeriods; ++p) {
    for (int s = 0; s < kNumSubstances; ++s) {
      auto& o = f.otf[p][s];
      o.resize(static_cast<size_t>(C) * kNumOtfStats);
      for (int ch = 0; ch < C; ++ch) {
        for (int st = 0; st < kNumOtfStats; ++st) {
          const double sd = norm.otf_std[p][s][st];
          const double v = rf.otf[p][s][ch * kNumOtfStats + st];
          o[ch * kNumOtfStats + st] = sd > 0.0 ? (v - norm.otf_mean[p][s][st]) / sd : 0.0;
        }
      }
      auto& amp = f.amp[p][s];
      auto& psin = f.phase_sin[p][s];
      auto& pcos = f.phase_cos[p][s];
      auto& bins = f.bins[p][s];
      const size_t slots = static_cast<size_t>(C) * k;
      amp.resize(slots);
      psin.resize(slots);
      pcos.resize(slots);
      bins.resize(slots);
      for (int ch = 0; ch < C; ++ch) {
        for (int j = 0; j < k; ++j) {
          const size_t src = static_cast<size_t>(ch) * bundle.k_max + j;
          const size_t dst = static_cast<size_t>(ch) * k + j;
          const double sd = norm.amp_std[p][s][j];
          amp[dst] = sd > 0.0 ? (rf.amp[p][s][src] - norm.amp_mean[p][s][j]) / sd : 0.0;
          psin[dst] = std::sin(rf.phase[p][s][src]);
          pcos[dst] = std::cos(rf.phase[p][s][src]);
          bins[dst] = rf.bins[p][s][src];
        }
      }
      f.pe[p][s] = positional_encoding(bins, d_k);
    }
  }
  return f;
}

FoldArtifacts fit_fold_artifacts(const FeatureBundle& bundle,
                                 const std::vector<int>& train_subjects,
                                 const std::unordered_set<int>& forbidden, int k,
                                 bool fam_enabled) {
  if (train_subjects.empty()) throw DataError("fit_fold_artifacts: empty training set");
  for (int idx : train_subjects) {
    if (forbidden.count(idx)) {
      throw DataError("leakage: held-out subject " + bundle.raw[idx].id +
                      " reached train-only fitting");
    }
  }
  FoldArtifacts art;
  std::vector<const SubjectSpatial*> mats;
  mats.reserve(train_subjects.size());
  for (int idx : train_subjects) mats.push_back(&bundle.spatial[idx]);
  art.priors = priors_from_subject_matrices(mats, bundle.manifest.n_channels);
  art.normalizer = fit_normalizer(bundle, train_subjects, k);
  if (fam_enabled) {
    for (int p = 0; p < kNumPeriods; ++p) {
      for (int s = 0; s < kNumSubstances; ++s) {
        art.fam_init[p][s] = fam_init_weights(screening_r(bundle, train_subjects, p, s, k));
      }
    }
  }
  return art;
}

// ===========================================================================
// training loop (shared by the full model and the baseline)
// ===========================================================================

namespace {

struct LoopOutcome {
  FoldResult report;
  std::vector<double> best_theta;
  std::vector<double> final_theta;
};

LoopOutcome run_training_loop(const std::function<Tensor(int)>& forward_subject,
                              diff::ParamStore& store, const std::vector<int>& train_idx,
                              const std::vector<int>& test_idx, const FeatureBundle& bundle,
                              const diff::TrainConfig& tcfg, int fold_index, double focal_gamma,
                              double focal_omega) {
  LoopOutcome out;
  out.report.fold_index = fold_index;
  for (int idx : test_idx) {
    out.report.test_ids.push_back(bundle.raw[idx].id);
    out.report.test_labels.push_back(bundle.labels[idx]);
  }

  diff::AdamOptimizer opt;
  std::mt19937_64 order_rng(derive_seed(tcfg.seed + static_cast<std::uint64_t>(fold_index), 1));
  std::vector<int> order = train_idx;
  double best_f1 = -1.0;
  std::vector<double> best_scores;

  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    const double lr = diff::lr_at(epoch, tcfg);
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0.0;
    for (size_t start = 0; start < order.size(); start += tcfg.batch_size) {
      const size_t stop = std::min(order.size(), start + tcfg.batch_size);
      const double inv_b = 1.0 / static_cast<double>(stop - start);
      store.zero_grad();
      for (size_t b = start; b < stop; ++b) {
        const int idx = order[b];
        Tensor probs = forward_subject(idx);
        Tensor loss = diff::focal_loss(probs, bundle.labels[idx], focal_gamma, focal_omega);
        const double lv = loss.scalar();
        if (!std::isfinite(lv)) {
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(start / tcfg.batch_size) + ", subject " +
                             bundle.raw[idx].id);
        }
        loss_sum += lv;
        diff::backward(diff::scale(loss, inv_b));
      }
      opt.step(store, lr, tcfg.l2_lambda);
    }
    out.report.train_loss.push_back(loss_sum / static_cast<double>(order.size()));

    std::vector<double> scores(test_idx.size());
    {
      diff::NoGradGuard guard;
      for (size_t i = 0; i < test_idx.size(); ++i) {
        scores[i] = forward_subject(test_idx[i]).value()[1];
      }
    }
    const Metrics m = compute_metrics(scores, out.report.test_labels);
    if (m.f1 > best_f1) {
      best_f1 = m.f1;
      out.report.best_epoch = epoch;
      out.report.best = m;
      best_scores = scores;
      out.best_theta = store.flat_values();
    }
    if (epoch == tcfg.epochs - 1) {
      out.report.final = m;
      out.report.probs_final = scores;
      out.final_theta = store.flat_values();
    }
  }
  out.report.probs_best = best_scores;
  out.report.roc = roc_curve(best_scores, out.report.test_labels);
  return out;
}

}  // namespace

Metrics mean_fold_metrics(const std::vector<FoldResult>& folds, bool final_epoch) {
  Metrics mean;
  if (folds.empty()) return mean;
  for (const FoldResult& f : folds) {
    const Metrics& m = final_epoch ? f.final : f.best;
    mean.tp += m.tp;
    mean.fp += m.fp;
    mean.tn += m.tn;
    mean.fn += m.fn;
    mean.accuracy += m.accuracy;
    mean.precision += m.precision;
    mean.recall += m.recall;
    mean.f1 += m.f1;
    mean.auc += m.auc;
    mean.precision_degenerate |= m.precision_degenerate;
    mean.recall_degenerate |= m.recall_degenerate;
    mean.f1_degenerate |= m.f1_degenerate;
    mean.auc_degenerate |= m.auc_degenerate;
  }
  const double nf = static_cast<double>(folds.size());
  mean.accuracy /= nf;
  mean.precision /= nf;
  mean.recall /= nf;
  mean.f1 /= nf;
  mean.auc /= nf;
  return mean;
}

TrainedFold train_fold(const FeatureBundle& bundle, const FoldPlan& plan, int fold_index,
                       const ModelConfig& mcfg, const diff::TrainConfig& tcfg) {
  validate_model_config(mcfg);
  diff::validate_train_config(tcfg);
  if (fold_index < 0 || fold_index >= plan.n_folds) {
    throw ConfigError("train_fold: fold index out of range");
  }
  if (plan.assignment.size() != bundle.n_subjects()) {
    throw DataError("train_fold: fold plan does not match dataset size");
  }
  if (mcfg.channels != bundle.manifest.n_channels) {
    throw DataError("train_fold: model channels do not match dataset");
  }
  if (mcfg.k > bundle.k_max) {
    throw ConfigError("train_fold: model k exceeds extracted k_max");
  }

  const std::vector<int> train_idx = plan.train_indices(fold_index);
  const std::vector<int> test_idx = plan.test_indices(fold_index);
  if (train_idx.empty() || test_idx.empty()) throw DataError("train_fold: empty fold");
  const std::unordered_set<int> forbidden(test_idx.begin(), test_idx.end());

  const FoldArtifacts art =
      fit_fold_artifacts(bundle, train_idx, forbidden, mcfg.k, mcfg.fam_enabled);
  const PriorTensors priors = PriorTensors::from_priors(art.priors, mcfg.channels);

  std::vector<SubjectFeatures> features(bundle.n_subjects());
  for (int idx : train_idx) features[idx] = make_subject_features(bundle, idx, art.normalizer, mcfg.d_k);
  for (int idx : test_idx) features[idx] = make_subject_features(bundle, idx, art.normalizer, mcfg.d_k);

  Model model(mcfg, tcfg.seed + static_cast<std::uint64_t>(fold_index));
  if (mcfg.fam_enabled) {
    for (int p = 0; p < kNumPeriods; ++p) {
      for (int s = 0; s < kNumSubstances; ++s) model.set_fam_init(p, s, art.fam_init[p][s]);
    }
  }

  auto forward = [&](int idx) { return model.forward(features[idx], priors); };
  LoopOutcome out = run_training_loop(forward, model.params(), train_idx, test_idx, bundle, tcfg,
                                      fold_index, tcfg.focal_gamma, tcfg.focal_omega);
  return TrainedFold{std::move(out.report), std::move(out.best_theta), std::move(out.final_theta)};
}

CvResult run_cv(const FeatureBundle& bundle, const FoldPlan& plan, const ModelConfig& mcfg,
                const diff::TrainConfig& tcfg) {
  CvResult cv;
  for (int fold = 0; fold < plan.n_folds; ++fold) {
    cv.folds.push_back(train_fold(bundle, plan, fold, mcfg, tcfg).report);
  }
  cv.mean_best = mean_fold_metrics(cv.folds, false);
  cv.mean_final = mean_fold_metrics(cv.folds, true);
  return cv;
}

// ===========================================================================
// serialization
// ===========================================================================

namespace {

json metrics_to_json(const Metrics& m) {
  return json{{"tp", m.tp},
              {"fp", m.fp},
              {"tn", m.tn},
              {"fn", m.fn},
              {"accuracy", m.accuracy},
              {"precision", m.precision},
              {"recall", m.recall},
              {"f1", m.f1},
              {"auc", m.auc},
              {"precision_degenerate", m.precision_degenerate},
              {"recall_degenerate", m.recall_degenerate},
              {"f1_degenerate", m.f1_degenerate},
              {"auc_degenerate", m.auc_degenerate}};
}

Metrics metrics_from_json(const json& j) {
  Metrics m;
  m.tp = j.at("tp").get<long>();
  m.fp = j.at("fp").get<long>();
  m.tn = j.at("tn").get<long>();
  m.fn = j.at("fn").get<long>();
  m.accuracy = j.at("accuracy").get<double>();
  m.precision = j.at("precision").get<double>();
  m.recall = j.at("recall").get<double>();
  m.f1 = j.at("f1").get<double>();
  m.auc = j.at("auc").get<double>();
  m.precision_degenerate = j.at("precision_degenerate").get<bool>();
  m.recall_degenerate = j.at("recall_degenerate").get<bool>();
  m.f1_degenerate = j.at("f1_degenerate").get<bool>();
  m.auc_degenerate = j.at("auc_degenerate").get<bool>();
  return m;
}

json fold_to_json(const FoldResult& r) {
  json roc = json::array();
  for (const RocPoint& p : r.roc) roc.push_back(json{{"fpr", p.fpr}, {"tpr", p.tpr}});
  return json{{"fold_index", r.fold_index},
              {"best_epoch", r.best_epoch},
              {"best", metrics_to_json(r.best)},
              {"final", metrics_to_json(r.final)},
              {"roc", roc},
              {"test_ids", r.test_ids},
              {"test_labels", r.test_labels},
              {"probs_best", r.probs_best},
              {"probs_final", r.probs_final},
              {"train_loss", r.train_loss}};
}

FoldResult fold_from_json(const json& j) {
  FoldResult r;
  r.fold_index = j.at("fold_index").get<int>();
  r.best_epoch = j.at("best_epoch").get<int>();
  r.best = metrics_from_json(j.at("best"));
  r.final = metrics_from_json(j.at("final"));
  for (const json& p : j.at("roc")) {
    r.roc.push_back({p.at("fpr").get<double>(), p.at("tpr").get<double>()});
  }
  r.test_ids = j.at("test_ids").get<std::vector<std::string>>();
  r.test_labels = j.at("test_labels").get<std::vector<int>>();
  r.probs_best = j.at("probs_best").get<std::vector<double>>();
  r.probs_final = j.at("probs_final").get<std::vector<double>>();
  r.train_loss = j.at("train_loss").get<std::vector<double>>();
  return r;
}

json parse_json_text(const std::string& text, const char* what) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw DataError(std::string("invalid JSON for ") + what);
  return j;
}

}  // namespace

std::string fold_result_to_json(const FoldResult& r) { return fold_to_json(r).dump(2); }

FoldResult fold_result_from_json(const std::string& text) {
  try {
    return fold_from_json(parse_json_text(text, "fold result"));
  } catch (const json::exception& e) {
    throw DataError(std::string("fold result JSON: ") + e.what());
  }
}

std::string cv_result_to_json(const CvResult& r) {
  json folds = json::array();
  for (const FoldResult& f : r.folds) folds.push_back(fold_to_json(f));
  return json{{"folds", folds},
              {"mean_best", metrics_to_json(r.mean_best)},
              {"mean_final", metrics_to_json(r.mean_final)}}
      .dump(2);
}

CvResult cv_result_from_json(const std::string& text) {
  try {
    const json j = parse_json_text(text, "cv result");
    CvResult r;
    for (const json& f : j.at("folds")) r.folds.push_back(fold_from_json(f));
    r.mean_best = metrics_from_json(j.at("mean_best"));
    r.mean_final = metrics_from_json(j.at("mean_final"));
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("cv result JSON: ") + e.what());
  }
}

// ===========================================================================
// ablations and baseline
// ===========================================================================

std::vector<KSweepRow> run_ablation_k(const FeatureBundle& bundle, const FoldPlan& plan,
                                      const ModelConfig& mcfg, const diff::TrainConfig& tcfg,
                                      const std::vector<int>& k_values) {
  if (k_values.empty()) throw ConfigError("run_ablation_k: no k values");
  std::vector<KSweepRow> rows;
  rows.reserve(k_values.size());
  for (int k : k_values) {
    ModelConfig cfg = mcfg;
    cfg.k = k;
    rows.push_back({k, run_cv(bundle, plan, cfg, tcfg)});
  }
  return rows;
}

std::vector<FamSweepRow> run_ablation_fam(const FeatureBundle& bundle, const FoldPlan& plan,
                                          const ModelConfig& mcfg, const diff::TrainConfig& tcfg,
                                          const std::vector<int>& k_values) {
  if (k_values.empty()) throw ConfigError("run_ablation_fam: no k values");
  std::vector<FamSweepRow> rows;
  rows.reserve(k_values.size() * 2);
  for (int k : k_values) {
    for (bool fam : {true, false}) {
      ModelConfig cfg = mcfg;
      cfg.k = k;
      cfg.fam_enabled = fam;
      rows.push_back({k, fam, run_cv(bundle, plan, cfg, tcfg)});
    }
  }
  return rows;
}

CvResult baseline_lr_tf(const FeatureBundle& bundle, const FoldPlan& plan,
                        const diff::TrainConfig& tcfg) {
  diff::validate_train_config(tcfg);
  if (plan.assignment.size() != bundle.n_subjects()) {
    throw DataError("baseline_lr_tf: fold plan does not match dataset size");
  }
  const int C = bundle.manifest.n_channels;
  const int dim = kNumPeriods * kNumSubstances * C * kNumOtfStats;

  CvResult cv;
  for (int fold = 0; fold < plan.n_folds; ++fold) {
    const std::vector<int> train_idx = plan.train_indices(fold);
    const std::vector<int> test_idx = plan.test_indices(fold);
    const std::unordered_set<int> forbidden(test_idx.begin(), test_idx.end());
    for (int idx : train_idx) {
      if (forbidden.count(idx)) throw DataError("baseline_lr_tf: leakage in fold plan");
    }
    const FeatureNormalizer norm = fit_normalizer(bundle, train_idx, 1);

    // flattened standardized stat features per subject
    std::vector<std::vector<double>> flat(bundle.n_subjects());
    auto flatten = [&](int idx) {
      std::vector<double>& v = flat[idx];
      v.resize(dim);
      size_t pos = 0;
      for (int p = 0; p < kNumPeriods; ++p) {
        for (int s = 0; s < kNumSubstances; ++s) {
          const auto& o = bundle.raw[idx].otf[p][s];
          for (int ch = 0; ch < C; ++ch) {
            for (int st = 0; st < kNumOtfStats; ++st) {
              const double sd = norm.otf_std[p][s][st];
              v[pos++] = sd > 0.0 ? (o[ch * kNumOtfStats + st] - norm.otf_mean[p][s][st]) / sd : 0.0;
            }
          }
        }
      }
    };
    for (int idx : train_idx) flatten(idx);
    for (int idx : test_idx) flatten(idx);

    diff::ParamStore store;
    std::mt19937_64 rng(tcfg.seed + static_cast<std::uint64_t>(fold));
    store.create("lr.w", {dim, 2}, diff::uniform_init(dim, static_cast<size_t>(dim) * 2, rng));
    store.create("lr.b", {1, 2}, std::vector<double>(2, 0.0));

    auto forward = [&](int idx) {
      Tensor x = Tensor::constant({1, dim}, flat[idx]);
      return diff::softmax_rows(diff::linear(x, store.at("lr.w"), store.at("lr.b")));
    };
    // plain cross-entropy: focal loss with gamma 0, omega 1
    LoopOutcome out =
        run_training_loop(forward, store, train_idx, test_idx, bundle, tcfg, fold, 0.0, 1.0);
    cv.folds.push_back(std::move(out.report));
  }
  cv.mean_best = mean_fold_metrics(cv.folds, false);
  cv.mean_final = mean_fold_metrics(cv.folds, true);
  return cv;
}

}  // namespace nirsfreq
