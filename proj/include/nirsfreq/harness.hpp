#pragma once

// Cross-validation harness: feature preparation, stratified folds,
// leakage-guarded per-fold fitting (priors, normalization statistics,
// attention init), the training loop, metrics, and the ablation drivers.

#include <array>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "nirsfreq/dataset.hpp"
#include "nirsfreq/diff/nn.hpp"
#include "nirsfreq/model.hpp"
#include "nirsfreq/spatial.hpp"

namespace nirsfreq {

// ===========================================================================
// feature preparation (fold-independent, computed once per dataset)
// ===========================================================================

// Raw per-subject features at the widest k that will be needed; folds slice
// a k-prefix and standardize with train-only statistics.
struct SubjectRawFeatures {
  std::string id;
  int label = 0;
  // [period][substance]; otf is channels x 6 (already z-scored across
  // channels per subject), spectral arrays channels x k_max (row-major)
  std::array<std::array<std::vector<double>, kNumSubstances>, kNumPeriods> otf;
  std::array<std::array<std::vector<double>, kNumSubstances>, kNumPeriods> amp;
  std::array<std::array<std::vector<double>, kNumSubstances>, kNumPeriods> phase;
  std::array<std::array<std::vector<int>, kNumSubstances>, kNumPeriods> bins;
};

struct FeatureBundle {
  DatasetManifest manifest;
  int k_max = 0;
  std::vector<SubjectRawFeatures> raw;   // one per subject
  std::vector<SubjectSpatial> spatial;   // one per subject
  std::vector<int> labels;

  size_t n_subjects() const { return raw.size(); }
};

FeatureBundle prepare_features(const Dataset& dataset, int k_max,
                               const WelchParams& welch = WelchParams{}, int n_threads = 1);

// Point-biserial r per (channel, slot) amplitude cell for one
// (period, substance), over the given subjects. channels x k, row-major.
std::vector<double> screening_r(const FeatureBundle& bundle, const std::vector<int>& subjects,
                                int period, int substance, int k);

// ===========================================================================
// fold plans
// ===========================================================================

struct FoldPlan {
  int n_folds = 0;
  std::uint64_t seed = 0;
  std::vector<int> assignment;  // subject index -> fold

  std::vector<int> train_indices(int fold) const;
  std::vector<int> test_indices(int fold) const;
};

FoldPlan make_folds(const std::vector<int>& labels, int n_folds = 4, std::uint64_t seed = 2024);

// ===========================================================================
// metrics
// ===========================================================================

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct Metrics {
  long tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  bool precision_degenerate = false;
  bool recall_degenerate = false;
  bool f1_degenerate = false;
  bool auc_degenerate = false;
};

// ROC by sweeping all distinct scores as thresholds, (0,0) .. (1,1),
// monotone in both coordinates.
std::vector<RocPoint> roc_curve(const std::vector<double>& scores, const std::vector<int>& labels);
double roc_auc(const std::vector<RocPoint>& roc);

// scores are positive-class probabilities; hard threshold 0.5
Metrics compute_metrics(const std::vector<double>& scores, const std::vector<int>& labels);

// ===========================================================================
// per-fold fitting (train subjects only)
// ===========================================================================

// Standardization statistics fitted on training subjects: per
// (period, substance, stat) for the stat features and per
// (period, substance, slot) for the amplitudes, pooled over
// subjects x channels.
struct FeatureNormalizer {
  int k = 0;
  std::array<std::array<std::vector<double>, kNumSubstances>, kNumPeriods> otf_mean, otf_std;
  std::array<std::array<std::vector<double>, kNumSubstances>, kNumPeriods> amp_mean, amp_std;
};

FeatureNormalizer fit_normalizer(const FeatureBundle& bundle, const std::vector<int>& subjects,
                                 int k);

// Model-ready features for one subject: k-prefix slice, standardization,
// sin/cos phase encoding, positional-encoding cache for width d_k.
SubjectFeatures make_subject_features(const FeatureBundle& bundle, int subject,
                                      const FeatureNormalizer& norm, int d_k);

// Everything fitted from the training half of a fold. Any subject index in
// `forbidden` reaching these computations raises DataError.
struct FoldArtifacts {
  std::vector<SpatialPrior> priors;
  FeatureNormalizer normalizer;
  // [period][substance] -> channels x k |r| weights (empty when fam is off)
  std::array<std::array<std::vector<double>, kNumSubstances>, kNumPeriods> fam_init;
};

FoldArtifacts fit_fold_artifacts(const FeatureBundle& bundle, const std::vector<int>& train_subjects,
                                 const std::unordered_set<int>& forbidden, int k, bool fam_enabled);

// ===========================================================================
// training
// ===========================================================================

struct FoldResult {
  int fold_index = 0;
  int best_epoch = 0;
  Metrics best;
  Metrics final;
  std::vector<RocPoint> roc;  // at the best epoch
  std::vector<std::string> test_ids;
  std::vector<int> test_labels;
  std::vector<double> probs_best;
  std::vector<double> probs_final;
  std::vector<double> train_loss;  // per epoch
};

struct TrainedFold {
  FoldResult report;
  std::vector<double> best_theta;
  std::vector<double> final_theta;
};

struct CvResult {
  std::vector<FoldResult> folds;
  Metrics mean_best;
  Metrics mean_final;
};

// Rates averaged over folds, confusion counts summed, degeneracy flags OR'd.
Metrics mean_fold_metrics(const std::vector<FoldResult>& folds, bool final_epoch);

TrainedFold train_fold(const FeatureBundle& bundle, const FoldPlan& plan, int fold_index,
                       const ModelConfig& mcfg, const diff::TrainConfig& tcfg);

CvResult run_cv(const FeatureBundle& bundle, const FoldPlan& plan, const ModelConfig& mcfg,
                const diff::TrainConfig& tcfg);

// JSON (text) round trip is lossless
std::string fold_result_to_json(const FoldResult& r);
FoldResult fold_result_from_json(const std::string& text);
std::string cv_result_to_json(const CvResult& r);
CvResult cv_result_from_json(const std::string& text);

// ===========================================================================
// ablations and baseline
// ===========================================================================

struct KSweepRow {
  int k = 0;
  CvResult result;
};

// one full CV per k, identical fold plan throughout
std::vector<KSweepRow> run_ablation_k(const FeatureBundle& bundle, const FoldPlan& plan,
                                      const ModelConfig& mcfg, const diff::TrainConfig& tcfg,
                                      const std::vector<int>& k_values);

struct FamSweepRow {
  int k = 0;
  bool fam_enabled = false;
  CvResult result;
};

std::vector<FamSweepRow> run_ablation_fam(const FeatureBundle& bundle, const FoldPlan& plan,
                                          const ModelConfig& mcfg, const diff::TrainConfig& tcfg,
                                          const std::vector<int>& k_values = {2, 5, 8});

// Logistic regression on the flattened per-(period, substance) stat
// features (3*3*channels*6 inputs), plain cross-entropy, same folds.
CvResult baseline_lr_tf(const FeatureBundle& bundle, const FoldPlan& plan,
                        const diff::TrainConfig& tcfg);

}  // namespace nirsfreq
