#pragma once

// The classifier: per-(period, substance) temporal fusion of time-domain
// stats and top-k spectral features (with optional screening-initialized
// attention over the frequency slots), two graph-convolution stacks per
// fused embedding (correlation and coherence priors), a 3-step GRU over the
// period sequence shared across channels, channel mean-pooling, and a
// 2-class softmax head.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nirsfreq/dataset.hpp"
#include "nirsfreq/diff/nn.hpp"
#include "nirsfreq/signal.hpp"
#include "nirsfreq/spatial.hpp"

namespace nirsfreq {

struct ModelConfig {
  int channels = 53;
  int k = 8;           // retained spectral peaks per channel
  int d_k = 16;        // embedding width
  int l_num = 2;       // graph-conv layers per stack
  int gru_hidden = 32;
  int gru_layers = 3;
  bool fam_enabled = true;
};

void validate_model_config(const ModelConfig& cfg);

// Model-ready inputs for one subject: standardized stats and spectral
// features per (period, substance), all row-major.
struct SubjectFeatures {
  std::string id;
  int label = 0;
  int n_channels = 0;
  int k = 0;
  // [period][substance]; otf is channels x 6, the rest channels x k
  // (flattened channel-major: row ch*k + slot).
  std::array<std::array<std::vector<double>, kNumSubstances>, kNumPeriods> otf;
  std::array<std::array<std::vector<double>, kNumSubstances>, kNumPeriods> amp;
  std::array<std::array<std::vector<double>, kNumSubstances>, kNumPeriods> phase_sin;
  std::array<std::array<std::vector<double>, kNumSubstances>, kNumPeriods> phase_cos;
  std::array<std::array<std::vector<int>, kNumSubstances>, kNumPeriods> bins;
  // optional cache of positional_encoding(bins, d_k), channels*k x d_k;
  // computed on demand when empty
  std::array<std::array<std::vector<double>, kNumSubstances>, kNumPeriods> pe;
};

// Frequency positional encoding, one row per index:
//   PE[i][2j]   = sin(w_i / 10000^{2j/d_k})
//   PE[i][2j+1] = cos(w_i / 10000^{(2j+1)/d_k})
// including the asymmetric cosine exponent, exactly as specified.
std::vector<double> positional_encoding(const std::vector<int>& freq_indices, int d_k);

// Degree-normalized prior adjacencies as constant tensors, indexed
// [period][substance][relation] with relation 0 = correlation, 1 = coherence.
struct PriorTensors {
  std::array<std::array<std::array<diff::Tensor, 2>, kNumSubstances>, kNumPeriods> adj;

  static PriorTensors from_priors(const std::vector<SpatialPrior>& priors, int n_channels);
};

class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  diff::ParamStore& params() { return params_; }
  const diff::ParamStore& params() const { return params_; }

  // Overwrite the attention weights of one (period, substance) branch with
  // screening-derived |r| values (channels x k, row-major).
  void set_fam_init(int period, int substance, const std::vector<double>& w0);

  // Probability pair [1, 2] for one subject.
  diff::Tensor forward(const SubjectFeatures& features, const PriorTensors& priors);

  // Exposed stages (shape/invariant tests drive them directly).
  diff::Tensor tfm_forward(int period, int substance, const SubjectFeatures& features);
  diff::Tensor gcn_stack(int period, int substance, int relation, const diff::Tensor& fused,
                         const diff::Tensor& adjacency);
  diff::Tensor period_embedding(int period, const SubjectFeatures& features,
                                const PriorTensors& priors);

  // Independent arithmetic for the trainable scalar count; the constructor's
  // store must match it exactly.
  static size_t expected_param_count(const ModelConfig& cfg);

 private:
  void init_params(std::uint64_t seed);

  ModelConfig cfg_;
  diff::ParamStore params_;
};

}  // namespace nirsfreq
