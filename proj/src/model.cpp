#include "nirsfreq/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "nirsfreq/common.hpp"

namespace nirsfreq {

using diff::Tensor;

void validate_model_config(const ModelConfig& cfg) {
  if (cfg.channels < 2) throw ConfigError("model: channels must be >= 2");
  if (cfg.k < 1) throw ConfigError("model: k must be >= 1");
  if (cfg.d_k < 2) throw ConfigError("model: d_k must be >= 2");
  if (cfg.l_num < 1) throw ConfigError("model: l_num must be >= 1");
  if (cfg.gru_hidden < 1) throw ConfigError("model: gru_hidden must be >= 1");
  if (cfg.gru_layers < 1) throw ConfigError("model: gru_layers must be >= 1");
}

std::vector<double> positional_encoding(const std::vector<int>& freq_indices, int d_k) {
  if (d_k < 1) throw ConfigError("positional_encoding: d_k must be >= 1");
  std::vector<double> pe(freq_indices.size() * static_cast<size_t>(d_k));
  for (size_t i = 0; i < freq_indices.size(); ++i) {
    if (freq_indices[i] < 0) throw DataError("positional_encoding: negative frequency index");
    const double w = static_cast<double>(freq_indices[i]);
    for (int d = 0; d < d_k; ++d) {
      const double denom = std::pow(10000.0, static_cast<double>(d) / d_k);
      pe[i * d_k + d] = (d % 2 == 0) ? std::sin(w / denom) : std::cos(w / denom);
    }
  }
  return pe;
}

PriorTensors PriorTensors::from_priors(const std::vector<SpatialPrior>& priors, int n_channels) {
  PriorTensors out;
  const size_t nn = static_cast<size_t>(n_channels) * n_channels;
  std::array<std::array<std::array<bool, 2>, kNumSubstances>, kNumPeriods> seen{};
  for (const auto& prior : priors) {
    if (prior.period < 0 || prior.period >= kNumPeriods || prior.substance < 0 ||
        prior.substance >= kNumSubstances) {
      throw DataError("prior tensors: period/substance index out of range");
    }
    if (prior.corr.size() != nn || prior.cohe.size() != nn) {
      throw DataError("prior tensors: matrix size does not match channel count");
    }
    NormalizedAdjacency corr = normalize_adjacency(prior.corr, n_channels);
    NormalizedAdjacency cohe = normalize_adjacency(prior.cohe, n_channels);
    out.adj[prior.period][prior.substance][0] =
        Tensor::constant({n_channels, n_channels}, corr.values);
    out.adj[prior.period][prior.substance][1] =
        Tensor::constant({n_channels, n_channels}, cohe.values);
    seen[prior.period][prior.substance][0] = true;
    seen[prior.period][prior.substance][1] = true;
  }
  for (int p = 0; p < kNumPeriods; ++p) {
    for (int s = 0; s < kNumSubstances; ++s) {
      if (!seen[p][s][0]) {
        throw DataError("prior tensors: missing prior for " + std::string(kPeriodNames[p]) + "/" +
                        std::string(kSubstanceNames[s]));
      }
    }
  }
  return out;
}

// ===========================================================================
// construction
// ===========================================================================

namespace {

std::string tfm_prefix(int p, int s) {
  return "tfm.p" + std::to_string(p) + ".s" + std::to_string(s);
}

std::string gcn_prefix(int p, int s, int r, int l) {
  return "gcn.p" + std::to_string(p) + ".s" + std::to_string(s) + ".r" + std::to_string(r) + ".l" +
         std::to_string(l);
}

void check_finite_rows(const Tensor& t, const std::string& stage) {
  for (double v : t.value()) {
    if (!std::isfinite(v)) throw NumericError("non-finite activation in " + stage);
  }
}

}  // namespace

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  validate_model_config(cfg_);
  init_params(seed);
  const size_t expect = expected_param_count(cfg_);
  if (params_.n_params() != expect) {
    throw NumericError("model parameter count mismatch: store has " +
                       std::to_string(params_.n_params()) + ", arithmetic gives " +
                       std::to_string(expect));
  }
}

void Model::init_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int C = cfg_.channels;
  const int k = cfg_.k;
  const int d = cfg_.d_k;
  const int H = cfg_.gru_hidden;

  auto make_linear = [&](const std::string& name, int in, int out, bool bias) {
    params_.create(name + ".w", {in, out}, diff::uniform_init(in, static_cast<size_t>(in) * out, rng));
    if (bias) params_.create(name + ".b", {1, out}, std::vector<double>(out, 0.0));
  };

  for (int p = 0; p < kNumPeriods; ++p) {
    for (int s = 0; s < kNumSubstances; ++s) {
      const std::string pre = tfm_prefix(p, s);
      make_linear(pre + ".otf", kNumOtfStats, d, true);
      make_linear(pre + ".dtf", 3, d, true);
      if (cfg_.fam_enabled) {
        // attention over frequency slots; overwritten by screening init
        params_.create(pre + ".fam.w", {C, k},
                       diff::uniform_init(k, static_cast<size_t>(C) * k, rng));
        make_linear(pre + ".fam.mlp", d, d, /*bias=*/false);
      }
      make_linear(pre + ".fuse", (k + 1) * d, d, true);
    }
  }
  for (int p = 0; p < kNumPeriods; ++p) {
    for (int s = 0; s < kNumSubstances; ++s) {
      for (int r = 0; r < 2; ++r) {
        for (int l = 0; l < cfg_.l_num; ++l) {
          const std::string pre = gcn_prefix(p, s, r, l);
          make_linear(pre, d, d, /*bias=*/false);
          make_linear(pre + ".mlp", d, d, true);
        }
      }
    }
  }
  for (int l = 0; l < cfg_.gru_layers; ++l) {
    const int in_dim = (l == 0) ? 2 * kNumSubstances * d : H;
    diff::gru_init(params_, "gru.l" + std::to_string(l), in_dim, H, rng);
  }
  make_linear("head", H, 2, true);
}

size_t Model::expected_param_count(const ModelConfig& cfg) {
  const size_t C = static_cast<size_t>(cfg.channels);
  const size_t k = static_cast<size_t>(cfg.k);
  const size_t d = static_cast<size_t>(cfg.d_k);
  const size_t H = static_cast<size_t>(cfg.gru_hidden);
  size_t per_branch = (kNumOtfStats * d + d) + (3 * d + d) + ((k + 1) * d * d + d);
  if (cfg.fam_enabled) per_branch += C * k + d * d;
  const size_t gcn = static_cast<size_t>(kNumPeriods) * kNumSubstances * 2 * cfg.l_num *
                     (d * d + d * d + d);
  size_t gru = 0;
  for (int l = 0; l < cfg.gru_layers; ++l) {
    const size_t in_dim = (l == 0) ? 2 * kNumSubstances * d : H;
    gru += 3 * (in_dim * H + H * H + H);
  }
  const size_t head = H * 2 + 2;
  return static_cast<size_t>(kNumPeriods) * kNumSubstances * per_branch + gcn + gru + head;
}

void Model::set_fam_init(int period, int substance, const std::vector<double>& w0) {
  if (!cfg_.fam_enabled) throw ConfigError("set_fam_init: attention module is disabled");
  if (period < 0 || period >= kNumPeriods || substance < 0 || substance >= kNumSubstances) {
    throw ConfigError("set_fam_init: period/substance out of range");
  }
  const size_t want = static_cast<size_t>(cfg_.channels) * cfg_.k;
  if (w0.size() != want) {
    throw DataError("set_fam_init: expected " + std::to_string(want) + " weights, got " +
                    std::to_string(w0.size()));
  }
  for (double v : w0) {
    if (!std::isfinite(v)) throw NumericError("set_fam_init: non-finite weight");
  }
  Tensor w = params_.at(tfm_prefix(period, substance) + ".fam.w");
  w.node()->value = w0;
}

// ===========================================================================
// forward
// ===========================================================================

diff::Tensor Model::tfm_forward(int period, int substance, const SubjectFeatures& f) {
  const int C = cfg_.channels;
  const int k = cfg_.k;
  const int d = cfg_.d_k;
  if (f.n_channels != C || f.k != k) {
    throw DataError("model forward: feature dims (" + std::to_string(f.n_channels) + "," +
                    std::to_string(f.k) + ") do not match config (" + std::to_string(C) + "," +
                    std::to_string(k) + ")");
  }
  const std::string pre = tfm_prefix(period, substance);
  const size_t slots = static_cast<size_t>(C) * k;
  const auto& amp = f.amp[period][substance];
  const auto& psin = f.phase_sin[period][substance];
  const auto& pcos = f.phase_cos[period][substance];
  const auto& bins = f.bins[period][substance];
  if (f.otf[period][substance].size() != static_cast<size_t>(C) * kNumOtfStats ||
      amp.size() != slots || psin.size() != slots || pcos.size() != slots ||
      bins.size() != slots) {
    throw DataError("model forward: feature arrays have unexpected size for subject " + f.id);
  }

  // stat branch: channels x 6 -> channels x d
  Tensor otf = Tensor::constant({C, kNumOtfStats}, f.otf[period][substance]);
  Tensor f_o = diff::elu(diff::linear(otf, params_.at(pre + ".otf.w"), params_.at(pre + ".otf.b")));

  // spectral branch: one row per (channel, slot) holding [A, sin phi, cos phi]
  std::vector<double> rows(slots * 3);
  for (size_t i = 0; i < slots; ++i) {
    rows[3 * i + 0] = amp[i];
    rows[3 * i + 1] = psin[i];
    rows[3 * i + 2] = pcos[i];
  }
  Tensor dtf_in = Tensor::constant({static_cast<int>(slots), 3}, rows);
  Tensor f_d =
      diff::elu(diff::linear(dtf_in, params_.at(pre + ".dtf.w"), params_.at(pre + ".dtf.b")));
  const auto& pe_cache = f.pe[period][substance];
  Tensor pe;
  if (pe_cache.empty()) {
    pe = Tensor::constant({static_cast<int>(slots), d}, positional_encoding(bins, d));
  } else {
    if (pe_cache.size() != slots * static_cast<size_t>(d)) {
      throw DataError("model forward: cached positional encoding has wrong size");
    }
    pe = Tensor::constant({static_cast<int>(slots), d}, pe_cache);
  }
  f_d = diff::add(f_d, pe);

  if (cfg_.fam_enabled) {
    // per-slot attention scale followed by a bias-free mixing map; kept
    // linear so doubling the weights doubles the branch output exactly
    Tensor w = params_.at(pre + ".fam.w");
    f_d = diff::row_scale(f_d, diff::reshape(w, {static_cast<int>(slots), 1}));
    f_d = diff::matmul(f_d, params_.at(pre + ".fam.mlp.w"));
  }

  Tensor per_channel = diff::reshape(f_d, {C, k * d});
  Tensor fused = diff::elu(diff::linear(diff::concat_cols({f_o, per_channel}),
                                        params_.at(pre + ".fuse.w"), params_.at(pre + ".fuse.b")));
  return fused;
}

diff::Tensor Model::gcn_stack(int period, int substance, int relation, const diff::Tensor& fused,
                              const diff::Tensor& adjacency) {
  if (relation < 0 || relation > 1) throw ConfigError("gcn_stack: relation must be 0 or 1");
  Tensor g = fused;
  for (int l = 0; l < cfg_.l_num; ++l) {
    const std::string pre = gcn_prefix(period, substance, relation, l);
    Tensor mixed = diff::matmul(diff::matmul(adjacency, g), params_.at(pre + ".w"));
    g = diff::elu(diff::linear(mixed, params_.at(pre + ".mlp.w"), params_.at(pre + ".mlp.b")));
  }
  return g;
}

diff::Tensor Model::period_embedding(int period, const SubjectFeatures& f,
                                     const PriorTensors& priors) {
  std::vector<Tensor> parts;
  parts.reserve(kNumSubstances * 2);
  for (int s = 0; s < kNumSubstances; ++s) {
    Tensor fused = tfm_forward(period, s, f);
    for (int r = 0; r < 2; ++r) {
      parts.push_back(gcn_stack(period, s, r, fused, priors.adj[period][s][r]));
    }
  }
  Tensor emb = diff::concat_cols(parts);  // channels x 6*d_k
  check_finite_rows(emb, std::string(kPeriodNames[period]) + " period embedding");
  return emb;
}

diff::Tensor Model::forward(const SubjectFeatures& f, const PriorTensors& priors) {
  const int C = cfg_.channels;
  const int H = cfg_.gru_hidden;
  for (int p = 0; p < kNumPeriods; ++p) {
    for (int s = 0; s < kNumSubstances; ++s) {
      if (!priors.adj[p][s][0].defined() || !priors.adj[p][s][1].defined()) {
        throw DataError("model forward: missing prior adjacency");
      }
      if (priors.adj[p][s][0].rows() != C || priors.adj[p][s][0].cols() != C) {
        throw DataError("model forward: prior adjacency shape does not match channel count");
      }
    }
  }

  // channels act as the batch dimension; the recurrence steps over periods
  std::vector<Tensor> hidden(static_cast<size_t>(cfg_.gru_layers));
  for (auto& h : hidden) {
    h = Tensor::constant({C, H}, std::vector<double>(static_cast<size_t>(C) * H, 0.0));
  }
  for (int p = 0; p < kNumPeriods; ++p) {
    Tensor x = period_embedding(p, f, priors);
    for (int l = 0; l < cfg_.gru_layers; ++l) {
      hidden[l] = diff::gru_cell(x, hidden[l], params_, "gru.l" + std::to_string(l));
      x = hidden[l];
    }
  }

  Tensor pooled = diff::mean_rows(hidden.back());  // 1 x H
  Tensor logits =
      diff::elu(diff::linear(pooled, params_.at("head.w"), params_.at("head.b")));
  Tensor probs = diff::softmax_rows(logits);
  check_finite_rows(probs, "output probabilities");
  return probs;
}

}  // namespace nirsfreq
