#pragma once

// Training-side plumbing on top of the tensor core: named parameter storage
// with stable iteration order, uniform fan-in initialization, a GRU cell,
// Adam with decoupled-into-gradient L2, the milestone learning-rate
// schedule, finite-difference gradient checking, and binary checkpoints.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nirsfreq/diff/tensor.hpp"

namespace nirsfreq::diff {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::vector<int> milestones{30, 60, 90};
  double lr_gamma = 0.5;
  double focal_gamma = 1.5;
  double focal_omega = 0.5;
  double l2_lambda = 1e-4;
  int epochs = 100;
  int batch_size = 16;
  std::uint64_t seed = 2024;
};

void validate_train_config(const TrainConfig& cfg);

// lr = learning_rate * lr_gamma^(number of milestones <= epoch)
double lr_at(int epoch, const TrainConfig& cfg);

// Named trainable tensors in insertion order. Iteration order is the
// creation order, which makes initialization draws, Adam updates, and
// flattened views deterministic.
class ParamStore {
 public:
  Tensor& create(const std::string& name, std::vector<int> shape, std::vector<double> values);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  size_t n_tensors() const { return items_.size(); }
  size_t n_params() const;  // total scalar count
  void zero_grad();
  std::vector<double> flat_values() const;
  void set_flat_values(const std::vector<double>& values);
  std::vector<double> flat_grads() const;  // zeros where a grad was never touched

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, size_t> index_;
};

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) draws for weight matrices.
std::vector<double> uniform_init(int fan_in, size_t count, std::mt19937_64& rng);

// GRU cell parameters live in a ParamStore under `prefix` + {".wxr", ".whr",
// ".br", ".wxz", ".whz", ".bz", ".wxn", ".whn", ".bn"}.
void gru_init(ParamStore& store, const std::string& prefix, int in_dim, int hidden,
              std::mt19937_64& rng);

// One GRU step on a batch of rows:
//   r = sigmoid(x Wxr + h Whr + br)
//   z = sigmoid(x Wxz + h Whz + bz)
//   n = tanh(x Wxn + r (x) (h Whn) + bn)
//   h' = (1 - z) (x) h + z (x) n
Tensor gru_cell(const Tensor& x, const Tensor& h, ParamStore& store, const std::string& prefix);

// Adam (beta1=0.9, beta2=0.999, eps=1e-8) with bias correction. The L2 term
// adds l2_lambda * theta to the gradient before the moment update. Throws
// NumericError naming the parameter on a non-finite gradient.
class AdamOptimizer {
 public:
  AdamOptimizer() = default;
  void step(ParamStore& store, double lr, double l2_lambda);
  int t() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  std::unordered_map<std::string, Moments> state_;
  int t_ = 0;
};

// Central finite differences along random unit directions (n_probes > 0) or
// every coordinate (n_probes <= 0). f must rebuild the loss from the current
// store values; parameter values are restored afterwards.
struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int n_probes = 0;
};

GradCheckReport grad_check(const std::function<Tensor()>& f, ParamStore& store, double step,
                           int n_probes, std::uint64_t seed);

// Checkpoints: u64 header length, JSON header {name, shape, offset} entries,
// then the concatenated raw little-endian doubles.
void save_checkpoint(const ParamStore& store, const std::filesystem::path& path);
void load_checkpoint(ParamStore& store, const std::filesystem::path& path);

}  // namespace nirsfreq::diff
