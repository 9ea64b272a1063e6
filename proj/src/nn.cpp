#include "nirsfreq/diff/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "json.hpp"
#include "nirsfreq/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace nirsfreq::diff {

using nlohmann::json;

void validate_train_config(const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  for (size_t i = 1; i < cfg.milestones.size(); ++i)
    if (cfg.milestones[i] <= cfg.milestones[i - 1])
      throw ConfigError("milestones must be strictly increasing");
  if (cfg.focal_gamma < 0.0) throw ConfigError("focal_gamma must be >= 0");
  if (!(cfg.focal_omega > 0.0 && cfg.focal_omega <= 1.0))
    throw ConfigError("focal_omega must lie in (0, 1]");
  if (cfg.l2_lambda < 0.0) throw ConfigError("l2_lambda must be >= 0");
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(cfg.lr_gamma > 0.0)) throw ConfigError("lr_gamma must be positive");
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ConfigError("epoch must be >= 0");
  int passed = 0;
  for (int m : cfg.milestones)
    if (m <= epoch) ++passed;
  return cfg.learning_rate * std::pow(cfg.lr_gamma, passed);
}

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

Tensor& ParamStore::create(const std::string& name, std::vector<int> shape,
                           std::vector<double> values) {
  if (index_.count(name)) throw NumericError("parameter already exists: " + name);
  index_[name] = items_.size();
  items_.emplace_back(name, Tensor::parameter(std::move(shape), std::move(values)));
  return items_.back().second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw NumericError("unknown parameter: " + name);
  return items_[it->second].second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw NumericError("unknown parameter: " + name);
  return items_[it->second].second;
}

bool ParamStore::contains(const std::string& name) const { return index_.count(name) > 0; }

size_t ParamStore::n_params() const {
  size_t total = 0;
  for (const auto& [name, t] : items_) total += t.size();
  return total;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : items_) t.grad().assign(t.size(), 0.0);
}

std::vector<double> ParamStore::flat_values() const {
  std::vector<double> out;
  out.reserve(n_params());
  for (const auto& [name, t] : items_) out.insert(out.end(), t.value().begin(), t.value().end());
  return out;
}

void ParamStore::set_flat_values(const std::vector<double>& values) {
  if (values.size() != n_params())
    throw NumericError("set_flat_values: size mismatch");
  size_t off = 0;
  for (auto& [name, t] : items_) {
    std::copy(values.begin() + static_cast<std::ptrdiff_t>(off),
              values.begin() + static_cast<std::ptrdiff_t>(off + t.size()), t.value().begin());
    off += t.size();
  }
}

std::vector<double> ParamStore::flat_grads() const {
  std::vector<double> out;
  out.reserve(n_params());
  for (const auto& [name, t] : items_) {
    if (t.grad().size() == t.size())
      out.insert(out.end(), t.grad().begin(), t.grad().end());
    else
      out.insert(out.end(), t.size(), 0.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Initialization and GRU
// ---------------------------------------------------------------------------

std::vector<double> uniform_init(int fan_in, size_t count, std::mt19937_64& rng) {
  if (fan_in < 1) throw ConfigError("fan_in must be >= 1");
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> out(count);
  for (auto& v : out) v = dist(rng);
  return out;
}

void gru_init(ParamStore& store, const std::string& prefix, int in_dim, int hidden,
              std::mt19937_64& rng) {
  const size_t xw = static_cast<size_t>(in_dim) * static_cast<size_t>(hidden);
  const size_t hw = static_cast<size_t>(hidden) * static_cast<size_t>(hidden);
  const std::vector<double> zero_bias(static_cast<size_t>(hidden), 0.0);
  for (const char* gate : {"r", "z", "n"}) {
    store.create(prefix + ".wx" + gate, {in_dim, hidden}, uniform_init(in_dim, xw, rng));
    store.create(prefix + ".wh" + gate, {hidden, hidden}, uniform_init(hidden, hw, rng));
    store.create(prefix + ".b" + gate, {1, hidden}, zero_bias);
  }
}

Tensor gru_cell(const Tensor& x, const Tensor& h, ParamStore& store, const std::string& prefix) {
  const Tensor& wxr = store.at(prefix + ".wxr");
  const Tensor& whr = store.at(prefix + ".whr");
  const Tensor& br = store.at(prefix + ".br");
  const Tensor& wxz = store.at(prefix + ".wxz");
  const Tensor& whz = store.at(prefix + ".whz");
  const Tensor& bz = store.at(prefix + ".bz");
  const Tensor& wxn = store.at(prefix + ".wxn");
  const Tensor& whn = store.at(prefix + ".whn");
  const Tensor& bn = store.at(prefix + ".bn");

  Tensor r = sigmoid(add_rowvec(add(matmul(x, wxr), matmul(h, whr)), br));
  Tensor z = sigmoid(add_rowvec(add(matmul(x, wxz), matmul(h, whz)), bz));
  Tensor n = tanh_t(add_rowvec(add(matmul(x, wxn), mul(r, matmul(h, whn))), bn));
  // h' = (1 - z) (x) h + z (x) n, written as h + z (x) (n - h)
  return add(h, mul(z, sub(n, h)));
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void AdamOptimizer::step(ParamStore& store, double lr, double l2_lambda) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, t_);
  const double bc2 = 1.0 - std::pow(beta2, t_);
  for (const auto& [name, param] : store.items()) {
    Tensor t = param;  // shares the underlying node
    auto& moments = state_[name];
    if (moments.m.size() != t.size()) {
      moments.m.assign(t.size(), 0.0);
      moments.v.assign(t.size(), 0.0);
    }
    const bool has_grad = t.grad().size() == t.size();
    for (size_t i = 0; i < t.size(); ++i) {
      double g = has_grad ? t.grad()[i] : 0.0;
      if (!std::isfinite(g))
        throw NumericError("non-finite gradient in parameter '" + name + "' at index " +
                           std::to_string(i));
      g += l2_lambda * t.value()[i];
      moments.m[i] = beta1 * moments.m[i] + (1.0 - beta1) * g;
      moments.v[i] = beta2 * moments.v[i] + (1.0 - beta2) * g * g;
      const double mhat = moments.m[i] / bc1;
      const double vhat = moments.v[i] / bc2;
      t.value()[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

GradCheckReport grad_check(const std::function<Tensor()>& f, ParamStore& store, double step,
                           int n_probes, std::uint64_t seed) {
  if (!(step > 0.0)) throw ConfigError("grad_check step must be positive");
  store.zero_grad();
  Tensor loss = f();
  backward(loss);
  const std::vector<double> analytic = store.flat_grads();
  const std::vector<double> theta = store.flat_values();
  const size_t dim = theta.size();

  auto eval_at = [&](const std::vector<double>& point) {
    store.set_flat_values(point);
    NoGradGuard guard;
    return f().scalar();
  };

  GradCheckReport report;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> probe(dim);
  const int total = n_probes > 0 ? n_probes : static_cast<int>(dim);
  std::vector<double> point(dim);
  for (int p = 0; p < total; ++p) {
    if (n_probes > 0) {
      double norm = 0.0;
      for (auto& u : probe) {
        u = normal(rng);
        norm += u * u;
      }
      norm = std::sqrt(norm);
      for (auto& u : probe) u /= norm;
    } else {
      std::fill(probe.begin(), probe.end(), 0.0);
      probe[static_cast<size_t>(p)] = 1.0;
    }
    for (size_t i = 0; i < dim; ++i) point[i] = theta[i] + step * probe[i];
    const double f_plus = eval_at(point);
    for (size_t i = 0; i < dim; ++i) point[i] = theta[i] - step * probe[i];
    const double f_minus = eval_at(point);
    const double fd = (f_plus - f_minus) / (2.0 * step);
    double an = 0.0;
    for (size_t i = 0; i < dim; ++i) an += analytic[i] * probe[i];
    const double abs_err = std::fabs(fd - an);
    const double rel_err = abs_err / std::max(std::fabs(fd) + std::fabs(an), 1e-6);
    report.max_abs_err = std::max(report.max_abs_err, abs_err);
    report.max_rel_err = std::max(report.max_rel_err, rel_err);
  }
  report.n_probes = total;
  store.set_flat_values(theta);
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path) {
  json header = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : store.items()) {
    json entry;
    entry["name"] = name;
    entry["shape"] = t.shape();
    entry["offset"] = offset;
    header.push_back(entry);
    offset += t.size() * sizeof(double);
  }
  json root;
  root["format"] = "param-checkpoint";
  root["version"] = 1;
  root["endianness"] = "little";
  root["tensors"] = header;
  const std::string htext = root.dump();

  std::string blob;
  std::uint64_t hlen = htext.size();
  blob.reserve(sizeof(hlen) + htext.size() + offset);
  blob.append(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  blob.append(htext);
  for (const auto& [name, t] : store.items())
    blob.append(reinterpret_cast<const char*>(t.value().data()), t.size() * sizeof(double));
  atomic_write_file(path, blob);
}

void load_checkpoint(ParamStore& store, const std::filesystem::path& path) {
  const std::string blob = read_text_file(path);
  if (blob.size() < sizeof(std::uint64_t)) throw DataError("checkpoint truncated: " + path.string());
  std::uint64_t hlen = 0;
  std::memcpy(&hlen, blob.data(), sizeof(hlen));
  if (blob.size() < sizeof(hlen) + hlen) throw DataError("checkpoint truncated: " + path.string());
  json root;
  try {
    root = json::parse(blob.substr(sizeof(hlen), hlen));
  } catch (const json::exception& e) {
    throw DataError(std::string("bad checkpoint header: ") + e.what());
  }
  if (root.value("endianness", "") != "little")
    throw DataError("checkpoint endianness mismatch");
  const size_t data_start = sizeof(hlen) + hlen;
  size_t loaded = 0;
  for (const auto& entry : root.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<int>>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    if (!store.contains(name))
      throw DataError("checkpoint has unknown parameter: " + name);
    Tensor& t = store.at(name);
    if (t.shape() != shape) throw DataError("checkpoint shape mismatch for: " + name);
    const size_t bytes = t.size() * sizeof(double);
    if (data_start + offset + bytes > blob.size())
      throw DataError("checkpoint truncated at parameter: " + name);
    std::memcpy(t.value().data(), blob.data() + data_start + offset, bytes);
    ++loaded;
  }
  if (loaded != store.n_tensors())
    throw DataError("checkpoint is missing parameters (" + std::to_string(loaded) + " of " +
                    std::to_string(store.n_tensors()) + ")");
}

}  // namespace nirsfreq::diff
