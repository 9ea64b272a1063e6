#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "doctest.h"
#include "nirsfreq/common.hpp"
#include "nirsfreq/diff/nn.hpp"
#include "nirsfreq/diff/tensor.hpp"

using namespace nirsfreq;
using namespace nirsfreq::diff;
namespace fs = std::filesystem;

namespace {

// deterministic distinct weights so symmetric mistakes cannot cancel
Tensor weighted_sum(const Tensor& t) {
  const int n = static_cast<int>(t.size());
  std::vector<double> w(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) w[static_cast<size_t>(i)] = 1.5 + std::sin(0.7 * i + 0.3);
  return matmul(reshape(t, {1, n}), Tensor::constant({n, 1}, w));
}

std::vector<double> randv(size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> out(n);
  for (auto& v : out) v = dist(rng);
  return out;
}

double full_grad_check(const std::function<Tensor()>& f, ParamStore& store) {
  return grad_check(f, store, 1e-5, 0, 777).max_rel_err;
}

}  // namespace

// ===========================================================================
// per-op gradients vs central finite differences
// ===========================================================================

TEST_CASE("elementwise op gradients match finite differences") {
  std::mt19937_64 rng(100);
  ParamStore store;
  Tensor a = store.create("a", {3, 4}, randv(12, rng));
  Tensor b = store.create("b", {3, 4}, randv(12, rng));

  CHECK(full_grad_check([&] { return weighted_sum(add(a, b)); }, store) < 1e-6);
  CHECK(full_grad_check([&] { return weighted_sum(sub(a, b)); }, store) < 1e-6);
  CHECK(full_grad_check([&] { return weighted_sum(mul(a, b)); }, store) < 1e-6);
  CHECK(full_grad_check([&] { return weighted_sum(scale(a, -2.5)); }, store) < 1e-6);
}

TEST_CASE("matmul and linear gradients match finite differences") {
  std::mt19937_64 rng(101);
  ParamStore store;
  Tensor x = store.create("x", {3, 4}, randv(12, rng));
  Tensor w = store.create("w", {4, 2}, randv(8, rng));
  Tensor bias = store.create("b", {1, 2}, randv(2, rng));

  CHECK(full_grad_check([&] { return weighted_sum(matmul(x, w)); }, store) < 1e-6);
  CHECK(full_grad_check([&] { return weighted_sum(add_rowvec(matmul(x, w), bias)); }, store) <
        1e-6);
  CHECK(full_grad_check([&] { return weighted_sum(linear(x, w, bias)); }, store) < 1e-6);
  CHECK(full_grad_check([&] { return weighted_sum(linear(x, w, Tensor())); }, store) < 1e-6);
}

TEST_CASE("activation gradients match finite differences") {
  std::mt19937_64 rng(102);
  ParamStore store;
  // keep values away from the ELU kink at 0 so FD stays two-sided smooth
  std::vector<double> vals = randv(12, rng);
  for (auto& v : vals) v = (v >= 0.0 ? v + 0.2 : v - 0.2);
  Tensor a = store.create("a", {3, 4}, vals);

  CHECK(full_grad_check([&] { return weighted_sum(elu(a)); }, store) < 1e-6);
  CHECK(full_grad_check([&] { return weighted_sum(sigmoid(a)); }, store) < 1e-6);
  CHECK(full_grad_check([&] { return weighted_sum(tanh_t(a)); }, store) < 1e-6);
  CHECK(full_grad_check([&] { return weighted_sum(softmax_rows(a)); }, store) < 1e-6);
}

TEST_CASE("structural op gradients match finite differences") {
  std::mt19937_64 rng(103);
  ParamStore store;
  Tensor a = store.create("a", {3, 2}, randv(6, rng));
  Tensor b = store.create("b", {3, 3}, randv(9, rng));
  Tensor s = store.create("s", {3, 1}, randv(3, rng));

  CHECK(full_grad_check([&] { return weighted_sum(concat_cols({a, b})); }, store) < 1e-6);
  CHECK(full_grad_check([&] { return weighted_sum(reshape(b, {1, 9})); }, store) < 1e-6);
  CHECK(full_grad_check([&] { return weighted_sum(row_scale(b, s)); }, store) < 1e-6);
  CHECK(full_grad_check([&] { return weighted_sum(mean_rows(b)); }, store) < 1e-6);
}

TEST_CASE("focal loss gradient through softmax matches finite differences") {
  std::mt19937_64 rng(104);
  ParamStore store;
  Tensor logits = store.create("logits", {1, 3}, randv(3, rng));
  CHECK(full_grad_check([&] { return focal_loss(softmax_rows(logits), 2, 1.5, 0.5); }, store) <
        1e-6);
  CHECK(full_grad_check([&] { return focal_loss(softmax_rows(logits), 0, 0.0, 1.0); }, store) <
        1e-6);
}

TEST_CASE("gru cell gradient matches finite differences") {
  std::mt19937_64 rng(105);
  ParamStore store;
  gru_init(store, "g", 2, 3, rng);
  // biases start at zero; move them off zero so their FD direction is generic
  for (const char* gate : {"r", "z", "n"})
    store.at(std::string("g.b") + gate).value() = randv(3, rng, 0.3);
  const Tensor x = Tensor::constant({2, 2}, randv(4, rng));
  const Tensor h = Tensor::constant({2, 3}, randv(6, rng, 0.5));
  CHECK(full_grad_check([&] { return weighted_sum(gru_cell(x, h, store, "g")); }, store) < 1e-6);
}

TEST_CASE("composite mlp gradient matches finite differences") {
  std::mt19937_64 rng(106);
  ParamStore store;
  Tensor w1 = store.create("w1", {4, 5}, randv(20, rng, 0.5));
  Tensor b1 = store.create("b1", {1, 5}, randv(5, rng, 0.1));
  Tensor w2 = store.create("w2", {5, 2}, randv(10, rng, 0.5));
  Tensor b2 = store.create("b2", {1, 2}, randv(2, rng, 0.1));
  const Tensor x = Tensor::constant({3, 4}, randv(12, rng));
  auto f = [&] {
    Tensor hidden = elu(linear(x, w1, b1));
    Tensor probs = softmax_rows(mean_rows(linear(hidden, w2, b2)));
    return focal_loss(probs, 1, 1.5, 0.5);
  };
  CHECK(full_grad_check(f, store) < 1e-6);
}

// ===========================================================================
// forward-value pins
// ===========================================================================

TEST_CASE("softmax and elu pin hand values") {
  const Tensor s = softmax_rows(Tensor::constant({1, 2}, {0.0, std::log(2.0)}));
  CHECK(s.value()[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(s.value()[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  const Tensor e = elu(Tensor::constant({1, 3}, {-1.0, 0.0, 2.0}));
  CHECK(e.value()[0] == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-12));
  CHECK(e.value()[1] == 0.0);
  CHECK(e.value()[2] == 2.0);

  // softmax rows always sum to one, even for extreme logits
  const Tensor big = softmax_rows(Tensor::constant({1, 3}, {1000.0, 999.0, -1000.0}));
  double sum = 0.0;
  for (double v : big.value()) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("gru cell matches the gate equations on scalars") {
  ParamStore store;
  store.create("g.wxr", {1, 1}, {0.5});
  store.create("g.whr", {1, 1}, {-0.3});
  store.create("g.br", {1, 1}, {0.1});
  store.create("g.wxz", {1, 1}, {0.2});
  store.create("g.whz", {1, 1}, {0.4});
  store.create("g.bz", {1, 1}, {-0.2});
  store.create("g.wxn", {1, 1}, {0.7});
  store.create("g.whn", {1, 1}, {0.6});
  store.create("g.bn", {1, 1}, {0.05});
  const double xv = 0.8, hv = -0.4;
  const Tensor out = gru_cell(Tensor::constant({1, 1}, {xv}), Tensor::constant({1, 1}, {hv}),
                              store, "g");
  auto sigma = [](double t) { return 1.0 / (1.0 + std::exp(-t)); };
  const double r = sigma(xv * 0.5 + hv * -0.3 + 0.1);
  const double z = sigma(xv * 0.2 + hv * 0.4 + -0.2);
  const double n = std::tanh(xv * 0.7 + r * (hv * 0.6) + 0.05);
  const double expected = (1.0 - z) * hv + z * n;
  CHECK(std::abs(out.value()[0] - expected) <= 1e-12);
}

TEST_CASE("focal loss pins and clamping") {
  const Tensor half = Tensor::constant({1, 2}, {0.5, 0.5});
  // -0.5 * 0.5^1.5 * ln(0.5)
  CHECK(focal_loss(half, 1, 1.5, 0.5).scalar() ==
        doctest::Approx(0.1225322).epsilon(1e-6));
  // gamma=0, omega=1 is plain cross-entropy
  const Tensor p = Tensor::constant({1, 2}, {0.27, 0.73});
  CHECK(focal_loss(p, 1, 0.0, 1.0).scalar() ==
        doctest::Approx(-std::log(0.73)).epsilon(1e-12));
  CHECK(focal_loss(p, 0, 0.0, 1.0).scalar() ==
        doctest::Approx(-std::log(0.27)).epsilon(1e-12));

  bool clamp_hit = false;
  const Tensor degenerate = Tensor::constant({1, 2}, {1.0, 0.0});
  const Tensor loss = focal_loss(degenerate, 1, 1.5, 0.5, &clamp_hit);
  CHECK(clamp_hit);
  CHECK(std::isfinite(loss.scalar()));
  CHECK(loss.scalar() > 0.0);

  CHECK_THROWS_AS(focal_loss(p, 2, 0.0, 1.0), NumericError);   // label out of range
  CHECK_THROWS_AS(focal_loss(p, 0, -1.0, 1.0), NumericError);  // bad gamma
}

// ===========================================================================
// graph mechanics
// ===========================================================================

TEST_CASE("constants fold and NoGradGuard suppresses recording") {
  const Tensor c = add(Tensor::constant({1, 2}, {1, 2}), Tensor::constant({1, 2}, {3, 4}));
  CHECK(c.value() == std::vector<double>{4, 6});
  CHECK_FALSE(c.requires_grad());
  CHECK(c.node()->parents.empty());
  CHECK_FALSE(static_cast<bool>(c.node()->backward_fn));

  ParamStore store;
  Tensor p = store.create("p", {1, 2}, {1, 2});
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_recording_enabled());
    const Tensor q = mul(p, p);
    CHECK_FALSE(q.requires_grad());
    CHECK(q.node()->parents.empty());
  }
  CHECK(grad_recording_enabled());
  CHECK(mul(p, p).requires_grad());
}

TEST_CASE("backward accumulates across calls and zero_grad resets") {
  ParamStore store;
  Tensor p = store.create("p", {1, 3}, {1.0, -2.0, 0.5});
  const Tensor loss = weighted_sum(mul(p, p));
  backward(loss);
  const std::vector<double> once = store.flat_grads();
  CHECK(once.size() == 3);
  CHECK(once[0] != 0.0);
  backward(loss);
  const std::vector<double> twice = store.flat_grads();
  for (size_t i = 0; i < once.size(); ++i)
    CHECK(twice[i] == doctest::Approx(2.0 * once[i]).epsilon(1e-15));
  store.zero_grad();
  for (double g : store.flat_grads()) CHECK(g == 0.0);
}

TEST_CASE("backward rejects non-scalar and detached losses") {
  ParamStore store;
  Tensor p = store.create("p", {1, 3}, {1.0, 2.0, 3.0});
  CHECK_THROWS_AS(backward(mul(p, p)), NumericError);  // not a scalar
  CHECK_THROWS_AS(backward(Tensor::constant({1, 1}, {1.0})), NumericError);
}

TEST_CASE("shape validation throws on misuse") {
  const Tensor a = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor b = Tensor::constant({3, 2}, {1, 2, 3, 4, 5, 6});
  CHECK_THROWS_AS(add(a, b), NumericError);
  CHECK_THROWS_AS(matmul(a, a), NumericError);
  CHECK_THROWS_AS(reshape(a, {2, 2}), NumericError);
  CHECK_THROWS_AS(row_scale(a, Tensor::constant({3, 1}, {1, 2, 3})), NumericError);
  CHECK_THROWS_AS(concat_cols({a, b}), NumericError);
  CHECK_THROWS_AS(Tensor::constant({2, 2}, {1, 2, 3}), NumericError);
}

// ===========================================================================
// optimizer and schedule
// ===========================================================================

TEST_CASE("adam reproduces two hand-computed steps with l2") {
  ParamStore store;
  Tensor w = store.create("w", {1, 1}, {1.0});
  AdamOptimizer opt;
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  const double lr = 0.1, l2 = 0.01;
  double theta = 1.0, m = 0.0, v = 0.0;

  const double raw_grads[2] = {0.5, -0.25};
  for (int t = 1; t <= 2; ++t) {
    w.node()->ensure_grad();
    w.grad()[0] = raw_grads[t - 1];
    opt.step(store, lr, l2);
    const double g = raw_grads[t - 1] + l2 * theta;
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g * g;
    const double mhat = m / (1.0 - std::pow(beta1, t));
    const double vhat = v / (1.0 - std::pow(beta2, t));
    theta -= lr * mhat / (std::sqrt(vhat) + eps);
    CHECK(w.value()[0] == doctest::Approx(theta).epsilon(1e-14));
    CHECK(opt.t() == t);
  }
  // first step moves by almost exactly lr (bias-corrected moments cancel)
  CHECK(std::abs((1.0 - lr) - theta) < 0.2 * lr);
}

TEST_CASE("adam rejects non-finite gradients by parameter name") {
  ParamStore store;
  Tensor w = store.create("bad.w", {1, 1}, {1.0});
  w.node()->ensure_grad();
  w.grad()[0] = std::numeric_limits<double>::infinity();
  AdamOptimizer opt;
  try {
    opt.step(store, 0.1, 0.0);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("bad.w") != std::string::npos);
  }
}

TEST_CASE("milestone schedule halves at 30/60/90") {
  TrainConfig cfg;
  CHECK(lr_at(0, cfg) == 1e-3);
  CHECK(lr_at(29, cfg) == 1e-3);
  CHECK(lr_at(30, cfg) == 5e-4);
  CHECK(lr_at(59, cfg) == 5e-4);
  CHECK(lr_at(60, cfg) == 2.5e-4);
  CHECK(lr_at(90, cfg) == 1.25e-4);
  CHECK(lr_at(95, cfg) == 1.25e-4);
  CHECK_THROWS_AS(lr_at(-1, cfg), ConfigError);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(validate_train_config(cfg));
  cfg.batch_size = 0;
  CHECK_THROWS_AS(validate_train_config(cfg), ConfigError);
  cfg = TrainConfig();
  cfg.milestones = {30, 30};
  CHECK_THROWS_AS(validate_train_config(cfg), ConfigError);
  cfg = TrainConfig();
  cfg.focal_omega = 0.0;
  CHECK_THROWS_AS(validate_train_config(cfg), ConfigError);
  cfg = TrainConfig();
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(validate_train_config(cfg), ConfigError);
}

// ===========================================================================
// parameter store, init, checkpoints
// ===========================================================================

TEST_CASE("param store keeps insertion order and rejects duplicates") {
  ParamStore store;
  store.create("z", {1, 2}, {1, 2});
  store.create("a", {2, 1}, {3, 4});
  store.create("m", {1, 1}, {5});
  REQUIRE(store.n_tensors() == 3);
  CHECK(store.items()[0].first == "z");
  CHECK(store.items()[1].first == "a");
  CHECK(store.items()[2].first == "m");
  CHECK(store.n_params() == 5);
  CHECK(store.contains("a"));
  CHECK_FALSE(store.contains("q"));
  CHECK_THROWS_AS(store.create("a", {1, 1}, {0}), NumericError);
  CHECK_THROWS_AS(store.at("missing"), NumericError);

  const std::vector<double> flat = store.flat_values();
  CHECK(flat == std::vector<double>{1, 2, 3, 4, 5});
  store.set_flat_values({9, 8, 7, 6, 5});
  CHECK(store.at("z").value() == std::vector<double>{9, 8});
  CHECK(store.at("m").value() == std::vector<double>{5});
  CHECK_THROWS_AS(store.set_flat_values({1, 2}), NumericError);
}

TEST_CASE("uniform init honors the fan-in bound and the rng stream") {
  std::mt19937_64 rng1(55), rng2(55);
  const auto a = uniform_init(16, 1000, rng1);
  const auto b = uniform_init(16, 1000, rng2);
  CHECK(a == b);
  const double bound = 1.0 / 4.0;
  double lo = 1e9, hi = -1e9;
  for (double v : a) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo >= -bound);
  CHECK(hi <= bound);
  CHECK(lo < -0.8 * bound);  // draws actually spread over the interval
  CHECK(hi > 0.8 * bound);
  CHECK_THROWS_AS(uniform_init(0, 4, rng1), ConfigError);
}

TEST_CASE("checkpoint round trip restores exact values") {
  const fs::path path = fs::temp_directory_path() / "nirsfreq_test_ckpt.bin";
  std::mt19937_64 rng(66);
  ParamStore store;
  store.create("layer.w", {3, 4}, randv(12, rng));
  store.create("layer.b", {1, 4}, randv(4, rng));
  const std::vector<double> original = store.flat_values();
  save_checkpoint(store, path);
  store.set_flat_values(std::vector<double>(16, 0.0));
  load_checkpoint(store, path);
  CHECK(store.flat_values() == original);  // bitwise
  fs::remove(path);
}

TEST_CASE("checkpoint load rejects mismatch and truncation") {
  const fs::path path = fs::temp_directory_path() / "nirsfreq_test_ckpt_bad.bin";
  std::mt19937_64 rng(67);
  ParamStore store;
  store.create("w", {2, 2}, randv(4, rng));
  save_checkpoint(store, path);

  ParamStore other;
  other.create("different", {2, 2}, randv(4, rng));
  CHECK_THROWS_AS(load_checkpoint(other, path), DataError);

  ParamStore wrong_shape;
  wrong_shape.create("w", {1, 4}, randv(4, rng));
  CHECK_THROWS_AS(load_checkpoint(wrong_shape, path), DataError);

  ParamStore superset;
  superset.create("w", {2, 2}, randv(4, rng));
  superset.create("extra", {1, 1}, {0.0});
  CHECK_THROWS_AS(load_checkpoint(superset, path), DataError);

  // truncate mid-payload
  const std::string blob = read_text_file(path);
  atomic_write_file(path, blob.substr(0, blob.size() - 8));
  CHECK_THROWS_AS(load_checkpoint(store, path), DataError);
  atomic_write_file(path, blob.substr(0, 4));
  CHECK_THROWS_AS(load_checkpoint(store, path), DataError);
  fs::remove(path);
}

TEST_CASE("grad_check with random probes agrees on a healthy graph") {
  std::mt19937_64 rng(68);
  ParamStore store;
  Tensor w = store.create("w", {6, 3}, randv(18, rng, 0.5));
  const Tensor x = Tensor::constant({2, 6}, randv(12, rng));
  const auto report =
      grad_check([&] { return weighted_sum(tanh_t(matmul(x, w))); }, store, 1e-5, 5, 4242);
  CHECK(report.n_probes == 5);
  CHECK(report.max_rel_err < 1e-6);
}
