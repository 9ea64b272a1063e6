#pragma once

// Minimal dense-tensor reverse-mode autodiff. Tensors are 2-d row-major
// double buffers wrapped in shared graph nodes; every operation records a
// backward closure unless recording is disabled (NoGradGuard) or no input
// requires gradients. backward() runs the closures in reverse topological
// order, accumulating into .grad buffers — parameter gradients therefore sum
// across multiple backward calls until explicitly zeroed.

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace nirsfreq::diff {

struct Node {
  std::vector<int> shape;                      // {rows, cols}
  std::vector<double> value;                   // row-major
  std::vector<double> grad;                    // empty until first needed
  std::vector<std::shared_ptr<Node>> parents;  // kept alive for backward
  std::function<void()> backward_fn;           // unset on leaves/constants
  bool requires_grad = false;

  size_t size() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  // Constant (non-differentiable) tensor.
  static Tensor constant(std::vector<int> shape, std::vector<double> values);
  // Trainable leaf: participates in gradient flow.
  static Tensor parameter(std::vector<int> shape, std::vector<double> values);
  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const std::vector<int>& shape() const { return node_->shape; }
  int rows() const { return node_->shape[0]; }
  int cols() const { return node_->shape[1]; }
  size_t size() const { return node_->size(); }
  std::vector<double>& value() { return node_->value; }
  const std::vector<double>& value() const { return node_->value; }
  std::vector<double>& grad() { return node_->grad; }
  const std::vector<double>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  double scalar() const;  // value of a size-1 tensor
  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// RAII guard: while alive, operations do not record backward closures
// (used for finite-difference probes and pure evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_recording_enabled();

// ---------------------------------------------------------------------------
// Operations. All are shape-checked; gradients propagate to every input that
// requires them.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);             // elementwise
Tensor sub(const Tensor& a, const Tensor& b);             // elementwise
Tensor mul(const Tensor& a, const Tensor& b);             // Hadamard
Tensor scale(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);          // [N,K]x[K,M]
Tensor add_rowvec(const Tensor& x, const Tensor& bias);   // bias [1,D]
// linear(x, W, b) = x*W + b; pass an undefined bias Tensor for bias-free.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor elu(const Tensor& x);                              // alpha = 1
Tensor sigmoid(const Tensor& x);
Tensor tanh_t(const Tensor& x);
Tensor softmax_rows(const Tensor& x);                     // stable, per row
Tensor concat_cols(const std::vector<Tensor>& parts);     // same row count
Tensor reshape(const Tensor& x, std::vector<int> shape);  // same element count
Tensor row_scale(const Tensor& x, const Tensor& s);       // s [N,1]
Tensor mean_rows(const Tensor& x);                        // [N,D] -> [1,D]

// Focal loss -omega * (1 - p_t)^gamma * ln(p_t) on a probability row
// [1, C]; p_t clamped to [1e-12, 1-1e-15] (clamp_hit reports the low clamp).
// gamma = 0, omega = 1 recovers plain cross-entropy.
Tensor focal_loss(const Tensor& probs, int label, double gamma, double omega,
                  bool* clamp_hit = nullptr);

// Reverse pass from a scalar loss. Seeds d(loss)/d(loss) = 1 and accumulates
// into the grad buffers of every contributing node.
void backward(const Tensor& loss);

// Raw accumulate-kernels (C += ...), shared by forward and backward paths.
void gemm_nn(const double* a, const double* b, double* c, int n, int k, int m);
void gemm_nt(const double* g, const double* b, double* c, int n, int m, int k);
void gemm_tn(const double* a, const double* g, double* c, int n, int k, int m);

}  // namespace nirsfreq::diff
