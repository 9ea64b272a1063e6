#include "nirsfreq/diff/tensor.hpp"

#include <cmath>
#include <unordered_set>

#include "nirsfreq/common.hpp"

namespace nirsfreq::diff {

namespace {

thread_local bool g_recording = true;

size_t shape_count(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw NumericError("tensor shapes must be positive");
    n *= static_cast<size_t>(d);
  }
  return n;
}

void check_2d(const Tensor& t, const char* who) {
  if (!t.defined() || t.shape().size() != 2)
    throw NumericError(std::string(who) + ": expected a 2-d tensor");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  check_2d(a, who);
  check_2d(b, who);
  if (a.shape() != b.shape()) throw NumericError(std::string(who) + ": shape mismatch");
}

std::shared_ptr<Node> fresh(std::vector<int> shape) {
  auto n = std::make_shared<Node>();
  n->value.assign(shape_count(shape), 0.0);
  n->shape = std::move(shape);
  return n;
}

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!g_recording) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

// Wire the output node to its parents and backward closure; skipped entirely
// when none of the inputs participates in gradient flow (constant folding).
void record(const std::shared_ptr<Node>& out, std::initializer_list<const Tensor*> inputs,
            std::function<void()> backward_fn) {
  out->requires_grad = true;
  for (const Tensor* t : inputs) out->parents.push_back(t->node());
  out->backward_fn = std::move(backward_fn);
}

}  // namespace

NoGradGuard::NoGradGuard() : prev_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = prev_; }
bool grad_recording_enabled() { return g_recording; }

Tensor Tensor::constant(std::vector<int> shape, std::vector<double> values) {
  auto n = std::make_shared<Node>();
  if (shape_count(shape) != values.size())
    throw NumericError("tensor value count does not match shape");
  n->shape = std::move(shape);
  n->value = std::move(values);
  return Tensor(n);
}

Tensor Tensor::parameter(std::vector<int> shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node()->requires_grad = true;
  return t;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto n = fresh(std::move(shape));
  n->requires_grad = requires_grad;
  return Tensor(n);
}

double Tensor::scalar() const {
  if (!node_ || node_->size() != 1) throw NumericError("scalar() on a non-scalar tensor");
  return node_->value[0];
}

// ---------------------------------------------------------------------------
// GEMM kernels (accumulating). Loop orders keep the innermost stride 1.
// ---------------------------------------------------------------------------

void gemm_nn(const double* a, const double* b, double* c, int n, int k, int m) {
  for (int i = 0; i < n; ++i)
    for (int p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * m;
      double* crow = c + i * m;
      for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
}

void gemm_nt(const double* g, const double* b, double* c, int n, int m, int k) {
  // c[n,k] += g[n,m] * b[k,m]^T
  for (int i = 0; i < n; ++i)
    for (int p = 0; p < k; ++p) {
      const double* grow = g + i * m;
      const double* brow = b + p * m;
      double dot = 0.0;
      for (int j = 0; j < m; ++j) dot += grow[j] * brow[j];
      c[i * k + p] += dot;
    }
}

void gemm_tn(const double* a, const double* g, double* c, int n, int k, int m) {
  // c[k,m] += a[n,k]^T * g[n,m]
  for (int i = 0; i < n; ++i)
    for (int p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* grow = g + i * m;
      double* crow = c + p * m;
      for (int j = 0; j < m; ++j) crow[j] += av * grow[j];
    }
}

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  auto out = fresh(a.shape());
  for (size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.value()[i] + b.value()[i];
  if (should_record({&a, &b})) {
    Node* self = out.get();
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    record(out, {&a, &b}, [self, pa, pb]() {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (size_t i = 0; i < self->grad.size(); ++i) pa->grad[i] += self->grad[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (size_t i = 0; i < self->grad.size(); ++i) pb->grad[i] += self->grad[i];
      }
    });
  }
  return Tensor(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  auto out = fresh(a.shape());
  for (size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.value()[i] - b.value()[i];
  if (should_record({&a, &b})) {
    Node* self = out.get();
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    record(out, {&a, &b}, [self, pa, pb]() {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (size_t i = 0; i < self->grad.size(); ++i) pa->grad[i] += self->grad[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (size_t i = 0; i < self->grad.size(); ++i) pb->grad[i] -= self->grad[i];
      }
    });
  }
  return Tensor(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  auto out = fresh(a.shape());
  for (size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.value()[i] * b.value()[i];
  if (should_record({&a, &b})) {
    Node* self = out.get();
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    record(out, {&a, &b}, [self, pa, pb]() {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (size_t i = 0; i < self->grad.size(); ++i)
          pa->grad[i] += self->grad[i] * pb->value[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (size_t i = 0; i < self->grad.size(); ++i)
          pb->grad[i] += self->grad[i] * pa->value[i];
      }
    });
  }
  return Tensor(out);
}

Tensor scale(const Tensor& a, double c) {
  check_2d(a, "scale");
  auto out = fresh(a.shape());
  for (size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.value()[i] * c;
  if (should_record({&a})) {
    Node* self = out.get();
    Node* pa = a.node().get();
    record(out, {&a}, [self, pa, c]() {
      pa->ensure_grad();
      for (size_t i = 0; i < self->grad.size(); ++i) pa->grad[i] += self->grad[i] * c;
    });
  }
  return Tensor(out);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  const int n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k) throw NumericError("matmul: inner dimension mismatch");
  auto out = fresh({n, m});
  gemm_nn(a.value().data(), b.value().data(), out->value.data(), n, k, m);
  if (should_record({&a, &b})) {
    Node* self = out.get();
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    record(out, {&a, &b}, [self, pa, pb, n, k, m]() {
      if (pa->requires_grad) {
        pa->ensure_grad();
        gemm_nt(self->grad.data(), pb->value.data(), pa->grad.data(), n, m, k);
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        gemm_tn(pa->value.data(), self->grad.data(), pb->grad.data(), n, k, m);
      }
    });
  }
  return Tensor(out);
}

Tensor add_rowvec(const Tensor& x, const Tensor& bias) {
  check_2d(x, "add_rowvec");
  check_2d(bias, "add_rowvec");
  const int n = x.rows(), d = x.cols();
  if (bias.rows() != 1 || bias.cols() != d)
    throw NumericError("add_rowvec: bias must be [1, cols]");
  auto out = fresh(x.shape());
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < d; ++c)
      out->value[static_cast<size_t>(r * d + c)] =
          x.value()[static_cast<size_t>(r * d + c)] + bias.value()[static_cast<size_t>(c)];
  if (should_record({&x, &bias})) {
    Node* self = out.get();
    Node* px = x.node().get();
    Node* pb = bias.node().get();
    record(out, {&x, &bias}, [self, px, pb, n, d]() {
      if (px->requires_grad) {
        px->ensure_grad();
        for (size_t i = 0; i < self->grad.size(); ++i) px->grad[i] += self->grad[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (int r = 0; r < n; ++r)
          for (int c = 0; c < d; ++c)
            pb->grad[static_cast<size_t>(c)] += self->grad[static_cast<size_t>(r * d + c)];
      }
    });
  }
  return Tensor(out);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  Tensor y = matmul(x, w);
  if (!bias.defined()) return y;
  return add_rowvec(y, bias);
}

Tensor elu(const Tensor& x) {
  check_2d(x, "elu");
  auto out = fresh(x.shape());
  for (size_t i = 0; i < out->value.size(); ++i) {
    double v = x.value()[i];
    out->value[i] = v > 0.0 ? v : std::expm1(v);
  }
  if (should_record({&x})) {
    Node* self = out.get();
    Node* px = x.node().get();
    record(out, {&x}, [self, px]() {
      px->ensure_grad();
      for (size_t i = 0; i < self->grad.size(); ++i) {
        // d/dv = 1 for v > 0, e^v = value + 1 otherwise
        double d = px->value[i] > 0.0 ? 1.0 : self->value[i] + 1.0;
        px->grad[i] += self->grad[i] * d;
      }
    });
  }
  return Tensor(out);
}

Tensor sigmoid(const Tensor& x) {
  check_2d(x, "sigmoid");
  auto out = fresh(x.shape());
  for (size_t i = 0; i < out->value.size(); ++i) {
    double v = x.value()[i];
    out->value[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                             : std::exp(v) / (1.0 + std::exp(v));
  }
  if (should_record({&x})) {
    Node* self = out.get();
    Node* px = x.node().get();
    record(out, {&x}, [self, px]() {
      px->ensure_grad();
      for (size_t i = 0; i < self->grad.size(); ++i) {
        double s = self->value[i];
        px->grad[i] += self->grad[i] * s * (1.0 - s);
      }
    });
  }
  return Tensor(out);
}

Tensor tanh_t(const Tensor& x) {
  check_2d(x, "tanh");
  auto out = fresh(x.shape());
  for (size_t i = 0; i < out->value.size(); ++i) out->value[i] = std::tanh(x.value()[i]);
  if (should_record({&x})) {
    Node* self = out.get();
    Node* px = x.node().get();
    record(out, {&x}, [self, px]() {
      px->ensure_grad();
      for (size_t i = 0; i < self->grad.size(); ++i) {
        double t = self->value[i];
        px->grad[i] += self->grad[i] * (1.0 - t * t);
      }
    });
  }
  return Tensor(out);
}

Tensor softmax_rows(const Tensor& x) {
  check_2d(x, "softmax");
  const int n = x.rows(), d = x.cols();
  auto out = fresh(x.shape());
  for (int r = 0; r < n; ++r) {
    const double* vin = x.value().data() + r * d;
    double* vout = out->value.data() + r * d;
    double mx = vin[0];
    for (int c = 1; c < d; ++c) mx = std::max(mx, vin[c]);
    double sum = 0.0;
    for (int c = 0; c < d; ++c) {
      vout[c] = std::exp(vin[c] - mx);
      sum += vout[c];
    }
    for (int c = 0; c < d; ++c) vout[c] /= sum;
  }
  if (should_record({&x})) {
    Node* self = out.get();
    Node* px = x.node().get();
    record(out, {&x}, [self, px, n, d]() {
      px->ensure_grad();
      for (int r = 0; r < n; ++r) {
        const double* s = self->value.data() + r * d;
        const double* g = self->grad.data() + r * d;
        double dot = 0.0;
        for (int c = 0; c < d; ++c) dot += g[c] * s[c];
        for (int c = 0; c < d; ++c)
          px->grad[static_cast<size_t>(r * d + c)] += s[c] * (g[c] - dot);
      }
    });
  }
  return Tensor(out);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw NumericError("concat_cols: no inputs");
  const int n = parts[0].rows();
  int total = 0;
  for (const auto& p : parts) {
    check_2d(p, "concat_cols");
    if (p.rows() != n) throw NumericError("concat_cols: row count mismatch");
    total += p.cols();
  }
  auto out = fresh({n, total});
  int off = 0;
  for (const auto& p : parts) {
    const int d = p.cols();
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < d; ++c)
        out->value[static_cast<size_t>(r * total + off + c)] =
            p.value()[static_cast<size_t>(r * d + c)];
    off += d;
  }
  bool rec = g_recording;
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (rec && any) {
    out->requires_grad = true;
    std::vector<Node*> raw;
    std::vector<int> widths;
    for (const auto& p : parts) {
      out->parents.push_back(p.node());
      raw.push_back(p.node().get());
      widths.push_back(p.cols());
    }
    Node* self = out.get();
    out->backward_fn = [self, raw, widths, n, total]() {
      int off2 = 0;
      for (size_t idx = 0; idx < raw.size(); ++idx) {
        Node* p = raw[idx];
        const int d = widths[idx];
        if (p->requires_grad) {
          p->ensure_grad();
          for (int r = 0; r < n; ++r)
            for (int c = 0; c < d; ++c)
              p->grad[static_cast<size_t>(r * d + c)] +=
                  self->grad[static_cast<size_t>(r * total + off2 + c)];
        }
        off2 += d;
      }
    };
  }
  return Tensor(out);
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  check_2d(x, "reshape");
  if (shape_count(shape) != x.size())
    throw NumericError("reshape: element count mismatch");
  auto out = std::make_shared<Node>();
  out->shape = std::move(shape);
  out->value = x.value();  // row-major reinterpretation
  if (should_record({&x})) {
    Node* self = out.get();
    Node* px = x.node().get();
    record(out, {&x}, [self, px]() {
      px->ensure_grad();
      for (size_t i = 0; i < self->grad.size(); ++i) px->grad[i] += self->grad[i];
    });
  }
  return Tensor(out);
}

Tensor row_scale(const Tensor& x, const Tensor& s) {
  check_2d(x, "row_scale");
  check_2d(s, "row_scale");
  const int n = x.rows(), d = x.cols();
  if (s.rows() != n || s.cols() != 1) throw NumericError("row_scale: scale must be [rows, 1]");
  auto out = fresh(x.shape());
  for (int r = 0; r < n; ++r) {
    const double sv = s.value()[static_cast<size_t>(r)];
    for (int c = 0; c < d; ++c)
      out->value[static_cast<size_t>(r * d + c)] =
          x.value()[static_cast<size_t>(r * d + c)] * sv;
  }
  if (should_record({&x, &s})) {
    Node* self = out.get();
    Node* px = x.node().get();
    Node* ps = s.node().get();
    record(out, {&x, &s}, [self, px, ps, n, d]() {
      if (px->requires_grad) {
        px->ensure_grad();
        for (int r = 0; r < n; ++r) {
          const double sv = ps->value[static_cast<size_t>(r)];
          for (int c = 0; c < d; ++c)
            px->grad[static_cast<size_t>(r * d + c)] +=
                self->grad[static_cast<size_t>(r * d + c)] * sv;
        }
      }
      if (ps->requires_grad) {
        ps->ensure_grad();
        for (int r = 0; r < n; ++r) {
          double acc = 0.0;
          for (int c = 0; c < d; ++c)
            acc += self->grad[static_cast<size_t>(r * d + c)] *
                   px->value[static_cast<size_t>(r * d + c)];
          ps->grad[static_cast<size_t>(r)] += acc;
        }
      }
    });
  }
  return Tensor(out);
}

Tensor mean_rows(const Tensor& x) {
  check_2d(x, "mean_rows");
  const int n = x.rows(), d = x.cols();
  auto out = fresh({1, d});
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < d; ++c)
      out->value[static_cast<size_t>(c)] += x.value()[static_cast<size_t>(r * d + c)];
  for (int c = 0; c < d; ++c) out->value[static_cast<size_t>(c)] /= static_cast<double>(n);
  if (should_record({&x})) {
    Node* self = out.get();
    Node* px = x.node().get();
    record(out, {&x}, [self, px, n, d]() {
      px->ensure_grad();
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c)
          px->grad[static_cast<size_t>(r * d + c)] +=
              self->grad[static_cast<size_t>(c)] / static_cast<double>(n);
    });
  }
  return Tensor(out);
}

Tensor focal_loss(const Tensor& probs, int label, double gamma, double omega,
                  bool* clamp_hit) {
  check_2d(probs, "focal_loss");
  if (probs.rows() != 1) throw NumericError("focal_loss: expected a single probability row");
  const int c = probs.cols();
  if (label < 0 || label >= c) throw NumericError("focal_loss: label out of range");
  if (gamma < 0.0) throw NumericError("focal_loss: gamma must be >= 0");
  if (!(omega > 0.0 && omega <= 1.0)) throw NumericError("focal_loss: omega must lie in (0,1]");
  double p = probs.value()[static_cast<size_t>(label)];
  if (p < 1e-12) {
    p = 1e-12;
    if (clamp_hit) *clamp_hit = true;
  }
  if (p > 1.0 - 1e-15) p = 1.0 - 1e-15;  // keeps (1-p)^(gamma-1) finite
  const double one_minus = 1.0 - p;
  double loss = -omega * std::pow(one_minus, gamma) * std::log(p);
  auto out = fresh({1, 1});
  out->value[0] = loss;
  if (should_record({&probs})) {
    Node* self = out.get();
    Node* pp = probs.node().get();
    record(out, {&probs}, [self, pp, label, gamma, omega, p, one_minus]() {
      pp->ensure_grad();
      double dldp;
      if (gamma == 0.0) {
        dldp = -omega / p;
      } else {
        dldp = omega * gamma * std::pow(one_minus, gamma - 1.0) * std::log(p) -
               omega * std::pow(one_minus, gamma) / p;
      }
      pp->grad[static_cast<size_t>(label)] += self->grad[0] * dldp;
    });
  }
  return Tensor(out);
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw NumericError("backward: loss must be a defined scalar");
  Node* root = loss.node().get();
  if (!root->requires_grad)
    throw NumericError("backward: loss does not depend on any parameter");

  // Iterative post-order DFS: parents land before children, so reverse
  // iteration visits each node after everything downstream of it.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn();
}

}  // namespace nirsfreq::diff
