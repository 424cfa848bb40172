#include "relgraph/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace relgraph::ad {
namespace {

bool g_checked = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

std::string shape_of(const Node& n) {
  return "[" + std::to_string(n.rows) + "x" + std::to_string(n.cols) + "]";
}

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " +
                   b.shape_str());
}

std::shared_ptr<Node> make(std::size_t rows, std::size_t cols, const char* op,
                           std::initializer_list<const Tensor*> inputs) {
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->op = op;
  n->value.assign(rows * cols, 0.0);
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    for (const Tensor* t : inputs) n->parents.push_back(t->node());
  }
  return n;
}

Tensor finish(std::shared_ptr<Node> n) {
  if (g_checked) {
    for (double v : n->value) {
      if (!std::isfinite(v)) {
        throw NonFiniteError(std::string(n->op) + ": non-finite value in output " + shape_of(*n));
      }
    }
  }
  return Tensor(std::move(n));
}

// Parent accessor that lazily allocates its gradient buffer. Returns null when
// the parent does not take gradients.
Node* grad_target(Node& self, std::size_t i) {
  Node* p = self.parents[i].get();
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  return p;
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_fail(op, a, b);
}

template <typename F, typename D>
Tensor unary(const Tensor& a, const char* op, F f, D df) {
  auto n = make(a.rows(), a.cols(), op, {&a});
  const auto& x = a.node()->value;
  for (std::size_t i = 0; i < x.size(); ++i) n->value[i] = f(x[i]);
  if (n->requires_grad) {
    n->backward_fn = [df](Node& self) {
      Node* p = grad_target(self, 0);
      if (!p) return;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        p->grad[i] += self.grad[i] * df(p->value[i], self.value[i]);
      }
    };
  }
  return finish(std::move(n));
}

}  // namespace

void set_checked(bool on) { g_checked = on; }
bool checked() { return g_checked; }

// ---- Tensor -------------------------------------------------------------

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) { return full(rows, cols, 0.0); }

Tensor Tensor::full(std::size_t rows, std::size_t cols, double v) {
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value.assign(rows * cols, v);
  return Tensor(std::move(n));
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::vector<double> values) {
  if (values.size() != rows * cols) {
    throw ShapeError("from: " + std::to_string(values.size()) + " values for shape [" +
                     std::to_string(rows) + "x" + std::to_string(cols) + "]");
  }
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(values);
  return finish(std::move(n));
}

Tensor Tensor::scalar(double v) { return from(1, 1, {v}); }

Tensor Tensor::param(std::size_t rows, std::size_t cols, std::vector<double> values) {
  Tensor t = from(rows, cols, std::move(values));
  t.node_->requires_grad = true;
  t.node_->ensure_grad();
  return t;
}

std::string Tensor::shape_str() const {
  if (!node_) return "[undefined]";
  return shape_of(*node_);
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor is " + shape_str() + ", expected 1x1");
  return node_->value[0];
}

std::span<const double> Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  node_->grad.assign(node_->value.size(), 0.0);
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<Node>();
  n->rows = node_->rows;
  n->cols = node_->cols;
  n->value = node_->value;
  n->op = "detach";
  return Tensor(std::move(n));
}

void Tensor::backward() const {
  if (size() != 1) throw ShapeError("backward: output must be scalar, got " + shape_str());
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (n->backward_fn) n->grad.assign(n->value.size(), 0.0);
  }
  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& n = **it;
    if (!n.backward_fn) continue;
    n.backward_fn(n);
    if (!g_checked) continue;
    for (const auto& p : n.parents) {
      for (double g : p->grad) {
        if (!std::isfinite(g)) {
          throw NonFiniteError(std::string(n.op) + ": non-finite gradient for input " + shape_of(*p));
        }
      }
    }
  }
}

// ---- linear algebra -----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_fail("matmul", a, b);
  auto n = make(a.rows(), b.cols(), "matmul", {&a, &b});
  MapMat(n->value.data(), a.rows(), b.cols()).noalias() =
      CMapMat(a.node()->value.data(), a.rows(), a.cols()) *
      CMapMat(b.node()->value.data(), b.rows(), b.cols());
  if (n->requires_grad) {
    n->backward_fn = [](Node& self) {
      Node& A = *self.parents[0];
      Node& B = *self.parents[1];
      CMapMat G(self.grad.data(), self.rows, self.cols);
      if (Node* pa = grad_target(self, 0)) {
        MapMat(pa->grad.data(), A.rows, A.cols).noalias() +=
            G * CMapMat(B.value.data(), B.rows, B.cols).transpose();
      }
      if (Node* pb = grad_target(self, 1)) {
        MapMat(pb->grad.data(), B.rows, B.cols).noalias() +=
            CMapMat(A.value.data(), A.rows, A.cols).transpose() * G;
      }
    };
  }
  return finish(std::move(n));
}

namespace {

template <typename F, typename DA, typename DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, F f, DA da, DB db) {
  require_same(op, a, b);
  auto n = make(a.rows(), a.cols(), op, {&a, &b});
  const auto& x = a.node()->value;
  const auto& y = b.node()->value;
  for (std::size_t i = 0; i < x.size(); ++i) n->value[i] = f(x[i], y[i]);
  if (n->requires_grad) {
    n->backward_fn = [da, db](Node& self) {
      const auto& x = self.parents[0]->value;
      const auto& y = self.parents[1]->value;
      if (Node* p = grad_target(self, 0)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * da(x[i], y[i]);
      }
      if (Node* p = grad_target(self, 1)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * db(x[i], y[i]);
      }
    };
  }
  return finish(std::move(n));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(a, b, "add", [](double x, double y) { return x + y; },
                [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(a, b, "sub", [](double x, double y) { return x - y; },
                [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(a, b, "mul", [](double x, double y) { return x * y; },
                [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor add_row(const Tensor& a, const Tensor& b) {
  if (b.rows() != 1 || b.cols() != a.cols()) shape_fail("add_row", a, b);
  auto n = make(a.rows(), a.cols(), "add_row", {&a, &b});
  const std::size_t r = a.rows(), c = a.cols();
  const double* x = a.node()->value.data();
  const double* y = b.node()->value.data();
  double* out = n->value.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] + y[j];
  }
  if (n->requires_grad) {
    n->backward_fn = [r, c](Node& self) {
      const double* g = self.grad.data();
      if (Node* p = grad_target(self, 0)) {
        for (std::size_t i = 0; i < r * c; ++i) p->grad[i] += g[i];
      }
      if (Node* p = grad_target(self, 1)) {
        double* pg = p->grad.data();
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) pg[j] += g[i * c + j];
        }
      }
    };
  }
  return finish(std::move(n));
}

Tensor mul_row(const Tensor& a, const Tensor& b) {
  if (b.rows() != 1 || b.cols() != a.cols()) shape_fail("mul_row", a, b);
  auto n = make(a.rows(), a.cols(), "mul_row", {&a, &b});
  const std::size_t r = a.rows(), c = a.cols();
  const double* x = a.node()->value.data();
  const double* y = b.node()->value.data();
  double* out = n->value.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] * y[j];
  }
  if (n->requires_grad) {
    n->backward_fn = [r, c](Node& self) {
      const double* x = self.parents[0]->value.data();
      const double* y = self.parents[1]->value.data();
      const double* g = self.grad.data();
      if (Node* p = grad_target(self, 0)) {
        double* pg = p->grad.data();
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) pg[i * c + j] += g[i * c + j] * y[j];
        }
      }
      if (Node* p = grad_target(self, 1)) {
        double* pg = p->grad.data();
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) pg[j] += g[i * c + j] * x[i * c + j];
        }
      }
    };
  }
  return finish(std::move(n));
}

Tensor batch_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps, bool relu,
                  std::vector<double>* mean_out, std::vector<double>* var_out) {
  if (gamma.rows() != 1 || gamma.cols() != a.cols()) shape_fail("batch_norm", a, gamma);
  if (beta.rows() != 1 || beta.cols() != a.cols()) shape_fail("batch_norm", a, beta);
  if (a.rows() == 0) throw ShapeError("batch_norm: empty batch");
  auto n = make(a.rows(), a.cols(), relu ? "batch_norm_relu" : "batch_norm", {&a, &gamma, &beta});
  const std::size_t r = a.rows(), c = a.cols();
  const double* x = a.node()->value.data();
  const double* g = gamma.node()->value.data();
  const double* b = beta.node()->value.data();
  std::vector<double> mean(c, 0.0), var(c, 0.0), inv(c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) mean[j] += x[i * c + j];
  }
  for (auto& m : mean) m /= static_cast<double>(r);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double d = x[i * c + j] - mean[j];
      var[j] += d * d;
    }
  }
  for (std::size_t j = 0; j < c; ++j) {
    var[j] /= static_cast<double>(r);
    inv[j] = 1.0 / std::sqrt(var[j] + eps);
  }
  std::vector<double> xhat(r * c);
  double* out = n->value.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t k = i * c + j;
      xhat[k] = (x[k] - mean[j]) * inv[j];
      const double v = xhat[k] * g[j] + b[j];
      out[k] = relu && v <= 0.0 ? 0.0 : v;
    }
  }
  if (mean_out) *mean_out = mean;
  if (var_out) *var_out = var;
  if (n->requires_grad) {
    n->backward_fn = [r, c, relu, inv = std::move(inv), xhat = std::move(xhat)](Node& self) {
      const double* g = self.parents[1]->value.data();
      const double* y = self.value.data();
      std::vector<double> dy(self.grad);
      if (relu) {
        for (std::size_t k = 0; k < r * c; ++k) {
          if (y[k] <= 0.0) dy[k] = 0.0;
        }
      }
      std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          sum_dy[j] += dy[i * c + j];
          sum_dy_xhat[j] += dy[i * c + j] * xhat[i * c + j];
        }
      }
      if (Node* p = grad_target(self, 2)) {
        for (std::size_t j = 0; j < c; ++j) p->grad[j] += sum_dy[j];
      }
      if (Node* p = grad_target(self, 1)) {
        for (std::size_t j = 0; j < c; ++j) p->grad[j] += sum_dy_xhat[j];
      }
      if (Node* p = grad_target(self, 0)) {
        const double rn = static_cast<double>(r);
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            const std::size_t k = i * c + j;
            p->grad[k] += g[j] * inv[j] * (dy[k] - sum_dy[j] / rn - xhat[k] * sum_dy_xhat[j] / rn);
          }
        }
      }
    };
  }
  return finish(std::move(n));
}

Tensor affine_rows(const Tensor& a, const Tensor& scale, const Tensor& shift, bool relu) {
  if (scale.rows() != 1 || scale.cols() != a.cols()) shape_fail("affine_rows", a, scale);
  if (shift.rows() != 1 || shift.cols() != a.cols()) shape_fail("affine_rows", a, shift);
  auto n = make(a.rows(), a.cols(), relu ? "affine_relu" : "affine_rows", {&a, &scale, &shift});
  const std::size_t r = a.rows(), c = a.cols();
  const double* x = a.node()->value.data();
  const double* s = scale.node()->value.data();
  const double* t = shift.node()->value.data();
  double* out = n->value.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double v = x[i * c + j] * s[j] + t[j];
      out[i * c + j] = relu && v <= 0.0 ? 0.0 : v;
    }
  }
  if (n->requires_grad) {
    n->backward_fn = [r, c, relu](Node& self) {
      const double* x = self.parents[0]->value.data();
      const double* s = self.parents[1]->value.data();
      const double* y = self.value.data();
      const double* g = self.grad.data();
      Node* px = grad_target(self, 0);
      Node* ps = grad_target(self, 1);
      Node* pt = grad_target(self, 2);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          const std::size_t k = i * c + j;
          if (relu && y[k] <= 0.0) continue;
          if (px) px->grad[k] += g[k] * s[j];
          if (ps) ps->grad[j] += g[k] * x[k];
          if (pt) pt->grad[j] += g[k];
        }
      }
    };
  }
  return finish(std::move(n));
}

Tensor mul_col(const Tensor& a, const Tensor& b) {
  if (b.cols() != 1 || b.rows() != a.rows()) shape_fail("mul_col", a, b);
  auto n = make(a.rows(), a.cols(), "mul_col", {&a, &b});
  const std::size_t c = a.cols();
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.node()->value[i] * b.node()->value[i / c];
  if (n->requires_grad) {
    n->backward_fn = [c](Node& self) {
      const auto& x = self.parents[0]->value;
      const auto& y = self.parents[1]->value;
      if (Node* p = grad_target(self, 0)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * y[i / c];
      }
      if (Node* p = grad_target(self, 1)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i / c] += self.grad[i] * x[i];
      }
    };
  }
  return finish(std::move(n));
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor relu(const Tensor& a) {
  return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor square(const Tensor& a) {
  return unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(a, "tanh", [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor sin(const Tensor& a) {
  return unary(a, "sin", [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Tensor cos(const Tensor& a) {
  return unary(a, "cos", [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary(a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor smooth_l1(const Tensor& a, double beta) {
  return unary(
      a, "smooth_l1",
      [beta](double x) {
        const double ax = std::abs(x);
        return ax < beta ? 0.5 * x * x / beta : ax - 0.5 * beta;
      },
      [beta](double x, double) {
        if (std::abs(x) < beta) return x / beta;
        return x > 0.0 ? 1.0 : -1.0;
      });
}

// ---- reductions ---------------------------------------------------------

Tensor sum(const Tensor& a) {
  auto n = make(1, 1, "sum", {&a});
  double s = 0.0;
  for (double v : a.node()->value) s += v;
  n->value[0] = s;
  if (n->requires_grad) {
    n->backward_fn = [](Node& self) {
      if (Node* p = grad_target(self, 0)) {
        for (double& g : p->grad) g += self.grad[0];
      }
    };
  }
  return finish(std::move(n));
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sum_rows(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  auto n = make(1, c, "sum_rows", {&a});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) n->value[j] += a.node()->value[i * c + j];
  if (n->requires_grad) {
    n->backward_fn = [r, c](Node& self) {
      if (Node* p = grad_target(self, 0)) {
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) p->grad[i * c + j] += self.grad[j];
      }
    };
  }
  return finish(std::move(n));
}

Tensor sum_cols(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  auto n = make(r, 1, "sum_cols", {&a});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) n->value[i] += a.node()->value[i * c + j];
  if (n->requires_grad) {
    n->backward_fn = [r, c](Node& self) {
      if (Node* p = grad_target(self, 0)) {
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) p->grad[i * c + j] += self.grad[i];
      }
    };
  }
  return finish(std::move(n));
}

Tensor mean_cols(const Tensor& a) {
  if (a.cols() == 0) throw ShapeError("mean_cols: zero columns");
  return scale(sum_cols(a), 1.0 / static_cast<double>(a.cols()));
}

Tensor row_norm(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  auto n = make(r, 1, "row_norm", {&a});
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += a.node()->value[i * c + j] * a.node()->value[i * c + j];
    n->value[i] = std::sqrt(s);
  }
  if (n->requires_grad) {
    n->backward_fn = [r, c](Node& self) {
      Node* p = grad_target(self, 0);
      if (!p) return;
      for (std::size_t i = 0; i < r; ++i) {
        const double norm = self.value[i];
        if (norm == 0.0) continue;
        for (std::size_t j = 0; j < c; ++j) p->grad[i * c + j] += self.grad[i] * p->value[i * c + j] / norm;
      }
    };
  }
  return finish(std::move(n));
}

Tensor normalize_rows(const Tensor& a, double eps) {
  const std::size_t r = a.rows(), c = a.cols();
  auto n = make(r, c, "normalize_rows", {&a});
  std::vector<double> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += a.node()->value[i * c + j] * a.node()->value[i * c + j];
    norms[i] = std::max(std::sqrt(s), eps);
    for (std::size_t j = 0; j < c; ++j) n->value[i * c + j] = a.node()->value[i * c + j] / norms[i];
  }
  if (n->requires_grad) {
    n->backward_fn = [r, c, eps, norms = std::move(norms)](Node& self) {
      Node* p = grad_target(self, 0);
      if (!p) return;
      for (std::size_t i = 0; i < r; ++i) {
        const double nrm = norms[i];
        if (nrm <= eps) {
          for (std::size_t j = 0; j < c; ++j) p->grad[i * c + j] += self.grad[i * c + j] / nrm;
          continue;
        }
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * self.value[i * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          p->grad[i * c + j] += (self.grad[i * c + j] - dot * self.value[i * c + j]) / nrm;
        }
      }
    };
  }
  return finish(std::move(n));
}

Tensor softmax_rows(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  auto n = make(r, c, "softmax_rows", {&a});
  for (std::size_t i = 0; i < r; ++i) {
    const double* x = &a.node()->value[i * c];
    double* y = &n->value[i * c];
    const double mx = *std::max_element(x, x + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < c; ++j) y[j] /= s;
  }
  if (n->requires_grad) {
    n->backward_fn = [r, c](Node& self) {
      Node* p = grad_target(self, 0);
      if (!p) return;
      for (std::size_t i = 0; i < r; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * self.value[i * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          p->grad[i * c + j] += self.value[i * c + j] * (self.grad[i * c + j] - dot);
        }
      }
    };
  }
  return finish(std::move(n));
}

Tensor log_softmax_rows(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  auto n = make(r, c, "log_softmax_rows", {&a});
  for (std::size_t i = 0; i < r; ++i) {
    const double* x = &a.node()->value[i * c];
    const double mx = *std::max_element(x, x + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(x[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) n->value[i * c + j] = x[j] - lse;
  }
  if (n->requires_grad) {
    n->backward_fn = [r, c](Node& self) {
      Node* p = grad_target(self, 0);
      if (!p) return;
      for (std::size_t i = 0; i < r; ++i) {
        double gs = 0.0;
        for (std::size_t j = 0; j < c; ++j) gs += self.grad[i * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          p->grad[i * c + j] += self.grad[i * c + j] - std::exp(self.value[i * c + j]) * gs;
        }
      }
    };
  }
  return finish(std::move(n));
}

// ---- structural ---------------------------------------------------------

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  bool rg = false;
  for (const auto& t : parts) {
    if (t.rows() != r) shape_fail("concat_cols", parts[0], t);
    c += t.cols();
    rg = rg || t.requires_grad();
  }
  auto n = std::make_shared<Node>();
  n->rows = r;
  n->cols = c;
  n->op = "concat_cols";
  n->value.resize(r * c);
  n->requires_grad = rg;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : parts) {
    offsets.push_back(off);
    const std::size_t tc = t.cols();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(&t.node()->value[i * tc], tc, &n->value[i * c + off]);
    off += tc;
    if (rg) n->parents.push_back(t.node());
  }
  if (rg) {
    n->backward_fn = [r, c, offsets = std::move(offsets)](Node& self) {
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        Node* p = grad_target(self, k);
        if (!p) continue;
        const std::size_t tc = p->cols;
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < tc; ++j) p->grad[i * tc + j] += self.grad[i * c + offsets[k] + j];
      }
    };
  }
  return finish(std::move(n));
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  bool rg = false;
  for (const auto& t : parts) {
    if (t.cols() != c) shape_fail("concat_rows", parts[0], t);
    r += t.rows();
    rg = rg || t.requires_grad();
  }
  auto n = std::make_shared<Node>();
  n->rows = r;
  n->cols = c;
  n->op = "concat_rows";
  n->value.reserve(r * c);
  n->requires_grad = rg;
  for (const auto& t : parts) {
    n->value.insert(n->value.end(), t.node()->value.begin(), t.node()->value.end());
    if (rg) n->parents.push_back(t.node());
  }
  if (rg) {
    n->backward_fn = [](Node& self) {
      std::size_t off = 0;
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        const std::size_t len = self.parents[k]->value.size();
        if (Node* p = grad_target(self, k)) {
          for (std::size_t i = 0; i < len; ++i) p->grad[i] += self.grad[off + i];
        }
        off += len;
      }
    };
  }
  return finish(std::move(n));
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  if (start + count > a.cols()) {
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of range for " + a.shape_str());
  }
  const std::size_t r = a.rows(), c = a.cols();
  auto n = make(r, count, "slice_cols", {&a});
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(&a.node()->value[i * c + start], count, &n->value[i * count]);
  if (n->requires_grad) {
    n->backward_fn = [r, c, start, count](Node& self) {
      if (Node* p = grad_target(self, 0)) {
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < count; ++j) p->grad[i * c + start + j] += self.grad[i * count + j];
      }
    };
  }
  return finish(std::move(n));
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
  if (start + count > a.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of range for " + a.shape_str());
  }
  const std::size_t c = a.cols();
  auto n = make(count, c, "slice_rows", {&a});
  std::copy_n(&a.node()->value[start * c], count * c, n->value.data());
  if (n->requires_grad) {
    n->backward_fn = [start, c](Node& self) {
      if (Node* p = grad_target(self, 0)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[start * c + i] += self.grad[i];
      }
    };
  }
  return finish(std::move(n));
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
  const std::size_t c = a.cols();
  for (std::size_t idx : index) {
    if (idx >= a.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(idx) + " out of range for " + a.shape_str());
    }
  }
  auto n = make(index.size(), c, "gather_rows", {&a});
  for (std::size_t i = 0; i < index.size(); ++i)
    std::copy_n(&a.node()->value[index[i] * c], c, &n->value[i * c]);
  if (n->requires_grad) {
    n->backward_fn = [c, idx = std::vector<std::size_t>(index.begin(), index.end())](Node& self) {
      if (Node* p = grad_target(self, 0)) {
        for (std::size_t i = 0; i < idx.size(); ++i)
          for (std::size_t j = 0; j < c; ++j) p->grad[idx[i] * c + j] += self.grad[i * c + j];
      }
    };
  }
  return finish(std::move(n));
}

Tensor pick_cols(const Tensor& a, std::span<const std::size_t> index) {
  if (index.size() != a.rows()) {
    throw ShapeError("pick_cols: " + std::to_string(index.size()) + " indices for " + a.shape_str());
  }
  const std::size_t c = a.cols();
  for (std::size_t idx : index) {
    if (idx >= c) throw ShapeError("pick_cols: column " + std::to_string(idx) + " out of range for " + a.shape_str());
  }
  auto n = make(a.rows(), 1, "pick_cols", {&a});
  for (std::size_t i = 0; i < index.size(); ++i) n->value[i] = a.node()->value[i * c + index[i]];
  if (n->requires_grad) {
    n->backward_fn = [c, idx = std::vector<std::size_t>(index.begin(), index.end())](Node& self) {
      if (Node* p = grad_target(self, 0)) {
        for (std::size_t i = 0; i < idx.size(); ++i) p->grad[i * c + idx[i]] += self.grad[i];
      }
    };
  }
  return finish(std::move(n));
}

Tensor reshape(const Tensor& a, std::size_t rows, std::size_t cols) {
  if (rows * cols != a.size()) {
    throw ShapeError("reshape: cannot view " + a.shape_str() + " as [" + std::to_string(rows) + "x" +
                     std::to_string(cols) + "]");
  }
  auto n = make(rows, cols, "reshape", {&a});
  n->value = a.node()->value;
  if (n->requires_grad) {
    n->backward_fn = [](Node& self) {
      if (Node* p = grad_target(self, 0)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
      }
    };
  }
  return finish(std::move(n));
}

Tensor transpose(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  auto n = make(c, r, "transpose", {&a});
  const auto& v = a.node()->value;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) n->value[j * r + i] = v[i * c + j];
  }
  if (n->requires_grad) {
    n->backward_fn = [r, c](Node& self) {
      if (Node* p = grad_target(self, 0)) {
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) p->grad[i * c + j] += self.grad[j * r + i];
        }
      }
    };
  }
  return finish(std::move(n));
}

Tensor segment_max(const Tensor& a, std::size_t group) {
  if (group == 0 || a.rows() % group != 0) {
    throw ShapeError("segment_max: " + a.shape_str() + " not divisible into groups of " + std::to_string(group));
  }
  const std::size_t g = a.rows() / group, c = a.cols();
  auto n = make(g, c, "segment_max", {&a});
  std::vector<std::size_t> arg(g * c);
  for (std::size_t s = 0; s < g; ++s) {
    for (std::size_t j = 0; j < c; ++j) {
      std::size_t best = s * group;
      for (std::size_t k = 1; k < group; ++k) {
        const std::size_t row = s * group + k;
        if (a.node()->value[row * c + j] > a.node()->value[best * c + j]) best = row;
      }
      arg[s * c + j] = best;
      n->value[s * c + j] = a.node()->value[best * c + j];
    }
  }
  if (n->requires_grad) {
    n->backward_fn = [c, arg = std::move(arg)](Node& self) {
      if (Node* p = grad_target(self, 0)) {
        for (std::size_t i = 0; i < arg.size(); ++i) p->grad[arg[i] * c + i % c] += self.grad[i];
      }
    };
  }
  return finish(std::move(n));
}

Tensor segment_mean(const Tensor& a, std::size_t group) {
  if (group == 0 || a.rows() % group != 0) {
    throw ShapeError("segment_mean: " + a.shape_str() + " not divisible into groups of " + std::to_string(group));
  }
  const std::size_t g = a.rows() / group, c = a.cols();
  const double inv = 1.0 / static_cast<double>(group);
  auto n = make(g, c, "segment_mean", {&a});
  for (std::size_t row = 0; row < a.rows(); ++row)
    for (std::size_t j = 0; j < c; ++j) n->value[(row / group) * c + j] += a.node()->value[row * c + j] * inv;
  if (n->requires_grad) {
    n->backward_fn = [group, c, inv](Node& self) {
      if (Node* p = grad_target(self, 0)) {
        for (std::size_t row = 0; row < p->rows; ++row)
          for (std::size_t j = 0; j < c; ++j) p->grad[row * c + j] += self.grad[(row / group) * c + j] * inv;
      }
    };
  }
  return finish(std::move(n));
}

Tensor interpolate_rows(const Tensor& a, std::span<const std::size_t> index,
                        std::span<const double> weight, std::size_t k) {
  if (k == 0 || index.size() != weight.size() || index.size() % k != 0) {
    throw ShapeError("interpolate_rows: index/weight sizes inconsistent with k=" + std::to_string(k));
  }
  const std::size_t r = index.size() / k, c = a.cols();
  for (std::size_t idx : index) {
    if (idx >= a.rows()) throw ShapeError("interpolate_rows: index out of range for " + a.shape_str());
  }
  auto n = make(r, c, "interpolate_rows", {&a});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t t = 0; t < k; ++t) {
      const double w = weight[i * k + t];
      const double* src = &a.node()->value[index[i * k + t] * c];
      for (std::size_t j = 0; j < c; ++j) n->value[i * c + j] += w * src[j];
    }
  if (n->requires_grad) {
    n->backward_fn = [r, c, k, idx = std::vector<std::size_t>(index.begin(), index.end()),
                      w = std::vector<double>(weight.begin(), weight.end())](Node& self) {
      Node* p = grad_target(self, 0);
      if (!p) return;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t t = 0; t < k; ++t)
          for (std::size_t j = 0; j < c; ++j) p->grad[idx[i * k + t] * c + j] += w[i * k + t] * self.grad[i * c + j];
    };
  }
  return finish(std::move(n));
}

Tensor row_normalize_self_fallback(const Tensor& a, double floor) {
  if (a.rows() != a.cols()) throw ShapeError("row_normalize_self_fallback: matrix must be square, got " + a.shape_str());
  const std::size_t r = a.rows();
  auto n = make(r, r, "row_normalize_self_fallback", {&a});
  std::vector<double> sums(r, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < r; ++j) {
      const double v = a.node()->value[i * r + j];
      if (v < 0.0) throw std::domain_error("row_normalize_self_fallback: negative entry");
      sums[i] += v;
    }
    if (sums[i] > floor) {
      for (std::size_t j = 0; j < r; ++j) n->value[i * r + j] = a.node()->value[i * r + j] / sums[i];
    } else {
      n->value[i * r + i] = 1.0;
    }
  }
  if (n->requires_grad) {
    n->backward_fn = [r, floor, sums = std::move(sums)](Node& self) {
      Node* p = grad_target(self, 0);
      if (!p) return;
      for (std::size_t i = 0; i < r; ++i) {
        // Constant fallback rows carry no gradient.
        if (sums[i] <= floor) continue;
        double dot = 0.0;
        for (std::size_t j = 0; j < r; ++j) dot += self.grad[i * r + j] * self.value[i * r + j];
        for (std::size_t j = 0; j < r; ++j) p->grad[i * r + j] += (self.grad[i * r + j] - dot) / sums[i];
      }
    };
  }
  return finish(std::move(n));
}

Tensor weighted_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels,
                              std::span<const double> weight) {
  if (labels.size() != logits.rows() || weight.size() != logits.rows()) {
    throw ShapeError("weighted_cross_entropy: " + std::to_string(labels.size()) + " labels / " +
                     std::to_string(weight.size()) + " weights for logits " + logits.shape_str());
  }
  double wsum = 0.0;
  for (double w : weight) wsum += w;
  if (wsum <= 0.0) throw std::invalid_argument("weighted_cross_entropy: total weight is zero");
  Tensor nll = neg(pick_cols(log_softmax_rows(logits), labels));
  Tensor w = Tensor::from(weight.size(), 1, std::vector<double>(weight.begin(), weight.end()));
  return scale(sum(mul(nll, w)), 1.0 / wsum);
}

}  // namespace relgraph::ad
