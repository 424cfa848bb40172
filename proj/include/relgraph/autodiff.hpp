#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every tensor is two-dimensional (rows x cols); scalars are 1x1.
// Values are 64-bit. An operation records a tape entry only when one of its
// inputs requires a gradient, so constant preprocessing stays cheap.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace relgraph::ad {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// When enabled (the default), every op output is scanned for NaN/Inf and a
/// NonFiniteError naming the op is thrown.
void set_checked(bool on);
bool checked();

struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(std::size_t rows, std::size_t cols);
  static Tensor full(std::size_t rows, std::size_t cols, double v);
  static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor scalar(double v);
  /// Leaf that accumulates gradients.
  static Tensor param(std::size_t rows, std::size_t cols, std::vector<double> values);

  bool defined() const { return static_cast<bool>(node_); }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }
  std::vector<std::size_t> shape() const { return {node_->rows, node_->cols}; }
  std::string shape_str() const;

  double operator()(std::size_t r, std::size_t c) const { return node_->value[r * node_->cols + c]; }
  double item() const;
  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }

  void zero_grad();
  /// Reverse pass from a 1x1 tensor; gradients accumulate into every leaf
  /// that requires them.
  void backward() const;
  /// Same values, no tape.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// ---- linear algebra / elementwise -------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// a (r x c) + b (1 x c), broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& b);
/// a (r x c) * b (1 x c), broadcast over rows.
Tensor mul_row(const Tensor& a, const Tensor& b);
/// a (r x c) * b (r x 1), broadcast over columns.
Tensor mul_col(const Tensor& a, const Tensor& b);
/// a * scale + shift with (1 x c) scale and shift; clamped at zero when
/// `relu` is set. One pass over `a` in both directions.
Tensor affine_rows(const Tensor& a, const Tensor& scale, const Tensor& shift, bool relu = false);
/// Per-column batch normalization with batch statistics (biased variance),
/// then gamma * xhat + beta and an optional ReLU. The batch mean and variance
/// are written to `mean_out` / `var_out` when given.
Tensor batch_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps, bool relu,
                  std::vector<double>* mean_out = nullptr, std::vector<double>* var_out = nullptr);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
/// Clamp with zero gradient outside [lo, hi].
Tensor clamp(const Tensor& a, double lo, double hi);
/// Elementwise Huber-style smooth L1 with transition at `beta`.
Tensor smooth_l1(const Tensor& a, double beta = 1.0);

// ---- reductions ---------------------------------------------------------

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Column sums: (r x c) -> (1 x c).
Tensor sum_rows(const Tensor& a);
/// Row sums: (r x c) -> (r x 1).
Tensor sum_cols(const Tensor& a);
/// Row means: (r x c) -> (r x 1).
Tensor mean_cols(const Tensor& a);
/// Euclidean norm of each row, (r x c) -> (r x 1); subgradient 0 at the origin.
Tensor row_norm(const Tensor& a);
/// Each row divided by max(norm, eps).
Tensor normalize_rows(const Tensor& a, double eps = 1e-12);

Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);

// ---- structural ---------------------------------------------------------

Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index);
/// out[r] = a[r, index[r]], (r x c) -> (r x 1).
Tensor pick_cols(const Tensor& a, std::span<const std::size_t> index);
Tensor reshape(const Tensor& a, std::size_t rows, std::size_t cols);
Tensor transpose(const Tensor& a);
/// Max over consecutive groups of `group` rows: (g*k x c) -> (g x c).
Tensor segment_max(const Tensor& a, std::size_t group);
/// Mean over consecutive groups of `group` rows.
Tensor segment_mean(const Tensor& a, std::size_t group);
/// out[r] = sum_k weight[r,k] * a[index[r,k]] with `k` neighbors per row.
Tensor interpolate_rows(const Tensor& a, std::span<const std::size_t> index,
                        std::span<const double> weight, std::size_t k);
/// Row-wise normalization of a non-negative matrix. Rows whose sum is at or
/// below `floor` become one-hot on their diagonal entry (requires a square
/// matrix); the floor keeps the reverse pass bounded.
Tensor row_normalize_self_fallback(const Tensor& a, double floor = 1e-9);

// ---- helpers ------------------------------------------------------------

/// Mean two-or-more class cross entropy of rows `logits` against integer
/// labels, restricted to rows with weight != 0 and weighted by `weight`.
/// Returns sum_r weight[r] * CE_r / sum_r weight[r].
Tensor weighted_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels,
                              std::span<const double> weight);

}  // namespace relgraph::ad
