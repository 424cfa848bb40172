#pragma once

// Learnable building blocks on top of the autodiff core: a named parameter
// store, linear layers, running normalization, shared MLPs, the Adam
// optimizer and the checkpoint container.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "relgraph/autodiff.hpp"
#include "relgraph/rng.hpp"

namespace relgraph::nn {

using ad::Tensor;

class ParamStore {
 public:
  /// Registers a learnable tensor; names must be unique.
  Tensor add(const std::string& name, std::size_t rows, std::size_t cols, std::vector<double> init);
  /// Registers a non-learnable state vector (running statistics).
  std::vector<double>& add_buffer(const std::string& name, std::vector<double> init);

  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::vector<double>& buffer(const std::string& name);
  const std::vector<double>& buffer(const std::string& name) const;

  const std::vector<std::string>& names() const { return order_; }
  const std::map<std::string, std::vector<double>>& buffers() const { return buffers_; }
  std::map<std::string, std::vector<double>>& buffers() { return buffers_; }

  /// Number of learnable scalars whose name starts with `prefix`.
  std::size_t count(const std::string& prefix = "") const;
  void zero_grad();

 private:
  std::vector<std::string> order_;
  std::map<std::string, Tensor> params_;
  std::map<std::string, std::vector<double>> buffers_;
};

/// Uniform He-style initialization, bound sqrt(6 / fan_in) * gain.
std::vector<double> he_uniform(std::size_t fan_in, std::size_t count, Rng& rng, double gain = 1.0);

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         bool bias = true, double gain = 1.0);
  Tensor operator()(const Tensor& x) const;
  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }
  const Tensor& weight() const { return weight_; }
  /// Undefined when the layer has no bias.
  const Tensor& bias() const { return bias_; }

 private:
  std::size_t in_ = 0, out_ = 0;
  Tensor weight_;  // in x out
  Tensor bias_;
};

/// Per-feature normalization over the rows of the current input (one
/// scene's points or proposals), followed by gamma * xhat + beta. The same
/// statistics are used for training and inference, and they are
/// differentiated through.
class SceneNorm {
 public:
  SceneNorm() = default;
  SceneNorm(ParamStore& store, const std::string& name, std::size_t width);
  /// Optionally fused with a following ReLU.
  Tensor operator()(const Tensor& x, bool relu = false) const;

 private:
  static constexpr double kEps = 1e-5;
  std::string name_;
  std::size_t width_ = 0;
  Tensor gamma_, beta_;
};

/// Shared MLP: every hidden layer is Linear (no bias) -> SceneNorm -> ReLU.
/// When `plain_last` is set the final layer is a bare Linear with bias.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore& store, const std::string& name, std::size_t in, const std::vector<std::size_t>& widths,
      Rng& rng, bool plain_last = false);
  Tensor operator()(const Tensor& x) const;
  std::size_t out() const { return out_; }

 private:
  std::vector<Linear> linears_;
  std::vector<SceneNorm> norms_;
  bool plain_last_ = false;
  std::size_t out_ = 0;
};

/// Transformer-style sin/cos lifting of each descriptor row to `width`
/// channels (width must be even). Column c of the sine half reads
/// descriptor dimension c % k at frequency level c / k; frequencies are
/// spaced geometrically from 10 down to 0.01 rad per unit. Differentiable
/// with respect to the descriptor.
Tensor sinusoidal_embedding(const Tensor& descriptor, std::size_t width);

// ---- optimizer ---------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// (epoch, factor): from `epoch` on the rate is multiplied by `factor`.
  std::vector<std::pair<int, double>> schedule;
};

struct OptimState {
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;
};

double scheduled_learning_rate(const AdamConfig& cfg, int epoch);

/// One Adam update over every parameter in the store using its accumulated
/// gradient. Throws ad::NonFiniteError on a non-finite gradient when checked
/// mode is on.
void adam_step(ParamStore& store, OptimState& state, const AdamConfig& cfg, int epoch);

// ---- checkpoint --------------------------------------------------------

inline constexpr int kCheckpointFormatVersion = 1;

std::string base64_encode_doubles(const std::vector<double>& values);
std::vector<double> base64_decode_doubles(const std::string& text);

/// JSON container: parameters, buffers and optimizer moments as little-endian
/// float64 payloads (base64), plus caller metadata.
nlohmann::json checkpoint_to_json(const ParamStore& store, const OptimState& state,
                                  const nlohmann::json& metadata);
/// Loads values into an already-constructed store of identical layout.
/// Returns the stored metadata.
nlohmann::json checkpoint_from_json(const nlohmann::json& doc, ParamStore& store, OptimState& state);

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store, const OptimState& state,
                     const nlohmann::json& metadata);
nlohmann::json load_checkpoint(const std::filesystem::path& path, ParamStore& store, OptimState& state);

}  // namespace relgraph::nn
