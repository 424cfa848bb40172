#pragma once

// Point attention pooling: turns the interior seeds of each proposal into a
// fixed appearance vector from pairwise semantic and spatial interactions.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "relgraph/geometry.hpp"
#include "relgraph/nn.hpp"

namespace relgraph::pool {

using ad::Tensor;

/// N_R seed rows drawn from inside a proposal box. `canonical` holds the
/// sampled coordinates minus their mean (N_R x 3, row-major).
struct InteriorSample {
  std::vector<std::size_t> index;
  std::vector<double> canonical;
  /// Distinct seeds found inside the box (0 when the fallback was used).
  std::size_t candidates = 0;
  bool used_fallback = false;
};

/// Seeds strictly inside `box` (tolerance-free containment), sampled without
/// replacement and repeat-filled to `n_r` rows. With no interior seed the
/// `fallback` indices (the proposal's cluster members) are used instead.
InteriorSample sample_interior(const OrientedBox& box, std::span<const Vec3> seed_coords,
                               std::span<const std::size_t> fallback, std::size_t n_r, std::uint64_t seed);

struct PoolDims {
  std::size_t semantic = 64;   // d1, width of s
  std::size_t out = 64;        // d2
  std::size_t sem_hidden = 16; // d_s
  std::size_t spa_hidden = 8;  // d_l
  std::size_t embed = 64;      // width of the pairwise spatial embedding
};

/// K_c * (d2 + d_s + d_l).
std::size_t pooling_param_count(std::size_t k_c, std::size_t d2, std::size_t d_s, std::size_t d_l);

/// For points i, j of one sample:
///   a_ij = relu(W_sem (s_i * s_j))            d_s channels
///   b_ij = relu(W_spa emb(l_j - l_i))         d_l channels
///   g_ij = mean(a_ij ++ b_ij)
///   h_ij = g_ij * relu(W_h s_j)
///   R    = mean over all ordered pairs (i, j) of h_ij
/// No biases; the learnable scalars are d_s*d1 + d_l*embed + d2*d1.
class PointAttentionPool {
 public:
  PointAttentionPool() = default;
  PointAttentionPool(nn::ParamStore& store, const std::string& name, const PoolDims& dims, Rng& rng);

  /// `semantic` (K*N x d1) and `spatial` (K*N x 6) hold K consecutive
  /// samples of N rows each. Returns K x d2.
  Tensor pool(const Tensor& semantic, const Tensor& spatial, std::size_t rows_per_sample) const;

  /// Gathers s from `features` and l = canonical ++ direction for each sample.
  Tensor operator()(const Tensor& features, const Tensor& directions,
                    const std::vector<InteriorSample>& samples) const;

  const PoolDims& dims() const { return dims_; }

 private:
  PoolDims dims_;
  nn::Linear sem_, spa_, value_;
};

}  // namespace relgraph::pool
