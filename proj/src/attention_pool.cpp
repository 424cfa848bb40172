#include "relgraph/attention_pool.hpp"

#include <algorithm>
#include <stdexcept>

namespace relgraph::pool {

InteriorSample sample_interior(const OrientedBox& box, std::span<const Vec3> seed_coords,
                               std::span<const std::size_t> fallback, std::size_t n_r, std::uint64_t seed) {
  if (n_r == 0) throw std::invalid_argument("sample_interior: N_R must be at least 1");
  InteriorSample out;
  std::vector<std::size_t> cand;
  for (std::size_t i = 0; i < seed_coords.size(); ++i) {
    if (contains(box, seed_coords[i])) cand.push_back(i);
  }
  out.candidates = cand.size();
  if (cand.empty()) {
    for (std::size_t i : fallback) {
      if (i >= seed_coords.size()) throw std::out_of_range("sample_interior: fallback index out of range");
    }
    cand.assign(fallback.begin(), fallback.end());
    std::sort(cand.begin(), cand.end());
    cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
    out.used_fallback = true;
  }
  if (cand.empty()) throw std::invalid_argument("sample_interior: no interior points and no cluster members");

  // Partial Fisher-Yates: the first min(n, N_R) entries are a draw without
  // replacement; the rest repeat them cyclically.
  Rng rng(seed);
  const std::size_t take = std::min(cand.size(), n_r);
  for (std::size_t i = 0; i < take; ++i) {
    std::swap(cand[i], cand[i + uniform_index(rng, cand.size() - i)]);
  }
  out.index.resize(n_r);
  for (std::size_t r = 0; r < n_r; ++r) out.index[r] = cand[r % take];

  Vec3 mean{0.0, 0.0, 0.0};
  for (std::size_t i : out.index) {
    for (int d = 0; d < 3; ++d) mean[d] += seed_coords[i][d];
  }
  for (double& m : mean) m /= static_cast<double>(n_r);
  out.canonical.reserve(n_r * 3);
  for (std::size_t i : out.index) {
    for (int d = 0; d < 3; ++d) out.canonical.push_back(seed_coords[i][d] - mean[d]);
  }
  return out;
}

std::size_t pooling_param_count(std::size_t k_c, std::size_t d2, std::size_t d_s, std::size_t d_l) {
  return k_c * (d2 + d_s + d_l);
}

PointAttentionPool::PointAttentionPool(nn::ParamStore& store, const std::string& name, const PoolDims& dims,
                                       Rng& rng)
    : dims_(dims),
      sem_(store, name + ".sem", dims.semantic, dims.sem_hidden, rng, /*bias=*/false),
      spa_(store, name + ".spa", dims.embed, dims.spa_hidden, rng, /*bias=*/false),
      value_(store, name + ".value", dims.semantic, dims.out, rng, /*bias=*/false) {}

Tensor PointAttentionPool::pool(const Tensor& semantic, const Tensor& spatial, std::size_t n) const {
  if (n == 0 || semantic.rows() % n != 0 || spatial.rows() != semantic.rows()) {
    throw ad::ShapeError("attention pool: semantic " + semantic.shape_str() + " and spatial " +
                         spatial.shape_str() + " do not split into samples of " + std::to_string(n) + " rows");
  }
  if (semantic.cols() != dims_.semantic || spatial.cols() != 6) {
    throw ad::ShapeError("attention pool: expected semantic width " + std::to_string(dims_.semantic) +
                         " and spatial width 6, got " + semantic.shape_str() + " and " + spatial.shape_str());
  }
  const std::size_t k = semantic.rows() / n;
  // Pair rows ordered (sample, i, j).
  std::vector<std::size_t> left, right;
  left.reserve(k * n * n);
  right.reserve(k * n * n);
  for (std::size_t s = 0; s < k; ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        left.push_back(s * n + i);
        right.push_back(s * n + j);
      }
    }
  }
  Tensor a = ad::relu(sem_(ad::mul(ad::gather_rows(semantic, left), ad::gather_rows(semantic, right))));
  Tensor rel = ad::sub(ad::gather_rows(spatial, right), ad::gather_rows(spatial, left));
  Tensor b = ad::relu(spa_(nn::sinusoidal_embedding(rel, dims_.embed)));
  Tensor gate = ad::scale(ad::add(ad::sum_cols(a), ad::sum_cols(b)),
                          1.0 / static_cast<double>(dims_.sem_hidden + dims_.spa_hidden));
  // Mean over i of g_ij, one weight per (sample, j).
  Tensor weight = ad::reshape(ad::segment_mean(ad::reshape(gate, k * n, n), n), k * n, 1);
  Tensor value = ad::relu(value_(semantic));
  return ad::segment_mean(ad::mul_col(value, weight), n);
}

Tensor PointAttentionPool::operator()(const Tensor& features, const Tensor& directions,
                                      const std::vector<InteriorSample>& samples) const {
  if (samples.empty()) throw std::invalid_argument("attention pool: no samples");
  const std::size_t n = samples.front().index.size();
  std::vector<std::size_t> index;
  std::vector<double> canonical;
  for (const auto& s : samples) {
    if (s.index.size() != n || s.canonical.size() != 3 * n) {
      throw std::invalid_argument("attention pool: samples differ in size");
    }
    index.insert(index.end(), s.index.begin(), s.index.end());
    canonical.insert(canonical.end(), s.canonical.begin(), s.canonical.end());
  }
  const std::size_t rows = index.size();
  Tensor spatial = ad::concat_cols({Tensor::from(rows, 3, std::move(canonical)), ad::gather_rows(directions, index)});
  return pool(ad::gather_rows(features, index), spatial, n);
}

}  // namespace relgraph::pool
