#include "relgraph/backbone.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace relgraph::backbone {

namespace {

double dist2(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace

void validate(const PointCloud& cloud) {
  if (cloud.coords.empty()) throw std::invalid_argument("point cloud is empty");
  for (std::size_t i = 0; i < cloud.coords.size(); ++i) {
    for (double v : cloud.coords[i]) {
      if (!std::isfinite(v)) throw std::invalid_argument("point " + std::to_string(i) + " has a non-finite coordinate");
    }
  }
}

std::vector<std::size_t> farthest_point_sample_from(std::span<const Vec3> points, std::size_t k, std::size_t first) {
  const std::size_t n = points.size();
  if (k < 1 || k > n) {
    throw std::invalid_argument("farthest_point_sample: k=" + std::to_string(k) + " outside [1, " +
                                std::to_string(n) + "]");
  }
  if (first >= n) throw std::invalid_argument("farthest_point_sample: first index out of range");
  std::vector<std::size_t> picked{first};
  picked.reserve(k);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::size_t last = first;
  while (picked.size() < k) {
    std::size_t arg = 0;
    double far = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      best[i] = std::min(best[i], dist2(points[i], points[last]));
      if (best[i] > far) {
        far = best[i];
        arg = i;
      }
    }
    picked.push_back(arg);
    last = arg;
  }
  return picked;
}

std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t k, std::uint64_t seed) {
  if (points.empty()) throw std::invalid_argument("farthest_point_sample: empty cloud");
  Rng rng(seed);
  return farthest_point_sample_from(points, k, uniform_index(rng, points.size()));
}

std::vector<std::size_t> ball_query(std::span<const Vec3> points, const Vec3& center, double radius,
                                    std::size_t max_count) {
  if (points.empty()) throw std::invalid_argument("ball_query: empty cloud");
  if (!(radius > 0.0)) throw std::invalid_argument("ball_query: radius must be positive");
  if (max_count == 0) throw std::invalid_argument("ball_query: max_count must be positive");
  const double r2 = radius * radius;
  std::vector<std::size_t> out;
  out.reserve(max_count);
  for (std::size_t i = 0; i < points.size() && out.size() < max_count; ++i) {
    if (dist2(points[i], center) <= r2) out.push_back(i);
  }
  if (out.empty()) {
    std::size_t nearest = 0;
    double nd = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double d = dist2(points[i], center);
      if (d < nd) {
        nd = d;
        nearest = i;
      }
    }
    out.push_back(nearest);
  }
  const std::size_t hits = out.size();
  for (std::size_t i = hits; i < max_count; ++i) out.push_back(out[(i - hits) % hits]);
  return out;
}

Interpolation three_nn_weights(std::span<const Vec3> coarse, std::span<const Vec3> fine, double eps) {
  if (coarse.empty()) throw std::invalid_argument("feature propagation: no coarse points");
  if (fine.empty()) throw std::invalid_argument("feature propagation: no fine points");
  Interpolation out;
  out.k = std::min<std::size_t>(3, coarse.size());
  out.index.reserve(fine.size() * out.k);
  out.weight.reserve(fine.size() * out.k);
  std::vector<std::pair<double, std::size_t>> cand(coarse.size());
  for (const auto& p : fine) {
    for (std::size_t j = 0; j < coarse.size(); ++j) cand[j] = {dist2(p, coarse[j]), j};
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(out.k), cand.end());
    double total = 0.0;
    std::array<double, 3> w{};
    for (std::size_t t = 0; t < out.k; ++t) {
      w[t] = 1.0 / (std::sqrt(cand[t].first) + eps);
      total += w[t];
    }
    for (std::size_t t = 0; t < out.k; ++t) {
      out.index.push_back(cand[t].second);
      out.weight.push_back(w[t] / total);
    }
  }
  return out;
}

BackbonePlan plan_backbone(const PointCloud& cloud, const BackboneConfig& cfg, std::uint64_t seed) {
  validate(cloud);
  if (cfg.sa.empty() || cfg.fp.empty() || cfg.fp.size() >= cfg.sa.size()) {
    throw std::invalid_argument("backbone: need SA layers and fewer FP layers than SA layers");
  }
  BackbonePlan plan;
  plan.input = cloud.coords;
  plan.levels.reserve(cfg.sa.size());
  const std::vector<Vec3>* prev = &plan.input;
  for (std::size_t l = 0; l < cfg.sa.size(); ++l) {
    const auto& spec = cfg.sa[l];
    BackbonePlan::Level level;
    level.center_index = farthest_point_sample(*prev, spec.centers, derive_seed(seed, l));
    level.coords.reserve(spec.centers);
    for (std::size_t idx : level.center_index) level.coords.push_back((*prev)[idx]);
    level.group_index.reserve(spec.centers * spec.group);
    level.canonical.reserve(spec.centers * spec.group * 3);
    for (const auto& c : level.coords) {
      for (std::size_t idx : ball_query(*prev, c, spec.radius, spec.group)) {
        level.group_index.push_back(idx);
        for (int d = 0; d < 3; ++d) level.canonical.push_back(((*prev)[idx][d] - c[d]) / spec.radius);
      }
    }
    plan.levels.push_back(std::move(level));
    prev = &plan.levels.back().coords;
  }
  const std::size_t top = cfg.sa.size();
  for (std::size_t i = 0; i < cfg.fp.size(); ++i) {
    const auto& coarse = plan.levels[top - 1 - i].coords;
    const auto& fine = plan.levels[top - 2 - i].coords;
    plan.fp_interp.push_back(three_nn_weights(coarse, fine));
  }
  return plan;
}

SetAbstraction::SetAbstraction(nn::ParamStore& store, const std::string& name, std::size_t in_features,
                               const SaSpec& spec, Rng& rng)
    : spec_(spec), mlp_(store, name, in_features + 3, spec.mlp, rng) {}

Tensor SetAbstraction::operator()(const BackbonePlan::Level& level, const Tensor& features) const {
  const std::size_t rows = level.group_index.size();
  Tensor offsets = Tensor::from(rows, 3, level.canonical);
  Tensor grouped = features.defined() ? ad::concat_cols({offsets, ad::gather_rows(features, level.group_index)})
                                      : offsets;
  return ad::segment_max(mlp_(grouped), spec_.group);
}

FeaturePropagation::FeaturePropagation(nn::ParamStore& store, const std::string& name, std::size_t coarse_dim,
                                       std::size_t skip_dim, const std::vector<std::size_t>& widths, Rng& rng)
    : mlp_(store, name, coarse_dim + skip_dim, widths, rng) {}

Tensor FeaturePropagation::operator()(const Interpolation& interp, const Tensor& coarse, const Tensor& skip) const {
  Tensor up = ad::interpolate_rows(coarse, interp.index, interp.weight, interp.k);
  return mlp_(ad::concat_cols({up, skip}));
}

Backbone::Backbone(nn::ParamStore& store, const std::string& name, const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.sa.empty() || cfg.fp.empty() || cfg.fp.size() >= cfg.sa.size()) {
    throw std::invalid_argument("backbone: need SA layers and fewer FP layers than SA layers");
  }
  std::vector<std::size_t> dims;
  std::size_t in = 0;
  for (std::size_t l = 0; l < cfg.sa.size(); ++l) {
    if (cfg.sa[l].mlp.empty()) throw std::invalid_argument("backbone: SA layer with empty MLP");
    if (l > 0 && cfg.sa[l].centers > cfg.sa[l - 1].centers) {
      throw std::invalid_argument("backbone: SA center counts must be non-increasing");
    }
    sa_.emplace_back(store, name + ".sa" + std::to_string(l + 1), in, cfg.sa[l], rng);
    in = sa_.back().out();
    dims.push_back(in);
  }
  std::size_t coarse = dims.back();
  for (std::size_t i = 0; i < cfg.fp.size(); ++i) {
    const std::size_t skip = dims[dims.size() - 2 - i];
    fp_.emplace_back(store, name + ".fp" + std::to_string(i + 1), coarse, skip, cfg.fp[i], rng);
    coarse = fp_.back().out();
  }
}

SeedSet Backbone::operator()(const BackbonePlan& plan) const {
  if (plan.levels.size() != sa_.size()) throw std::invalid_argument("backbone: plan does not match configuration");
  std::vector<Tensor> feats;
  Tensor prev;
  for (std::size_t l = 0; l < sa_.size(); ++l) {
    prev = sa_[l](plan.levels[l], prev);
    feats.push_back(prev);
  }
  Tensor up = feats.back();
  for (std::size_t i = 0; i < fp_.size(); ++i) {
    up = fp_[i](plan.fp_interp[i], up, feats[feats.size() - 2 - i]);
  }
  return {plan.levels[cfg_.seed_level() - 1].coords, up};
}

}  // namespace relgraph::backbone
