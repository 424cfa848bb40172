#include "relgraph/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "relgraph/attention_pool.hpp"
#include "relgraph/backbone.hpp"
#include "relgraph/config.hpp"
#include "relgraph/losses.hpp"
#include "relgraph/model.hpp"
#include "relgraph/nn.hpp"
#include "relgraph/proposal.hpp"
#include "relgraph/relation_graph.hpp"
#include "relgraph/scene.hpp"

namespace relgraph::gradcheck {

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

Result check(const std::string& name, const std::vector<Tensor>& inputs, const std::function<Tensor()>& f,
             std::uint64_t seed, const Options& opt) {
  Result res;
  res.name = name;
  std::vector<Tensor> xs;
  for (const auto& t : inputs) {
    if (t.size() > 0) xs.push_back(t);
  }
  if (xs.empty()) throw std::invalid_argument("gradcheck '" + name + "': nothing to probe");
  for (auto& x : xs) {
    if (!x.requires_grad()) throw std::invalid_argument("gradcheck '" + name + "': input does not require grad");
    x.zero_grad();
  }
  const Tensor y = f();
  const double f0 = y.item();
  y.backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& x : xs) analytic.emplace_back(x.grad().begin(), x.grad().end());

  Rng rng(seed);
  const auto max_attempts =
      static_cast<std::size_t>(std::ceil(static_cast<double>(opt.probes) / (1.0 - opt.max_skip_fraction)));
  std::size_t attempts = 0;
  while (res.probes < opt.probes && attempts < max_attempts) {
    ++attempts;
    const std::size_t which = uniform_index(rng, xs.size());
    Tensor x = xs[which];
    const std::size_t idx = uniform_index(rng, x.size());
    auto v = x.mutable_values();
    const double x0 = v[idx];
    v[idx] = x0 + opt.step;
    const double fp = f().item();
    v[idx] = x0 - opt.step;
    const double fm = f().item();
    v[idx] = x0;
    const double a = analytic[which][idx];
    const double n = (fp - fm) / (2.0 * opt.step);
    const double err = relative_error(a, n, opt.floor);
    if (err >= opt.tolerance) {
      // A kink or jump inside [x - h, x + h] shows up as disagreeing one-sided
      // slopes; a wrong gradient at a smooth point does not.
      const double asym = std::abs((fp - f0) - (f0 - fm)) / opt.step;
      if (asym > std::abs(a - n)) {
        ++res.skipped;
        continue;
      }
      ++res.failures;
    }
    ++res.probes;
    res.max_error = std::max(res.max_error, err);
  }
  res.passed = res.failures == 0 && res.probes >= opt.probes;
  return res;
}

namespace {

using ad::Tensor;

Tensor random_param(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = scale * normal(rng);
  return Tensor::param(r, c, std::move(v));
}

/// sum(out * C) for a fixed random C of matching shape, built once.
class Projector {
 public:
  explicit Projector(std::uint64_t seed) : rng_(seed) {}
  Tensor operator()(const Tensor& out) {
    auto it = weights_.find(out.size());
    if (it == weights_.end()) {
      std::vector<double> v(out.size());
      for (auto& x : v) x = normal(rng_);
      it = weights_.emplace(out.size(), std::move(v)).first;
    }
    return ad::sum(ad::mul(out, Tensor::from(out.rows(), out.cols(), it->second)));
  }

 private:
  Rng rng_;
  std::map<std::size_t, std::vector<double>> weights_;
};

/// Every parameter of `store`, nudged by N(0, 0.05^2) so probes do not start
/// on the exact kinks of a fresh initialization (zero biases).
std::vector<Tensor> params_of(const nn::ParamStore& store, std::uint64_t seed = 0x7e57) {
  Rng rng(seed);
  std::vector<Tensor> out;
  for (const auto& n : store.names()) {
    Tensor t = store.get(n);
    for (double& v : t.mutable_values()) v += 0.05 * normal(rng);
    out.push_back(t);
  }
  return out;
}

std::vector<Tensor> join(std::vector<Tensor> a, const std::vector<Tensor>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::vector<Vec3> random_points(std::size_t n, Rng& rng, double extent) {
  std::vector<Vec3> p(n);
  for (auto& q : p) q = {uniform(rng, -extent, extent), uniform(rng, -extent, extent), uniform(rng, 0.0, extent)};
  return p;
}

struct Suite {
  std::uint64_t seed;
  Options opt;
  std::vector<Result> results;

  void run(const std::string& name, const std::vector<Tensor>& inputs, const std::function<Tensor()>& f) {
    results.push_back(check(name, inputs, f, derive_seed(seed, results.size()), opt));
  }
};

// ---- autodiff ---------------------------------------------------------------

void autodiff_suite(Suite& s) {
  Rng rng(derive_seed(s.seed, 0xad));
  Projector proj(derive_seed(s.seed, 0xad1));
  Tensor a = random_param(6, 5, rng), b = random_param(6, 5, rng), row = random_param(1, 5, rng),
         col = random_param(6, 1, rng), row2 = random_param(1, 5, rng);
  s.run("ops.elementwise", {a, b, row, col, row2}, [&] {
    std::vector<Tensor> parts{
        ad::add(a, b),
        ad::sub(a, b),
        ad::mul(a, b),
        ad::add_row(a, row),
        ad::mul_row(a, row),
        ad::mul_col(a, col),
        ad::affine_rows(a, row, row2),
        ad::affine_rows(b, row, row2, true),
        ad::scale(a, -1.7),
        ad::add_scalar(a, 0.3),
        ad::neg(b),
        ad::relu(a),
        ad::exp(ad::scale(a, 0.5)),
        ad::log(ad::add_scalar(ad::square(b), 0.5)),
        ad::sigmoid(a),
        ad::tanh(b),
        ad::sin(a),
        ad::cos(b),
        ad::clamp(a, -0.8, 0.8),
        ad::smooth_l1(ad::scale(b, 2.0)),
    };
    return proj(ad::concat_cols(parts));
  });
  Tensor c = random_param(7, 4, rng);
  std::vector<std::size_t> labels{0, 3, 1, 2, 2, 0, 1};
  std::vector<double> weight{1.0, 0.0, 2.0, 1.0, 0.5, 1.0, 1.0};
  s.run("ops.reductions", {c}, [&] {
    std::vector<Tensor> terms{
        proj(ad::sum_rows(c)),
        proj(ad::sum_cols(c)),
        proj(ad::mean_cols(c)),
        proj(ad::row_norm(c)),
        proj(ad::normalize_rows(c)),
        proj(ad::softmax_rows(c)),
        proj(ad::log_softmax_rows(c)),
        ad::sum(ad::square(c)),
        ad::scale(ad::mean(c), 3.0),
        ad::weighted_cross_entropy(c, labels, weight),
    };
    Tensor acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
    return acc;
  });
  Tensor m = random_param(8, 3, rng), w = random_param(3, 4, rng), sq = random_param(5, 5, rng);
  std::vector<std::size_t> gidx{3, 0, 7, 7, 2, 5};
  std::vector<std::size_t> pidx{0, 2, 1, 2, 0, 1, 1, 2};
  std::vector<std::size_t> iidx{0, 1, 2, 3, 4, 5, 6, 7, 0, 5, 5, 1};
  std::vector<double> iw{0.2, 0.3, 0.5, 0.1, 0.1, 0.8, 0.6, 0.2, 0.2, 0.3, 0.3, 0.4};
  s.run("ops.structural", {m, w, sq}, [&] {
    Tensor mw = ad::matmul(m, w);
    Tensor pos = ad::exp(sq);
    std::vector<Tensor> terms{
        proj(ad::concat_rows({m, ad::slice_rows(m, 2, 3)})),
        proj(ad::concat_cols({mw, ad::slice_cols(m, 1, 2)})),
        proj(ad::gather_rows(mw, gidx)),
        proj(ad::pick_cols(m, pidx)),
        proj(ad::reshape(mw, 4, 8)),
        proj(ad::transpose(mw)),
        proj(ad::segment_max(mw, 2)),
        proj(ad::segment_mean(mw, 4)),
        proj(ad::interpolate_rows(mw, iidx, iw, 3)),
        proj(ad::row_normalize_self_fallback(pos)),
    };
    Tensor acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
    return acc;
  });
}

// ---- nn -----------------------------------------------------------------------

void nn_suite(Suite& s) {
  Rng rng(derive_seed(s.seed, 0x22));
  Projector proj(derive_seed(s.seed, 0x221));
  {
    nn::ParamStore store;
    nn::Linear lin(store, "lin", 6, 5, rng);
    Tensor x = random_param(9, 6, rng);
    s.run("nn.linear", join(params_of(store), {x}), [&] { return proj(lin(x)); });
  }
  {
    nn::ParamStore store;
    nn::SceneNorm norm(store, "norm", 5);
    Tensor x = random_param(9, 5, rng);
    s.run("nn.scene_norm", join(params_of(store), {x}),
          [&] { return ad::add(proj(norm(x)), proj(norm(ad::square(x), true))); });
  }
  {
    nn::ParamStore store;
    nn::Mlp mlp(store, "mlp", 4, {8, 8, 3}, rng, true);
    Tensor x = random_param(10, 4, rng);
    s.run("nn.mlp", join(params_of(store), {x}), [&] { return proj(mlp(x)); });
  }
  {
    Tensor d = random_param(6, 10, rng, 0.5);
    s.run("nn.sinusoidal_embedding", {d}, [&] { return proj(nn::sinusoidal_embedding(d, 24)); });
  }
}

// ---- backbone --------------------------------------------------------------

backbone::BackboneConfig tiny_backbone() {
  backbone::BackboneConfig cfg;
  cfg.num_points = 256;
  cfg.sa = {{64, 0.3, 8, {8, 8, 16}}, {32, 0.6, 8, {16, 16}}, {16, 1.0, 8, {16, 16}}};
  cfg.fp = {{16, 16}};
  return cfg;
}

void backbone_suite(Suite& s) {
  Rng rng(derive_seed(s.seed, 0xbb));
  Projector proj(derive_seed(s.seed, 0xbb1));
  const auto cfg = tiny_backbone();
  backbone::PointCloud cloud{random_points(cfg.num_points, rng, 1.0)};
  const auto plan = backbone::plan_backbone(cloud, cfg, derive_seed(s.seed, 3));
  {
    nn::ParamStore store;
    backbone::SetAbstraction sa(store, "sa", 0, cfg.sa[0], rng);
    s.run("backbone.sa_first", params_of(store), [&] { return proj(sa(plan.levels[0], Tensor())); });
  }
  {
    nn::ParamStore store;
    backbone::SetAbstraction sa(store, "sa", 5, cfg.sa[1], rng);
    Tensor feats = random_param(cfg.sa[0].centers, 5, rng);
    s.run("backbone.sa", join(params_of(store), {feats}), [&] { return proj(sa(plan.levels[1], feats)); });
  }
  {
    nn::ParamStore store;
    backbone::FeaturePropagation fp(store, "fp", 6, 4, {8, 8}, rng);
    Tensor coarse = random_param(cfg.sa[2].centers, 6, rng), skip = random_param(cfg.sa[1].centers, 4, rng);
    s.run("backbone.fp", join(params_of(store), {coarse, skip}),
          [&] { return proj(fp(plan.fp_interp[0], coarse, skip)); });
  }
  {
    nn::ParamStore store;
    backbone::Backbone net(store, "backbone", cfg, rng);
    s.run("backbone.full", params_of(store), [&] { return proj(net(plan).features); });
  }
}

// ---- proposal -------------------------------------------------------------

void proposal_suite(Suite& s) {
  Rng rng(derive_seed(s.seed, 0x9909));
  Projector proj(derive_seed(s.seed, 0x99091));
  const std::size_t m = 40, d1 = 6;
  backbone::SeedSet seeds;
  seeds.coords = random_points(m, rng, 1.0);
  seeds.features = random_param(m, d1, rng);
  {
    nn::ParamStore store;
    proposal::SeedHead head(store, "seed_head", d1, {8}, rng);
    s.run("proposal.seed_head", join(params_of(store), {seeds.features}), [&] {
      const auto p = head(seeds);
      return ad::add(ad::add(proj(p.pseudo_centers), proj(p.features)), proj(p.directions));
    });
  }
  {
    nn::ParamStore store;
    proposal::ClusterAggregator agg(store, "cluster", d1, {8, 8}, 0.5, rng);
    proposal::SeedPredictions preds;
    preds.pseudo_centers = random_param(m, 3, rng, 0.5);
    preds.features = random_param(m, d1, rng);
    preds.directions = random_param(m, 3, rng);
    const auto clusters = proposal::cluster_pseudo_centers(proposal::rows_to_points(preds.pseudo_centers), 6, 0.5, 5,
                                                           derive_seed(s.seed, 9));
    s.run("proposal.cluster_aggregator",
          join(params_of(store), {preds.pseudo_centers, preds.features, preds.directions}),
          [&] { return proj(agg(preds, clusters)); });
  }
  {
    const proposal::HeadLayout layout(6, 3, 3);
    const std::size_t k = 5;
    Tensor raw = random_param(k, layout.width(), rng);
    const auto anchors = random_points(k, rng, 1.0);
    const std::vector<Vec3> templates{{0.5, 0.5, 0.8}, {1.2, 0.6, 0.7}, {0.9, 0.4, 1.1}};
    s.run("proposal.decode_geometry", {raw}, [&] {
      const auto g = proposal::decode_geometry(raw, layout, anchors, templates);
      return ad::add(ad::add(proj(g.centers), proj(g.log_sizes)), proj(g.headings));
    });
  }
}

// ---- pool ---------------------------------------------------------------------

void pool_suite(Suite& s) {
  Rng rng(derive_seed(s.seed, 0x9001));
  Projector proj(derive_seed(s.seed, 0x90011));
  pool::PoolDims dims;
  dims.semantic = 6;
  dims.out = 5;
  dims.sem_hidden = 4;
  dims.spa_hidden = 3;
  dims.embed = 12;
  nn::ParamStore store;
  pool::PointAttentionPool pool(store, "pool", dims, rng);
  const std::size_t m = 30, n_r = 5;
  Tensor features = random_param(m, dims.semantic, rng);
  Tensor directions = random_param(m, 3, rng);
  const auto coords = random_points(m, rng, 1.0);
  std::vector<pool::InteriorSample> samples;
  for (std::size_t k = 0; k < 3; ++k) {
    OrientedBox box;
    box.center = coords[k];
    box.size = {1.2, 1.0, 1.2};
    box.heading = uniform(rng, 0.0, 6.0);
    std::vector<std::size_t> fallback{k};
    samples.push_back(pool::sample_interior(box, coords, fallback, n_r, derive_seed(s.seed, 20 + k)));
  }
  s.run("pool.attention_pool", join(params_of(store), {features, directions}),
        [&] { return proj(pool(features, directions, samples)); });
}

// ---- relation -------------------------------------------------------------

void relation_suite(Suite& s) {
  Rng rng(derive_seed(s.seed, 0x4e1));
  Projector proj(derive_seed(s.seed, 0x4e11));
  const std::size_t k = 6;
  relation::RelationDims dims;
  dims.appearance = 5;
  dims.key = 4;
  dims.embed = 10;
  dims.hidden = k;
  Tensor r = random_param(k, dims.appearance, rng);
  relation::PositionFeatures u{random_param(k, 3, rng, 0.8), random_param(k, 3, rng, 0.3),
                               random_param(k, 1, rng)};
  // Pair distances stay clear of delta so the constant mask does not flip.
  const auto dist = relation::center_distances(u.centers);
  std::vector<double> sorted(dist);
  std::sort(sorted.begin(), sorted.end());
  double delta = sorted[sorted.size() / 2];
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i] > sorted[sorted.size() / 2] && sorted[i] - sorted[i - 1] > 0.05) {
      delta = 0.5 * (sorted[i] + sorted[i - 1]);
      break;
    }
  }
  const std::vector<Tensor> geo{u.centers, u.log_sizes, u.headings};
  {
    nn::ParamStore store;
    relation::GraphModule g(store, "g", dims, rng);
    for (const bool literal : {true, false}) {
      relation::RelationOptions opt{relation::PositionMode::mask, delta, literal};
      s.run(literal ? "relation.graph_mask" : "relation.graph_mask_single_norm",
            join(join(params_of(store), {r}), geo), [&] {
              const auto gr = g.graph(r, u, opt);
              return ad::add(proj(gr.weights), proj(g.feature(gr, r)));
            });
    }
    relation::RelationOptions enc{relation::PositionMode::encoding, delta, true};
    s.run("relation.graph_encoding", join(join(params_of(store), {r}), geo), [&] {
      const auto gr = g.graph(r, u, enc);
      return ad::add(proj(gr.weights), proj(g.feature(gr, r)));
    });
  }
  {
    nn::ParamStore store;
    relation::RelationModule mod(store, "relation", dims, 3, rng);
    relation::RelationOptions opt{relation::PositionMode::mask, delta, true};
    s.run("relation.module", join(join(params_of(store), {r}), geo), [&] { return proj(mod(r, u, opt).fused); });
  }
}

// ---- losses -------------------------------------------------------------------

void losses_suite(Suite& s) {
  Rng rng(derive_seed(s.seed, 0x1055));
  // Direction loss: seeds on and around three boxes, one pair overlapping.
  {
    const std::size_t m = 30;
    const std::vector<OrientedBox> boxes{{{0.0, 0.0, 0.5}, {1.0, 1.0, 1.0}, 0.3, 0, 1.0},
                                         {{0.6, 0.2, 0.5}, {1.0, 0.8, 1.0}, 1.1, 1, 1.0},
                                         {{-2.0, 1.0, 0.4}, {0.6, 0.6, 0.8}, 0.0, 2, 1.0}};
    std::vector<Vec3> coords = random_points(m, rng, 1.2);
    coords[0] = boxes[2].center;  // a seed exactly on its center (v* = 0)
    const auto cand = seed_candidates(coords, boxes);
    std::vector<double> pc;
    for (const auto& c : coords) {
      for (int d = 0; d < 3; ++d) pc.push_back(c[d] + 0.3 * normal(rng));
    }
    Tensor pseudo = Tensor::param(m, 3, pc);
    Tensor dirs = random_param(m, 3, rng);
    for (const bool use_dir : {true, false}) {
      loss::DirectionLossOptions o;
      o.use_direction = use_dir;
      s.run(use_dir ? "loss.direction" : "loss.direction_distance_only", {pseudo, dirs}, [&] {
        return loss::direction_loss(pseudo, ad::normalize_rows(dirs), coords, cand, o);
      });
    }
  }
  const proposal::HeadLayout layout(8, 4, 4);
  const std::size_t k = 12;
  const std::vector<Vec3> templates{{0.6, 0.6, 0.9}, {1.4, 0.8, 0.75}, {1.9, 0.9, 0.8}, {0.8, 0.5, 1.0}};
  std::vector<OrientedBox> gt;
  for (int c = 0; c < 4; ++c) {
    OrientedBox b;
    b.center = {uniform(rng, -2.0, 2.0), uniform(rng, -2.0, 2.0), 0.5};
    for (int d = 0; d < 3; ++d) b.size[d] = templates[c][d] * uniform(rng, 0.8, 1.2);
    b.heading = uniform(rng, 0.0, 6.28);
    b.class_id = c;
    gt.push_back(b);
  }
  std::vector<Vec3> anchors;
  for (std::size_t i = 0; i < k; ++i) {
    const auto& g = gt[i % gt.size()];
    const double spread = i < 8 ? 0.15 : 2.0;
    anchors.push_back({g.center[0] + spread * normal(rng), g.center[1] + spread * normal(rng), g.center[2]});
  }
  const auto assignment = proposal::assign_objectness(anchors, gt, 0.3, 0.6);
  std::vector<std::size_t> positive;
  std::vector<loss::BoxTarget> targets;
  for (std::size_t i = 0; i < k; ++i) {
    if (assignment[i] != proposal::Objectness::positive) continue;
    positive.push_back(i);
    targets.push_back(loss::make_box_target(gt[proposal::nearest_gt(anchors[i], gt)], layout, templates));
  }
  if (positive.empty()) throw std::logic_error("gradcheck: loss fixture has no positive proposal");
  Tensor raw = random_param(k, layout.width(), rng, 0.7);
  s.run("loss.objectness", {raw},
        [&] { return loss::objectness_loss(ad::slice_cols(raw, layout.objectness(), 2), assignment); });
  const auto box = [&] { return loss::box_loss(raw, layout, anchors, positive, targets); };
  s.run("loss.center_reg", {raw}, [&] { return box().center_reg; });
  s.run("loss.heading_cls", {raw}, [&] { return box().heading_cls; });
  s.run("loss.heading_reg", {raw}, [&] { return box().heading_reg; });
  s.run("loss.size_cls", {raw}, [&] { return box().size_cls; });
  s.run("loss.size_reg", {raw}, [&] { return box().size_reg; });
  s.run("loss.box_total", {raw}, [&] { return box().total; });
  s.run("loss.semantic", {raw}, [&] { return loss::semantic_loss(raw, layout, positive, targets); });
  {
    const std::size_t g = 7;
    Tensor graph = random_param(g, g, rng);
    std::vector<double> label(g * g, 0.0);
    for (std::size_t i = 0; i < g; ++i) {
      for (std::size_t j = 0; j < g; ++j) {
        if (i != j && uniform01(rng) < 0.3) label[i * g + j] = 1.0;
      }
    }
    s.run("loss.graph_supervision", {graph}, [&] { return relation::graph_supervision_loss(graph, label); });
  }
}

// ---- model ------------------------------------------------------------------

void model_suite(Suite& s) {
  RunConfig cfg = preset("desk");
  cfg.train.supervised_graph = true;
  cfg.train.weights.sup = 0.5;
  Detector model(cfg, derive_seed(s.seed, 0x1417));
  const Scene scene = synth_scene(cfg.scene, derive_seed(s.seed, 0x5ce));
  const auto plan = model.plan(scene, derive_seed(s.seed, 1));
  const std::uint64_t fseed = derive_seed(s.seed, 2);
  s.run("model.end_to_end", params_of(model.store()),
        [&] { return model.loss(model.forward(plan, fseed), scene).total_tensor; });
}

const std::vector<std::pair<std::string, void (*)(Suite&)>>& suites() {
  static const std::vector<std::pair<std::string, void (*)(Suite&)>> all{
      {"autodiff", autodiff_suite}, {"nn", nn_suite},       {"backbone", backbone_suite},
      {"proposal", proposal_suite}, {"pool", pool_suite},   {"relation", relation_suite},
      {"losses", losses_suite},     {"model", model_suite},
  };
  return all;
}

}  // namespace

std::vector<std::string> suite_names() {
  std::vector<std::string> out;
  for (const auto& [name, fn] : suites()) out.push_back(name);
  return out;
}

std::vector<Result> run_suite(const std::string& module, std::uint64_t seed, const Options& opt) {
  Suite s{seed, opt, {}};
  bool found = false;
  for (const auto& [name, fn] : suites()) {
    if (module != "all" && module != name) continue;
    found = true;
    std::uint64_t tag = 1469598103934665603ULL;
    for (unsigned char ch : name) tag = (tag ^ ch) * 1099511628211ULL;
    s.seed = derive_seed(seed, tag);
    fn(s);
  }
  if (!found) throw std::invalid_argument("gradcheck: unknown module '" + module + "'");
  return s.results;
}

}  // namespace relgraph::gradcheck
