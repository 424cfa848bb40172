// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any selected criterion fails.
//
//   relgraph_acceptance            run all criteria
//   relgraph_acceptance 1 3 8      run a subset

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "relgraph/config.hpp"
#include "relgraph/evaluation.hpp"
#include "relgraph/geometry.hpp"
#include "relgraph/gradcheck.hpp"
#include "relgraph/model.hpp"
#include "relgraph/relation_graph.hpp"
#include "relgraph/rng.hpp"
#include "relgraph/scene.hpp"
#include "relgraph/trainer.hpp"

using namespace relgraph;
namespace fs = std::filesystem;

namespace tol {
constexpr std::size_t kPoolCensusSun = 90112;
constexpr std::size_t kRelationCensusSun = 983040;
constexpr double kCensusSeconds = 1.0;

constexpr std::size_t kGradProbes = 100;
constexpr double kGradRelError = 1e-4;

constexpr std::size_t kIouPairs = 200;
constexpr std::size_t kIouSamples = 1000000;
constexpr double kIouMaxDelta = 0.01;
constexpr double kCubeTol = 1e-12;
constexpr double kIouSeconds = 120.0;

constexpr std::size_t kGraphInstances = 1000;
constexpr double kRowSumTol = 1e-6;
constexpr double kComTol = 1e-6;

constexpr std::size_t kOverfitScenes = 20;
constexpr double kOverfitMap = 0.9;
constexpr double kOverfitCpuSeconds = 30.0 * 60.0;
constexpr int kAblationSeeds = 5;
constexpr int kGraphAblationEpochs = 60;
constexpr int kDirectionEpochs = 40;
constexpr std::size_t kHeldOutScenes = 10;

constexpr double kResumeTol = 1e-6;

constexpr std::size_t kNmsSets = 500;
}  // namespace tol

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

double wall_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<Scene> make_scenes(const SceneConfig& sc, std::size_t count, std::uint64_t offset) {
  std::vector<Scene> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(synth_scene(sc, derive_seed(sc.seed, offset + i)));
  return out;
}

double map_on(const Detector& model, const std::vector<Scene>& scenes, double iou) {
  geom::SceneBoxes dets, gts;
  for (const auto& s : scenes) {
    std::vector<OrientedBox> b;
    for (const auto& d : run_detection(model, s, 0.05, model.config().detect.nms_thresh)) b.push_back(d.box);
    dets.push_back(std::move(b));
    gts.push_back(s.boxes);
  }
  return geom::mean_average_precision(dets, gts, iou).mean;
}

// Mean |g' - g*| over seeds lying on an object, g* the nearest center among
// the objects containing the seed.
double pseudo_center_error(const Detector& model, const std::vector<Scene>& scenes) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : scenes) {
    const std::uint64_t seed = detect_seed(model.config().train.seed);
    const auto f = model.forward(model.plan(s, seed), seed);
    for (std::size_t i = 0; i < f.seed_coords.size(); ++i) {
      double best = INFINITY;
      for (const auto& b : s.boxes) {
        if (!contains(b, f.seed_coords[i], 1e-9)) continue;
        double e2 = 0.0;
        for (int d = 0; d < 3; ++d) e2 += std::pow(f.seeds.pseudo_centers(i, d) - b.center[d], 2);
        best = std::min(best, std::sqrt(e2));
      }
      if (std::isfinite(best)) {
        sum += best;
        ++n;
      }
    }
  }
  return n ? sum / static_cast<double>(n) : INFINITY;
}

void schedule_for(RunConfig& cfg, int epochs) {
  cfg.train.epochs = epochs;
  cfg.train.adam.schedule = {{epochs * 7 / 10, 0.3}, {epochs * 9 / 10, 0.3}};
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

// ---------------------------------------------------------------------------

void census(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const Detector model(preset("paper-sun"), 0);
  const std::size_t pool = model.pooling_parameters(), rel = model.relation_parameters();
  const double secs = wall_since(t0);
  o.detail << "pool=" << pool << " relation=" << rel << " time=" << secs << "s";
  o.require(pool == tol::kPoolCensusSun, "pool census");
  o.require(rel == tol::kRelationCensusSun, "relation census");
  o.require(secs < tol::kCensusSeconds, "time");
}

void gradients(Outcome& o) {
  gradcheck::Options opt;
  opt.probes = tol::kGradProbes;
  opt.tolerance = tol::kGradRelError;
  const auto results = gradcheck::run_suite("all", 20240601, opt);
  double worst = 0.0;
  std::size_t bad = 0;
  for (const auto& r : results) {
    worst = std::max(worst, r.max_error);
    if (!r.passed || r.probes < tol::kGradProbes) {
      ++bad;
      o.detail << " " << r.name << "(max " << r.max_error << ", " << r.failures << " failures)";
    }
  }
  o.detail << " checks=" << results.size() << " worst=" << worst;
  o.require(!results.empty() && bad == 0, std::to_string(bad) + " gradient checks");
}

OrientedBox random_box(Rng& rng) {
  OrientedBox b;
  for (int d = 0; d < 3; ++d) b.center[d] = uniform(rng, -0.3, 0.3);
  for (int d = 0; d < 3; ++d) b.size[d] = uniform(rng, 0.3, 1.5);
  b.heading = uniform(rng, 0.0, 2.0 * M_PI);
  return b;
}

// Independent estimate: sample the union's bounding box, test membership by
// rotating into each box frame.
double monte_carlo_iou(const OrientedBox& a, const OrientedBox& b, std::size_t samples, Rng& rng) {
  const auto inside = [](const OrientedBox& box, double x, double y, double z) {
    const double dx = x - box.center[0], dy = y - box.center[1];
    const double c = std::cos(box.heading), s = std::sin(box.heading);
    const double lx = c * dx + s * dy, ly = -s * dx + c * dy;
    return std::abs(lx) <= box.size[0] / 2 && std::abs(ly) <= box.size[1] / 2 &&
           std::abs(z - box.center[2]) <= box.size[2] / 2;
  };
  Vec3 lo{INFINITY, INFINITY, INFINITY}, hi{-INFINITY, -INFINITY, -INFINITY};
  for (const auto* box : {&a, &b}) {
    const double r = 0.5 * std::hypot(box->size[0], box->size[1]);
    const Vec3 half{r, r, box->size[2] / 2};
    for (int d = 0; d < 3; ++d) {
      lo[d] = std::min(lo[d], box->center[d] - half[d]);
      hi[d] = std::max(hi[d], box->center[d] + half[d]);
    }
  }
  std::size_t both = 0, either = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double x = uniform(rng, lo[0], hi[0]), y = uniform(rng, lo[1], hi[1]), z = uniform(rng, lo[2], hi[2]);
    const bool ia = inside(a, x, y, z), ib = inside(b, x, y, z);
    both += ia && ib;
    either += ia || ib;
  }
  return either ? static_cast<double>(both) / static_cast<double>(either) : 0.0;
}

void iou(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(31);
  double worst = 0.0, mean_iou = 0.0;
  for (std::size_t p = 0; p < tol::kIouPairs; ++p) {
    const OrientedBox a = random_box(rng), b = random_box(rng);
    const double exact = geom::iou_3d(a, b);
    worst = std::max(worst, std::abs(exact - monte_carlo_iou(a, b, tol::kIouSamples, rng)));
    mean_iou += exact / tol::kIouPairs;
  }
  OrientedBox c1, c2;
  c2.center = {0.5, 0.0, 0.0};
  const double cube = geom::iou_3d(c1, c2);
  const double secs = wall_since(t0);
  o.detail << "max|exact-mc|=" << worst << " mean_iou=" << mean_iou << " cube_err=" << std::abs(cube - 1.0 / 3.0)
           << " time=" << secs << "s";
  o.require(worst <= tol::kIouMaxDelta, "monte carlo agreement");
  o.require(std::abs(cube - 1.0 / 3.0) <= tol::kCubeTol, "cube case");
  o.require(secs < tol::kIouSeconds, "time");
}

relation::PositionFeatures random_positions(std::size_t k, Rng& rng) {
  std::vector<double> c(k * 3), s(k * 3), h(k);
  for (auto& v : c) v = uniform(rng, -2.5, 2.5);
  for (auto& v : s) v = std::log(uniform(rng, 0.2, 2.0));
  for (auto& v : h) v = uniform(rng, 0.0, 2.0 * M_PI);
  return {ad::Tensor::from(k, 3, c), ad::Tensor::from(k, 3, s), ad::Tensor::from(k, 1, h)};
}

ad::Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = scale * normal(rng);
  return ad::Tensor::from(r, c, v);
}

void relation_invariants(Outcome& o) {
  Rng rng(41);
  nn::ParamStore store;
  const relation::RelationDims dims{8, 6, 16, 4};
  relation::GraphModule module(store, "g", dims, rng);
  double row_err = 0.0, fuse_err = 0.0, com1 = 0.0, com_half_err = 0.0;
  std::size_t mask_leaks = 0, masked_pairs = 0;
  const double want_half = 0.25 * std::log(2.0);
  for (std::size_t inst = 0; inst < tol::kGraphInstances; ++inst) {
    const std::size_t k = 2 + uniform_index(rng, 15);

    // Row sums, both with and without the outer softmax, including rows with no mass.
    const ad::Tensor app = random_matrix(k, k, rng, 3.0);
    std::vector<double> pos(k * k);
    for (auto& v : pos) v = uniform01(rng) < 0.3 ? 0.0 : uniform(rng, 0.0, 2.0);
    const std::size_t empty_row = uniform_index(rng, k);
    for (std::size_t n = 0; n < k; ++n) pos[empty_row * k + n] = 0.0;
    for (bool literal : {true, false}) {
      const auto g = relation::relation_weights(app, ad::Tensor::from(k, k, pos), literal);
      for (std::size_t m = 0; m < k; ++m) {
        double s = 0.0;
        for (std::size_t n = 0; n < k; ++n) s += g.weights(m, n);
        row_err = std::max(row_err, std::abs(s - 1.0));
      }
    }

    // Mask mode against distances computed here.
    const auto u = random_positions(k, rng);
    relation::RelationOptions opt;
    opt.mode = relation::PositionMode::mask;
    opt.delta = uniform(rng, 0.5, 3.0);
    const ad::Tensor p = module.position_affinity(u, opt);
    for (std::size_t m = 0; m < k; ++m)
      for (std::size_t n = 0; n < k; ++n) {
        const double d = std::sqrt(std::pow(u.centers(m, 0) - u.centers(n, 0), 2) +
                                   std::pow(u.centers(m, 1) - u.centers(n, 1), 2) +
                                   std::pow(u.centers(m, 2) - u.centers(n, 2), 2));
        if (d > opt.delta) {
          ++masked_pairs;
          mask_leaks += p(m, n) != 0.0;
        }
      }

    // Fusing zero relation features returns the appearance features.
    const std::size_t ng = 1 + uniform_index(rng, 4);
    const ad::Tensor r = random_matrix(k, dims.appearance, rng, 1.0);
    const auto fused = relation::fuse_graphs(r, std::vector<ad::Tensor>(ng, ad::Tensor::zeros(k, dims.appearance)));
    for (std::size_t i = 0; i < r.values().size(); ++i)
      fuse_err = std::max(fuse_err, std::abs(fused.values()[i] - r.values()[i]));

    // Supervision loss. Uniform rows of even width with half the entries
    // labeled give mass 1/2; labeling every entry gives mass 1.
    const std::size_t ke = 2 * (1 + k / 2);
    std::vector<double> half(ke * ke, 0.0), full(ke * ke, 0.0);
    const double level = normal(rng);
    std::vector<std::size_t> cols(ke);
    std::iota(cols.begin(), cols.end(), 0);
    for (std::size_t m = 0; m < ke; ++m) {
      std::shuffle(cols.begin(), cols.end(), rng);
      for (std::size_t j = 0; j < ke / 2; ++j) half[m * ke + cols[j]] = 1.0;
      for (std::size_t n = 0; n < ke; ++n) full[m * ke + n] = 1.0;
    }
    const ad::Tensor flat = ad::Tensor::full(ke, ke, level);
    com1 = std::max(com1, std::abs(relation::graph_supervision_loss(flat, full).item()));
    com_half_err = std::max(com_half_err, std::abs(relation::graph_supervision_loss(flat, half).item() - want_half));
  }
  com1 = std::max(com1, std::abs(relation::center_of_mass_loss(1.0)));
  com_half_err = std::max(com_half_err, std::abs(relation::center_of_mass_loss(0.5) - want_half));
  o.detail << "instances=" << tol::kGraphInstances << " max|rowsum-1|=" << row_err << " masked_pairs=" << masked_pairs
           << " leaks=" << mask_leaks << " max|fuse-R|=" << fuse_err << " loss(M=1)=" << com1
           << " max|loss(M=.5)-0.1733|=" << com_half_err;
  o.require(row_err <= tol::kRowSumTol, "row sums");
  o.require(masked_pairs > 0 && mask_leaks == 0, "mask");
  o.require(fuse_err == 0.0, "fuse identity");
  o.require(com1 <= tol::kComTol, "loss at M=1");
  o.require(com_half_err <= tol::kComTol, "loss at M=0.5");
}

void overfit(Outcome& o) {
  const RunConfig cfg = preset("desk");
  const auto scenes = make_scenes(cfg.scene, tol::kOverfitScenes, 0);
  const double c0 = cpu_seconds();
  Trainer tr(cfg, scenes);
  tr.run();
  const double cpu = cpu_seconds() - c0;
  const double m = map_on(tr.model(), scenes, 0.25);
  o.detail << "mAP@0.25=" << m << " epochs=" << cfg.train.epochs << " cpu=" << cpu << "s";
  o.require(m >= tol::kOverfitMap, "mAP");
  o.require(cpu <= tol::kOverfitCpuSeconds, "cpu budget");

  std::vector<double> with_graphs, without;
  for (int s = 0; s < tol::kAblationSeeds; ++s)
    for (std::size_t ng : {std::size_t{3}, std::size_t{0}}) {
      RunConfig c = cfg;
      c.model.num_graphs = ng;
      c.train.seed = 100 + s;
      schedule_for(c, tol::kGraphAblationEpochs);
      Trainer t(c, scenes);
      t.run();
      (ng ? with_graphs : without).push_back(map_on(t.model(), scenes, 0.25));
    }
  o.detail << " | " << tol::kAblationSeeds << " seeds x " << tol::kGraphAblationEpochs
           << " epochs: mean mAP N_g=0 " << mean(without) << " N_g=3 " << mean(with_graphs);
  o.require(mean(without) <= mean(with_graphs), "graph ablation ordering");
}

void direction_ablation(Outcome& o) {
  const RunConfig base = preset("base");
  const auto train = make_scenes(base.scene, tol::kOverfitScenes, 0);
  const auto held_out = make_scenes(base.scene, tol::kHeldOutScenes, 5000);
  std::vector<double> with_dir, dist_only;
  for (int s = 0; s < tol::kAblationSeeds; ++s)
    for (bool use_dir : {true, false}) {
      RunConfig c = base;
      c.train.use_direction = use_dir;
      c.train.seed = 200 + s;
      schedule_for(c, tol::kDirectionEpochs);
      Trainer t(c, train);
      t.run();
      (use_dir ? with_dir : dist_only).push_back(pseudo_center_error(t.model(), held_out));
    }
  o.detail << tol::kAblationSeeds << " seeds x " << tol::kDirectionEpochs
           << " epochs, held-out pseudo-center error: direction " << mean(with_dir) << " distance-only "
           << mean(dist_only);
  o.require(mean(with_dir) <= mean(dist_only), "ordering");
}

void determinism(Outcome& o) {
  RunConfig cfg = preset("desk");
  cfg.train.epochs = 4;
  cfg.train.augment = true;
  const auto scenes = make_scenes(cfg.scene, 3, 0);

  Trainer full(cfg, scenes);
  const auto want = full.run();

  const fs::path dir = fs::temp_directory_path() / "relgraph_acceptance";
  fs::create_directories(dir);
  std::vector<StepLog> got;
  {
    Trainer first(cfg, scenes);
    for (int e = 0; e < 2; ++e)
      for (auto& s : first.run_epoch()) got.push_back(s);
    first.save(dir / "half.ckpt.json");
  }
  Trainer second(cfg, scenes);
  second.resume(dir / "half.ckpt.json");
  for (auto& s : second.run()) got.push_back(s);

  double worst = 0.0;
  bool aligned = got.size() == want.size();
  for (std::size_t i = 0; aligned && i < want.size(); ++i) {
    aligned = got[i].step == want[i].step && got[i].values.size() == want[i].values.size();
    for (std::size_t j = 0; aligned && j < want[i].values.size(); ++j)
      worst = std::max(worst, std::abs(got[i].values[j] - want[i].values[j]));
  }
  o.detail << "steps=" << want.size() << " max|resumed-full|=" << worst;
  o.require(aligned && worst <= tol::kResumeTol, "resume");

  const bool synth_same = scene_to_json(synth_scene(cfg.scene, 77)).dump() ==
                          scene_to_json(synth_scene(cfg.scene, 77)).dump();
  o.require(synth_same, "synth bit-identical");

  full.save(dir / "full.ckpt.json");
  const auto dump = [&](const Scene& s) {
    const auto model = load_detector(dir / "full.ckpt.json", &cfg);
    return detections_to_json(run_detection(*model, s, cfg.detect.score_thresh, cfg.detect.nms_thresh),
                              config_hash(cfg), "s")
        .dump();
  };
  bool detect_same = true;
  for (const auto& s : scenes) detect_same = detect_same && dump(s) == dump(s);
  o.require(detect_same, "detect bit-identical");
  o.detail << " synth=" << (synth_same ? "identical" : "differs") << " detect=" << (detect_same ? "identical" : "differs");
  fs::remove_all(dir);
}

// AP by enumeration: for every cut-off k of the score-sorted list, count
// true positives with greedy matching, then integrate the precision envelope.
double brute_force_ap(const geom::SceneBoxes& dets, const geom::SceneBoxes& gts, double iou_thresh) {
  struct Item {
    double score;
    std::size_t scene, index;
  };
  std::vector<Item> all;
  std::size_t npos = 0;
  for (std::size_t s = 0; s < dets.size(); ++s)
    for (std::size_t i = 0; i < dets[s].size(); ++i) all.push_back({dets[s][i].score, s, i});
  for (const auto& g : gts) npos += g.size();
  std::stable_sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score > b.score; });
  std::vector<double> prec, rec;
  for (std::size_t k = 1; k <= all.size(); ++k) {
    std::set<std::pair<std::size_t, std::size_t>> used;
    std::size_t tp = 0;
    for (std::size_t i = 0; i < k; ++i) {
      const auto& d = dets[all[i].scene][all[i].index];
      double best = 0.0;
      std::size_t bj = SIZE_MAX;
      for (std::size_t j = 0; j < gts[all[i].scene].size(); ++j) {
        const double v = geom::iou_3d(d, gts[all[i].scene][j]);
        if (v > best) best = v, bj = j;
      }
      if (bj != SIZE_MAX && best >= iou_thresh && used.insert({all[i].scene, bj}).second) ++tp;
    }
    prec.push_back(static_cast<double>(tp) / static_cast<double>(k));
    rec.push_back(static_cast<double>(tp) / static_cast<double>(npos));
  }
  double ap = 0.0, prev_r = 0.0;
  for (std::size_t k = 0; k < prec.size(); ++k) {
    double env = 0.0;
    for (std::size_t j = k; j < prec.size(); ++j) env = std::max(env, prec[j]);
    ap += (rec[k] - prev_r) * env;
    prev_r = rec[k];
  }
  return ap;
}

void nms_and_ap(Outcome& o) {
  Rng rng(51);
  std::size_t not_idempotent = 0;
  for (std::size_t set = 0; set < tol::kNmsSets; ++set) {
    std::vector<OrientedBox> boxes(2 + uniform_index(rng, 30));
    for (auto& b : boxes) {
      b = random_box(rng);
      for (int d = 0; d < 2; ++d) b.center[d] = uniform(rng, -1.5, 1.5);
      b.class_id = static_cast<int>(uniform_index(rng, 3));
      b.score = uniform01(rng);
    }
    const double thresh = uniform(rng, 0.1, 0.7);
    std::vector<OrientedBox> kept;
    for (std::size_t i : geom::nms_3d(boxes, thresh)) kept.push_back(boxes[i]);
    const auto again = geom::nms_3d(kept, thresh);
    std::vector<std::size_t> all(kept.size());
    std::iota(all.begin(), all.end(), 0);
    std::vector<std::size_t> sorted = again;
    std::sort(sorted.begin(), sorted.end());
    not_idempotent += sorted != all;
  }
  o.detail << "nms sets=" << tol::kNmsSets << " non-idempotent=" << not_idempotent;
  o.require(not_idempotent == 0, "nms idempotence");

  geom::SceneBoxes gts(3);
  for (std::size_t s = 0; s < 3; ++s)
    for (int i = 0; i < 3; ++i) {
      OrientedBox b = random_box(rng);
      b.center[0] += 4.0 * i;
      gts[s].push_back(b);
    }
  const double perfect = geom::average_precision(gts, gts, 0, 0.5);
  const double empty = geom::average_precision(geom::SceneBoxes(3), gts, 0, 0.5);
  o.detail << " ap(perfect)=" << perfect << " ap(empty)=" << empty;
  o.require(perfect == 1.0, "perfect ap");
  o.require(empty == 0.0, "empty ap");

  const OrientedBox g1{{0, 0, 0}, {1, 1, 1}, 0.0, 0, 1.0};
  const OrientedBox g2{{5, 0, 0}, {1, 1, 1}, 0.0, 0, 1.0};
  OrientedBox t1 = g1, t2 = g2, f = g1;
  t1.score = 0.9;
  f.center = {10, 10, 0};
  f.score = 0.85;
  t2.score = 0.8;
  const geom::SceneBoxes dets = {{t1, f, t2}}, truth = {{g1, g2}};
  const double ap = geom::average_precision(dets, truth, 0, 0.5);
  const double want = brute_force_ap(dets, truth, 0.5);
  o.detail << " pr-case ap=" << ap << " brute=" << want;
  o.require(ap == want, "three-detection case");
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria = {
      {"parameter census (paper-sun)", census},
      {"gradient checks", gradients},
      {"exact 3D IoU", iou},
      {"relation graph invariants", relation_invariants},
      {"end-to-end overfit and graph ablation", overfit},
      {"direction loss ablation", direction_ablation},
      {"determinism", determinism},
      {"NMS and AP", nms_and_ap},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));
  bool all_pass = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    all_pass = all_pass && o.pass;
    std::printf("criterion %d %s: %s | %s (%.1fs)\n", id, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.str().c_str(), wall_since(t0));
    std::fflush(stdout);
  }
  return all_pass ? 0 : 1;
}
