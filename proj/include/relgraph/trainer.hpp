#pragma once

// Training loop with deterministic per-epoch ordering and augmentation,
// gradient accumulation over a batch, checkpoints and a CSV loss log.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "relgraph/model.hpp"

namespace relgraph {

struct StepLog {
  int epoch = 0;
  std::uint64_t step = 0;
  double learning_rate = 0.0;
  /// Batch means of every loss field (see LossReport::field_names()).
  std::vector<double> values;
  double total() const { return values.front(); }
};

std::string step_log_header();
std::string step_log_row(const StepLog& s);

class Trainer {
 public:
  /// Rejects scenes without objects and an invalid configuration.
  Trainer(const RunConfig& cfg, std::vector<Scene> scenes);

  Detector& model() { return *model_; }
  const Detector& model() const { return *model_; }
  const RunConfig& config() const { return cfg_; }
  /// Epochs completed so far.
  int epoch() const { return epoch_; }
  std::uint64_t step() const { return optim_.step; }

  /// Runs one epoch and returns its step logs. Throws std::runtime_error
  /// naming the epoch, step and loss component on a non-finite loss.
  std::vector<StepLog> run_epoch();
  /// Runs until `cfg.train.epochs` epochs are complete. With `out_dir` set,
  /// appends to `<out_dir>/train_log.csv`, writes periodic checkpoints and
  /// `<out_dir>/final.ckpt.json`.
  std::vector<StepLog> run(const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                           const std::function<void(const StepLog&)>& on_step = {});

  nlohmann::json metadata() const;
  void save(const std::filesystem::path& path) const;
  /// Restores parameters, statistics, optimizer state and the epoch counter.
  /// The checkpoint's config hash must equal this trainer's.
  void resume(const std::filesystem::path& path);

 private:
  const backbone::BackbonePlan& plan_for(std::size_t index);

  RunConfig cfg_;
  std::vector<Scene> scenes_;
  std::unique_ptr<Detector> model_;
  nn::OptimState optim_;
  int epoch_ = 0;
  std::map<std::size_t, backbone::BackbonePlan> plans_;
};

/// Seed used to plan (FPS/grouping) scene `index` of a training set.
std::uint64_t plan_seed(std::uint64_t train_seed, std::size_t index);
/// Seed used to plan a scene at detection time.
std::uint64_t detect_seed(std::uint64_t train_seed);

/// Loads a checkpoint into a detector built from the checkpoint's stored
/// configuration. When `expected` is given its hash must match.
std::unique_ptr<Detector> load_detector(const std::filesystem::path& ckpt, const RunConfig* expected = nullptr);

/// Detection on one scene with the detect-time plan and forward seeds.
std::vector<proposal::Proposal> run_detection(const Detector& model, const Scene& scene, double score_thresh,
                                              double nms_thresh, ForwardPass* pass = nullptr);

}  // namespace relgraph
