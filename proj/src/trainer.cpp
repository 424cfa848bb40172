#include "relgraph/trainer.hpp"

#include <malloc.h>

#include <cstdio>
#include <fstream>
#include <mutex>
#include <numeric>
#include <stdexcept>

namespace relgraph {

namespace {

constexpr std::uint64_t kOrderTag = 0x0de4;
constexpr std::uint64_t kPlanTag = 0x91a2;
constexpr std::uint64_t kStepTag = 0x57e9;
constexpr std::uint64_t kAugTag = 0xa495;
constexpr std::uint64_t kDetectTag = 0xde7e;

// Activations of a step are a few hundred kB each; keeping them on the heap
// instead of fresh mappings avoids page faults on every allocation.
void keep_large_blocks_on_heap() {
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
  });
}

}  // namespace

std::uint64_t plan_seed(std::uint64_t train_seed, std::size_t index) {
  return derive_seed(train_seed, kPlanTag, index);
}

std::uint64_t detect_seed(std::uint64_t train_seed) { return derive_seed(train_seed, kDetectTag); }

std::string step_log_header() {
  std::string h = "epoch,step,lr";
  for (const auto& n : loss::LossReport::field_names()) h += "," + n;
  return h;
}

std::string step_log_row(const StepLog& s) {
  char buf[64];
  std::string row = std::to_string(s.epoch) + "," + std::to_string(s.step);
  std::snprintf(buf, sizeof buf, ",%.9g", s.learning_rate);
  row += buf;
  for (double v : s.values) {
    std::snprintf(buf, sizeof buf, ",%.17g", v);
    row += buf;
  }
  return row;
}

Trainer::Trainer(const RunConfig& cfg, std::vector<Scene> scenes) : cfg_(cfg), scenes_(std::move(scenes)) {
  validate(cfg_);
  if (scenes_.empty()) throw std::invalid_argument("trainer: empty training set");
  keep_large_blocks_on_heap();
  for (std::size_t i = 0; i < scenes_.size(); ++i) {
    if (scenes_[i].boxes.empty()) {
      throw std::invalid_argument("trainer: scene " + std::to_string(i) + " has no objects");
    }
  }
  model_ = std::make_unique<Detector>(cfg_, derive_seed(cfg_.train.seed, 0x1417));
}

const backbone::BackbonePlan& Trainer::plan_for(std::size_t index) {
  auto it = plans_.find(index);
  if (it == plans_.end()) {
    it = plans_.emplace(index, model_->plan(scenes_[index], plan_seed(cfg_.train.seed, index))).first;
  }
  return it->second;
}

std::vector<StepLog> Trainer::run_epoch() {
  const auto& t = cfg_.train;
  const int epoch = epoch_;
  std::vector<std::size_t> order(scenes_.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(t.seed, kOrderTag, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = 0; i + 1 < order.size(); ++i) std::swap(order[i], order[i + uniform_index(rng, order.size() - i)]);

  const bool was_checked = ad::checked();
  ad::set_checked(t.checked);
  std::vector<StepLog> logs;
  try {
    for (std::size_t start = 0; start < order.size(); start += t.batch_size) {
      const std::size_t end = std::min(order.size(), start + t.batch_size);
      const double inv = 1.0 / static_cast<double>(end - start);
      model_->store().zero_grad();
      StepLog log;
      log.epoch = epoch;
      log.step = optim_.step + 1;
      log.values.assign(loss::LossReport::field_names().size(), 0.0);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        const std::uint64_t step_seed = derive_seed(t.seed, kStepTag, static_cast<std::uint64_t>(epoch) << 32 | idx);
        loss::LossReport rep;
        try {
          const std::uint64_t tag = static_cast<std::uint64_t>(epoch) << 32 | idx;
          const std::uint64_t pseed = t.resample_plans ? derive_seed(derive_seed(t.seed, kPlanTag, tag), 1) : plan_seed(t.seed, idx);
          if (t.augment) {
            const Scene scene = augment(scenes_[idx], derive_seed(t.seed, kAugTag, tag));
            rep = model_->loss(model_->forward(model_->plan(scene, pseed), step_seed), scene);
          } else if (t.resample_plans) {
            rep = model_->loss(model_->forward(model_->plan(scenes_[idx], pseed), step_seed), scenes_[idx]);
          } else {
            rep = model_->loss(model_->forward(plan_for(idx), step_seed), scenes_[idx]);
          }
        } catch (const ad::NonFiniteError& e) {
          throw std::runtime_error("training aborted at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(log.step) + ", scene " + std::to_string(idx) + ": " + e.what());
        }
        ad::scale(rep.total_tensor, inv).backward();
        const auto vals = rep.field_values();
        for (std::size_t i = 0; i < vals.size(); ++i) log.values[i] += inv * vals[i];
      }
      log.learning_rate = nn::scheduled_learning_rate(t.adam, epoch);
      try {
        nn::adam_step(model_->store(), optim_, t.adam, epoch);
      } catch (const ad::NonFiniteError& e) {
        throw std::runtime_error("training aborted at epoch " + std::to_string(epoch) + ", step " +
                                 std::to_string(log.step) + ": " + e.what());
      }
      logs.push_back(std::move(log));
    }
  } catch (...) {
    ad::set_checked(was_checked);
    throw;
  }
  ad::set_checked(was_checked);
  ++epoch_;
  return logs;
}

std::vector<StepLog> Trainer::run(const std::optional<std::filesystem::path>& out_dir,
                                  const std::function<void(const StepLog&)>& on_step) {
  std::ofstream csv;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    const auto path = *out_dir / "train_log.csv";
    const bool fresh = !std::filesystem::exists(path) || epoch_ == 0;
    csv.open(path, fresh ? std::ios::trunc : std::ios::app);
    if (!csv) throw std::runtime_error("cannot write " + path.string());
    if (fresh) csv << step_log_header() << "\n";
  }
  std::vector<StepLog> all;
  while (epoch_ < cfg_.train.epochs) {
    for (auto& s : run_epoch()) {
      if (csv.is_open()) csv << step_log_row(s) << "\n";
      if (on_step) on_step(s);
      all.push_back(std::move(s));
    }
    if (csv.is_open()) csv.flush();
    if (out_dir && cfg_.train.checkpoint_every > 0 && epoch_ % cfg_.train.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d.ckpt.json", epoch_);
      save(*out_dir / name);
    }
  }
  if (out_dir) save(*out_dir / "final.ckpt.json");
  return all;
}

nlohmann::json Trainer::metadata() const {
  return {{"config_hash", config_hash(cfg_)},
          {"config", to_json(cfg_)},
          {"epoch", epoch_},
          {"step", optim_.step},
          {"seed", cfg_.train.seed},
          {"num_scenes", scenes_.size()}};
}

void Trainer::save(const std::filesystem::path& path) const {
  nn::save_checkpoint(path, model_->store(), optim_, metadata());
}

void Trainer::resume(const std::filesystem::path& path) {
  nn::OptimState state;
  const auto meta = nn::load_checkpoint(path, model_->store(), state);
  const std::string want = config_hash(cfg_);
  if (meta.value("config_hash", std::string()) != want) {
    throw std::runtime_error("checkpoint " + path.string() + " has config hash " +
                             meta.value("config_hash", std::string("<none>")) + ", expected " + want);
  }
  optim_ = std::move(state);
  epoch_ = meta.at("epoch").get<int>();
}

std::unique_ptr<Detector> load_detector(const std::filesystem::path& ckpt, const RunConfig* expected) {
  std::ifstream in(ckpt);
  if (!in) throw std::runtime_error("cannot read checkpoint " + ckpt.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint " + ckpt.string() + ": " + e.what());
  }
  const auto& meta = doc.at("metadata");
  const RunConfig cfg = run_config_from_json(meta.at("config"));
  const std::string stored = meta.value("config_hash", std::string());
  if (config_hash(cfg) != stored) {
    throw std::runtime_error("checkpoint " + ckpt.string() + ": stored config does not match its hash " + stored);
  }
  if (expected && config_hash(*expected) != stored) {
    throw std::runtime_error("config hash mismatch: checkpoint has " + stored + ", configuration gives " +
                             config_hash(*expected));
  }
  auto model = std::make_unique<Detector>(cfg, 0);
  nn::OptimState unused;
  nn::checkpoint_from_json(doc, model->store(), unused);
  return model;
}

std::vector<proposal::Proposal> run_detection(const Detector& model, const Scene& scene, double score_thresh,
                                              double nms_thresh, ForwardPass* pass) {
  const std::uint64_t seed = detect_seed(model.config().train.seed);
  const auto plan = model.plan(scene, seed);
  ForwardPass f = model.forward(plan, seed);
  auto out = model.detect(f, score_thresh, nms_thresh);
  if (pass) *pass = std::move(f);
  return out;
}

}  // namespace relgraph
