#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <vector>

#include "ccrl/checkpoint.hpp"
#include "ccrl/config.hpp"
#include "ccrl/image.hpp"
#include "ccrl/model.hpp"
#include "ccrl/optim.hpp"

namespace ccrl {

using Model = CcrlModel<float>;

struct LogEntry {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  double lr = 0;
  double loss = 0;
  friend bool operator==(const LogEntry&, const LogEntry&) = default;
};

/// Per-sample images of an N×C×H×W tensor.
std::vector<Image> split_images(const Tensor<float>& batch);

/// Architecture numbers stored in every checkpoint.
Tensor<double> architecture_record(const Model& model);
/// Fresh model with the architecture recorded in `ck`.
std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ck);
/// Copies parameters, queue and step; throws FormatError on any name or
/// shape mismatch with the model's architecture.
void restore_model(Model& model, const Checkpoint& ck);
Checkpoint model_checkpoint(const Model& model);

/// Owns the model, optimizer state and schedule of one training run. Every
/// random draw is a function of (seed, step), so a trainer rebuilt from a
/// checkpoint continues bit-identically.
class Trainer {
 public:
  Trainer(const RunConfig& cfg, std::vector<Image> images);
  Trainer(const RunConfig& cfg, std::vector<Image> images, const Checkpoint& resume);

  /// One optimization step.
  LogEntry step();
  bool done() const noexcept { return model_->step() >= total_steps(); }

  std::size_t steps_per_epoch() const noexcept { return steps_per_epoch_; }
  std::uint64_t total_steps() const noexcept { return steps_per_epoch_ * cfg_.train.epochs; }
  /// Indices of the batch at `step` (epoch-wise shuffle, drop-last).
  std::vector<std::size_t> batch_indices(std::uint64_t step) const;

  Checkpoint checkpoint() const;
  Model& model() noexcept { return *model_; }
  const Model& model() const noexcept { return *model_; }
  const RunConfig& config() const noexcept { return cfg_; }

 private:
  void init_common();

  RunConfig cfg_;
  std::vector<Image> images_;
  std::unique_ptr<Model> model_;
  AdamState<float> adam_;
  std::size_t steps_per_epoch_ = 0;
  mutable std::size_t cached_epoch_ = static_cast<std::size_t>(-1);
  mutable std::vector<std::size_t> order_;
};

struct TrainReport {
  std::vector<LogEntry> log;
  std::filesystem::path final_checkpoint;
};

/// Trains into `run_dir`: config.txt, log.csv, checkpoints/epoch_NNN.ckpt and
/// checkpoints/final.ckpt. With `resume` the log is truncated to the
/// checkpoint's step and continued. `stop_after` (0 = no limit) ends the run
/// early after that many total steps, writing a checkpoint there.
TrainReport run_training(const RunConfig& cfg, const std::vector<Image>& images, const std::filesystem::path& run_dir,
                         const std::filesystem::path& resume = {}, std::uint64_t stop_after = 0,
                         std::ostream* progress = nullptr);

std::vector<LogEntry> read_log(const std::filesystem::path& path);
/// Mean loss per epoch.
std::vector<double> epoch_losses(const std::vector<LogEntry>& log);

/// Inference embeddings in 64-bit for clustering.
Tensor<double> embed_images(const Model& model, const Tensor<float>& images, bool ensembling, bool projected);

}  // namespace ccrl
