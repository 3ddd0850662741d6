#pragma once

// Seeded training loop: mini-batch Adam, per-epoch train/val metrics,
// early stopping with patience, best-checkpoint persistence.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cloudmask/datapipe.hpp"
#include "cloudmask/unet.hpp"

namespace cloudmask {

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 32;
  int max_epochs = 200;
  int patience = 25;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t t = 0;

  static AdamState init(const ModelParams& params);
};

void adam_step(ModelParams& params, const std::vector<Tensor>& grads, AdamState& state, const TrainConfig& cfg);

struct EarlyStopState {
  double best_metric = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int epochs_since_improvement = 0;
};

struct EarlyStopDecision {
  bool improved = false;
  bool stop = false;
};

// Improvement means strictly lower metric; stop once the counter reaches
// patience.
EarlyStopDecision early_stop_update(EarlyStopState& state, double val_metric, int epoch, int patience);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double wall_time_s = 0.0;
};

struct TrainOutcome {
  std::uint64_t seed = 0;
  int epochs_run = 0;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  double final_train_loss = 0.0;
  double final_train_acc = 0.0;
  double final_val_loss = 0.0;
  double final_val_acc = 0.0;
  double avg_epoch_time_s = 0.0;
  double total_time_s = 0.0;
  std::filesystem::path checkpoint_path;
  std::filesystem::path metrics_path;
  std::vector<EpochRecord> history;
};

// Full-pass loss (mean BCE over every pixel) and accuracy at threshold 0.5.
struct PatchMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
};

PatchMetrics evaluate_patches(const ModelParams& params, const std::vector<Patch>& patches, int batch_size);

// Runs the whole loop and leaves metrics.csv plus the best checkpoint in
// out_dir. Refuses to overwrite a previous run's outputs.
TrainOutcome train(const UNetConfig& model_cfg, const TrainConfig& train_cfg, const DatasetSplit& split,
                   const std::filesystem::path& out_dir);

void save_checkpoint(const ModelParams& params, const AdamState* adam, const std::filesystem::path& path);

struct Checkpoint {
  ModelParams params;
  std::optional<AdamState> adam;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);
// Same, but the stored config must match what the caller expects.
Checkpoint load_checkpoint(const std::filesystem::path& path, const UNetConfig& expected);

}  // namespace cloudmask
