#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sct/pipeline.hpp"

namespace sct {

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  int epochs = 100;
  int accumulation_steps = 8;
  int per_step_batch = 1;
  std::array<double, 3> split_ratios{0.7, 0.2, 0.1};
  int n_splits = 4;
  uint64_t seed = 0;

  void validate() const;
};

struct ExperimentGrid {
  std::vector<ModelKind> variants{ModelKind::Unimodal, ModelKind::MM, ModelKind::MMSTN};
  std::vector<double> alpha_a_levels{0.0, 0.125, 0.25, 0.5, 1.0};
  std::vector<int> quality_levels{32, 64, 128, 256};

  void validate() const;
};

struct Split {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

/// Shuffled partition. Validation and test sizes are floor(n * ratio); the
/// remainder goes to training.
Split split_dataset(const std::vector<std::string> &case_ids, const std::array<double, 3> &ratios, uint64_t split_seed);

struct EpochLog {
  int epoch = 0; // 0 is the evaluation before any update
  double train_loss = 0.0;
  double val_loss = 0.0;
  int64_t optimizer_steps = 0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> history;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  int64_t optimizer_steps = 0;
  /// Case ids that contributed to any gradient step.
  std::vector<std::string> gradient_cases;
};

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint_path; // best-val checkpoint
  nlohmann::json checkpoint_extra = nlohmann::json::object();
  std::optional<std::filesystem::path> log_path;        // JSON lines, one per epoch
  bool restore_best = true;
  std::function<void(const EpochLog &)> on_epoch;
};

/// Adam with the configured learning rate and weight decay. Each micro-batch
/// loss is divided by accumulation_steps; the optimizer steps once per full
/// window and once more for a trailing partial window. Aborts with
/// TrainingDiverged on a non-finite loss.
TrainResult train(SynthesisModel &model, const std::vector<PairedSample> &train_set,
                  const std::vector<PairedSample> &val_set, const TrainConfig &cfg, const LossContext &ctx,
                  const TrainOptions &opts = {});

/// Mean composite loss over a set, evaluated in eval mode without gradients.
double mean_loss(SynthesisModel &model, const std::vector<PairedSample> &samples, const LossContext &ctx);

/// ceil(n_train / (accumulation_steps * per_step_batch))
int64_t optimizer_steps_per_epoch(int64_t n_train, const TrainConfig &cfg);

// ---------------------------------------------------------------------------
// Checkpoints: model weights, optimizer state and a JSON metadata block whose
// "config_hash" fingerprints the model + training configuration.

struct CheckpointMeta {
  ModelConfig model;
  TrainConfig train;
  int epoch = 0;
  double val_loss = 0.0;
  nlohmann::json extra = nlohmann::json::object();

  std::string config_hash() const;
};

void save_checkpoint(const std::filesystem::path &path, SynthesisModel &model, const CheckpointMeta &meta,
                     torch::optim::Optimizer *optimizer = nullptr);

struct LoadedCheckpoint {
  SynthesisModel model{nullptr};
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path &path);

} // namespace sct
