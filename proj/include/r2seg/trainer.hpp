#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "r2seg/dataio.hpp"
#include "r2seg/models.hpp"

namespace r2seg {

enum class Optimizer { adam, sgd_momentum };

struct TrainConfig {
  Optimizer optimizer = Optimizer::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;
  std::size_t batch_size = 4;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;  // shuffling, dropout, flips
  double dice_threshold = 0.5;
  bool augment_flips = false;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, bool strict = true);
const std::vector<std::string>& train_config_keys();

struct AdamState {
  std::vector<Tensor4> m, v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update of every parameter in place.
void adam_step(std::span<NamedTensor> params, std::span<const Tensor4> grads,
               AdamState& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

struct MomentumState {
  std::vector<Tensor4> velocity;
};

/// v = momentum * v + g;  p -= lr * v
void sgd_momentum_step(std::span<NamedTensor> params,
                       std::span<const Tensor4> grads, MomentumState& state,
                       double lr, double momentum);

/// Smoothed dice (2TP + 1) / (2TP + FP + FN + 1) after binarising probs
/// at `threshold` (p >= threshold is foreground).
double dice_of_batch(const Tensor4& probs, const Tensor4& targets,
                     double threshold = 0.5);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double train_dice = 0;
  double val_dice = 0;
  double seconds = 0;
};

struct TrainResult {
  Model model;
  std::vector<EpochRecord> records;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch training with BCE-on-logits. Dice columns are the mean
/// per-sample dice of eval-mode predictions after each epoch. Throws
/// NumericError naming the offending tensor when a loss or parameter
/// becomes non-finite.
TrainResult train(Model model, const SampleSet& train_set,
                  const SampleSet& val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Eval-mode probabilities for every sample, computed in batches.
std::vector<Tensor4> predict_set(const Model& model, const SampleSet& set,
                                 std::size_t batch_size = 4);

/// Mean per-sample dice of eval-mode predictions.
double mean_dice(const Model& model, const SampleSet& set, double threshold,
                 std::size_t batch_size = 4);

// curves.csv: epoch,train_loss,train_dice,val_dice,seconds
void write_curves_csv(const std::filesystem::path& path,
                      std::span<const EpochRecord> records);
void write_curves_svg(const std::filesystem::path& path,
                      std::span<const EpochRecord> records,
                      const std::string& title);

}  // namespace r2seg
