#ifndef SCP_TRAINER_HPP_
#define SCP_TRAINER_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "scp/config.hpp"
#include "scp/data.hpp"
#include "scp/model.hpp"

namespace scp {

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double learning_rate = 0.0;
  double classification_loss = 0.0;  // mean over joint steps
  double sparsity_loss = 0.0;        // mean over all steps, unweighted
  double total_loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double soft_prune_ratio = 0.0;  // fraction of masked channels with phi >= c
  std::size_t steps = 0;
  std::size_t sparsity_only_steps = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::size_t good_epoch)
      : std::runtime_error(what), good_epoch_(good_epoch) {}
  /// Epochs completed by the model that was kept.
  std::size_t good_epoch() const { return good_epoch_; }

 private:
  std::size_t good_epoch_;
};

struct TrainOptions {
  /// Write checkpoint, metrics.csv and summary.json into config.output_dir.
  bool write_outputs = true;
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
  Model model;
  std::vector<EpochMetrics> metrics;
};

/**
 * Joint optimization of weights and masks. One Rng seeded from the config
 * drives initialization, then per epoch the shuffle, flips and Gumbel noise,
 * so a fixed config reproduces every bit. On a non-finite loss or parameter
 * the last completed epoch's model is checkpointed and TrainingDiverged is
 * thrown.
 */
TrainResult train(const ExperimentConfig& config, const DatasetPair& data, const TrainOptions& options = {});

/// Argmax class per sample under eval-mode inference.
std::vector<std::int32_t> predict(const Model& model, const Tensor& images, std::size_t batch_size = 256);

/// Top-1 accuracy in [0,1]; throws on an empty dataset.
double evaluate(const Model& model, const Dataset& data, std::size_t batch_size = 256);

double soft_prune_ratio(const Model& model);

std::string metrics_csv(const std::vector<EpochMetrics>& metrics);

}  // namespace scp

#endif  // SCP_TRAINER_HPP_
