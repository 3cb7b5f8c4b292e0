#include "scp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>

#include <json.hpp>

#include "scp/checkpoint.hpp"
#include "scp/losses.hpp"
#include "scp/ops.hpp"
#include "scp/pruner.hpp"

namespace scp {

namespace {

std::size_t class_count(const DatasetPair& data) {
  std::int32_t top = 0;
  for (const auto* ds : {&data.train, &data.test}) {
    for (auto l : ds->labels) {
      if (l < 0) throw std::invalid_argument("negative class label");
      top = std::max(top, l);
    }
  }
  return static_cast<std::size_t>(std::max(top + 1, 2));
}

void flip_horizontal(Tensor& batch, std::size_t sample) {
  const std::size_t c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  float* base = batch.data().data() + sample * c * h * w;
  for (std::size_t row = 0; row < c * h; ++row) std::reverse(base + row * w, base + (row + 1) * w);
}

std::size_t argmax_row(std::span<const float> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

bool model_finite(Model& model) {
  for (auto& p : model.parameters()) {
    if (!p.tensor->all_finite()) return false;
  }
  return true;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

std::vector<std::int32_t> predict(const Model& model, const Tensor& images, std::size_t batch_size) {
  const std::size_t n = images.dim(0);
  const std::size_t per = images.size() / n;
  std::vector<std::int32_t> out;
  out.reserve(n);
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t count = std::min(batch_size, n - start);
    Tensor batch({count, images.dim(1), images.dim(2), images.dim(3)});
    std::copy_n(images.data().begin() + static_cast<std::ptrdiff_t>(start * per), count * per, batch.data().begin());
    const Tensor logits = infer(model, batch);
    const std::size_t classes = logits.dim(1);
    for (std::size_t i = 0; i < count; ++i) {
      out.push_back(static_cast<std::int32_t>(argmax_row(logits.data().subspan(i * classes, classes))));
    }
  }
  return out;
}

double evaluate(const Model& model, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  const auto predicted = predict(model, data.images, batch_size);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double soft_prune_ratio(const Model& model) {
  const auto phis = channel_mask_probabilities(model);
  if (phis.empty()) return 0.0;
  const auto pruned = std::count_if(phis.begin(), phis.end(), [&](double p) { return p >= model.hyper.c; });
  return static_cast<double>(pruned) / static_cast<double>(phis.size());
}

std::string metrics_csv(const std::vector<EpochMetrics>& metrics) {
  std::string out =
      "epoch,learning_rate,classification_loss,sparsity_loss,total_loss,train_accuracy,test_accuracy,"
      "soft_prune_ratio,steps,sparsity_only_steps\n";
  char line[512];
  for (const auto& m : metrics) {
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%zu,%zu\n", m.epoch, m.learning_rate,
                  m.classification_loss, m.sparsity_loss, m.total_loss, m.train_accuracy, m.test_accuracy,
                  m.soft_prune_ratio, m.steps, m.sparsity_only_steps);
    out += line;
  }
  return out;
}

TrainResult train(const ExperimentConfig& config, const DatasetPair& data, const TrainOptions& options) {
  config.validate();
  if (data.train.size() < 2) throw std::invalid_argument("train: need at least 2 training samples");
  Rng rng(config.seed);
  TrainResult result;
  Model& model = result.model;
  model = make_architecture(config.architecture, data.train.sample_shape(), class_count(data), rng);
  model.hyper = config.mask;
  model.criterion = config.sparsity.criterion();

  if (options.write_outputs) std::filesystem::create_directories(config.output_dir);
  const auto checkpoint_dir = config.output_dir / "checkpoint";
  const CheckpointMeta base_meta{0, config.hash(), config.to_text()};

  SgdNesterov optimizer(config.momentum, config.weight_decay);
  std::optional<TargetRatioController> controller;
  if (config.sparsity.target_ratio) controller.emplace(*config.sparsity.target_ratio);
  const double lambda = config.sparsity.lambda;
  const bool sparsity_active = lambda > 0.0;

  Model last_good = model;
  std::size_t last_good_epoch = 0;
  auto abort_run = [&](const std::string& why, std::size_t epoch) {
    if (options.write_outputs) {
      save_checkpoint({last_good, {last_good_epoch, base_meta.config_hash, base_meta.config_text}}, checkpoint_dir);
      write_text(config.output_dir / "metrics.csv", metrics_csv(result.metrics));
    }
    throw TrainingDiverged("training diverged in epoch " + std::to_string(epoch) + ": " + why +
                               "; kept the model after epoch " + std::to_string(last_good_epoch),
                           last_good_epoch);
  };

  const std::size_t n = data.train.size();
  GumbelNoise noise(rng);
  std::vector<double> betas, gammas;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.schedule.at(epoch);
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.learning_rate = lr;
    std::size_t joint_steps = 0, seen = 0, correct = 0;
    double cls_sum = 0.0, sparse_sum = 0.0, total_sum = 0.0;

    const auto order = rng.permutation(n);
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, n - start);
      if (count < 2) break;  // batch variance needs two samples
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(start + count));
      Tensor batch = data.train.gather(idx);
      const auto labels = data.train.gather_labels(idx);
      if (config.dataset.flip) {
        for (std::size_t i = 0; i < count; ++i) {
          if (rng.uniform() < 0.5) flip_horizontal(batch, i);
        }
      }

      // Sparsity term over the masked BN affine parameters.
      masked_affine_parameters(model, betas, gammas);
      SparsityTerm sparse{0.0, std::vector<double>(betas.size()), std::vector<double>(betas.size())};
      UpdateKind kind = UpdateKind::joint;
      if (controller && !betas.empty()) {
        const auto selected = controller->select(channel_mask_probabilities(model));
        sparse = sparsity_term(betas, gammas, config.sparsity, &selected);
        kind = controller->decide(sparse.value);
      } else if (!betas.empty()) {
        sparse = sparsity_term(betas, gammas, config.sparsity);
      }
      sparse_sum += sparse.value;

      auto params = model.parameters();
      std::vector<Tensor> grads;
      grads.reserve(params.size());
      if (kind == UpdateKind::joint) {
        auto fwd = forward_train(model, batch, noise);
        auto loss = softmax_cross_entropy(fwd.logits, labels);
        const double cls = loss->value[0];
        if (!std::isfinite(cls)) abort_run("non-finite classification loss", epoch + 1);
        backward(loss);
        for (std::size_t p = 0; p < params.size(); ++p) {
          grads.push_back(fwd.params[p]->has_grad() ? std::move(fwd.params[p]->grad) : Tensor(params[p].tensor->shape()));
        }
        const std::size_t classes = fwd.logits->value.dim(1);
        for (std::size_t i = 0; i < count; ++i) {
          correct += argmax_row(fwd.logits->value.data().subspan(i * classes, classes)) ==
                     static_cast<std::size_t>(labels[i]);
        }
        seen += count;
        cls_sum += cls;
        total_sum += total_loss(cls, sparse.value, lambda).total;
        ++joint_steps;
      } else {
        for (auto& p : params) grads.emplace_back(p.tensor->shape());
        ++m.sparsity_only_steps;
      }

      if (sparsity_active && !betas.empty()) {
        const auto bn_layers = model.bn_layer_indices();
        std::size_t flat = 0, bn_seen = 0;
        for (std::size_t p = 0; p < params.size(); ++p) {
          if (params[p].kind != ParamKind::bn_beta) continue;
          const auto& bn = std::get<BatchNormLayer<float>>(model.layers[bn_layers[bn_seen++]]);
          if (!bn.masked) continue;
          for (std::size_t c = 0; c < bn.channels(); ++c, ++flat) {
            grads[p][c] += static_cast<float>(lambda * sparse.d_beta[flat]);
            grads[p + 1][c] += static_cast<float>(lambda * sparse.d_gamma[flat]);
          }
        }
      }

      std::vector<ParamSlot> slots;
      slots.reserve(params.size());
      for (std::size_t p = 0; p < params.size(); ++p) slots.push_back({params[p].tensor, &grads[p], params[p].kind});
      optimizer.step(slots, lr);
      if (!model_finite(model)) abort_run("non-finite parameter after update", epoch + 1);
      ++m.steps;
    }

    m.classification_loss = joint_steps ? cls_sum / static_cast<double>(joint_steps) : 0.0;
    m.total_loss = joint_steps ? total_sum / static_cast<double>(joint_steps) : 0.0;
    m.sparsity_loss = m.steps ? sparse_sum / static_cast<double>(m.steps) : 0.0;
    m.train_accuracy = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
    m.test_accuracy = data.test.size() ? evaluate(model, data.test) : 0.0;
    m.soft_prune_ratio = soft_prune_ratio(model);
    result.metrics.push_back(m);
    last_good = model;
    last_good_epoch = epoch + 1;
    if (options.on_epoch) options.on_epoch(m);
  }

  if (options.write_outputs) {
    save_checkpoint({model, {config.epochs, base_meta.config_hash, base_meta.config_text}}, checkpoint_dir);
    write_text(config.output_dir / "metrics.csv", metrics_csv(result.metrics));
    const auto masks = extract_masks(model);
    const auto report = make_report(model, surgery(model, masks.masks), model.input_shape);
    nlohmann::json summary = {{"config_hash", base_meta.config_hash},
                              {"epochs", config.epochs},
                              {"test_accuracy", result.metrics.back().test_accuracy},
                              {"soft_prune_ratio", result.metrics.back().soft_prune_ratio},
                              {"channels_before", report.channels_before},
                              {"channels_after", report.channels_after},
                              {"params_before", report.params_before},
                              {"params_after", report.params_after},
                              {"flops_before", report.flops_before},
                              {"flops_after", report.flops_after},
                              {"warnings", masks.warnings}};
    write_text(config.output_dir / "summary.json", summary.dump(2) + "\n");
  }
  return result;
}

}  // namespace scp
