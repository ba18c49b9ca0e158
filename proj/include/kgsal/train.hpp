#pragma once

#include <map>
#include <string>
#include <vector>

#include "kgsal/datamodel.hpp"
#include "kgsal/models.hpp"

namespace kgsal {

struct TrainConfig {
  int max_epochs = 50;
  int patience = 5;
  int batch_size = 32;
  double lr = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 1;
};

enum class FineLossKind { kKl, kBce };

FineLossKind fine_loss_from_tag(const std::string& tag);

// Attention supervision term for fine-explanation training. With lambda == 0
// the term is skipped entirely, so the trajectory matches plain task training
// bit for bit.
struct FineSaliencyLoss {
  const ExplanationCache* cache = nullptr;
  double lambda = 1.0;
  FineLossKind kind = FineLossKind::kKl;
};

struct EpochStat {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_accuracy = 0.0;
  uint64_t param_hash = 0;
};

struct TrainLog {
  std::vector<EpochStat> epochs;
  int best_epoch = -1;
  double best_dev_accuracy = 0.0;
};

// Task training for plausibility models. `hard_mask_cache` applies binary
// attention masks at every forward pass (train and eval); `fine_loss` adds
// lambda-weighted attention supervision. Restores the best-dev parameters
// before returning.
TrainLog train_model(Model& model, const Dataset& train, const Dataset& dev,
                     const TrainConfig& cfg,
                     const ExplanationCache* hard_mask_cache = nullptr,
                     const FineSaliencyLoss* fine_loss = nullptr);

void write_train_log_csv(const TrainLog& log, const std::string& path);

std::vector<int> predict(Model& model, const Dataset& data,
                         const ExplanationCache* hard_mask_cache = nullptr);

double evaluate_accuracy(Model& model, const Dataset& data,
                         const ExplanationCache* hard_mask_cache = nullptr);

// Frozen per-choice probabilities, keyed by instance id.
struct PredTable {
  std::map<std::string, std::vector<double>> probs;

  const std::vector<double>& at(const std::string& id) const;
};

PredTable predict_probs(Model& model, const Dataset& data,
                        const ExplanationCache* hard_mask_cache = nullptr);

int argmax_index(const std::vector<double>& values);

}  // namespace kgsal
