#include "kgsal/train.hpp"

#include <cmath>
#include <fstream>

#include "kgsal/rng.hpp"

namespace kgsal {

using ad::Var;

FineLossKind fine_loss_from_tag(const std::string& tag) {
  if (tag == "kl") return FineLossKind::kKl;
  if (tag == "bce") return FineLossKind::kBce;
  throw std::runtime_error("unknown fine loss kind: " + tag);
}

int argmax_index(const std::vector<double>& values) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(values.size()); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

const std::vector<double>& PredTable::at(const std::string& id) const {
  auto it = probs.find(id);
  if (it == probs.end()) throw std::runtime_error("prediction table miss: " + id);
  return it->second;
}

namespace {

class Adam {
 public:
  Adam(const Model& model, const TrainConfig& cfg) : cfg_(cfg) {
    for (const ParamInfo& p : model.params()) {
      const size_t n = model.tape().value(p.var).size();
      m_.emplace_back(n, 0.0);
      v_.emplace_back(n, 0.0);
    }
  }

  void step(Model& model) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, t_);
    const auto& params = model.params();
    for (size_t p = 0; p < params.size(); ++p) {
      auto vals = model.tape().value_mut(params[p].var);
      auto grads = model.tape().grad(params[p].var);
      double* m = m_[p].data();
      double* v = v_[p].data();
      for (size_t i = 0; i < vals.size(); ++i) {
        const double g = grads[i];
        m[i] = cfg_.adam_beta1 * m[i] + (1.0 - cfg_.adam_beta1) * g;
        v[i] = cfg_.adam_beta2 * v[i] + (1.0 - cfg_.adam_beta2) * g * g;
        vals[i] -= cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.adam_eps);
      }
    }
  }

 private:
  TrainConfig cfg_;
  int t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

// normalized binary targets (uniform over positive units) per choice
std::vector<double> kl_target_from_records(const std::vector<SaliencyRecord>& records,
                                           int n_units, const std::string& id) {
  std::vector<double> y(n_units, 0.0);
  int covered = 0;
  int positives = 0;
  for (const SaliencyRecord& r : records) {
    if (r.unit.kind == UnitKind::kGraph) continue;
    if (r.unit.ref < 0 || r.unit.ref >= n_units) {
      throw std::runtime_error("fine cache is stale for instance " + id);
    }
    y[r.unit.ref] = static_cast<double>(r.y);
    positives += r.y;
    ++covered;
  }
  if (covered != n_units) {
    throw std::runtime_error("fine cache does not cover every unit of " + id);
  }
  if (positives == 0) {
    throw std::runtime_error("fine cache has a zero-positive KG for " + id);
  }
  return y;
}

}  // namespace

TrainLog train_model(Model& model, const Dataset& train, const Dataset& dev,
                     const TrainConfig& cfg, const ExplanationCache* hard_mask_cache,
                     const FineSaliencyLoss* fine_loss) {
  ad::Tape& tape = model.tape();
  Adam adam(model, cfg);
  Rng root(cfg.seed);
  Rng dropout_rng = root.sub("dropout");
  Rng* drop = model.config().dropout > 0.0 ? &dropout_rng : nullptr;

  const bool use_sal = fine_loss != nullptr && fine_loss->lambda != 0.0;

  std::vector<size_t> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainLog log;
  std::vector<double> best_snapshot;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng shuffle_rng = root.sub("shuffle", static_cast<uint64_t>(epoch));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    size_t pos = 0;
    while (pos < order.size()) {
      const size_t batch_end = std::min(pos + cfg.batch_size, order.size());
      const double inv_batch = 1.0 / static_cast<double>(batch_end - pos);
      for (; pos < batch_end; ++pos) {
        const QAInstance& inst = train[order[pos]];
        MaskSet masks;
        const MaskSet* mask_ptr = nullptr;
        if (hard_mask_cache) {
          masks = masks_from_cache(*hard_mask_cache, inst, model);
          mask_ptr = &masks;
        }
        ForwardTrace trace = model.build_forward(inst, mask_ptr, drop);
        Var loss = tape.cross_entropy_logits(trace.logits, inst.target);

        if (use_sal) {
          std::vector<Var> sal_terms;
          for (int c = 0; c < static_cast<int>(inst.choices.size()); ++c) {
            const ChoiceTrace& tr = trace.choices[c];
            const int n_units = tape.size(tr.alpha);
            std::vector<double> y = kl_target_from_records(
                fine_loss->cache->at(inst.id, c), n_units, inst.id);
            if (fine_loss->kind == FineLossKind::kKl) {
              int positives = 0;
              for (double v : y) positives += v > 0.0 ? 1 : 0;
              std::vector<double> target(y.size());
              for (size_t u = 0; u < y.size(); ++u) target[u] = y[u] / positives;
              sal_terms.push_back(tape.kl_to_target(target, tr.alpha));
            } else {
              std::vector<Var> unit_terms;
              for (int u = 0; u < n_units; ++u) {
                unit_terms.push_back(tape.bce(tape.pick(tr.alpha, u), y[u]));
              }
              Var summed = tape.stack_scalars(unit_terms);
              sal_terms.push_back(tape.scale(tape.sum_elems(summed), 1.0 / n_units));
            }
          }
          Var sal = tape.scale(tape.sum_elems(tape.stack_scalars(sal_terms)),
                               1.0 / static_cast<double>(sal_terms.size()));
          loss = tape.add(loss, tape.scale(sal, fine_loss->lambda));
        }

        const double loss_val = tape.scalar(loss);
        if (!std::isfinite(loss_val)) {
          throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                   std::to_string(epoch) + ", instance " + inst.id);
        }
        epoch_loss += loss_val;
        tape.backward(loss, inv_batch);
      }
      adam.step(model);
      tape.zero_all_grads();
    }

    const double dev_acc = evaluate_accuracy(model, dev, hard_mask_cache);
    EpochStat stat;
    stat.epoch = epoch;
    stat.train_loss = epoch_loss / static_cast<double>(train.size());
    stat.dev_accuracy = dev_acc;
    stat.param_hash = model.param_hash();
    log.epochs.push_back(stat);

    if (log.best_epoch < 0 || dev_acc > log.best_dev_accuracy) {
      log.best_epoch = epoch;
      log.best_dev_accuracy = dev_acc;
      best_snapshot = model.snapshot_params();
    } else if (epoch - log.best_epoch >= cfg.patience) {
      break;
    }
  }

  if (!best_snapshot.empty()) model.restore_params(best_snapshot);
  return log;
}

void write_train_log_csv(const TrainLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_train_log_csv: cannot write " + path);
  out << "epoch,train_loss,dev_accuracy\n";
  for (const EpochStat& e : log.epochs) {
    out << e.epoch << ',' << e.train_loss << ',' << e.dev_accuracy << '\n';
  }
}

std::vector<int> predict(Model& model, const Dataset& data,
                         const ExplanationCache* hard_mask_cache) {
  std::vector<int> preds;
  preds.reserve(data.size());
  for (const QAInstance& inst : data) {
    MaskSet masks;
    const MaskSet* mask_ptr = nullptr;
    if (hard_mask_cache) {
      masks = masks_from_cache(*hard_mask_cache, inst, model);
      mask_ptr = &masks;
    }
    ModelOutput out = model.forward(inst, mask_ptr);
    preds.push_back(argmax_index(out.p));
  }
  return preds;
}

double evaluate_accuracy(Model& model, const Dataset& data,
                         const ExplanationCache* hard_mask_cache) {
  if (data.empty()) return 0.0;
  const std::vector<int> preds = predict(model, data, hard_mask_cache);
  int correct = 0;
  for (size_t i = 0; i < data.size(); ++i) correct += preds[i] == data[i].target;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

PredTable predict_probs(Model& model, const Dataset& data,
                        const ExplanationCache* hard_mask_cache) {
  PredTable table;
  for (const QAInstance& inst : data) {
    MaskSet masks;
    const MaskSet* mask_ptr = nullptr;
    if (hard_mask_cache) {
      masks = masks_from_cache(*hard_mask_cache, inst, model);
      mask_ptr = &masks;
    }
    ModelOutput out = model.forward(inst, mask_ptr);
    table.probs[inst.id] = out.p;
  }
  return table;
}

}  // namespace kgsal
