#pragma once

#include <limits>

#include "phytnet/data.hpp"
#include "phytnet/model.hpp"

namespace phytnet {

struct TrainConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-4;
  double eps = 1e-6;
  double l1_weight = 1e-5;
  int patience = 20;
  int max_epochs = 200;
  int batch_size = 16;
  uint64_t seed = 42;
  int workers = 1;

  void validate() const;  // throws ConfigError naming the failing field
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);  // unknown keys rejected
  static TrainConfig load(const std::filesystem::path& file);
};

// Decoupled-decay Adam. Moments and the update are computed in double; the
// parameter store stays float32.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, const TrainConfig& cfg);
  void step();
  void zero_grad();
  int64_t t() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  TrainConfig cfg_;
  int64_t t_ = 0;
};

// weight * sum over all parameters of |theta|, as a graph node.
Tensor l1_penalty(const std::vector<Tensor>& params, double weight);

std::vector<Tensor> collect_params(Model& m);

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_f1 = 0.0;
  double val_loss = 0.0;
  double val_f1 = 0.0;
};

struct TrainReport {
  std::vector<EpochMetrics> epochs;
  int stopped_epoch = 0;
  int best_epoch = 0;
  double best_val_f1 = 0.0;
  std::string checkpoint_path;
};

struct FoldData {
  std::vector<int> train_idx;
  std::vector<int> val_idx;
  NormStats norm;  // computed from the training portion
};

// Patience rule on the validation loss: stop once `patience` consecutive
// epochs fail to set a new strict minimum. Equality with the running minimum
// counts as a failure to improve.
struct EarlyStopper {
  int patience = 20;
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;

  explicit EarlyStopper(int patience_epochs) : patience(patience_epochs) {}

  // Feed one epoch's validation loss; returns true when training should stop
  // after this epoch.
  bool observe(double val_loss) {
    if (val_loss < best) {
      best = val_loss;
      stale = 0;
    } else {
      ++stale;
    }
    return stale >= patience;
  }
};

// Called after every optimizer step with the batch's loss terms.
using BatchObserver =
    std::function<void(int epoch, int batch, double ce, double l1, double total)>;

// The supervised loop: shuffled seeded batches, CE + L1 loss, one AdamW step
// per batch, eval-mode validation per epoch, early stopping on val loss
// (strict improvement, `patience` consecutive failures), checkpoint at every
// new best validation F1. Writes config.json, metrics.jsonl, best.ckpt under
// run_dir (when non-empty).
TrainReport train(PhytNetModel& model, const DatasetManifest& manifest,
                  const DecodedCache& cache, const FoldData& data,
                  const TrainConfig& cfg, const std::filesystem::path& run_dir,
                  const BatchObserver& observer = nullptr);

}  // namespace phytnet
