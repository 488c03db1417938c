#pragma once

#include "phytnet/data.hpp"
#include "phytnet/model.hpp"

namespace phytnet {

struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<int64_t> counts;  // row = true, col = predicted

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int num_classes)
      : num_classes(num_classes),
        counts(static_cast<size_t>(num_classes) * num_classes, 0) {}
  int64_t& at(int true_class, int pred) {
    return counts[static_cast<size_t>(true_class) * num_classes + pred];
  }
  int64_t at(int true_class, int pred) const {
    return counts[static_cast<size_t>(true_class) * num_classes + pred];
  }
  void add(int true_class, int pred) { ++at(true_class, pred); }
  int64_t total() const;
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  int64_t n = 0;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

// Zero-denominator convention: precision/recall/F1 are 0 when undefined.
MetricsReport metrics(const ConfusionMatrix& cm);

// Argmax over the first num_classes logits only; ties go to the lower index.
std::vector<int> predict_class(const Tensor& logits, int num_classes);

struct EvalResult {
  double loss = 0.0;  // mean cross-entropy over the split
  MetricsReport report;
  ConfusionMatrix cm;
};

// Eval-mode pass over the listed samples (no augmentation).
EvalResult evaluate_split(Model& model, const DecodedCache& cache,
                          const DatasetManifest& manifest,
                          const std::vector<int>& indices, const NormStats& norm,
                          int input_size, int batch_size, int workers);

}  // namespace phytnet
