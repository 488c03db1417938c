#include "phytnet/metrics.hpp"

#include <numeric>

namespace phytnet {

using nlohmann::json;

int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), static_cast<int64_t>(0));
}

json MetricsReport::to_json() const {
  json per = json::array();
  for (const ClassMetrics& c : per_class)
    per.push_back({{"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}});
  return json{{"per_class", per}, {"macro_f1", macro_f1}, {"accuracy", accuracy},
              {"n", n}};
}

MetricsReport MetricsReport::from_json(const json& j) {
  MetricsReport r;
  try {
    for (const json& c : j.at("per_class"))
      r.per_class.push_back(ClassMetrics{c.at("precision").get<double>(),
                                         c.at("recall").get<double>(),
                                         c.at("f1").get<double>()});
    r.macro_f1 = j.at("macro_f1").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    r.n = j.at("n").get<int64_t>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed metrics report: ") + e.what());
  }
  return r;
}

MetricsReport metrics(const ConfusionMatrix& cm) {
  if (cm.total() <= 0) throw UsageError("metrics over an empty confusion matrix");
  MetricsReport report;
  report.n = cm.total();
  int64_t correct = 0;
  double f1_sum = 0.0;
  for (int c = 0; c < cm.num_classes; ++c) {
    int64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (int o = 0; o < cm.num_classes; ++o) {
      if (o == c) continue;
      fp += cm.at(o, c);
      fn += cm.at(c, o);
    }
    correct += tp;
    ClassMetrics m;
    m.precision = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp)
                                : 0.0;
    m.recall =
        (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    m.f1 = (m.precision + m.recall) > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    f1_sum += m.f1;
    report.per_class.push_back(m);
  }
  report.macro_f1 = f1_sum / static_cast<double>(cm.num_classes);
  report.accuracy = static_cast<double>(correct) / static_cast<double>(report.n);
  return report;
}

std::vector<int> predict_class(const Tensor& logits, int num_classes) {
  if (logits.rank() != 2) throw UsageError("predict_class expects [N,out_nodes] logits");
  const int n = logits.dim(0), k = logits.dim(1);
  if (num_classes < 1 || num_classes > k)
    throw UsageError("num_classes " + std::to_string(num_classes) +
                     " outside [1, out_nodes=" + std::to_string(k) + "]");
  std::vector<int> preds(static_cast<size_t>(n));
  const float* d = logits.ptr();
  for (int i = 0; i < n; ++i) {
    const float* row = d + static_cast<int64_t>(i) * k;
    int best = 0;
    for (int c = 1; c < num_classes; ++c)
      if (row[c] > row[best]) best = c;
    preds[static_cast<size_t>(i)] = best;
  }
  return preds;
}

EvalResult evaluate_split(Model& model, const DecodedCache& cache,
                          const DatasetManifest& manifest,
                          const std::vector<int>& indices, const NormStats& norm,
                          int input_size, int batch_size, int workers) {
  if (indices.empty()) throw ConfigError("cannot evaluate an empty split");
  const int num_classes = manifest.num_classes();
  EvalResult result;
  result.cm = ConfusionMatrix(num_classes);
  double loss_sum = 0.0;
  for (size_t start = 0; start < indices.size();
       start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(indices.size(), start + static_cast<size_t>(batch_size));
    std::vector<int> chunk(indices.begin() + static_cast<std::ptrdiff_t>(start),
                           indices.begin() + static_cast<std::ptrdiff_t>(end));
    Batch batch = make_batch(cache, manifest, chunk, norm, input_size,
                             /*do_augment=*/false, 0, 0, workers);
    Tensor logits = model.eval_forward(batch.x);
    loss_sum +=
        static_cast<double>(softmax_cross_entropy(logits, batch.labels).item()) *
        static_cast<double>(chunk.size());
    const std::vector<int> preds = predict_class(logits, num_classes);
    for (size_t i = 0; i < chunk.size(); ++i)
      result.cm.add(batch.labels[i], preds[i]);
  }
  result.loss = loss_sum / static_cast<double>(indices.size());
  result.report = metrics(result.cm);
  return result;
}

}  // namespace phytnet
