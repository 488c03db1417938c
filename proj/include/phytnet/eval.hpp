#pragma once

#include <map>

#include "phytnet/metrics.hpp"
#include "phytnet/train.hpp"

namespace phytnet {

// Linear-interpolation quantile (the common "type 7" rule). p in [0,1].
double quantile(std::vector<double> xs, double p);

struct DistSummary {
  double median = 0.0;
  double iqr = 0.0;
  double min = 0.0;
  double max = 0.0;
};
DistSummary summarize(const std::vector<double>& xs);

struct FoldEntry {
  MetricsReport train;
  MetricsReport val;
  double gap = 0.0;  // train macro F1 - val macro F1
  std::string checkpoint;
  int best_epoch = 0;
  int stopped_epoch = 0;
};

struct CVReport {
  int k = 0;
  std::vector<FoldEntry> folds;
  // Keys: val_macro_f1, val_accuracy, train_macro_f1, gap.
  std::map<std::string, DistSummary> summaries;
  std::string best_checkpoint;  // fold with the highest val macro F1

  nlohmann::json to_json() const;
  static CVReport from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& file) const;
  static CVReport load(const std::filesystem::path& file);
};

// K-fold cross-validation: a fresh model and optimizer per fold (seeds derived
// from train_cfg.seed and the fold index), normalization stats computed from
// each fold's training portion and cached in plan.fold_norm, per-fold run dirs
// fold_<i> under out_dir, and best-checkpoint reload before scoring both
// splits. Appends one line per fold to <out_dir>/metrics.jsonl and writes
// <out_dir>/cv_report.json. A failing fold rethrows with its index prefixed.
CVReport cross_validate(const ModelConfig& mcfg, const DatasetManifest& manifest,
                        const DecodedCache& cache, FoldPlan& plan,
                        const TrainConfig& train_cfg,
                        const std::filesystem::path& out_dir);

struct Heatmap {
  std::vector<float> source_map;  // normalized, source_h x source_w
  std::vector<float> values;      // normalized, upsampled to height x width
  int source_h = 0;
  int source_w = 0;
  int height = 0;  // upsampled dims
  int width = 0;
  int target_class = -1;
};

// ReLU(sum_k alphas[k] * features[k,:,:]): the pre-normalization map.
std::vector<float> gradcam_combine(const std::vector<float>& features, int channels,
                                   int h, int w, const std::vector<double>& alphas);

// input: [1,3,S,S] standardized batch, eval-mode forward. alpha_k is the
// spatial mean of d(logit_target)/d(A^k) at the final conv stage; the combined
// map is ReLU'd, normalized by its max (an identically-zero map stays zero),
// and bilinearly upsampled to the input resolution.
Heatmap grad_cam(Model& model, const Tensor& input, int target_class);

// Fixed blue->cyan->yellow->red colormap used by overlays.
std::array<float, 3> jet_color(float v);

// Per-pixel blend out = (1-h)*img + h*colormap(h): zero heat leaves the pixel
// untouched, saturated heat paints the pure colormap.
Image overlay_image(const Heatmap& hm, const Image& img);
void overlay(const Heatmap& hm, const Image& img, const std::filesystem::path& out);
// "<source_id with '/' -> '_' and the extension dropped>_<true>_<pred>.png"
std::string overlay_filename(const std::string& source_id,
                             const std::string& true_name,
                             const std::string& pred_name);

// Per-fold table plus distribution summaries, read back from
// <run_dir>/cv_report.json; IoError when the report is missing.
std::string emit_report(const std::filesystem::path& run_dir);

}  // namespace phytnet
