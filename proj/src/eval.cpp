#include "phytnet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace phytnet {

using nlohmann::json;
namespace fs = std::filesystem;

double quantile(std::vector<double> xs, double p) {
  if (xs.empty()) throw UsageError("quantile of an empty sample");
  if (p < 0.0 || p > 1.0) throw UsageError("quantile probability outside [0,1]");
  std::sort(xs.begin(), xs.end());
  const double h = (static_cast<double>(xs.size()) - 1.0) * p;
  const size_t lo = static_cast<size_t>(std::floor(h));
  const double frac = h - static_cast<double>(lo);
  if (lo + 1 >= xs.size()) return xs.back();
  return xs[lo] + frac * (xs[lo + 1] - xs[lo]);
}

DistSummary summarize(const std::vector<double>& xs) {
  DistSummary s;
  s.median = quantile(xs, 0.5);
  s.iqr = quantile(xs, 0.75) - quantile(xs, 0.25);
  s.min = *std::min_element(xs.begin(), xs.end());
  s.max = *std::max_element(xs.begin(), xs.end());
  return s;
}

namespace {

json summary_to_json(const DistSummary& s) {
  return json{{"median", s.median}, {"iqr", s.iqr}, {"min", s.min}, {"max", s.max}};
}

DistSummary summary_from_json(const json& j) {
  DistSummary s;
  s.median = j.at("median").get<double>();
  s.iqr = j.at("iqr").get<double>();
  s.min = j.at("min").get<double>();
  s.max = j.at("max").get<double>();
  return s;
}

}  // namespace

json CVReport::to_json() const {
  json folds_json = json::array();
  for (const FoldEntry& f : folds) {
    folds_json.push_back(json{{"train", f.train.to_json()},
                              {"val", f.val.to_json()},
                              {"gap", f.gap},
                              {"checkpoint", f.checkpoint},
                              {"best_epoch", f.best_epoch},
                              {"stopped_epoch", f.stopped_epoch}});
  }
  json summaries_json = json::object();
  for (const auto& [name, s] : summaries) summaries_json[name] = summary_to_json(s);
  return json{{"k", k},
              {"folds", folds_json},
              {"summaries", summaries_json},
              {"best_checkpoint", best_checkpoint}};
}

CVReport CVReport::from_json(const json& j) {
  CVReport r;
  try {
    r.k = j.at("k").get<int>();
    for (const json& fj : j.at("folds")) {
      FoldEntry f;
      f.train = MetricsReport::from_json(fj.at("train"));
      f.val = MetricsReport::from_json(fj.at("val"));
      f.gap = fj.at("gap").get<double>();
      f.checkpoint = fj.at("checkpoint").get<std::string>();
      f.best_epoch = fj.at("best_epoch").get<int>();
      f.stopped_epoch = fj.at("stopped_epoch").get<int>();
      r.folds.push_back(std::move(f));
    }
    for (const auto& [name, sj] : j.at("summaries").items())
      r.summaries[name] = summary_from_json(sj);
    r.best_checkpoint = j.at("best_checkpoint").get<std::string>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed cv report: ") + e.what());
  }
  if (static_cast<int>(r.folds.size()) != r.k)
    throw DataError("cv report lists " + std::to_string(r.folds.size()) +
                    " folds but k=" + std::to_string(r.k));
  return r;
}

void CVReport::save(const fs::path& file) const {
  std::ofstream os(file);
  if (!os) throw IoError("cannot write cv report " + file.string());
  os << to_json().dump(2) << "\n";
}

CVReport CVReport::load(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw IoError("cannot open cv report " + file.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("cv report is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

namespace {

[[noreturn]] void rethrow_with_fold(int fold, const std::exception& e) {
  const std::string msg = "fold " + std::to_string(fold) + ": " + e.what();
  if (dynamic_cast<const ConfigError*>(&e)) throw ConfigError(msg);
  if (dynamic_cast<const DataError*>(&e)) throw DataError(msg);
  if (dynamic_cast<const UsageError*>(&e)) throw UsageError(msg);
  if (dynamic_cast<const NumericError*>(&e)) throw NumericError(msg);
  if (dynamic_cast<const IoError*>(&e)) throw IoError(msg);
  throw std::runtime_error(msg);
}

}  // namespace

CVReport cross_validate(const ModelConfig& mcfg, const DatasetManifest& manifest,
                        const DecodedCache& cache, FoldPlan& plan,
                        const TrainConfig& train_cfg, const fs::path& out_dir) {
  mcfg.validate();
  train_cfg.validate();
  if (plan.k < 2) throw ConfigError("fold plan must have k >= 2");
  if (out_dir.empty())
    throw ConfigError("cross_validate requires an output directory");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string());
  if (plan.fold_norm.empty()) plan.fold_norm.resize(static_cast<size_t>(plan.k));
  if (static_cast<int>(plan.fold_norm.size()) != plan.k)
    throw ConfigError("fold plan norm cache has the wrong length");

  // Truncate up front, then append one line per fold, so identical reruns
  // produce byte-identical files.
  std::ofstream fold_log(out_dir / "metrics.jsonl");
  if (!fold_log)
    throw IoError("cannot write " + (out_dir / "metrics.jsonl").string());

  CVReport report;
  report.k = plan.k;
  double best_f1 = -1.0;
  for (int fold = 0; fold < plan.k; ++fold) {
    try {
      FoldData data;
      for (int i = 0; i < static_cast<int>(manifest.samples.size()); ++i) {
        const int assigned = plan.fold_of(manifest.samples[i].source_id);
        (assigned == fold ? data.val_idx : data.train_idx).push_back(i);
      }
      if (data.val_idx.empty())
        throw DataError("validation fold is empty");
      NormStats& cached = plan.fold_norm[static_cast<size_t>(fold)];
      const bool unset = cached.mean == std::array<double, 3>{0.0, 0.0, 0.0} &&
                         cached.std == std::array<double, 3>{1.0, 1.0, 1.0};
      if (unset) cached = compute_norm_stats(cache, data.train_idx);
      data.norm = cached;

      const uint64_t fold_seed =
          derive_seed(train_cfg.seed, "fold", {static_cast<uint64_t>(fold)});
      PhytNetModel model(mcfg, fold_seed);
      TrainConfig fold_cfg = train_cfg;
      fold_cfg.seed = fold_seed;
      const fs::path run_dir = out_dir / ("fold_" + std::to_string(fold));
      TrainReport tr = train(model, manifest, cache, data, fold_cfg, run_dir);

      std::unique_ptr<PhytNetModel> best = load_checkpoint(tr.checkpoint_path);
      EvalResult train_res =
          evaluate_split(*best, cache, manifest, data.train_idx, data.norm,
                         mcfg.input_size, fold_cfg.batch_size, fold_cfg.workers);
      EvalResult val_res =
          evaluate_split(*best, cache, manifest, data.val_idx, data.norm,
                         mcfg.input_size, fold_cfg.batch_size, fold_cfg.workers);

      FoldEntry entry;
      entry.train = train_res.report;
      entry.val = val_res.report;
      entry.gap = train_res.report.macro_f1 - val_res.report.macro_f1;
      entry.checkpoint = tr.checkpoint_path;
      entry.best_epoch = tr.best_epoch;
      entry.stopped_epoch = tr.stopped_epoch;
      fold_log << json{{"fold", fold},
                       {"train", entry.train.to_json()},
                       {"val", entry.val.to_json()},
                       {"gap", entry.gap}}
                      .dump()
               << "\n";
      fold_log.flush();
      if (entry.val.macro_f1 > best_f1) {
        best_f1 = entry.val.macro_f1;
        report.best_checkpoint = entry.checkpoint;
      }
      report.folds.push_back(std::move(entry));
    } catch (const std::exception& e) {
      rethrow_with_fold(fold, e);
    }
  }

  std::vector<double> val_f1, val_acc, train_f1, gaps;
  for (const FoldEntry& f : report.folds) {
    val_f1.push_back(f.val.macro_f1);
    val_acc.push_back(f.val.accuracy);
    train_f1.push_back(f.train.macro_f1);
    gaps.push_back(f.gap);
  }
  report.summaries["val_macro_f1"] = summarize(val_f1);
  report.summaries["val_accuracy"] = summarize(val_acc);
  report.summaries["train_macro_f1"] = summarize(train_f1);
  report.summaries["gap"] = summarize(gaps);
  report.save(out_dir / "cv_report.json");
  return report;
}

std::vector<float> gradcam_combine(const std::vector<float>& features, int channels,
                                   int h, int w, const std::vector<double>& alphas) {
  if (channels <= 0 || h <= 0 || w <= 0)
    throw UsageError("gradcam_combine: non-positive dimensions");
  const size_t plane = static_cast<size_t>(h) * w;
  if (features.size() != plane * static_cast<size_t>(channels))
    throw UsageError("gradcam_combine: feature buffer size mismatch");
  if (alphas.size() != static_cast<size_t>(channels))
    throw UsageError("gradcam_combine: one alpha per channel required");
  std::vector<float> out(plane, 0.0f);
  for (size_t p = 0; p < plane; ++p) {
    double acc = 0.0;
    for (int k = 0; k < channels; ++k)
      acc += alphas[static_cast<size_t>(k)] * features[static_cast<size_t>(k) * plane + p];
    out[p] = static_cast<float>(std::max(0.0, acc));
  }
  return out;
}

namespace {

// Center-aligned bilinear resample of a single-channel map.
std::vector<float> upsample_map(const std::vector<float>& src, int sh, int sw,
                                int dh, int dw) {
  if (sh == dh && sw == dw) return src;
  std::vector<float> dst(static_cast<size_t>(dh) * dw, 0.0f);
  const double sy_scale = static_cast<double>(sh) / dh;
  const double sx_scale = static_cast<double>(sw) / dw;
  for (int y = 0; y < dh; ++y) {
    double sy = (y + 0.5) * sy_scale - 0.5;
    sy = std::clamp(sy, 0.0, static_cast<double>(sh - 1));
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, sh - 1);
    const double fy = sy - y0;
    for (int x = 0; x < dw; ++x) {
      double sx = (x + 0.5) * sx_scale - 0.5;
      sx = std::clamp(sx, 0.0, static_cast<double>(sw - 1));
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, sw - 1);
      const double fx = sx - x0;
      const double top = (1.0 - fx) * src[static_cast<size_t>(y0) * sw + x0] +
                         fx * src[static_cast<size_t>(y0) * sw + x1];
      const double bot = (1.0 - fx) * src[static_cast<size_t>(y1) * sw + x0] +
                         fx * src[static_cast<size_t>(y1) * sw + x1];
      dst[static_cast<size_t>(y) * dw + x] =
          static_cast<float>((1.0 - fy) * top + fy * bot);
    }
  }
  return dst;
}

// Divide by the max entry; an identically-zero map is left untouched so the
// max stays in {0,1}.
void normalize_by_max(std::vector<float>& map) {
  float max = 0.0f;
  for (float v : map) max = std::max(max, v);
  if (max <= 0.0f) return;
  for (float& v : map) v /= max;
}

}  // namespace

Heatmap grad_cam(Model& model, const Tensor& input, int target_class) {
  if (target_class < 0 || target_class >= model.out_nodes())
    throw UsageError("grad-cam target class " + std::to_string(target_class) +
                     " outside [0," + std::to_string(model.out_nodes()) + ")");
  if (!input.defined() || input.rank() != 4 || input.dim(0) != 1)
    throw UsageError("grad-cam expects a single-image batch [1,3,S,S]");

  Tensor logits = model.eval_forward(input);
  Tensor features = model.last_features();
  if (!features.defined() || features.rank() != 4)
    throw UsageError("model exposes no final-stage feature maps");

  std::vector<float> onehot(static_cast<size_t>(model.out_nodes()), 0.0f);
  onehot[static_cast<size_t>(target_class)] = 1.0f;
  Tensor mask = Tensor::from_vector({1, model.out_nodes()}, onehot);
  Tensor score = sum(mul(logits, mask));
  score.backward();

  const int channels = static_cast<int>(features.dim(1));
  const int sh = static_cast<int>(features.dim(2));
  const int sw = static_cast<int>(features.dim(3));
  const size_t plane = static_cast<size_t>(sh) * sw;
  const std::vector<float>& grad = features.grad();
  std::vector<double> alphas(static_cast<size_t>(channels), 0.0);
  for (int k = 0; k < channels; ++k) {
    double acc = 0.0;
    for (size_t p = 0; p < plane; ++p) acc += grad[static_cast<size_t>(k) * plane + p];
    alphas[static_cast<size_t>(k)] = acc / static_cast<double>(plane);
  }

  Heatmap hm;
  hm.target_class = target_class;
  hm.source_h = sh;
  hm.source_w = sw;
  hm.height = static_cast<int>(input.dim(2));
  hm.width = static_cast<int>(input.dim(3));
  hm.source_map = gradcam_combine(features.data(), channels, sh, sw, alphas);
  normalize_by_max(hm.source_map);
  hm.values = upsample_map(hm.source_map, sh, sw, hm.height, hm.width);
  normalize_by_max(hm.values);
  return hm;
}

std::array<float, 3> jet_color(float v) {
  v = std::clamp(v, 0.0f, 1.0f);
  // Piecewise-linear stops: blue -> cyan -> yellow -> red.
  static constexpr float kStops[4][3] = {
      {0.0f, 0.0f, 1.0f}, {0.0f, 1.0f, 1.0f}, {1.0f, 1.0f, 0.0f}, {1.0f, 0.0f, 0.0f}};
  const float pos = v * 3.0f;
  const int lo = std::min(2, static_cast<int>(pos));
  const float t = pos - static_cast<float>(lo);
  std::array<float, 3> out{};
  for (int c = 0; c < 3; ++c)
    out[static_cast<size_t>(c)] =
        (1.0f - t) * kStops[lo][c] + t * kStops[lo + 1][c];
  return out;
}

Image overlay_image(const Heatmap& hm, const Image& img) {
  if (hm.height != img.height || hm.width != img.width)
    throw UsageError("heatmap dims do not match the image");
  Image out(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const float h = std::clamp(
          hm.values[static_cast<size_t>(y) * img.width + x], 0.0f, 1.0f);
      const std::array<float, 3> cmap = jet_color(h);
      for (int c = 0; c < 3; ++c)
        out.at(c, y, x) = (1.0f - h) * img.at(c, y, x) + h * cmap[static_cast<size_t>(c)];
    }
  }
  return out;
}

void overlay(const Heatmap& hm, const Image& img, const fs::path& out) {
  write_png(out, overlay_image(hm, img));
}

std::string overlay_filename(const std::string& source_id,
                             const std::string& true_name,
                             const std::string& pred_name) {
  std::string stem = source_id;
  const size_t dot = stem.rfind('.');
  const size_t slash = stem.rfind('/');
  if (dot != std::string::npos && (slash == std::string::npos || dot > slash)) {
    const std::string ext = stem.substr(dot);
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") stem.resize(dot);
  }
  std::replace(stem.begin(), stem.end(), '/', '_');
  return stem + "_" + true_name + "_" + pred_name + ".png";
}

std::string emit_report(const fs::path& run_dir) {
  const fs::path report_file = run_dir / "cv_report.json";
  if (!fs::exists(report_file))
    throw IoError("no cv_report.json under " + run_dir.string());
  const CVReport report = CVReport::load(report_file);

  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "cross-validation report (" << report.k << " folds)\n";
  os << "fold  train_f1  val_f1   gap      best_epoch  stopped\n";
  for (size_t i = 0; i < report.folds.size(); ++i) {
    const FoldEntry& f = report.folds[i];
    os << i << "     " << f.train.macro_f1 << "    " << f.val.macro_f1 << "   "
       << f.gap << "   " << f.best_epoch << "           " << f.stopped_epoch
       << "\n";
  }
  for (const auto& [name, s] : report.summaries) {
    os << name << ": median " << s.median << ", iqr " << s.iqr << ", min "
       << s.min << ", max " << s.max << "\n";
  }
  if (!report.folds.empty()) {
    const size_t n_classes = report.folds.front().val.per_class.size();
    os << "per-class validation metrics across folds (median [iqr]):\n";
    for (size_t c = 0; c < n_classes; ++c) {
      std::vector<double> f1, precision, recall;
      for (const FoldEntry& f : report.folds) {
        f1.push_back(f.val.per_class[c].f1);
        precision.push_back(f.val.per_class[c].precision);
        recall.push_back(f.val.per_class[c].recall);
      }
      const DistSummary sf = summarize(f1), sp = summarize(precision),
                        sr = summarize(recall);
      os << "class " << c << ": f1 " << sf.median << " [" << sf.iqr
         << "], precision " << sp.median << " [" << sp.iqr << "], recall "
         << sr.median << " [" << sr.iqr << "]\n";
    }
  }
  os << "best checkpoint: " << report.best_checkpoint << "\n";
  return os.str();
}

}  // namespace phytnet
