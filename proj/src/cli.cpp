#include "phytnet/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "phytnet/eval.hpp"
#include "phytnet/sweep.hpp"

namespace phytnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path default_out(const std::string& verb) {
  const char* root = std::getenv("PHYTNET_RUNS_DIR");
  return fs::path(root ? root : "runs") / verb;
}

DatasetManifest load_data(const fs::path& root) {
  const fs::path manifest_file = root / "manifest.json";
  if (fs::exists(manifest_file)) return DatasetManifest::load(manifest_file);
  return load_dataset(root);
}

ModelConfig model_config_from(const std::string& path) {
  return path.empty() ? ModelConfig{} : ModelConfig::load(path);
}

TrainConfig train_config_from(const std::string& path) {
  return path.empty() ? TrainConfig{} : TrainConfig::load(path);
}

struct SynthArgs {
  std::string out;
  int per_class = 60;
  uint64_t seed = 42;
};

int do_synth(const SynthArgs& a) {
  const fs::path out = a.out.empty() ? default_out("synth") : fs::path(a.out);
  const DatasetManifest manifest = synthesize_dataset(a.per_class, a.seed, out);
  std::cout << "wrote " << manifest.samples.size() << " images across "
            << manifest.num_classes() << " classes under " << out.string()
            << "\n";
  std::cout << "manifest: " << (out / "manifest.json").string() << "\n";
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string model;
  std::string train_cfg;
  std::string out;
  int workers = 1;
};

int do_train(const TrainArgs& a) {
  if (a.data.empty()) throw UsageError("--data is required");
  const DatasetManifest manifest = load_data(a.data);
  const ModelConfig mcfg = model_config_from(a.model);
  TrainConfig tcfg = train_config_from(a.train_cfg);
  tcfg.workers = a.workers;
  const fs::path out = a.out.empty() ? default_out("train") : fs::path(a.out);

  // Hold out fold 0 of a deterministic 5-fold split as the validation set.
  const FoldPlan plan = kfold_split(manifest, 5, tcfg.seed);
  FoldData data;
  for (int i = 0; i < static_cast<int>(manifest.samples.size()); ++i) {
    const int fold = plan.fold_of(manifest.samples[i].source_id);
    (fold == 0 ? data.val_idx : data.train_idx).push_back(i);
  }
  const DecodedCache cache(manifest, a.workers);
  data.norm = compute_norm_stats(cache, data.train_idx);

  PhytNetModel model(mcfg, tcfg.seed);
  const TrainReport report = train(model, manifest, cache, data, tcfg, out);
  std::cout << "stopped after epoch " << report.stopped_epoch << " (best epoch "
            << report.best_epoch << ", best val macro F1 " << report.best_val_f1
            << ")\n";
  std::cout << "checkpoint: " << report.checkpoint_path << "\n";
  std::cout << "run dir: " << out.string() << "\n";
  return 0;
}

struct CvArgs {
  std::string data;
  int k = 10;
  uint64_t seed = 42;
  std::string model;
  std::string train_cfg;
  std::string out;
  int workers = 1;
};

int do_cv(const CvArgs& a) {
  if (a.data.empty()) throw UsageError("--data is required");
  const DatasetManifest manifest = load_data(a.data);
  const ModelConfig mcfg = model_config_from(a.model);
  TrainConfig tcfg = train_config_from(a.train_cfg);
  tcfg.seed = a.seed;
  tcfg.workers = a.workers;
  const fs::path out = a.out.empty() ? default_out("cv") : fs::path(a.out);

  const DecodedCache cache(manifest, a.workers);
  FoldPlan plan = kfold_split(manifest, a.k, a.seed);
  cross_validate(mcfg, manifest, cache, plan, tcfg, out);
  std::cout << emit_report(out);
  return 0;
}

struct SweepArgs {
  std::string space;
  int budget = 30;
  std::string data;
  std::string out;
  uint64_t seed = 42;
  int workers = 1;
  int max_epochs = 12;
  int patience = 4;
};

int do_sweep(const SweepArgs& a) {
  if (a.data.empty()) throw UsageError("--data is required");
  const SweepSpace space =
      a.space.empty() ? SweepSpace{} : SweepSpace::load(a.space);
  const DatasetManifest manifest = load_data(a.data);
  const fs::path out = a.out.empty() ? default_out("sweep") : fs::path(a.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out.string());

  const DecodedCache cache(manifest, a.workers);
  // One fixed 5-fold split reused by every trial; fold 0 is the validation
  // set. Short-epoch training keeps each trial at desk scale.
  const FoldPlan plan = kfold_split(manifest, 5, a.seed);
  FoldData data;
  for (int i = 0; i < static_cast<int>(manifest.samples.size()); ++i) {
    const int fold = plan.fold_of(manifest.samples[i].source_id);
    (fold == 0 ? data.val_idx : data.train_idx).push_back(i);
  }
  data.norm = compute_norm_stats(cache, data.train_idx);

  int trial_counter = 0;
  const TrialEvaluator evaluator = [&](const Candidate& cand) {
    ModelConfig mcfg = ModelConfig::from_json(cand.config.at("model"));
    TrainConfig tcfg = TrainConfig::from_json(cand.config.at("train"));
    mcfg.num_classes = manifest.num_classes();
    tcfg.max_epochs = a.max_epochs;
    tcfg.patience = a.patience;
    tcfg.seed = a.seed;
    tcfg.workers = a.workers;
    PhytNetModel model(mcfg, a.seed);
    const fs::path run_dir = out / ("trial_" + std::to_string(trial_counter++));
    const TrainReport report =
        train(model, manifest, cache, data, tcfg, run_dir);
    return report.best_val_f1;
  };

  const SweepResult result =
      run_sweep(a.budget, evaluator, make_phytnet_adapter(space), a.seed,
                out / "trials.jsonl");
  std::cout << "ran " << result.trials.size() << " trials; log: "
            << (out / "trials.jsonl").string() << "\n";
  if (result.best_index) {
    const Trial& best = result.trials[*result.best_index];
    std::cout << "best trial " << *result.best_index << ": val macro F1 "
              << *best.val_f1 << ", " << best.n_params << " params, "
              << best.gflops << " gflops\n";
    std::cout << best.candidate.config.dump(2) << "\n";
  } else {
    std::cout << "no trial finished training (all gated out or failed)\n";
  }
  return 0;
}

struct GradcamArgs {
  std::string ckpt;
  std::string image;
  int target = -1;
  std::string out;
};

int do_gradcam(const GradcamArgs& a) {
  if (a.ckpt.empty()) throw UsageError("--ckpt is required");
  if (a.image.empty()) throw UsageError("--image is required");
  if (a.target < 0) throw UsageError("--class is required");
  std::unique_ptr<PhytNetModel> model = load_checkpoint(a.ckpt);
  const Image raw = decode_image(a.image);
  const int size = model->config().input_size;
  const Image resized = resize_bilinear(raw, size, size);

  // The checkpoint stores no dataset statistics, so standardize with the
  // image's own per-channel moments.
  NormStats norm;
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    const size_t plane = static_cast<size_t>(size) * size;
    for (size_t i = 0; i < plane; ++i) {
      const double v = resized.data[static_cast<size_t>(c) * plane + i];
      sum += v;
      sq += v * v;
    }
    const double mean = sum / static_cast<double>(plane);
    norm.mean[static_cast<size_t>(c)] = mean;
    norm.std[static_cast<size_t>(c)] = std::sqrt(
        std::max(sq / static_cast<double>(plane) - mean * mean, 1e-12));
  }
  const Tensor single = image_to_tensor(resized, norm);
  Tensor batch = reshape(single, {1, 3, size, size});

  const Heatmap hm = grad_cam(*model, batch, a.target);
  const Tensor logits = model->eval_forward(batch);
  const int pred = predict_class(logits, model->config().num_classes)[0];

  const fs::path out_dir = a.out.empty() ? default_out("gradcam") : fs::path(a.out);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string());
  const std::string name =
      overlay_filename(fs::path(a.image).filename().string(),
                       "c" + std::to_string(a.target), "c" + std::to_string(pred));
  const fs::path out_file = out_dir / name;
  overlay(hm, resized, out_file);
  std::cout << "target class " << a.target << ", predicted class " << pred
            << "\n";
  std::cout << "overlay: " << out_file.string() << "\n";
  return 0;
}

struct FlopsArgs {
  std::string model;
  int input_size = 0;
};

int do_flops(const FlopsArgs& a) {
  const ModelConfig mcfg = model_config_from(a.model);
  const int size = a.input_size > 0 ? a.input_size : mcfg.input_size;
  PhytNetModel model(mcfg, 0);
  const CostReport cost = cost_report(model, size);
  std::cout << "n_params: " << cost.n_params << "\n";
  std::cout << "gflops: " << cost.gflops << "\n";
  std::cout << "input_size: " << cost.input_size << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"PhytNet: compact CNN training, evaluation, and architecture search"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "Generate the synthetic dataset");
  synth->add_option("--out", synth_args.out, "Output directory");
  synth->add_option("--per-class", synth_args.per_class, "Images per class");
  synth->add_option("--seed", synth_args.seed, "Random seed");

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "Train one model");
  train->add_option("--data", train_args.data, "Dataset root");
  train->add_option("--model", train_args.model, "Model config JSON");
  train->add_option("--train-cfg,--train", train_args.train_cfg,
                    "Training config JSON");
  train->add_option("--out", train_args.out, "Run directory");
  train->add_option("--workers", train_args.workers, "Worker thread cap");

  CvArgs cv_args;
  CLI::App* cv = app.add_subcommand("cv", "K-fold cross-validation");
  cv->add_option("--data", cv_args.data, "Dataset root");
  cv->add_option("--k", cv_args.k, "Number of folds");
  cv->add_option("--seed", cv_args.seed, "Split and training seed");
  cv->add_option("--model", cv_args.model, "Model config JSON");
  cv->add_option("--train-cfg,--train", cv_args.train_cfg, "Training config JSON");
  cv->add_option("--out", cv_args.out, "Output directory");
  cv->add_option("--workers", cv_args.workers, "Worker thread cap");

  SweepArgs sweep_args;
  CLI::App* sweep = app.add_subcommand("sweep", "Bayesian architecture search");
  sweep->add_option("--space", sweep_args.space, "Sweep space JSON");
  sweep->add_option("--budget", sweep_args.budget, "Trial budget");
  sweep->add_option("--data", sweep_args.data, "Dataset root");
  sweep->add_option("--out", sweep_args.out, "Output directory");
  sweep->add_option("--seed", sweep_args.seed, "Random seed");
  sweep->add_option("--workers", sweep_args.workers, "Worker thread cap");
  sweep->add_option("--max-epochs", sweep_args.max_epochs,
                    "Epoch cap per trial");
  sweep->add_option("--patience", sweep_args.patience,
                    "Early-stop patience per trial");

  GradcamArgs gradcam_args;
  CLI::App* gradcam = app.add_subcommand("gradcam", "Class activation overlay");
  gradcam->add_option("--ckpt", gradcam_args.ckpt, "Checkpoint file");
  gradcam->add_option("--image", gradcam_args.image, "Input image");
  gradcam->add_option("--class", gradcam_args.target, "Target class index");
  gradcam->add_option("--out", gradcam_args.out, "Output directory");

  FlopsArgs flops_args;
  CLI::App* flops = app.add_subcommand("flops", "Parameter and FLOP report");
  flops->add_option("--model", flops_args.model, "Model config JSON");
  flops->add_option("--input-size", flops_args.input_size,
                    "Input resolution (defaults to the config's)");

  CLI::App* report = app.add_subcommand("report", "Summarize a cv run directory");
  std::string report_dir;
  report->add_option("--run", report_dir, "Run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  const auto dispatch = [&](const char* stage, const auto& fn) {
    try {
      return fn();
    } catch (const UsageError& e) {
      std::cerr << e.what() << "\n";
      return 1;
    } catch (const std::exception& e) {
      std::cerr << "error [" << stage << "]: " << e.what() << "\n";
      return 2;
    }
  };
  if (synth->parsed()) return dispatch("synth", [&] { return do_synth(synth_args); });
  if (train->parsed()) return dispatch("train", [&] { return do_train(train_args); });
  if (cv->parsed()) return dispatch("cv", [&] { return do_cv(cv_args); });
  if (sweep->parsed()) return dispatch("sweep", [&] { return do_sweep(sweep_args); });
  if (gradcam->parsed())
    return dispatch("gradcam", [&] { return do_gradcam(gradcam_args); });
  if (flops->parsed()) return dispatch("flops", [&] { return do_flops(flops_args); });
  if (report->parsed())
    return dispatch("report", [&] {
      if (report_dir.empty()) throw UsageError("--run is required");
      std::cout << emit_report(report_dir);
      return 0;
    });
  std::cerr << "no subcommand given\n";
  return 1;
}

}  // namespace phytnet
