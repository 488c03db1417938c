#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "phytnet/eval.hpp"
#include "support.hpp"

using namespace phytnet;
using namespace testutil;
namespace fs = std::filesystem;

TEST_CASE("metrics on [[2,1],[1,2]]: everything is 2/3, accuracy 4/6") {
  ConfusionMatrix cm(2);
  cm.at(0, 0) = 2;
  cm.at(0, 1) = 1;
  cm.at(1, 0) = 1;
  cm.at(1, 1) = 2;
  MetricsReport r = metrics(cm);
  for (int c = 0; c < 2; ++c) {
    CHECK(r.per_class[static_cast<size_t>(c)].precision == doctest::Approx(2.0 / 3.0));
    CHECK(r.per_class[static_cast<size_t>(c)].recall == doctest::Approx(2.0 / 3.0));
    CHECK(r.per_class[static_cast<size_t>(c)].f1 == doctest::Approx(2.0 / 3.0));
  }
  CHECK(r.macro_f1 == doctest::Approx(2.0 / 3.0));
  CHECK(r.accuracy == doctest::Approx(4.0 / 6.0));
  CHECK(r.n == 6);
}

TEST_CASE("metrics: perfect diagonal gives ones, empty diagonal gives zeros") {
  ConfusionMatrix good(3);
  for (int c = 0; c < 3; ++c) good.at(c, c) = 5;
  MetricsReport g = metrics(good);
  CHECK(g.macro_f1 == doctest::Approx(1.0));
  CHECK(g.accuracy == doctest::Approx(1.0));

  ConfusionMatrix bad(2);
  bad.at(0, 1) = 3;
  bad.at(1, 0) = 3;
  MetricsReport b = metrics(bad);
  // Zero precision and recall: F1 defined as 0, never NaN.
  CHECK(b.macro_f1 == 0.0);
  for (const auto& pc : b.per_class) CHECK(pc.f1 == 0.0);
}

TEST_CASE("metrics: accuracy equals trace/total on random matrices") {
  Rng rng(271);
  for (int trial = 0; trial < 25; ++trial) {
    const int k = 2 + static_cast<int>(rng.next_u64() % 5);
    ConfusionMatrix cm(k);
    int64_t trace = 0, total = 0;
    for (int t = 0; t < k; ++t)
      for (int p = 0; p < k; ++p) {
        const int64_t v = static_cast<int64_t>(rng.next_u64() % 7);
        cm.at(t, p) = v;
        total += v;
        if (t == p) trace += v;
      }
    if (total == 0) continue;
    MetricsReport r = metrics(cm);
    CHECK(r.accuracy == doctest::Approx(static_cast<double>(trace) /
                                        static_cast<double>(total)));
    CHECK(r.n == total);
    double mean_f1 = 0.0;
    for (const auto& pc : r.per_class) mean_f1 += pc.f1;
    CHECK(r.macro_f1 == doctest::Approx(mean_f1 / k));
  }
}

TEST_CASE("predict_class restricts the argmax to the first num_classes logits") {
  Tensor logits = Tensor::from_vector({1, 8}, {0.1f, 0.9f, 0.2f, 0.3f, 5, 5, 5, 5});
  CHECK(predict_class(logits, 4) == std::vector<int>{1});

  Tensor flat = Tensor::full({1, 6}, 0.5f);
  CHECK(predict_class(flat, 4) == std::vector<int>{0});  // ties to the lowest index

  Rng rng(281);
  Tensor batch = rand_tensor({16, 10}, rng, -2.0f, 2.0f);
  const std::vector<int> preds = predict_class(batch, 7);
  for (int i = 0; i < 16; ++i) {
    int want = 0;
    for (int c = 1; c < 7; ++c)
      if (batch.data()[static_cast<size_t>(i) * 10 + c] >
          batch.data()[static_cast<size_t>(i) * 10 + want])
        want = c;
    CHECK(preds[static_cast<size_t>(i)] == want);
  }
}

TEST_CASE("quantile follows the linear-interpolation rule") {
  const std::vector<double> xs = {3.0, 1.0, 4.0, 2.0};  // order must not matter
  CHECK(quantile(xs, 0.0) == doctest::Approx(1.0));
  CHECK(quantile(xs, 0.25) == doctest::Approx(1.75));
  CHECK(quantile(xs, 0.5) == doctest::Approx(2.5));
  CHECK(quantile(xs, 0.75) == doctest::Approx(3.25));
  CHECK(quantile(xs, 1.0) == doctest::Approx(4.0));
  CHECK(quantile({7.0}, 0.3) == doctest::Approx(7.0));
  CHECK_THROWS_AS(quantile({}, 0.5), UsageError);
  CHECK_THROWS_AS(quantile({1.0}, 1.5), UsageError);
}

TEST_CASE("summarize reports median, IQR, min, and max") {
  DistSummary s = summarize({1.0, 2.0, 3.0, 4.0});
  CHECK(s.median == doctest::Approx(2.5));
  CHECK(s.iqr == doctest::Approx(1.5));
  CHECK(s.min == doctest::Approx(1.0));
  CHECK(s.max == doctest::Approx(4.0));
}

TEST_CASE("gradcam_combine: single channel with unit weight is ReLU of the map") {
  const std::vector<float> features = {0.5f, -0.25f, 1.5f, 0.0f, -2.0f, 0.75f};
  const auto out = gradcam_combine(features, 1, 2, 3, {1.0});
  REQUIRE(out.size() == 6);
  for (size_t i = 0; i < out.size(); ++i)
    CHECK(out[i] == doctest::Approx(std::max(0.0f, features[i])));
}

TEST_CASE("gradcam_combine: nonpositive combinations collapse to the zero map") {
  const std::vector<float> features = {0.5f, 0.25f, 1.5f, 0.1f};
  const auto out = gradcam_combine(features, 1, 2, 2, {-1.0});
  for (float v : out) CHECK(v == 0.0f);
}

TEST_CASE("gradcam_combine: two channels match the weighted-sum reference within 1e-6") {
  Rng rng(283);
  const int h = 5, w = 4;
  std::vector<float> features(static_cast<size_t>(2) * h * w);
  for (float& v : features) v = rng.uniform() * 2.0f - 1.0f;
  const std::vector<double> alphas = {0.7, -0.3};
  const auto out = gradcam_combine(features, 2, h, w, alphas);
  REQUIRE(out.size() == static_cast<size_t>(h) * w);
  for (int i = 0; i < h * w; ++i) {
    const double want =
        std::max(0.0, 0.7 * features[static_cast<size_t>(i)] -
                          0.3 * features[static_cast<size_t>(h) * w + i]);
    CHECK(std::abs(static_cast<double>(out[static_cast<size_t>(i)]) - want) < 1e-6);
  }
}

TEST_CASE("grad_cam on a real model: nonnegative, max in {0,1}, input-sized") {
  ModelConfig cfg;
  cfg.stage_channels = {16};
  cfg.blocks_per_stage = {1};
  PhytNetModel model(cfg, 31);
  Rng rng(293);
  Tensor x = rand_tensor({1, 3, 200, 200}, rng, -1.0f, 1.0f);
  Heatmap hm = grad_cam(model, x, 2);
  CHECK(hm.target_class == 2);
  CHECK(hm.height == 200);
  CHECK(hm.width == 200);
  CHECK(hm.source_h == 100);  // stem halves 200; the single stage keeps it
  CHECK(hm.source_w == 100);
  REQUIRE(hm.values.size() == 200u * 200u);
  float mx = 0.0f;
  for (float v : hm.values) {
    CHECK(v >= 0.0f);
    mx = std::max(mx, v);
  }
  CHECK((mx == 0.0f || mx == 1.0f));
  float smx = 0.0f;
  for (float v : hm.source_map) {
    CHECK(v >= 0.0f);
    smx = std::max(smx, v);
  }
  CHECK((smx == 0.0f || smx == 1.0f));
}

TEST_CASE("grad_cam validates its target class and input shape") {
  ModelConfig cfg;
  cfg.stage_channels = {16};
  cfg.blocks_per_stage = {1};
  PhytNetModel model(cfg, 31);
  Rng rng(307);
  Tensor x = rand_tensor({1, 3, 200, 200}, rng);
  CHECK_THROWS_AS(grad_cam(model, x, 4), UsageError);
  CHECK_THROWS_AS(grad_cam(model, x, -1), UsageError);
  Tensor batch2 = rand_tensor({2, 3, 200, 200}, rng);
  CHECK_THROWS_AS(grad_cam(model, batch2, 0), UsageError);
}

TEST_CASE("jet colormap endpoints and midpoints") {
  const auto blue = jet_color(0.0f);
  CHECK(blue[0] == doctest::Approx(0.0f));
  CHECK(blue[1] == doctest::Approx(0.0f));
  CHECK(blue[2] == doctest::Approx(1.0f));
  const auto red = jet_color(1.0f);
  CHECK(red[0] == doctest::Approx(1.0f));
  CHECK(red[1] == doctest::Approx(0.0f));
  CHECK(red[2] == doctest::Approx(0.0f));
  const auto cyan = jet_color(1.0f / 3.0f);
  CHECK(cyan[1] == doctest::Approx(1.0f).epsilon(1e-5));
  CHECK(cyan[2] == doctest::Approx(1.0f).epsilon(1e-5));
}

TEST_CASE("overlay: zero heat is the identity, saturated heat is pure colormap") {
  Rng rng(311);
  Image img(10, 10);
  for (float& v : img.data) v = rng.uniform();

  Heatmap zero;
  zero.height = 10;
  zero.width = 10;
  zero.values.assign(100, 0.0f);
  Image same = overlay_image(zero, img);
  CHECK(same.data == img.data);

  Heatmap hot = zero;
  hot.values.assign(100, 1.0f);
  Image painted = overlay_image(hot, img);
  const auto red = jet_color(1.0f);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) {
      CHECK(painted.at(0, y, x) == doctest::Approx(red[0]));
      CHECK(painted.at(1, y, x) == doctest::Approx(red[1]));
      CHECK(painted.at(2, y, x) == doctest::Approx(red[2]));
    }
  CHECK_THROWS_AS(overlay_image(zero, Image(4, 4)), UsageError);
}

TEST_CASE("overlay PNG round-trips to the quantized blend exactly") {
  const auto dir = scratch_dir("eval_overlay");
  Rng rng(313);
  Image img(8, 8);
  for (float& v : img.data) v = rng.uniform();
  Heatmap hm;
  hm.height = 8;
  hm.width = 8;
  hm.values.resize(64);
  for (float& v : hm.values) v = rng.uniform();

  const Image blend = overlay_image(hm, img);
  const auto file = dir / "overlay.png";
  overlay(hm, img, file);
  const Image back = decode_image(file);
  REQUIRE(back.data.size() == blend.data.size());
  for (size_t i = 0; i < blend.data.size(); ++i) {
    const float clamped = std::min(1.0f, std::max(0.0f, blend.data[i]));
    const float quantized =
        static_cast<float>(std::lround(clamped * 255.0f)) / 255.0f;
    CHECK(back.data[i] == doctest::Approx(quantized).epsilon(1e-6));
  }
}

TEST_CASE("overlay filenames encode source, truth, and prediction") {
  CHECK(overlay_filename("plot3/img_017.png", "FPR", "Healthy") ==
        "plot3_img_017_FPR_Healthy.png");
  CHECK(overlay_filename("img.jpeg", "a", "b") == "img_a_b.png");
  CHECK(overlay_filename("noext", "x", "y") == "noext_x_y.png");
  CHECK(overlay_filename("dir.v2/file", "x", "y") == "dir.v2_file_x_y.png");
}

TEST_CASE("cv folds never leak a source_id between train and val") {
  const auto dir = scratch_dir("eval_isolation");
  DatasetManifest manifest = synthesize_dataset(6, 23, dir);
  FoldPlan plan = kfold_split(manifest, 3, 23);
  for (int fold = 0; fold < 3; ++fold) {
    std::set<std::string> train_ids, val_ids;
    for (const auto& s : manifest.samples) {
      if (plan.fold_of(s.source_id) == fold)
        val_ids.insert(s.source_id);
      else
        train_ids.insert(s.source_id);
    }
    CHECK(train_ids.size() + val_ids.size() == manifest.samples.size());
    for (const auto& id : val_ids) CHECK(train_ids.count(id) == 0);
  }
}

TEST_CASE("cv report JSON round-trips and rejects malformed input") {
  CVReport report;
  report.k = 2;
  report.folds.resize(2);
  for (int f = 0; f < 2; ++f) {
    FoldEntry& e = report.folds[static_cast<size_t>(f)];
    ConfusionMatrix cm(2);
    cm.at(0, 0) = 3;
    cm.at(1, 1) = 2 + f;
    e.train = metrics(cm);
    e.val = metrics(cm);
    e.gap = 0.0;
    e.checkpoint = "fold_" + std::to_string(f) + "/best.ckpt";
    e.best_epoch = 1 + f;
    e.stopped_epoch = 2 + f;
  }
  report.summaries["val_macro_f1"] = summarize({1.0, 1.0});
  report.best_checkpoint = report.folds[0].checkpoint;

  const auto dir = scratch_dir("eval_cvreport");
  report.save(dir / "cv_report.json");
  CVReport back = CVReport::load(dir / "cv_report.json");
  CHECK(back.to_json() == report.to_json());

  CHECK_THROWS_AS(CVReport::from_json(nlohmann::json::array()), DataError);
  nlohmann::json wrong = report.to_json();
  wrong["k"] = 5;  // fold count no longer matches
  CHECK_THROWS_AS(CVReport::from_json(wrong), DataError);
}

TEST_CASE("cross_validate: fold bookkeeping, determinism, and reporting") {
  const auto dir = scratch_dir("eval_cv");
  DatasetManifest manifest = synthesize_dataset(4, 29, dir);  // 16 images
  DecodedCache cache(manifest, 1);
  ModelConfig mcfg;
  mcfg.stage_channels = {16};
  mcfg.blocks_per_stage = {1};
  TrainConfig tcfg;
  tcfg.max_epochs = 1;
  tcfg.batch_size = 8;
  tcfg.seed = 29;

  FoldPlan plan = kfold_split(manifest, 2, 29);
  const fs::path out_a = dir / "cv_a";
  CVReport report = cross_validate(mcfg, manifest, cache, plan, tcfg, out_a);

  CHECK(report.k == 2);
  REQUIRE(report.folds.size() == 2);
  CHECK(plan.fold_norm.size() == 2);
  for (int f = 0; f < 2; ++f) {
    const FoldEntry& e = report.folds[static_cast<size_t>(f)];
    CHECK(e.gap == doctest::Approx(e.train.macro_f1 - e.val.macro_f1));
    CHECK(fs::exists(e.checkpoint));
    CHECK(e.checkpoint.find("fold_" + std::to_string(f)) != std::string::npos);
  }
  for (const char* key :
       {"val_macro_f1", "val_accuracy", "train_macro_f1", "gap"})
    CHECK(report.summaries.count(key) == 1);
  CHECK_FALSE(report.best_checkpoint.empty());
  CHECK(fs::exists(out_a / "cv_report.json"));
  CHECK(fs::exists(out_a / "metrics.jsonl"));

  // The persisted report matches the returned one.
  CVReport loaded = CVReport::load(out_a / "cv_report.json");
  CHECK(loaded.to_json() == report.to_json());

  // Reusing the same plan in a second run reproduces the metrics bytes.
  FoldPlan plan2 = kfold_split(manifest, 2, 29);
  const fs::path out_b = dir / "cv_b";
  cross_validate(mcfg, manifest, cache, plan2, tcfg, out_b);
  CHECK(read_file(out_a / "metrics.jsonl") == read_file(out_b / "metrics.jsonl"));

  // emit_report renders the persisted summaries.
  const std::string text = emit_report(out_a);
  CHECK(text.find("fold") != std::string::npos);
  CHECK(text.find("val_macro_f1") != std::string::npos);
  CHECK(text.find("best checkpoint") != std::string::npos);
  CHECK_THROWS_AS(emit_report(dir / "nonexistent"), IoError);
}

TEST_CASE("cross_validate propagates fold failures with the fold index") {
  const auto dir = scratch_dir("eval_cv_fail");
  DatasetManifest manifest = synthesize_dataset(3, 31, dir);
  DecodedCache cache(manifest, 1);
  ModelConfig mcfg;
  mcfg.stage_channels = {16};
  mcfg.blocks_per_stage = {1};
  mcfg.num_classes = 3;  // fewer than the manifest's four classes
  mcfg.out_nodes = 4;
  TrainConfig tcfg;
  tcfg.max_epochs = 1;
  FoldPlan plan = kfold_split(manifest, 3, 31);
  CHECK_THROWS_WITH_AS(
      cross_validate(mcfg, manifest, cache, plan, tcfg, dir / "cv"),
      doctest::Contains("fold 0"), ConfigError);
}

TEST_CASE("cross_validate requires k >= 2 and an output directory") {
  const auto dir = scratch_dir("eval_cv_args");
  DatasetManifest manifest = synthesize_dataset(3, 37, dir);
  DecodedCache cache(manifest, 1);
  ModelConfig mcfg;
  mcfg.stage_channels = {16};
  mcfg.blocks_per_stage = {1};
  TrainConfig tcfg;
  FoldPlan plan = kfold_split(manifest, 3, 37);
  FoldPlan bad = plan;
  bad.k = 1;
  CHECK_THROWS_AS(cross_validate(mcfg, manifest, cache, bad, tcfg, dir / "cv"),
                  ConfigError);
  CHECK_THROWS_AS(cross_validate(mcfg, manifest, cache, plan, tcfg, {}), ConfigError);
}

TEST_CASE("evaluate_split wires the confusion matrix to the manifest labels") {
  const auto dir = scratch_dir("eval_split");
  DatasetManifest manifest = synthesize_dataset(2, 41, dir);
  DecodedCache cache(manifest, 1);
  std::vector<int> all(manifest.samples.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  NormStats norm = compute_norm_stats(cache, all);
  ModelConfig mcfg;
  mcfg.stage_channels = {16};
  mcfg.blocks_per_stage = {1};
  PhytNetModel model(mcfg, 43);
  EvalResult res = evaluate_split(model, cache, manifest, all, norm, 200, 4, 1);
  CHECK(res.report.n == static_cast<int64_t>(all.size()));
  CHECK(res.cm.total() == static_cast<int64_t>(all.size()));
  CHECK(res.loss > 0.0);
  // Deterministic: same inputs, same result.
  EvalResult res2 = evaluate_split(model, cache, manifest, all, norm, 200, 4, 2);
  CHECK(res2.loss == res.loss);
  CHECK(res2.report.macro_f1 == res.report.macro_f1);
}
