#include "phytnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "phytnet/metrics.hpp"

namespace phytnet {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("unknown key '" + it.key() + "' in train config");
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("field '") + key + "' has the wrong type");
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (lr < 1e-6 || lr > 1e-3)
    throw ConfigError("lr " + std::to_string(lr) + " outside [1e-6,1e-3]");
  if (beta1 < 0.88 || beta1 > 0.99)
    throw ConfigError("beta1 " + std::to_string(beta1) + " outside [0.88,0.99]");
  if (beta2 < 0.93 || beta2 > 0.999)
    throw ConfigError("beta2 " + std::to_string(beta2) + " outside [0.93,0.999]");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (eps <= 0.0) throw ConfigError("eps must be > 0");
  if (l1_weight < 0.0) throw ConfigError("l1_weight must be >= 0");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (workers < 1) throw ConfigError("workers must be >= 1");
}

json TrainConfig::to_json() const {
  return json{{"lr", lr},
              {"beta1", beta1},
              {"beta2", beta2},
              {"weight_decay", weight_decay},
              {"eps", eps},
              {"l1_weight", l1_weight},
              {"patience", patience},
              {"max_epochs", max_epochs},
              {"batch_size", batch_size},
              {"seed", seed},
              {"workers", workers}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  reject_unknown(j, {"lr", "beta1", "beta2", "weight_decay", "eps", "l1_weight",
                     "patience", "max_epochs", "batch_size", "seed", "workers"});
  TrainConfig cfg;
  read_field(j, "lr", cfg.lr);
  read_field(j, "beta1", cfg.beta1);
  read_field(j, "beta2", cfg.beta2);
  read_field(j, "weight_decay", cfg.weight_decay);
  read_field(j, "eps", cfg.eps);
  read_field(j, "l1_weight", cfg.l1_weight);
  read_field(j, "patience", cfg.patience);
  read_field(j, "max_epochs", cfg.max_epochs);
  read_field(j, "batch_size", cfg.batch_size);
  read_field(j, "seed", cfg.seed);
  read_field(j, "workers", cfg.workers);
  cfg.validate();
  return cfg;
}

TrainConfig TrainConfig::load(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw IoError("cannot open train config file " + file.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("train config is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

AdamW::AdamW(std::vector<Tensor> params, const TrainConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    v_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (size_t p = 0; p < params_.size(); ++p) {
    Tensor& param = params_[p];
    if (!param.has_grad())
      throw UsageError("adamw_step: parameter has no gradient");
    const std::vector<float>& g = param.node()->grad;
    std::vector<float>& theta = param.data();
    if (g.size() != theta.size())
      throw UsageError("adamw_step: gradient shape mismatch");
    std::vector<double>& m = m_[p];
    std::vector<double>& v = v_[p];
    for (size_t i = 0; i < theta.size(); ++i) {
      const double gi = g[i];
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      double value = theta[i];
      value -= cfg_.lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps));
      value -= cfg_.lr * cfg_.weight_decay * static_cast<double>(theta[i]);
      theta[i] = static_cast<float>(value);
    }
  }
}

void AdamW::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

Tensor l1_penalty(const std::vector<Tensor>& params, double weight) {
  if (weight < 0.0) throw ConfigError("l1 weight must be >= 0");
  Tensor total;
  for (const Tensor& p : params) {
    Tensor term = sum_abs(p);
    total = total.defined() ? add(total, term) : term;
  }
  if (!total.defined()) return Tensor::scalar(0.0f);
  return mul_scalar(total, static_cast<float>(weight));
}

std::vector<Tensor> collect_params(Model& m) {
  std::vector<Tensor> params;
  m.visit_params([&](const std::string&, Tensor& t) { params.push_back(t); });
  return params;
}

TrainReport train(PhytNetModel& model, const DatasetManifest& manifest,
                  const DecodedCache& cache, const FoldData& data,
                  const TrainConfig& cfg, const fs::path& run_dir,
                  const BatchObserver& observer) {
  cfg.validate();
  if (data.train_idx.empty()) throw ConfigError("training split is empty");
  if (data.val_idx.empty()) throw ConfigError("validation split is empty");
  const ModelConfig& mcfg = model.config();
  const int num_classes = manifest.num_classes();
  if (num_classes > mcfg.num_classes)
    throw ConfigError("dataset has " + std::to_string(num_classes) +
                      " classes, model config allows " +
                      std::to_string(mcfg.num_classes));

  const bool persist = !run_dir.empty();
  std::ofstream metrics_out;
  if (persist) {
    std::error_code ec;
    fs::create_directories(run_dir, ec);
    if (ec) throw IoError("cannot create run directory " + run_dir.string());
    std::ofstream config_out(run_dir / "config.json");
    config_out << json{{"model", mcfg.to_json()}, {"train", cfg.to_json()}}.dump(2)
               << "\n";
    metrics_out.open(run_dir / "metrics.jsonl");
    if (!metrics_out) throw IoError("cannot write metrics.jsonl in " + run_dir.string());
  }

  std::vector<Tensor> params = collect_params(model);
  AdamW optimizer(params, cfg);

  TrainReport report;
  EarlyStopper stopper(cfg.patience);
  report.best_val_f1 = -1.0;

  std::vector<int> order = data.train_idx;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    // Seeded epoch shuffle, independent of worker count.
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", {static_cast<uint64_t>(epoch)}));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(shuffle_rng.uniform_int(
                                  0, static_cast<int64_t>(i) - 1))]);
    Rng layer_rng(derive_seed(cfg.seed, "layers", {static_cast<uint64_t>(epoch)}));

    double loss_sum = 0.0;
    ConfusionMatrix train_cm(num_classes);
    int batch_index = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(cfg.batch_size), ++batch_index) {
      const size_t end =
          std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      std::vector<int> chunk(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
      Batch batch = make_batch(cache, manifest, chunk, data.norm, mcfg.input_size,
                               /*do_augment=*/true, cfg.seed, epoch, cfg.workers);
      optimizer.zero_grad();
      Tensor logits = model.forward(batch.x, Mode::kTrain, layer_rng);
      Tensor ce = softmax_cross_entropy(logits, batch.labels);
      Tensor l1 = l1_penalty(params, cfg.l1_weight);
      Tensor loss = add(ce, l1);
      loss.backward();
      optimizer.step();

      const double loss_value = loss.item();
      loss_sum += loss_value * static_cast<double>(chunk.size());
      const std::vector<int> preds = predict_class(logits, num_classes);
      for (size_t i = 0; i < chunk.size(); ++i) train_cm.add(batch.labels[i], preds[i]);
      if (observer) observer(epoch, batch_index, ce.item(), l1.item(), loss_value);
    }

    EvalResult val = evaluate_split(model, cache, manifest, data.val_idx, data.norm,
                                    mcfg.input_size, cfg.batch_size, cfg.workers);
    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = loss_sum / static_cast<double>(order.size());
    em.train_f1 = metrics(train_cm).macro_f1;
    em.val_loss = val.loss;
    em.val_f1 = val.report.macro_f1;
    report.epochs.push_back(em);
    if (persist) {
      metrics_out << json{{"epoch", em.epoch},
                          {"train_loss", em.train_loss},
                          {"train_f1", em.train_f1},
                          {"val_loss", em.val_loss},
                          {"val_f1", em.val_f1}}
                         .dump()
                  << "\n";
      metrics_out.flush();
    }

    if (em.val_f1 > report.best_val_f1) {
      report.best_val_f1 = em.val_f1;
      report.best_epoch = epoch;
      if (persist) {
        const fs::path ckpt = run_dir / "best.ckpt";
        save_checkpoint(ckpt, mcfg, model);
        report.checkpoint_path = ckpt.string();
      }
    }

    report.stopped_epoch = epoch;
    if (stopper.observe(em.val_loss)) break;
  }
  return report;
}

}  // namespace phytnet
