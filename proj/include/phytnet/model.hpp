#pragma once

#include <filesystem>
#include <memory>

#include <json.hpp>

#include "phytnet/blocks.hpp"

namespace phytnet {

struct ModelConfig {
  int stem_channels = 16;
  std::vector<int> stage_channels = {16, 32, 64, 128};
  std::vector<int> blocks_per_stage = {1, 1, 1, 1};
  int mid_kernel = 3;
  int out_nodes = 4;
  int num_classes = 4;
  int input_size = 200;
  int groups = 8;
  bool use_se = false;
  int se_reduction = 8;
  std::string activation = "gelu";
  double survive_prob = 1.0;
  double dropout_rate = 0.0;

  void validate() const;  // throws ConfigError naming the failing field
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);  // unknown keys rejected
  static ModelConfig load(const std::filesystem::path& file);
};

class Model {
 public:
  virtual ~Model() = default;
  virtual Tensor forward(const Tensor& batch, Mode mode, Rng& rng) = 0;
  virtual void visit_params(const ParamVisitor& fn) = 0;
  // Per-sample multiply-accumulates (conv + linear only) at the given input
  // size; throws ConfigError when the spatial extent collapses to zero.
  virtual int64_t count_macs(int input_size) const = 0;
  virtual int out_nodes() const = 0;

  // Feature maps of the final convolutional stage from the last forward call
  // (pre-GAP); the Grad-CAM tap point.
  const Tensor& last_features() const { return last_features_; }

  Tensor eval_forward(const Tensor& batch) {
    Rng unused(0);
    return forward(batch, Mode::kEval, unused);
  }

 protected:
  Tensor last_features_;
};

class PhytNetModel : public Model {
 public:
  PhytNetModel(const ModelConfig& cfg, uint64_t seed);
  Tensor forward(const Tensor& batch, Mode mode, Rng& rng) override;
  void visit_params(const ParamVisitor& fn) override;
  int64_t count_macs(int input_size) const override;
  int out_nodes() const override { return cfg_.out_nodes; }
  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  Activation act_;
  Conv2dLayer stem_;
  GroupNormLayer stem_gn_;
  std::vector<BottleneckBlock> blocks_;
  LinearLayer head_;
};

// Canonical 18-layer residual net; exists to validate the parameter and FLOP
// counters against published figures.
class ResNet18Model : public Model {
 public:
  explicit ResNet18Model(int num_classes, uint64_t seed = 0);
  Tensor forward(const Tensor& batch, Mode mode, Rng& rng) override;
  void visit_params(const ParamVisitor& fn) override;
  int64_t count_macs(int input_size) const override;
  int out_nodes() const override { return num_classes_; }

 private:
  struct BasicBlock {
    Conv2dLayer conv1, conv2;
    GroupNormLayer n1, n2;
    bool has_projection = false;
    Conv2dLayer proj;
    GroupNormLayer proj_n;
  };
  int num_classes_;
  Conv2dLayer stem_;
  GroupNormLayer stem_n_;
  std::vector<BasicBlock> blocks_;
  LinearLayer head_;
};

int64_t count_params(Model& m);
// GFLOPS under the 1 MAC = 1 FLOP convention.
double count_flops(Model& m, int input_size);

struct CostReport {
  int64_t n_params = 0;
  double gflops = 0.0;
  int input_size = 0;
};
CostReport cost_report(Model& m, int input_size);

// Checkpoint: "PHYT" magic, u16 version, model config JSON, then raw
// little-endian float32 records per named parameter. Round-trips bit-exact.
void save_checkpoint(const std::filesystem::path& file, const ModelConfig& cfg, Model& m);
std::unique_ptr<PhytNetModel> load_checkpoint(const std::filesystem::path& file);

}  // namespace phytnet
