#pragma once

#include <optional>
#include <string>

#include "phytnet/ops.hpp"

namespace phytnet {

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)); the init scheme for every weight.
Tensor init_fan_in(std::vector<int> shape, int fan_in, Rng& rng);

using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

struct Conv2dLayer {
  Tensor w;  // [Cout,Cin,kh,kw]
  Tensor b;  // [Cout], undefined when bias-free
  int stride = 1;
  int padding = 0;

  Conv2dLayer() = default;
  Conv2dLayer(int cin, int cout, int k, int stride, int padding, bool bias, Rng& rng);
  Tensor forward(const Tensor& x) const { return conv2d(x, w, b, stride, padding); }
  void visit(const std::string& prefix, const ParamVisitor& fn);
  // Per-sample MACs given input spatial dims; writes the output dims.
  int64_t macs(int h, int wd, int* out_h, int* out_w) const;
};

struct GroupNormLayer {
  Tensor gamma, beta;  // [C]
  int groups = 1;
  float eps = 1e-5f;

  GroupNormLayer() = default;
  GroupNormLayer(int channels, int groups, float eps = 1e-5f);
  Tensor forward(const Tensor& x) const { return group_norm(x, groups, gamma, beta, eps); }
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct LinearLayer {
  Tensor w;  // [Dout,Din]
  Tensor b;  // [Dout]

  LinearLayer() = default;
  LinearLayer(int din, int dout, Rng& rng);
  Tensor forward(const Tensor& x) const { return linear(x, w, b); }
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Per-channel gate from GAP features through a two-layer bottleneck.
struct SqueezeExcite {
  LinearLayer fc1, fc2;
  Activation act = Activation::kGelu;
  int channels = 0;

  SqueezeExcite() = default;
  SqueezeExcite(int channels, int reduction, Activation act, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void visit(const std::string& prefix, const ParamVisitor& fn);
  int64_t macs() const;
};

struct BlockConfig {
  int in_channels = 0;
  int out_channels = 0;
  int mid_kernel = 3;
  int stride = 1;
  int groups = 8;
  bool use_se = false;
  int se_reduction = 8;
  float survive_prob = 1.0f;
  Activation activation = Activation::kGelu;

  void validate() const;  // throws ConfigError naming the failing field
};

// Residual bottleneck: 1x1 reduce -> GN -> act -> kxk (stride) -> GN -> act ->
// 1x1 expand -> GN -> optional SE -> stochastic depth; added to an identity or
// projected shortcut, then activated.
struct BottleneckBlock {
  BlockConfig cfg;
  int mid = 0;
  Conv2dLayer conv1, conv2, conv3;
  GroupNormLayer gn1, gn2, gn3;
  std::optional<SqueezeExcite> se;
  bool has_projection = false;
  Conv2dLayer proj;
  GroupNormLayer proj_gn;

  BottleneckBlock() = default;
  BottleneckBlock(const BlockConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& x, Mode mode, Rng& rng) const;
  void visit(const std::string& prefix, const ParamVisitor& fn);
  int64_t macs(int h, int w, int* out_h, int* out_w) const;
};

int gcd_groups(int groups, int channels);

}  // namespace phytnet
