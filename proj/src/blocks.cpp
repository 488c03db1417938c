#include "phytnet/blocks.hpp"

#include <cmath>
#include <numeric>

namespace phytnet {

Tensor init_fan_in(std::vector<int> shape, int fan_in, Rng& rng) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
  return Tensor::uniform(std::move(shape), -bound, bound, rng, /*requires_grad=*/true);
}

int gcd_groups(int groups, int channels) {
  const int g = std::gcd(groups, channels);
  return g < 1 ? 1 : g;
}

Conv2dLayer::Conv2dLayer(int cin, int cout, int k, int stride, int padding, bool bias,
                         Rng& rng)
    : stride(stride), padding(padding) {
  const int fan_in = cin * k * k;
  w = init_fan_in({cout, cin, k, k}, fan_in, rng);
  if (bias) b = init_fan_in({cout}, fan_in, rng);
}

void Conv2dLayer::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".w", w);
  if (b.defined()) fn(prefix + ".b", b);
}

int64_t Conv2dLayer::macs(int h, int wd, int* out_h, int* out_w) const {
  const int k = w.dim(2);
  const int ho = conv_out_size(h, k, stride, padding);
  const int wo = conv_out_size(wd, k, stride, padding);
  if (ho < 1 || wo < 1)
    throw ConfigError("input " + std::to_string(h) + "x" + std::to_string(wd) +
                      " collapses to zero spatial extent");
  if (out_h) *out_h = ho;
  if (out_w) *out_w = wo;
  return static_cast<int64_t>(w.dim(0)) * w.dim(1) * k * k * ho * wo;
}

GroupNormLayer::GroupNormLayer(int channels, int groups, float eps)
    : groups(groups), eps(eps) {
  gamma = Tensor::full({channels}, 1.0f, /*requires_grad=*/true);
  beta = Tensor::zeros({channels}, /*requires_grad=*/true);
}

void GroupNormLayer::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".gamma", gamma);
  fn(prefix + ".beta", beta);
}

LinearLayer::LinearLayer(int din, int dout, Rng& rng) {
  w = init_fan_in({dout, din}, din, rng);
  b = init_fan_in({dout}, din, rng);
}

void LinearLayer::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".w", w);
  fn(prefix + ".b", b);
}

SqueezeExcite::SqueezeExcite(int channels, int reduction, Activation act, Rng& rng)
    : act(act), channels(channels) {
  if (reduction < 1 || reduction > channels)
    throw ConfigError("se_reduction " + std::to_string(reduction) +
                      " outside [1, channels=" + std::to_string(channels) + "]");
  const int mid = std::max(1, channels / reduction);
  fc1 = LinearLayer(channels, mid, rng);
  fc2 = LinearLayer(mid, channels, rng);
}

Tensor SqueezeExcite::forward(const Tensor& x) const {
  const int n = x.dim(0), c = x.dim(1);
  Tensor squeezed = reshape(pool(x, PoolKind::kGlobalAvg, 0, 0), {n, c});
  Tensor gate = sigmoid(fc2.forward(activation(fc1.forward(squeezed), act)));
  return scale_channels(x, gate);
}

void SqueezeExcite::visit(const std::string& prefix, const ParamVisitor& fn) {
  fc1.visit(prefix + ".fc1", fn);
  fc2.visit(prefix + ".fc2", fn);
}

int64_t SqueezeExcite::macs() const {
  const int mid = fc1.w.dim(0);
  return static_cast<int64_t>(channels) * mid + static_cast<int64_t>(mid) * channels;
}

void BlockConfig::validate() const {
  if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
  if (out_channels < 1) throw ConfigError("out_channels must be >= 1");
  if (mid_kernel < 1 || mid_kernel > 19 || mid_kernel % 2 == 0)
    throw ConfigError("mid_kernel must be an odd integer in [1,19], got " +
                      std::to_string(mid_kernel));
  if (stride != 1 && stride != 2)
    throw ConfigError("stride must be 1 or 2, got " + std::to_string(stride));
  if (groups < 1) throw ConfigError("groups must be >= 1");
  if (out_channels % groups != 0)
    throw ConfigError("groups " + std::to_string(groups) +
                      " does not divide out_channels " + std::to_string(out_channels));
  if (use_se && (se_reduction < 1 || se_reduction > out_channels))
    throw ConfigError("se_reduction " + std::to_string(se_reduction) +
                      " outside [1, out_channels=" + std::to_string(out_channels) + "]");
  if (!(survive_prob > 0.0f) || survive_prob > 1.0f)
    throw ConfigError("survive_prob must be in (0,1], got " +
                      std::to_string(survive_prob));
}

BottleneckBlock::BottleneckBlock(const BlockConfig& cfg_in, Rng& rng) : cfg(cfg_in) {
  cfg.validate();
  mid = std::max(1, cfg.out_channels / 4);
  // The reduced width need not be divisible by the configured group count;
  // its norms fall back to the largest compatible divisor.
  const int mid_groups = gcd_groups(cfg.groups, mid);
  const int pad = (cfg.mid_kernel - 1) / 2;

  conv1 = Conv2dLayer(cfg.in_channels, mid, 1, 1, 0, /*bias=*/false, rng);
  gn1 = GroupNormLayer(mid, mid_groups);
  conv2 = Conv2dLayer(mid, mid, cfg.mid_kernel, cfg.stride, pad, /*bias=*/false, rng);
  gn2 = GroupNormLayer(mid, mid_groups);
  conv3 = Conv2dLayer(mid, cfg.out_channels, 1, 1, 0, /*bias=*/false, rng);
  gn3 = GroupNormLayer(cfg.out_channels, cfg.groups);
  if (cfg.use_se) se.emplace(cfg.out_channels, cfg.se_reduction, cfg.activation, rng);
  has_projection = cfg.stride != 1 || cfg.in_channels != cfg.out_channels;
  if (has_projection) {
    proj = Conv2dLayer(cfg.in_channels, cfg.out_channels, 1, cfg.stride, 0,
                       /*bias=*/false, rng);
    proj_gn = GroupNormLayer(cfg.out_channels, cfg.groups);
  }
}

Tensor BottleneckBlock::forward(const Tensor& x, Mode mode, Rng& rng) const {
  if (x.dim(1) != cfg.in_channels)
    throw ConfigError("block expects " + std::to_string(cfg.in_channels) +
                      " input channels, got " + std::to_string(x.dim(1)));
  Tensor h = activation(gn1.forward(conv1.forward(x)), cfg.activation);
  h = activation(gn2.forward(conv2.forward(h)), cfg.activation);
  h = gn3.forward(conv3.forward(h));
  if (se) h = se->forward(h);
  h = stochastic_depth(h, cfg.survive_prob, mode, rng);
  Tensor shortcut = has_projection ? proj_gn.forward(proj.forward(x)) : x;
  return activation(add(h, shortcut), cfg.activation);
}

void BottleneckBlock::visit(const std::string& prefix, const ParamVisitor& fn) {
  conv1.visit(prefix + ".conv1", fn);
  gn1.visit(prefix + ".gn1", fn);
  conv2.visit(prefix + ".conv2", fn);
  gn2.visit(prefix + ".gn2", fn);
  conv3.visit(prefix + ".conv3", fn);
  gn3.visit(prefix + ".gn3", fn);
  if (se) se->visit(prefix + ".se", fn);
  if (has_projection) {
    proj.visit(prefix + ".proj", fn);
    proj_gn.visit(prefix + ".proj_gn", fn);
  }
}

int64_t BottleneckBlock::macs(int h, int w, int* out_h, int* out_w) const {
  int h1 = 0, w1 = 0;
  int64_t total = conv1.macs(h, w, &h1, &w1);
  int h2 = 0, w2 = 0;
  total += conv2.macs(h1, w1, &h2, &w2);
  total += conv3.macs(h2, w2, nullptr, nullptr);
  if (has_projection) total += proj.macs(h, w, nullptr, nullptr);
  if (se) total += se->macs();
  if (out_h) *out_h = h2;
  if (out_w) *out_w = w2;
  return total;
}

}  // namespace phytnet
