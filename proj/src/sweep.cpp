#include "phytnet/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <Eigen/Dense>

namespace phytnet {

using nlohmann::json;
namespace fs = std::filesystem;

void SweepSpace::validate() const {
  const auto ordered = [](double lo, double hi, const char* name) {
    if (!(lo <= hi))
      throw ConfigError(std::string("sweep bound ") + name + " has min > max");
  };
  ordered(kernel_min, kernel_max, "mid_kernel");
  ordered(channels_min, channels_max, "channels");
  ordered(blocks_min, blocks_max, "blocks_per_stage");
  ordered(input_min, input_max, "input_size");
  ordered(lr_min, lr_max, "lr");
  ordered(out_nodes_min, out_nodes_max, "out_nodes");
  ordered(beta1_min, beta1_max, "beta1");
  ordered(beta2_min, beta2_max, "beta2");
  if (kernel_min < 1 || kernel_min % 2 == 0 || kernel_max % 2 == 0)
    throw ConfigError("mid_kernel bounds must be odd and >= 1");
  if (channels_min < 8)
    throw ConfigError("channels bounds must be >= 8");
  if (channels_max / 8 * 8 < (channels_min + 7) / 8 * 8)
    throw ConfigError("channel range contains no multiple of 8");
  if (blocks_min < 1) throw ConfigError("blocks_per_stage bounds must be >= 1");
  if (input_min < 1) throw ConfigError("input_size bounds must be >= 1");
  if (lr_min <= 0.0) throw ConfigError("lr bounds must be > 0");
  if (out_nodes_min < 1) throw ConfigError("out_nodes bounds must be >= 1");
  if (beta1_min < 0.0 || beta1_max >= 1.0)
    throw ConfigError("beta1 bounds must lie in [0,1)");
  if (beta2_min < 0.0 || beta2_max >= 1.0)
    throw ConfigError("beta2 bounds must lie in [0,1)");
  if (stages < 1) throw ConfigError("stages must be >= 1");
}

namespace {

std::pair<double, double> bound_pair(const json& j, const char* key) {
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    throw ConfigError(std::string("sweep bound '") + key +
                      "' must be a [min,max] array");
  return {v[0].get<double>(), v[1].get<double>()};
}

}  // namespace

SweepSpace SweepSpace::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("sweep space must be a JSON object");
  static const std::vector<std::string> known = {
      "mid_kernel", "channels", "blocks_per_stage", "input_size", "lr",
      "out_nodes",  "beta1",    "beta2",            "stages",     "override"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw ConfigError("unknown key '" + it.key() + "' in sweep space");

  SweepSpace s;
  const auto int_bounds = [&](const char* key, int& lo, int& hi) {
    if (!j.contains(key)) return;
    auto [a, b] = bound_pair(j, key);
    lo = static_cast<int>(std::llround(a));
    hi = static_cast<int>(std::llround(b));
  };
  int_bounds("mid_kernel", s.kernel_min, s.kernel_max);
  int_bounds("channels", s.channels_min, s.channels_max);
  int_bounds("blocks_per_stage", s.blocks_min, s.blocks_max);
  int_bounds("input_size", s.input_min, s.input_max);
  int_bounds("out_nodes", s.out_nodes_min, s.out_nodes_max);
  if (j.contains("lr")) std::tie(s.lr_min, s.lr_max) = bound_pair(j, "lr");
  if (j.contains("beta1")) std::tie(s.beta1_min, s.beta1_max) = bound_pair(j, "beta1");
  if (j.contains("beta2")) std::tie(s.beta2_min, s.beta2_max) = bound_pair(j, "beta2");
  if (j.contains("stages")) {
    if (!j.at("stages").is_number_integer())
      throw ConfigError("sweep field 'stages' must be an integer");
    s.stages = j.at("stages").get<int>();
  }
  bool override_flag = false;
  if (j.contains("override")) {
    if (!j.at("override").is_boolean())
      throw ConfigError("sweep field 'override' must be a boolean");
    override_flag = j.at("override").get<bool>();
  }

  const SweepSpace published;
  const bool widened =
      s.kernel_min < published.kernel_min || s.kernel_max > published.kernel_max ||
      s.channels_min < published.channels_min || s.channels_max > published.channels_max ||
      s.blocks_min < published.blocks_min || s.blocks_max > published.blocks_max ||
      s.input_min < published.input_min || s.input_max > published.input_max ||
      s.lr_min < published.lr_min || s.lr_max > published.lr_max ||
      s.out_nodes_min < published.out_nodes_min || s.out_nodes_max > published.out_nodes_max ||
      s.beta1_min < published.beta1_min || s.beta1_max > published.beta1_max ||
      s.beta2_min < published.beta2_min || s.beta2_max > published.beta2_max;
  if (widened && !override_flag)
    throw ConfigError(
        "sweep bounds exceed the published ranges; set \"override\": true to "
        "accept them");
  s.validate();
  return s;
}

SweepSpace SweepSpace::load(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw IoError("cannot open sweep space file " + file.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("sweep space is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

namespace {

double encode_unit(double v, double lo, double hi) {
  return hi > lo ? (v - lo) / (hi - lo) : 0.0;
}

int snap_round(double v, int lo, int hi) {
  return std::clamp(static_cast<int>(std::llround(v)), lo, hi);
}

}  // namespace

Candidate sample_space(const SweepSpace& space, Rng& rng) {
  space.validate();
  std::array<double, kSweepDims> u{};
  for (double& x : u) x = rng.uniform();

  const double kv =
      space.kernel_min + u[0] * (space.kernel_max - space.kernel_min);
  int kernel = space.kernel_min +
               2 * static_cast<int>(std::llround((kv - space.kernel_min) / 2.0));
  kernel = std::clamp(kernel, space.kernel_min, space.kernel_max);

  constexpr int kChannelStep = 8;  // default group-norm group count
  const double cv =
      space.channels_min + u[1] * (space.channels_max - space.channels_min);
  const int c_lo = (space.channels_min + kChannelStep - 1) / kChannelStep * kChannelStep;
  const int c_hi = space.channels_max / kChannelStep * kChannelStep;
  const int channels = std::clamp(
      static_cast<int>(std::llround(cv / kChannelStep)) * kChannelStep, c_lo, c_hi);

  const int blocks = snap_round(
      space.blocks_min + u[2] * (space.blocks_max - space.blocks_min),
      space.blocks_min, space.blocks_max);
  const int input = snap_round(
      space.input_min + u[3] * (space.input_max - space.input_min),
      space.input_min, space.input_max);
  const double log_lo = std::log(space.lr_min), log_hi = std::log(space.lr_max);
  const double lr = std::exp(log_lo + u[4] * (log_hi - log_lo));
  const int out_nodes = snap_round(
      space.out_nodes_min + u[5] * (space.out_nodes_max - space.out_nodes_min),
      space.out_nodes_min, space.out_nodes_max);
  const double beta1 = space.beta1_min + u[6] * (space.beta1_max - space.beta1_min);
  const double beta2 = space.beta2_min + u[7] * (space.beta2_max - space.beta2_min);

  ModelConfig m;
  m.stem_channels = channels;
  m.stage_channels.assign(static_cast<size_t>(space.stages), channels);
  m.blocks_per_stage.assign(static_cast<size_t>(space.stages), blocks);
  m.mid_kernel = kernel;
  m.out_nodes = out_nodes;
  m.input_size = input;
  TrainConfig t;
  t.lr = lr;
  t.beta1 = beta1;
  t.beta2 = beta2;

  Candidate c;
  c.encoded = {encode_unit(kernel, space.kernel_min, space.kernel_max),
               encode_unit(channels, space.channels_min, space.channels_max),
               encode_unit(blocks, space.blocks_min, space.blocks_max),
               encode_unit(input, space.input_min, space.input_max),
               encode_unit(std::log(lr), log_lo, log_hi),
               encode_unit(out_nodes, space.out_nodes_min, space.out_nodes_max),
               encode_unit(beta1, space.beta1_min, space.beta1_max),
               encode_unit(beta2, space.beta2_min, space.beta2_max)};
  c.config = json{{"model", m.to_json()}, {"train", t.to_json()}};
  return c;
}

GateVerdict gate_verdict(int64_t n_params, double gflops) {
  GateVerdict v;
  v.n_params = n_params;
  v.gflops = gflops;
  if (n_params > 2'000'000) v.reasons.push_back("params");
  if (gflops > 6.0) v.reasons.push_back("gflops");
  v.pass = v.reasons.empty();
  return v;
}

GateVerdict constraint_gate(const ModelConfig& cfg) {
  cfg.validate();
  PhytNetModel shell(cfg, 0);
  return gate_verdict(count_params(shell), count_flops(shell, cfg.input_size));
}

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd kernel_matrix(const std::vector<std::vector<double>>& x,
                       const std::vector<double>& ls, double sf2) {
  const int n = static_cast<int>(x.size());
  const int d = static_cast<int>(ls.size());
  MatrixXd k(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double q = 0.0;
      for (int dd = 0; dd < d; ++dd) {
        const double t = (x[static_cast<size_t>(i)][static_cast<size_t>(dd)] -
                          x[static_cast<size_t>(j)][static_cast<size_t>(dd)]) /
                         ls[static_cast<size_t>(dd)];
        q += t * t;
      }
      k(i, j) = k(j, i) = sf2 * std::exp(-0.5 * q);
    }
  }
  return k;
}

// LLT with diagonal jitter escalation 1e-8 -> 1e-4 on failure.
Eigen::LLT<MatrixXd> factorize_with_jitter(const MatrixXd& k) {
  Eigen::LLT<MatrixXd> llt(k);
  if (llt.info() == Eigen::Success) return llt;
  for (double jitter = 1e-8; jitter <= 1.5e-4; jitter *= 10.0) {
    llt.compute(k + jitter * MatrixXd::Identity(k.rows(), k.cols()));
    if (llt.info() == Eigen::Success) return llt;
  }
  throw NumericError("gp kernel matrix is not positive definite even with jitter");
}

struct LmlResult {
  double lml = 0.0;
  VectorXd grad;  // d/d(log ls_0..D-1), d/d(log sf2)
};

LmlResult lml_and_grad(const std::vector<std::vector<double>>& x, const VectorXd& y,
                       const std::vector<double>& ls, double sf2, double noise) {
  const int n = static_cast<int>(y.size());
  const int d = static_cast<int>(ls.size());
  const MatrixXd ks = kernel_matrix(x, ls, sf2);
  const MatrixXd k = ks + noise * MatrixXd::Identity(n, n);
  const Eigen::LLT<MatrixXd> llt = factorize_with_jitter(k);
  const VectorXd alpha = llt.solve(y);
  const MatrixXd kinv = llt.solve(MatrixXd::Identity(n, n));

  LmlResult r;
  r.lml = -0.5 * y.dot(alpha) -
          0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
  const MatrixXd l = llt.matrixL();
  for (int i = 0; i < n; ++i) r.lml -= std::log(l(i, i));

  const MatrixXd m = alpha * alpha.transpose() - kinv;
  r.grad.resize(d + 1);
  for (int dd = 0; dd < d; ++dd) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const double t = (x[static_cast<size_t>(i)][static_cast<size_t>(dd)] -
                          x[static_cast<size_t>(j)][static_cast<size_t>(dd)]) /
                         ls[static_cast<size_t>(dd)];
        acc += m(i, j) * ks(i, j) * t * t;
      }
    }
    r.grad(dd) = 0.5 * acc;
  }
  r.grad(d) = 0.5 * (m.array() * ks.array()).sum();
  return r;
}

constexpr double kLogLsMin = -4.605170185988091;  // log 1e-2
constexpr double kLogLsMax = 4.605170185988091;   // log 1e2
constexpr double kLogSfMin = -9.210340371976182;  // log 1e-4
constexpr double kLogSfMax = 9.210340371976182;   // log 1e4

}  // namespace

GpSurrogate GpSurrogate::fit(const std::vector<std::vector<double>>& x,
                             const std::vector<double>& y, double noise_var,
                             uint64_t seed) {
  if (x.empty() || x.size() != y.size())
    throw UsageError("gp fit needs matching, non-empty inputs and targets");
  const size_t d = x.front().size();
  if (d == 0) throw UsageError("gp fit needs at least one input dimension");
  for (const std::vector<double>& row : x)
    if (row.size() != d) throw UsageError("gp inputs have inconsistent dimensions");
  if (noise_var < 0.0) throw ConfigError("gp noise variance must be >= 0");

  GpSurrogate gp;
  gp.x_ = x;
  gp.noise_var_ = noise_var;
  const size_t n = y.size();
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  double sd = std::sqrt(var);
  if (sd < 1e-12) sd = 1.0;
  gp.y_mean_ = mean;
  gp.y_sd_ = sd;
  gp.y_std_.resize(n);
  for (size_t i = 0; i < n; ++i) gp.y_std_[i] = (y[i] - mean) / sd;
  const VectorXd ys = Eigen::Map<const VectorXd>(gp.y_std_.data(),
                                                 static_cast<Eigen::Index>(n));

  Rng restart_rng(derive_seed(seed, "gp-restarts"));
  constexpr int kRestarts = 4;
  constexpr int kIters = 120;
  constexpr double kLr = 0.05;
  double best_lml = -std::numeric_limits<double>::infinity();
  VectorXd best_theta;
  for (int restart = 0; restart < kRestarts; ++restart) {
    VectorXd theta(static_cast<Eigen::Index>(d) + 1);
    if (restart == 0) {
      for (size_t dd = 0; dd < d; ++dd)
        theta(static_cast<Eigen::Index>(dd)) = std::log(0.5);
      theta(static_cast<Eigen::Index>(d)) = 0.0;
    } else {
      for (size_t dd = 0; dd < d; ++dd)
        theta(static_cast<Eigen::Index>(dd)) =
            restart_rng.uniform(std::log(0.1), std::log(2.0));
      theta(static_cast<Eigen::Index>(d)) =
          restart_rng.uniform(std::log(0.25), std::log(4.0));
    }
    VectorXd m_adam = VectorXd::Zero(theta.size());
    VectorXd v_adam = VectorXd::Zero(theta.size());
    for (int it = 1; it <= kIters; ++it) {
      std::vector<double> ls(d);
      for (size_t dd = 0; dd < d; ++dd)
        ls[dd] = std::exp(theta(static_cast<Eigen::Index>(dd)));
      const double sf2 = std::exp(theta(static_cast<Eigen::Index>(d)));
      LmlResult res;
      try {
        res = lml_and_grad(x, ys, ls, sf2, noise_var);
      } catch (const NumericError&) {
        break;
      }
      m_adam = 0.9 * m_adam + 0.1 * res.grad;
      v_adam = 0.999 * v_adam + 0.001 * res.grad.cwiseProduct(res.grad);
      const double c1 = 1.0 - std::pow(0.9, it);
      const double c2 = 1.0 - std::pow(0.999, it);
      for (Eigen::Index p = 0; p < theta.size(); ++p) {
        const double step = kLr * (m_adam(p) / c1) /
                            (std::sqrt(v_adam(p) / c2) + 1e-8);
        theta(p) += step;  // ascent
      }
      for (size_t dd = 0; dd < d; ++dd)
        theta(static_cast<Eigen::Index>(dd)) = std::clamp(
            theta(static_cast<Eigen::Index>(dd)), kLogLsMin, kLogLsMax);
      theta(static_cast<Eigen::Index>(d)) =
          std::clamp(theta(static_cast<Eigen::Index>(d)), kLogSfMin, kLogSfMax);
    }
    std::vector<double> ls(d);
    for (size_t dd = 0; dd < d; ++dd)
      ls[dd] = std::exp(theta(static_cast<Eigen::Index>(dd)));
    const double sf2 = std::exp(theta(static_cast<Eigen::Index>(d)));
    try {
      const LmlResult res = lml_and_grad(x, ys, ls, sf2, noise_var);
      if (res.lml > best_lml) {
        best_lml = res.lml;
        best_theta = theta;
      }
    } catch (const NumericError&) {
      // this restart diverged; keep the best of the others
    }
  }
  if (best_theta.size() == 0) {
    best_theta.resize(static_cast<Eigen::Index>(d) + 1);
    for (size_t dd = 0; dd < d; ++dd)
      best_theta(static_cast<Eigen::Index>(dd)) = std::log(0.5);
    best_theta(static_cast<Eigen::Index>(d)) = 0.0;
  }
  gp.length_scales_.resize(d);
  for (size_t dd = 0; dd < d; ++dd)
    gp.length_scales_[dd] = std::exp(best_theta(static_cast<Eigen::Index>(dd)));
  gp.signal_var_ = std::exp(best_theta(static_cast<Eigen::Index>(d)));
  gp.factorize();
  return gp;
}

GpSurrogate GpSurrogate::fit_fixed(const std::vector<std::vector<double>>& x,
                                   const std::vector<double>& y,
                                   const std::vector<double>& length_scales,
                                   double signal_var, double noise_var) {
  if (x.empty() || x.size() != y.size())
    throw UsageError("gp fit needs matching, non-empty inputs and targets");
  const size_t d = x.front().size();
  for (const std::vector<double>& row : x)
    if (row.size() != d) throw UsageError("gp inputs have inconsistent dimensions");
  if (length_scales.size() != d)
    throw UsageError("gp needs one length-scale per input dimension");
  for (double ls : length_scales)
    if (!(ls > 0.0)) throw ConfigError("gp length-scales must be > 0");
  if (!(signal_var > 0.0)) throw ConfigError("gp signal variance must be > 0");
  if (noise_var < 0.0) throw ConfigError("gp noise variance must be >= 0");

  GpSurrogate gp;
  gp.x_ = x;
  gp.length_scales_ = length_scales;
  gp.signal_var_ = signal_var;
  gp.noise_var_ = noise_var;
  const size_t n = y.size();
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  double sd = std::sqrt(var);
  if (sd < 1e-12) sd = 1.0;
  gp.y_mean_ = mean;
  gp.y_sd_ = sd;
  gp.y_std_.resize(n);
  for (size_t i = 0; i < n; ++i) gp.y_std_[i] = (y[i] - mean) / sd;
  gp.factorize();
  return gp;
}

void GpSurrogate::factorize() {
  const int n = static_cast<int>(x_.size());
  const MatrixXd k = kernel_matrix(x_, length_scales_, signal_var_) +
                     noise_var_ * MatrixXd::Identity(n, n);
  const Eigen::LLT<MatrixXd> llt = factorize_with_jitter(k);
  const VectorXd ys = Eigen::Map<const VectorXd>(y_std_.data(), n);
  const VectorXd alpha = llt.solve(ys);
  alpha_.assign(alpha.data(), alpha.data() + n);
  const MatrixXd l = llt.matrixL();
  chol_.assign(static_cast<size_t>(n) * static_cast<size_t>(n), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j)
      chol_[static_cast<size_t>(i) * static_cast<size_t>(n) +
            static_cast<size_t>(j)] = l(i, j);
}

GpSurrogate::Posterior GpSurrogate::posterior(const std::vector<double>& x) const {
  if (x.size() != length_scales_.size())
    throw UsageError("gp query dimension mismatch");
  const size_t n = x_.size();
  std::vector<double> kstar(n);
  for (size_t i = 0; i < n; ++i) {
    double q = 0.0;
    for (size_t dd = 0; dd < x.size(); ++dd) {
      const double t = (x[dd] - x_[i][dd]) / length_scales_[dd];
      q += t * t;
    }
    kstar[i] = signal_var_ * std::exp(-0.5 * q);
  }
  double mu_std = 0.0;
  for (size_t i = 0; i < n; ++i) mu_std += kstar[i] * alpha_[i];
  // v = L^{-1} k*, forward substitution on the stored lower factor.
  std::vector<double> v(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    double s = kstar[i];
    for (size_t j = 0; j < i; ++j) s -= chol_[i * n + j] * v[j];
    v[i] = s / chol_[i * n + i];
  }
  double var = signal_var_;
  for (size_t i = 0; i < n; ++i) var -= v[i] * v[i];
  if (var < 1e-12) var = 0.0;
  Posterior p;
  p.mu = y_mean_ + y_sd_ * mu_std;
  p.sigma = y_sd_ * std::sqrt(var);
  return p;
}

double GpSurrogate::prior_sd() const { return y_sd_ * std::sqrt(signal_var_); }

double expected_improvement(double mu, double sigma, double best) {
  if (sigma < 0.0) throw UsageError("expected_improvement: sigma must be >= 0");
  const double delta = mu - best;
  if (sigma == 0.0) return std::max(delta, 0.0);
  const double z = delta / sigma;
  const double big_phi = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double small_phi =
      std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return std::max(0.0, delta * big_phi + sigma * small_phi);
}

SpaceAdapter make_phytnet_adapter(const SweepSpace& space) {
  space.validate();
  SpaceAdapter adapter;
  adapter.dims = kSweepDims;
  adapter.sample = [space](Rng& rng) { return sample_space(space, rng); };
  adapter.gate = [](const Candidate& c) {
    const ModelConfig m = ModelConfig::from_json(c.config.at("model"));
    return constraint_gate(m);
  };
  return adapter;
}

Candidate propose_next(const GpSurrogate& gp, const SpaceAdapter& adapter,
                       double best, Rng& rng, int n_candidates) {
  if (n_candidates < 1) throw ConfigError("n_candidates must be >= 1");
  if (!adapter.sample) throw UsageError("space adapter has no sampler");
  Candidate chosen;
  double best_ei = -1.0;
  for (int i = 0; i < n_candidates; ++i) {
    Candidate c = adapter.sample(rng);
    const GpSurrogate::Posterior post = gp.posterior(c.encoded);
    const double ei = expected_improvement(post.mu, post.sigma, best);
    if (ei > best_ei) {
      best_ei = ei;
      chosen = std::move(c);
    }
  }
  return chosen;
}

json Trial::to_json() const {
  json j{{"config", candidate.config},
         {"encoded", candidate.encoded},
         {"status", status},
         {"n_params", n_params},
         {"gflops", gflops},
         {"log_version", log_version}};
  if (val_f1)
    j["val_f1"] = *val_f1;
  else
    j["val_f1"] = nullptr;
  return j;
}

Trial Trial::from_json(const json& j) {
  Trial t;
  try {
    t.candidate.config = j.at("config");
    t.candidate.encoded = j.at("encoded").get<std::vector<double>>();
    t.status = j.at("status").get<std::string>();
    if (j.contains("val_f1") && !j.at("val_f1").is_null())
      t.val_f1 = j.at("val_f1").get<double>();
    t.n_params = j.at("n_params").get<int64_t>();
    t.gflops = j.at("gflops").get<double>();
    t.log_version = j.at("log_version").get<int>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed trial record: ") + e.what());
  }
  if (t.status != "gated_out" && t.status != "trained" && t.status != "failed")
    throw DataError("trial record has unknown status '" + t.status + "'");
  if (t.status == "gated_out" && t.val_f1)
    throw DataError("gated-out trial carries a val_f1");
  return t;
}

SweepResult run_sweep(int budget, const TrialEvaluator& evaluator,
                      const SpaceAdapter& adapter, uint64_t seed,
                      const fs::path& log_path, int init_random,
                      int n_candidates) {
  if (init_random < 1) throw ConfigError("init_random must be >= 1");
  if (budget < init_random)
    throw ConfigError("budget must be >= init_random");
  if (n_candidates < 1) throw ConfigError("n_candidates must be >= 1");
  if (!evaluator) throw UsageError("run_sweep needs an evaluator");
  if (!adapter.sample || !adapter.gate)
    throw UsageError("run_sweep needs a complete space adapter");

  SweepResult result;
  std::ofstream log;
  if (!log_path.empty()) {
    if (fs::exists(log_path)) {
      std::ifstream is(log_path);
      if (!is) throw IoError("cannot open trial log " + log_path.string());
      std::string line;
      while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j;
        try {
          j = json::parse(line);
        } catch (const json::parse_error& e) {
          throw DataError(std::string("trial log line is not valid JSON: ") +
                          e.what());
        }
        result.trials.push_back(Trial::from_json(j));
      }
    }
    log.open(log_path, std::ios::app);
    if (!log) throw IoError("cannot append to trial log " + log_path.string());
  }

  for (int i = static_cast<int>(result.trials.size()); i < budget; ++i) {
    Rng trial_rng(derive_seed(seed, "trial", {static_cast<uint64_t>(i)}));
    std::vector<std::vector<double>> xs;
    std::vector<double> ys;
    for (const Trial& t : result.trials) {
      if (t.status == "trained" && t.val_f1) {
        xs.push_back(t.candidate.encoded);
        ys.push_back(*t.val_f1);
      }
    }
    Candidate cand;
    if (i < init_random || xs.empty()) {
      cand = adapter.sample(trial_rng);
    } else {
      const GpSurrogate gp = GpSurrogate::fit(
          xs, ys, 1e-4, derive_seed(seed, "gp", {static_cast<uint64_t>(i)}));
      const double incumbent = *std::max_element(ys.begin(), ys.end());
      cand = propose_next(gp, adapter, incumbent, trial_rng, n_candidates);
    }

    Trial trial;
    trial.candidate = std::move(cand);
    trial.log_version = i;
    try {
      const GateVerdict verdict = adapter.gate(trial.candidate);
      trial.n_params = verdict.n_params;
      trial.gflops = verdict.gflops;
      if (!verdict.pass) {
        trial.status = "gated_out";
      } else {
        trial.val_f1 = evaluator(trial.candidate);
        trial.status = "trained";
      }
    } catch (const std::exception&) {
      trial.status = "failed";
      trial.val_f1.reset();
    }
    if (log.is_open()) {
      log << trial.to_json().dump() << "\n";
      log.flush();
    }
    result.trials.push_back(std::move(trial));
  }

  double best = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < result.trials.size(); ++i) {
    const Trial& t = result.trials[i];
    if (t.status == "trained" && t.val_f1 && *t.val_f1 > best) {
      best = *t.val_f1;
      result.best_index = i;
    }
  }
  return result;
}

}  // namespace phytnet
