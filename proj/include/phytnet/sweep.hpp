#pragma once

#include <optional>

#include "phytnet/model.hpp"
#include "phytnet/train.hpp"

namespace phytnet {

// Bounded mixed search space. The defaults are the published ranges; a
// definition file may widen them only with "override": true.
struct SweepSpace {
  int kernel_min = 1, kernel_max = 19;  // odd
  int channels_min = 16, channels_max = 128;
  int blocks_min = 1, blocks_max = 4;
  int input_min = 200, input_max = 500;
  double lr_min = 1e-6, lr_max = 1e-3;  // log-uniform
  int out_nodes_min = 4, out_nodes_max = 10;
  double beta1_min = 0.88, beta1_max = 0.99;
  double beta2_min = 0.93, beta2_max = 0.999;
  int stages = 4;

  void validate() const;
  static SweepSpace from_json(const nlohmann::json& j);
  static SweepSpace load(const std::filesystem::path& file);
};

inline constexpr int kSweepDims = 8;

// One point of a search space: unit-cube coordinates for the surrogate plus
// the decoded, human-readable configuration.
struct Candidate {
  std::vector<double> encoded;
  nlohmann::json config;
};

// Uniform draw (lr log-uniform) with integers snapped to valid values: the
// kernel to odd, channel counts to a multiple of the group-norm group count.
// Coordinates are re-encoded after snapping. config = {"model":…, "train":…}
// with one channel/block count applied across all stages.
Candidate sample_space(const SweepSpace& space, Rng& rng);

struct GateVerdict {
  bool pass = true;
  std::vector<std::string> reasons;  // "params", "gflops"
  int64_t n_params = 0;
  double gflops = 0.0;
};

// Strict thresholds: terminate iff n_params > 2,000,000 or gflops > 6.0;
// boundary values pass.
GateVerdict gate_verdict(int64_t n_params, double gflops);
// Builds the model shell and applies gate_verdict at cfg.input_size.
GateVerdict constraint_gate(const ModelConfig& cfg);

// ARD squared-exponential Gaussian-process regressor over the unit cube.
// Outputs are standardized internally and de-standardized on query; posterior
// variances below 1e-12 are clamped to zero.
class GpSurrogate {
 public:
  // Hyperparameters by multi-restart log-marginal-likelihood gradient ascent;
  // the noise variance is held fixed. A failing factorization escalates
  // diagonal jitter 1e-8 -> 1e-4 before raising NumericError.
  static GpSurrogate fit(const std::vector<std::vector<double>>& x,
                         const std::vector<double>& y, double noise_var = 1e-6,
                         uint64_t seed = 0);
  // Fixed hyperparameters, no ascent — the dense-oracle entry point.
  static GpSurrogate fit_fixed(const std::vector<std::vector<double>>& x,
                               const std::vector<double>& y,
                               const std::vector<double>& length_scales,
                               double signal_var, double noise_var);

  struct Posterior {
    double mu = 0.0;
    double sigma = 0.0;
  };
  Posterior posterior(const std::vector<double>& x) const;

  const std::vector<double>& length_scales() const { return length_scales_; }
  double signal_variance() const { return signal_var_; }
  double noise_variance() const { return noise_var_; }
  double prior_mean() const { return y_mean_; }
  double prior_sd() const;
  int64_t n_observations() const { return static_cast<int64_t>(y_std_.size()); }

 private:
  GpSurrogate() = default;
  void factorize();

  std::vector<std::vector<double>> x_;
  std::vector<double> y_std_;    // standardized targets
  std::vector<double> alpha_;    // (K + noise I)^-1 y_std
  std::vector<double> chol_;     // row-major lower Cholesky factor
  std::vector<double> length_scales_;
  double signal_var_ = 1.0;
  double noise_var_ = 1e-6;
  double y_mean_ = 0.0;
  double y_sd_ = 1.0;
};

// Maximization form: EI = (mu-best)*Phi(z) + sigma*phi(z), z = (mu-best)/sigma;
// max(mu-best, 0) when sigma is zero.
double expected_improvement(double mu, double sigma, double best);

// Hooks that let the sweep loop run over any bounded space (the production
// space or a toy test space).
struct SpaceAdapter {
  int dims = 0;
  std::function<Candidate(Rng&)> sample;
  std::function<GateVerdict(const Candidate&)> gate;
};

SpaceAdapter make_phytnet_adapter(const SweepSpace& space);

// EI argmax over n_candidates fresh draws; ties resolve to the first.
Candidate propose_next(const GpSurrogate& gp, const SpaceAdapter& adapter,
                       double best, Rng& rng, int n_candidates);

struct Trial {
  Candidate candidate;
  std::string status;  // "gated_out" | "trained" | "failed"
  std::optional<double> val_f1;
  int64_t n_params = 0;
  double gflops = 0.0;
  int log_version = 0;  // trials on record when this one was proposed

  nlohmann::json to_json() const;
  static Trial from_json(const nlohmann::json& j);
};

struct SweepResult {
  std::vector<Trial> trials;
  std::optional<size_t> best_index;  // highest val_f1 among trained trials
};

using TrialEvaluator = std::function<double(const Candidate&)>;

// Budgeted Bayesian loop: init_random gated random trials, then GP fit on the
// trained trials and EI proposals. Gated-out trials consume budget; evaluator
// failures mark the trial failed and continue. Every trial is appended to the
// JSONL log (when log_path is non-empty); an existing log is replayed first,
// and per-trial seeding makes the continuation identical to an uninterrupted
// run.
SweepResult run_sweep(int budget, const TrialEvaluator& evaluator,
                      const SpaceAdapter& adapter, uint64_t seed,
                      const std::filesystem::path& log_path = {},
                      int init_random = 10, int n_candidates = 512);

}  // namespace phytnet
