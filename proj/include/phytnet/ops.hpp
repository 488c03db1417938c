#pragma once

#include <functional>
#include <vector>

#include "phytnet/tensor.hpp"

namespace phytnet {

// Elementwise and reduction ops. All are differentiable w.r.t. every input
// that requires grad. Reductions accumulate in double.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& a, float s);
Tensor sum(const Tensor& a);      // -> scalar
Tensor sum_abs(const Tensor& a);  // -> scalar, subgradient sign(x), 0 at 0

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);  // x * Phi(x), exact-erf formulation
Tensor sigmoid(const Tensor& x);
Tensor activation(const Tensor& x, Activation kind);

// y[n,co,ho,wo] = sum_{ci,i,j} x[n,ci,ho*s-p+i,wo*s-p+j] * w[co,ci,i,j] (+ b[co])
// Pass an undefined Tensor as b for no bias.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding);

enum class PoolKind { kMax, kAvg, kGlobalAvg };
// Max/avg use window k with the given stride; padding cells are -inf for max
// and zero for avg. global_avg ignores k/stride/padding and yields [N,C,1,1].
Tensor pool(const Tensor& x, PoolKind kind, int k, int stride, int padding = 0);

// y = x . w^T + b with x [N,Din], w [Dout,Din], b [Dout].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Normalizes each sample's channel groups over (channels-in-group, H, W),
// then applies the per-channel affine transform.
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  float eps = 1e-5f);

// Mean over the batch of -log softmax(logits)[label]; max-subtracted.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// y[n,c,h,w] = x[n,c,h,w] * g[n,c]
Tensor scale_channels(const Tensor& x, const Tensor& g);

Tensor dropout(const Tensor& x, float rate, Mode mode, Rng& rng);
// Drops the whole branch with probability 1-survive_prob in train mode,
// otherwise scales by 1/survive_prob; identity in eval mode.
Tensor stochastic_depth(const Tensor& branch, float survive_prob, Mode mode, Rng& rng);

Tensor reshape(const Tensor& x, std::vector<int> new_shape);

inline int conv_out_size(int in, int k, int stride, int padding) {
  return (in + 2 * padding - k) / stride + 1;
}

// Gradient check for a scalar-valued f: compares the backward gradient against
// central-difference directional derivatives along four seeded random
// directions, each probed on an eps ladder {eps, 3eps, 9eps} and scored by its
// best rung (fd error is U-shaped in the step size on a float32 forward).
// Returns the worst direction's |analytic - numeric| relative to the probe's
// natural scale. Correct gradients score far below 1e-3; a wrong gradient has
// a step-independent error floor, so no ladder rung can mask it.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double eps);

}  // namespace phytnet
