#pragma once

// Shared helpers for the test suites: random tensors, diff metrics, and
// reference (oracle) implementations written independently of the library
// code they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "phytnet/ops.hpp"
#include "phytnet/tensor.hpp"

namespace testutil {

using phytnet::Rng;
using phytnet::Tensor;

inline Tensor rand_tensor(std::vector<int> shape, Rng& rng, float lo = -1.0f,
                          float hi = 1.0f, bool requires_grad = false) {
  return Tensor::uniform(std::move(shape), lo, hi, rng, requires_grad);
}

inline double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

inline double max_rel_diff(const std::vector<float>& got, const std::vector<double>& want) {
  if (got.size() != want.size()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (size_t i = 0; i < got.size(); ++i) {
    double d = std::abs(static_cast<double>(got[i]) - want[i]) / (std::abs(want[i]) + 1e-8);
    m = std::max(m, d);
  }
  return m;
}

// Six-nested-loop reference convolution, double accumulation.
inline std::vector<double> conv2d_oracle(const std::vector<float>& x, int n, int cin,
                                         int h, int w, const std::vector<float>& wt,
                                         int cout, int kh, int kw,
                                         const std::vector<float>* bias, int stride,
                                         int padding, int* oh_out, int* ow_out) {
  const int oh = (h + 2 * padding - kh) / stride + 1;
  const int ow = (w + 2 * padding - kw) / stride + 1;
  *oh_out = oh;
  *ow_out = ow;
  std::vector<double> y(static_cast<size_t>(n) * cout * oh * ow, 0.0);
  for (int in = 0; in < n; ++in)
    for (int oc = 0; oc < cout; ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias ? static_cast<double>((*bias)[oc]) : 0.0;
          for (int ic = 0; ic < cin; ++ic)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int iy = oy * stride - padding + ky;
                const int ix = ox * stride - padding + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                const double xv = x[((static_cast<size_t>(in) * cin + ic) * h + iy) * w + ix];
                const double wv = wt[((static_cast<size_t>(oc) * cin + ic) * kh + ky) * kw + kx];
                acc += xv * wv;
              }
          y[((static_cast<size_t>(in) * cout + oc) * oh + oy) * ow + ox] = acc;
        }
  return y;
}

// Dot-product reference for linear.
inline std::vector<double> linear_oracle(const std::vector<float>& x, int n, int din,
                                         const std::vector<float>& w, int dout,
                                         const std::vector<float>& b) {
  std::vector<double> y(static_cast<size_t>(n) * dout, 0.0);
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < dout; ++o) {
      double acc = b[o];
      for (int k = 0; k < din; ++k)
        acc += static_cast<double>(x[static_cast<size_t>(i) * din + k]) *
               static_cast<double>(w[static_cast<size_t>(o) * din + k]);
      y[static_cast<size_t>(i) * dout + o] = acc;
    }
  return y;
}

// Explicit log-sum-exp cross entropy, double precision.
inline double cross_entropy_oracle(const std::vector<float>& logits, int n, int k,
                                   const std::vector<int>& labels) {
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const float* row = logits.data() + static_cast<size_t>(i) * k;
    double mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double lse = 0.0;
    for (int j = 0; j < k; ++j) lse += std::exp(static_cast<double>(row[j]) - mx);
    lse = mx + std::log(lse);
    total += lse - static_cast<double>(row[labels[static_cast<size_t>(i)]]);
  }
  return total / n;
}

// Two-pass per-group normalization statistics, double precision.
// Returns the normalized values (pre-affine).
inline std::vector<double> group_norm_oracle(const std::vector<float>& x, int n, int c,
                                             int h, int w, int groups, double eps) {
  std::vector<double> y(x.size(), 0.0);
  const int cg = c / groups;
  const int64_t group_elems = static_cast<int64_t>(cg) * h * w;
  for (int in = 0; in < n; ++in)
    for (int g = 0; g < groups; ++g) {
      double mean = 0.0;
      for (int ic = g * cg; ic < (g + 1) * cg; ++ic)
        for (int iy = 0; iy < h; ++iy)
          for (int ix = 0; ix < w; ++ix)
            mean += x[((static_cast<size_t>(in) * c + ic) * h + iy) * w + ix];
      mean /= static_cast<double>(group_elems);
      double var = 0.0;
      for (int ic = g * cg; ic < (g + 1) * cg; ++ic)
        for (int iy = 0; iy < h; ++iy)
          for (int ix = 0; ix < w; ++ix) {
            const double d =
                x[((static_cast<size_t>(in) * c + ic) * h + iy) * w + ix] - mean;
            var += d * d;
          }
      var /= static_cast<double>(group_elems);
      const double inv = 1.0 / std::sqrt(var + eps);
      for (int ic = g * cg; ic < (g + 1) * cg; ++ic)
        for (int iy = 0; iy < h; ++iy)
          for (int ix = 0; ix < w; ++ix) {
            const size_t idx = ((static_cast<size_t>(in) * c + ic) * h + iy) * w + ix;
            y[idx] = (x[idx] - mean) * inv;
          }
    }
  return y;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// A scratch directory unique to the calling test binary, wiped on creation.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("phytnet_tests_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testutil
