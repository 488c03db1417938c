#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "phytnet/tensor.hpp"

namespace phytnet {

// RGB image, CHW float storage, values in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> data;  // 3 * height * width

  Image() = default;
  Image(int h, int w) : height(h), width(w), data(static_cast<size_t>(3) * h * w, 0.0f) {}
  float& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
};

// PNG or JPEG, detected by file magic. Throws DataError when undecodable,
// IoError when unreadable.
Image decode_image(const std::filesystem::path& file);
void write_png(const std::filesystem::path& file, const Image& img);

Image hflip(const Image& img);
// Separable Gaussian, kernel truncated at 4*sigma, edge-replicate.
Image gaussian_blur(const Image& img, double sigma);
// Counterclockwise rotation about the image center, bilinear resampling,
// edge-replicate padding; output keeps the input dims.
Image rotate(const Image& img, double degrees);
Image resize_bilinear(const Image& img, int out_h, int out_w);

struct NormStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};
};

// [3,H,W] tensor standardized per channel.
Tensor image_to_tensor(const Image& img, const NormStats& norm);

// Training augmentation stack: horizontal flip w.p. 0.5, Gaussian blur
// (sigma ~ U[0.1,2]) w.p. 0.5, rotation by U[0,5] degrees.
Image augment(const Image& img, Rng& rng);

}  // namespace phytnet
