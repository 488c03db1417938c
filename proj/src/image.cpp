#include "phytnet/image.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>

#include <jpeglib.h>
#include <png.h>

namespace phytnet {

namespace {

inline float u8_to_unit(unsigned char v) { return static_cast<float>(v) / 255.0f; }

inline unsigned char unit_to_u8(float v) {
  const float clamped = std::min(1.0f, std::max(0.0f, v));
  return static_cast<unsigned char>(std::lround(clamped * 255.0f));
}

Image from_interleaved_rgb(const unsigned char* rgb, int h, int w) {
  Image img(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const unsigned char* px = rgb + (static_cast<size_t>(y) * w + x) * 3;
      img.at(0, y, x) = u8_to_unit(px[0]);
      img.at(1, y, x) = u8_to_unit(px[1]);
      img.at(2, y, x) = u8_to_unit(px[2]);
    }
  }
  return img;
}

Image decode_png(const std::filesystem::path& file) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, file.string().c_str()))
    throw DataError("undecodable PNG " + file.string() + ": " + png.message);
  png.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw DataError("undecodable PNG " + file.string() + ": " + msg);
  }
  return from_interleaved_rgb(buffer.data(), static_cast<int>(png.height),
                              static_cast<int>(png.width));
}

struct JpegErrorMgr {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(mgr->jump, 1);
}

Image decode_jpeg(const std::filesystem::path& file) {
  std::FILE* fp = std::fopen(file.string().c_str(), "rb");
  if (!fp) throw IoError("cannot open image file " + file.string());

  jpeg_decompress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  std::vector<unsigned char> row;
  Image img;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    std::fclose(fp);
    throw DataError("undecodable JPEG " + file.string());
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, fp);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const int w = static_cast<int>(cinfo.output_width);
  const int h = static_cast<int>(cinfo.output_height);
  img = Image(h, w);
  row.resize(static_cast<size_t>(w) * 3);
  unsigned char* row_ptr = row.data();
  while (cinfo.output_scanline < cinfo.output_height) {
    const int y = static_cast<int>(cinfo.output_scanline);
    jpeg_read_scanlines(&cinfo, &row_ptr, 1);
    for (int x = 0; x < w; ++x) {
      img.at(0, y, x) = u8_to_unit(row[static_cast<size_t>(x) * 3]);
      img.at(1, y, x) = u8_to_unit(row[static_cast<size_t>(x) * 3 + 1]);
      img.at(2, y, x) = u8_to_unit(row[static_cast<size_t>(x) * 3 + 2]);
    }
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  std::fclose(fp);
  return img;
}

}  // namespace

Image decode_image(const std::filesystem::path& file) {
  std::FILE* fp = std::fopen(file.string().c_str(), "rb");
  if (!fp) throw IoError("cannot open image file " + file.string());
  unsigned char magic[4] = {0, 0, 0, 0};
  const size_t got = std::fread(magic, 1, 4, fp);
  std::fclose(fp);
  if (got >= 4 && magic[0] == 0x89 && magic[1] == 'P' && magic[2] == 'N' &&
      magic[3] == 'G')
    return decode_png(file);
  if (got >= 2 && magic[0] == 0xFF && magic[1] == 0xD8) return decode_jpeg(file);
  throw DataError("unrecognized image format in " + file.string());
}

void write_png(const std::filesystem::path& file, const Image& img) {
  std::vector<unsigned char> buffer(static_cast<size_t>(3) * img.height * img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      unsigned char* px = buffer.data() + (static_cast<size_t>(y) * img.width + x) * 3;
      px[0] = unit_to_u8(img.at(0, y, x));
      px[1] = unit_to_u8(img.at(1, y, x));
      px[2] = unit_to_u8(img.at(2, y, x));
    }
  }
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, file.string().c_str(), 0, buffer.data(), 0, nullptr))
    throw IoError("cannot write PNG " + file.string() + ": " + png.message);
}

Image hflip(const Image& img) {
  Image out(img.height, img.width);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[static_cast<size_t>(i + radius)] = w;
    total += w;
  }
  for (double& w : kernel) w /= total;

  const int h = img.height, w = img.width;
  Image tmp(h, w), out(h, w);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int xi = std::clamp(x + i, 0, w - 1);
          acc += kernel[static_cast<size_t>(i + radius)] * img.at(c, y, xi);
        }
        tmp.at(c, y, x) = static_cast<float>(acc);
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int yi = std::clamp(y + i, 0, h - 1);
          acc += kernel[static_cast<size_t>(i + radius)] * tmp.at(c, yi, x);
        }
        out.at(c, y, x) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

namespace {

inline float sample_bilinear_clamped(const Image& img, int c, double sy, double sx) {
  const int h = img.height, w = img.width;
  sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
  sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
  const int y0 = static_cast<int>(sy);
  const int x0 = static_cast<int>(sx);
  const int y1 = std::min(y0 + 1, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const double fy = sy - y0, fx = sx - x0;
  const double top = img.at(c, y0, x0) * (1.0 - fx) + img.at(c, y0, x1) * fx;
  const double bot = img.at(c, y1, x0) * (1.0 - fx) + img.at(c, y1, x1) * fx;
  return static_cast<float>(top * (1.0 - fy) + bot * fy);
}

}  // namespace

Image rotate(const Image& img, double degrees) {
  const double theta = degrees * 3.14159265358979323846 / 180.0;
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  const double cy = (img.height - 1) / 2.0, cx = (img.width - 1) / 2.0;
  Image out(img.height, img.width);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const double dy = y - cy, dx = x - cx;
        // Inverse map of a counterclockwise rotation.
        const double sx = cos_t * dx + sin_t * dy + cx;
        const double sy = -sin_t * dx + cos_t * dy + cy;
        out.at(c, y, x) = sample_bilinear_clamped(img, c, sy, sx);
      }
    }
  }
  return out;
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ConfigError("resize target must be >= 1x1");
  if (out_h == img.height && out_w == img.width) return img;
  Image out(out_h, out_w);
  const double scale_y = static_cast<double>(img.height) / out_h;
  const double scale_x = static_cast<double>(img.width) / out_w;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < out_h; ++y) {
      const double sy = (y + 0.5) * scale_y - 0.5;
      for (int x = 0; x < out_w; ++x) {
        const double sx = (x + 0.5) * scale_x - 0.5;
        out.at(c, y, x) = sample_bilinear_clamped(img, c, sy, sx);
      }
    }
  }
  return out;
}

Tensor image_to_tensor(const Image& img, const NormStats& norm) {
  std::vector<float> values(img.data.size());
  const size_t hw = static_cast<size_t>(img.height) * img.width;
  for (int c = 0; c < 3; ++c) {
    const double mean = norm.mean[static_cast<size_t>(c)];
    const double inv_std = 1.0 / norm.std[static_cast<size_t>(c)];
    for (size_t i = 0; i < hw; ++i)
      values[c * hw + i] = static_cast<float>((img.data[c * hw + i] - mean) * inv_std);
  }
  return Tensor::from_vector({3, img.height, img.width}, std::move(values));
}

Image augment(const Image& img, Rng& rng) {
  Image out = img;
  if (rng.bernoulli(0.5)) out = hflip(out);
  if (rng.bernoulli(0.5)) out = gaussian_blur(out, rng.uniform(0.1, 2.0));
  out = rotate(out, rng.uniform(0.0, 5.0));
  return out;
}

}  // namespace phytnet
