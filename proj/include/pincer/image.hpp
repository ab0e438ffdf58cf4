#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "pincer/errors.hpp"

namespace pincer {

/// Grayscale pixel grid, row-major, values in [0, 1].
struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  double at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
};

struct ImageStats {
  double brightness = 0.0;
  double mean_gradient = 0.0;
};

namespace detail {

/// Central-difference gradient magnitude per pixel; only interior pixels
/// have a value, border entries are flagged invalid.
inline std::vector<double> gradient_magnitudes(const GrayImage& img, std::vector<bool>& valid) {
  std::vector<double> mag(img.pixels.size(), 0.0);
  valid.assign(img.pixels.size(), false);
  if (img.height < 3 || img.width < 3) return mag;
  for (std::size_t y = 1; y + 1 < img.height; ++y) {
    for (std::size_t x = 1; x + 1 < img.width; ++x) {
      const double gx = 0.5 * (img.at(y, x + 1) - img.at(y, x - 1));
      const double gy = 0.5 * (img.at(y + 1, x) - img.at(y - 1, x));
      mag[y * img.width + x] = std::sqrt(gx * gx + gy * gy);
      valid[y * img.width + x] = true;
    }
  }
  return mag;
}

}  // namespace detail

inline void validate_image(const GrayImage& img) {
  if (img.height == 0 || img.width == 0 || img.pixels.size() != img.height * img.width) {
    throw DataError("image: pixel count does not match dimensions");
  }
  for (double p : img.pixels) {
    if (!(p >= 0.0 && p <= 1.0)) throw DataError("image: pixel value outside [0,1]");
  }
}

/// Brightness is the mean pixel value; mean_gradient is the mean
/// central-difference gradient magnitude over interior pixels.
inline ImageStats image_stats(const GrayImage& img) {
  validate_image(img);
  ImageStats stats;
  double acc = 0.0;
  for (double p : img.pixels) acc += p;
  stats.brightness = acc / static_cast<double>(img.pixels.size());
  std::vector<bool> valid;
  const auto mag = detail::gradient_magnitudes(img, valid);
  double gacc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < mag.size(); ++i) {
    if (valid[i]) {
      gacc += mag[i];
      ++count;
    }
  }
  stats.mean_gradient = count ? gacc / static_cast<double>(count) : 0.0;
  return stats;
}

/// Raw per-patch statistics: [mean intensity, mean gradient magnitude,
/// intensity histogram (bins fractions)] for a grid x grid tiling.
struct ImagePatchGrid {
  std::size_t grid_rows = 0;
  std::size_t grid_cols = 0;
  std::size_t raw_dim = 0;
  std::size_t image_height = 0;
  std::size_t image_width = 0;
  std::vector<double> features;  // patches x raw_dim

  std::size_t patch_count() const { return grid_rows * grid_cols; }
};

inline std::size_t raw_patch_dim(std::size_t hist_bins) { return 2 + hist_bins; }

inline ImagePatchGrid patch_features(const GrayImage& img, std::size_t grid, std::size_t hist_bins) {
  validate_image(img);
  if (grid == 0 || img.height < grid || img.width < grid) {
    throw ConfigError("patch grid " + std::to_string(grid) + " does not fit the image");
  }
  ImagePatchGrid out;
  out.grid_rows = out.grid_cols = grid;
  out.raw_dim = raw_patch_dim(hist_bins);
  out.image_height = img.height;
  out.image_width = img.width;
  out.features.assign(grid * grid * out.raw_dim, 0.0);
  std::vector<bool> valid;
  const auto mag = detail::gradient_magnitudes(img, valid);
  for (std::size_t py = 0; py < grid; ++py) {
    const std::size_t y0 = py * img.height / grid, y1 = (py + 1) * img.height / grid;
    for (std::size_t px = 0; px < grid; ++px) {
      const std::size_t x0 = px * img.width / grid, x1 = (px + 1) * img.width / grid;
      double* f = &out.features[(py * grid + px) * out.raw_dim];
      double intensity = 0.0, grad = 0.0;
      std::size_t n = 0, ng = 0;
      for (std::size_t y = y0; y < y1; ++y) {
        for (std::size_t x = x0; x < x1; ++x) {
          const double p = img.at(y, x);
          intensity += p;
          ++n;
          const auto bin = std::min(hist_bins - 1, static_cast<std::size_t>(p * static_cast<double>(hist_bins)));
          f[2 + bin] += 1.0;
          if (valid[y * img.width + x]) {
            grad += mag[y * img.width + x];
            ++ng;
          }
        }
      }
      f[0] = intensity / static_cast<double>(n);
      f[1] = ng ? grad / static_cast<double>(ng) : 0.0;
      for (std::size_t b = 0; b < hist_bins; ++b) f[2 + b] /= static_cast<double>(n);
    }
  }
  return out;
}

}  // namespace pincer
