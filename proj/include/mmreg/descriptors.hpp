#pragma once

#include "mmreg/image.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mmreg {

// H x W x dims stack of per-pixel descriptor vectors, channel-contiguous
// per pixel: value(x, y, c) lives at ((y * width) + x) * dims + c.
class FeatureVolume {
public:
  FeatureVolume() = default;
  FeatureVolume(int width, int height, int dims);

  int width() const { return width_; }
  int height() const { return height_; }
  int dims() const { return dims_; }

  double &at(int x, int y, int c) { return data_[offset(x, y) + c]; }
  double at(int x, int y, int c) const { return data_[offset(x, y) + c]; }

  std::span<double> pixel(int x, int y) {
    return std::span<double>(data_).subspan(offset(x, y), dims_);
  }
  std::span<const double> pixel(int x, int y) const {
    return std::span<const double>(data_).subspan(offset(x, y), dims_);
  }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  // One channel as an image-sized plane.
  std::vector<double> channel(int c) const;

private:
  std::size_t offset(int x, int y) const {
    return (static_cast<std::size_t>(y) * width_ + x) * dims_;
  }

  int width_ = 0;
  int height_ = 0;
  int dims_ = 0;
  std::vector<double> data_;
};

// Vectors with L2 norm below this floor are left as exact zeros.
inline constexpr double kNormFloor = 1e-10;

void l2_normalize_pixels(FeatureVolume &vol);

struct CfogParams {
  int m = 9;
  double sigma = 0.8;
  bool normalize = true;
  double presmooth_sigma = 0.0; // 0 disables smoothing before gradients
  GradientOperator gradient = GradientOperator::Central;

  void validate() const;
};

struct HogParams {
  static constexpr int kCellsPerSide = 2;
  static constexpr int kBins = 9;
  int cell_size = 4;
  double presmooth_sigma = 0.0;

  int dims() const { return kCellsPerSide * kCellsPerSide * kBins; }
  void validate() const;
};

struct LssParams {
  int patch_radius = 2;
  int region_radius = 20;
  int radial_bins = 3;
  int angular_bins = 8;
  double var_noise = 25.0 / (255.0 * 255.0);

  int dims() const { return radial_bins * angular_bins; }
  void validate() const;
};

struct SurfParams {
  static constexpr int kGrid = 4;
  static constexpr int kSubregion = 5;
  int haar_scale = 2;

  static constexpr int footprint() { return kGrid * kSubregion; }
  static constexpr int dims() { return kGrid * kGrid * 2; }
  void validate() const;
};

// |cos(theta) gx + sin(theta) gy| per pixel.
Image oriented_gradient_channel(const GradientPair &grads, double theta);

FeatureVolume build_cfog(const Image &img, const CfogParams &p = {});
FeatureVolume build_pixelwise_hog(const Image &img, const HogParams &p = {});
FeatureVolume build_lss(const Image &img, const LssParams &p = {});
FeatureVolume build_usurf(const Image &img, const SurfParams &p = {});

// Log-polar bin of a displacement inside the LSS region, or -1 when the
// displacement is the centre itself or falls outside the region disc.
int lss_bin(int dx, int dy, const LssParams &p);

// Writes one 8-bit PGM per channel (<prefix>_c<k>.pgm), linearly rescaled.
void dump_volume_pgm(const FeatureVolume &vol,
                     const std::filesystem::path &prefix);

} // namespace mmreg
