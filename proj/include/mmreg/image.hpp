#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace mmreg {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

// Six-parameter affine georeference:
//   map_x = a*col + b*row + c
//   map_y = d*col + e*row + f
struct GeoTransform {
  double a = 1.0, b = 0.0, c = 0.0;
  double d = 0.0, e = 1.0, f = 0.0;

  double determinant() const { return a * e - b * d; }
  bool invertible() const;
  Point2 pixel_to_map(Point2 px) const;
  // Throws ParameterError when the linear part is singular.
  Point2 map_to_pixel(Point2 map) const;
};

// Row-major single-band raster of finite real samples, nominally in [0,1].
class Image {
public:
  Image() = default;
  Image(int width, int height, double fill = 0.0);
  Image(int width, int height, std::vector<double> pixels);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }

  double &at(int x, int y) { return pixels_[index(x, y)]; }
  double at(int x, int y) const { return pixels_[index(x, y)]; }

  // Replicate-padded read.
  double clamped(int x, int y) const {
    x = std::clamp(x, 0, width_ - 1);
    y = std::clamp(y, 0, height_ - 1);
    return pixels_[index(x, y)];
  }

  std::span<double> pixels() { return pixels_; }
  std::span<const double> pixels() const { return pixels_; }
  std::span<const double> row(int y) const {
    return std::span<const double>(pixels_).subspan(index(0, y), width_);
  }

  const std::optional<GeoTransform> &geo() const { return geo_; }
  void set_geo(std::optional<GeoTransform> geo) { geo_ = geo; }

  // Sub-image [x0, x0+w) x [y0, y0+h); parts outside the image are
  // replicate-padded.  The geotransform is shifted to the new origin.
  Image crop(int x0, int y0, int w, int h) const;

  bool contains(double x, double y) const {
    return x >= 0.0 && y >= 0.0 && x <= width_ - 1 && y <= height_ - 1;
  }

private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> pixels_;
  std::optional<GeoTransform> geo_;
};

struct GradientPair {
  Image gx;
  Image gy;
};

enum class GradientOperator { Central, Sobel };

// Central differences on the interior, one-sided differences on the border.
// The Sobel variant is normalised by 1/8 so a unit ramp gives a unit slope.
GradientPair compute_gradients(const Image &img,
                               GradientOperator op = GradientOperator::Central);

// Normalised discrete Gaussian of radius ceil(3*sigma).
std::vector<double> gaussian_kernel(double sigma);

// Separable Gaussian smoothing with replicate borders.
Image gaussian_convolve(const Image &img, double sigma);

// Separable convolution with an arbitrary odd-length kernel, replicate borders.
Image separable_convolve(const Image &img, std::span<const double> kernel_x,
                         std::span<const double> kernel_y);

class IntegralImage {
public:
  explicit IntegralImage(const Image &img);

  int width() const { return width_; }
  int height() const { return height_; }

  // Entry (row i, col j): sum of source pixels with row < i and col < j.
  double entry(int i, int j) const {
    return table_[static_cast<std::size_t>(i) * (width_ + 1) + j];
  }

  // Sum over the half-open rectangle [x0,x1) x [y0,y1); coordinates are
  // clipped to the image and an empty rectangle sums to zero.
  double box_sum(int x0, int y0, int x1, int y1) const;

private:
  int width_;
  int height_;
  std::vector<double> table_;
};

// Maps a reference pixel to the sensed pixel grid through the shared map frame.
Point2 geo_predict(const GeoTransform &ref_geo, const GeoTransform &sen_geo,
                   Point2 ref_pt);

// Bilinear sample at a real-valued position; nullopt outside [0,w-1]x[0,h-1].
std::optional<double> sample_bilinear(const Image &img, double x, double y);

// Bilinear sample with replicate padding outside the image.
double sample_bilinear_clamped(const Image &img, double x, double y);

} // namespace mmreg
