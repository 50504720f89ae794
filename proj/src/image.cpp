#include "mmreg/image.hpp"

#include "mmreg/error.hpp"

#include <cmath>
#include <string>

namespace mmreg {

bool GeoTransform::invertible() const {
  return std::abs(determinant()) > 1e-12;
}

Point2 GeoTransform::pixel_to_map(Point2 px) const {
  return {a * px.x + b * px.y + c, d * px.x + e * px.y + f};
}

Point2 GeoTransform::map_to_pixel(Point2 map) const {
  const double det = determinant();
  if (!(std::abs(det) > 1e-12))
    throw ParameterError("geotransform is not invertible (|det| <= 1e-12)");
  const double mx = map.x - c;
  const double my = map.y - f;
  return {(e * mx - b * my) / det, (-d * mx + a * my) / det};
}

Image::Image(int width, int height, double fill)
    : width_(width), height_(height) {
  if (width < 1 || height < 1)
    throw ParameterError("image dimensions must be positive, got " +
                         std::to_string(width) + "x" + std::to_string(height));
  pixels_.assign(static_cast<std::size_t>(width) * height, fill);
}

Image::Image(int width, int height, std::vector<double> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (width < 1 || height < 1)
    throw ParameterError("image dimensions must be positive");
  if (pixels_.size() != static_cast<std::size_t>(width) * height)
    throw ParameterError("pixel buffer size does not match dimensions");
  for (double v : pixels_)
    if (!std::isfinite(v))
      throw ParameterError("image contains non-finite samples");
}

Image Image::crop(int x0, int y0, int w, int h) const {
  Image out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out.at(x, y) = clamped(x0 + x, y0 + y);
  if (geo_) {
    GeoTransform g = *geo_;
    g.c = geo_->a * x0 + geo_->b * y0 + geo_->c;
    g.f = geo_->d * x0 + geo_->e * y0 + geo_->f;
    out.set_geo(g);
  }
  return out;
}

GradientPair compute_gradients(const Image &img, GradientOperator op) {
  const int w = img.width();
  const int h = img.height();
  GradientPair g{Image(w, h), Image(w, h)};

  if (op == GradientOperator::Sobel) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        auto p = [&](int dx, int dy) { return img.clamped(x + dx, y + dy); };
        g.gx.at(x, y) = ((p(1, -1) + 2 * p(1, 0) + p(1, 1)) -
                         (p(-1, -1) + 2 * p(-1, 0) + p(-1, 1))) / 8.0;
        g.gy.at(x, y) = ((p(-1, 1) + 2 * p(0, 1) + p(1, 1)) -
                         (p(-1, -1) + 2 * p(0, -1) + p(1, -1))) / 8.0;
      }
    }
    return g;
  }

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double gx = 0.0;
      if (w > 1) {
        if (x == 0)
          gx = img.at(1, y) - img.at(0, y);
        else if (x == w - 1)
          gx = img.at(w - 1, y) - img.at(w - 2, y);
        else
          gx = (img.at(x + 1, y) - img.at(x - 1, y)) / 2.0;
      }
      double gy = 0.0;
      if (h > 1) {
        if (y == 0)
          gy = img.at(x, 1) - img.at(x, 0);
        else if (y == h - 1)
          gy = img.at(x, h - 1) - img.at(x, h - 2);
        else
          gy = (img.at(x, y + 1) - img.at(x, y - 1)) / 2.0;
      }
      g.gx.at(x, y) = gx;
      g.gy.at(x, y) = gy;
    }
  }
  return g;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0))
    throw ParameterError("gaussian sigma must be > 0, got " +
                         std::to_string(sigma));
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += k[i + radius];
  }
  for (double &v : k)
    v /= sum;
  return k;
}

Image separable_convolve(const Image &img, std::span<const double> kernel_x,
                         std::span<const double> kernel_y) {
  if (kernel_x.size() % 2 == 0 || kernel_y.size() % 2 == 0)
    throw ParameterError("convolution kernels must have odd length");
  const int w = img.width();
  const int h = img.height();
  const int rx = static_cast<int>(kernel_x.size() / 2);
  const int ry = static_cast<int>(kernel_y.size() / 2);

  Image tmp(w, h);
  std::vector<double> line(w + 2 * rx);
  for (int y = 0; y < h; ++y) {
    for (int i = 0; i < w + 2 * rx; ++i)
      line[i] = img.at(std::clamp(i - rx, 0, w - 1), y);
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = 0; k <= 2 * rx; ++k)
        acc += kernel_x[k] * line[x + k];
      tmp.at(x, y) = acc;
    }
  }

  Image out(w, h);
  std::vector<double> acc(w);
  for (int y = 0; y < h; ++y) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int k = 0; k <= 2 * ry; ++k) {
      const int sy = std::clamp(y + k - ry, 0, h - 1);
      const double kv = kernel_y[k];
      const auto src = tmp.row(sy);
      for (int x = 0; x < w; ++x)
        acc[x] += kv * src[x];
    }
    for (int x = 0; x < w; ++x)
      out.at(x, y) = acc[x];
  }
  out.set_geo(img.geo());
  return out;
}

Image gaussian_convolve(const Image &img, double sigma) {
  const auto k = gaussian_kernel(sigma);
  return separable_convolve(img, k, k);
}

IntegralImage::IntegralImage(const Image &img)
    : width_(img.width()), height_(img.height()),
      table_(static_cast<std::size_t>(width_ + 1) * (height_ + 1), 0.0) {
  for (int i = 1; i <= height_; ++i) {
    double row_sum = 0.0;
    for (int j = 1; j <= width_; ++j) {
      row_sum += img.at(j - 1, i - 1);
      table_[static_cast<std::size_t>(i) * (width_ + 1) + j] =
          table_[static_cast<std::size_t>(i - 1) * (width_ + 1) + j] + row_sum;
    }
  }
}

double IntegralImage::box_sum(int x0, int y0, int x1, int y1) const {
  x0 = std::clamp(x0, 0, width_);
  x1 = std::clamp(x1, 0, width_);
  y0 = std::clamp(y0, 0, height_);
  y1 = std::clamp(y1, 0, height_);
  if (x1 <= x0 || y1 <= y0)
    return 0.0;
  return entry(y1, x1) - entry(y0, x1) - entry(y1, x0) + entry(y0, x0);
}

Point2 geo_predict(const GeoTransform &ref_geo, const GeoTransform &sen_geo,
                   Point2 ref_pt) {
  if (!ref_geo.invertible())
    throw ParameterError("reference geotransform is not invertible");
  return sen_geo.map_to_pixel(ref_geo.pixel_to_map(ref_pt));
}

std::optional<double> sample_bilinear(const Image &img, double x, double y) {
  constexpr double eps = 1e-9;
  const int w = img.width();
  const int h = img.height();
  if (!(x >= -eps && y >= -eps && x <= w - 1 + eps && y <= h - 1 + eps))
    return std::nullopt;
  return sample_bilinear_clamped(img, x, y);
}

double sample_bilinear_clamped(const Image &img, double x, double y) {
  const int w = img.width();
  const int h = img.height();
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  if (fx == 0.0 && fy == 0.0)
    return img.at(x0, y0);
  const double top = img.at(x0, y0) * (1.0 - fx) + img.at(x1, y0) * fx;
  const double bot = img.at(x0, y1) * (1.0 - fx) + img.at(x1, y1) * fx;
  return top * (1.0 - fy) + bot * fy;
}

} // namespace mmreg
