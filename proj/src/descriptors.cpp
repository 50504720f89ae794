#include "mmreg/descriptors.hpp"

#include "mmreg/error.hpp"
#include "mmreg/io.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace mmreg {

namespace {

void require_min_size(const Image &img, int min_side, const char *what) {
  if (img.width() < min_side || img.height() < min_side)
    throw ParameterError(std::string(what) + " needs an image of at least " +
                         std::to_string(min_side) + "x" +
                         std::to_string(min_side) + " pixels, got " +
                         std::to_string(img.width()) + "x" +
                         std::to_string(img.height()));
}

GradientPair gradients_for(const Image &img, double presmooth_sigma,
                           GradientOperator op) {
  if (presmooth_sigma > 0.0)
    return compute_gradients(gaussian_convolve(img, presmooth_sigma), op);
  return compute_gradients(img, op);
}

// Replicate-padded copy with `pad` extra pixels on every side.
Image pad_replicate(const Image &img, int pad) {
  return img.crop(-pad, -pad, img.width() + 2 * pad, img.height() + 2 * pad);
}

// Unsigned gradient orientation folded into [0, pi).
double unsigned_angle(double gx, double gy) {
  double a = std::atan2(gy, gx);
  if (a < 0.0)
    a += std::numbers::pi;
  if (a >= std::numbers::pi)
    a -= std::numbers::pi;
  return a;
}

} // namespace

FeatureVolume::FeatureVolume(int width, int height, int dims)
    : width_(width), height_(height), dims_(dims) {
  if (width < 1 || height < 1 || dims < 1)
    throw ParameterError("feature volume needs positive width, height, dims");
  data_.assign(static_cast<std::size_t>(width) * height * dims, 0.0);
}

std::vector<double> FeatureVolume::channel(int c) const {
  std::vector<double> out(static_cast<std::size_t>(width_) * height_);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = data_[i * dims_ + c];
  return out;
}

void l2_normalize_pixels(FeatureVolume &vol) {
  for (int y = 0; y < vol.height(); ++y) {
    for (int x = 0; x < vol.width(); ++x) {
      auto v = vol.pixel(x, y);
      double ss = 0.0;
      for (double e : v)
        ss += e * e;
      const double norm = std::sqrt(ss);
      if (norm < kNormFloor) {
        std::fill(v.begin(), v.end(), 0.0);
        continue;
      }
      for (double &e : v)
        e /= norm;
    }
  }
}

void CfogParams::validate() const {
  if (m < 2)
    throw ParameterError("cfog.m must be >= 2, got " + std::to_string(m));
  if (!(sigma > 0.0))
    throw ParameterError("cfog.sigma must be > 0");
  if (presmooth_sigma < 0.0)
    throw ParameterError("cfog.presmooth_sigma must be >= 0");
}

void HogParams::validate() const {
  if (cell_size < 2)
    throw ParameterError("hog.cell_size must be >= 2, got " +
                         std::to_string(cell_size));
  if (presmooth_sigma < 0.0)
    throw ParameterError("hog.presmooth_sigma must be >= 0");
}

void LssParams::validate() const {
  if (patch_radius < 0)
    throw ParameterError("lss.patch_radius must be >= 0");
  if (region_radius <= patch_radius)
    throw ParameterError("lss.region_radius must exceed lss.patch_radius");
  if (radial_bins < 1 || angular_bins < 1)
    throw ParameterError("lss bin counts must be >= 1");
  if (var_noise < 0.0)
    throw ParameterError("lss.var_noise must be >= 0");
}

void SurfParams::validate() const {
  if (haar_scale < 1)
    throw ParameterError("surf.haar_scale must be >= 1");
}

Image oriented_gradient_channel(const GradientPair &grads, double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  Image out(grads.gx.width(), grads.gx.height());
  const auto gx = grads.gx.pixels();
  const auto gy = grads.gy.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < dst.size(); ++i)
    dst[i] = std::abs(c * gx[i] + s * gy[i]);
  return out;
}

FeatureVolume build_cfog(const Image &img, const CfogParams &p) {
  p.validate();
  require_min_size(img, 3, "CFOG");
  const int w = img.width();
  const int h = img.height();
  const GradientPair grads = gradients_for(img, p.presmooth_sigma, p.gradient);
  const auto kernel = gaussian_kernel(p.sigma);

  std::vector<Image> channels;
  channels.reserve(p.m);
  for (int i = 0; i < p.m; ++i) {
    const double theta = i * std::numbers::pi / p.m;
    channels.push_back(separable_convolve(oriented_gradient_channel(grads, theta),
                                          kernel, kernel));
  }

  // [1,2,1]/4 along the orientation axis, wrapping channel 0 <-> m-1.
  FeatureVolume vol(w, h, p.m);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      auto v = vol.pixel(x, y);
      for (int i = 0; i < p.m; ++i) {
        const double prev = channels[(i + p.m - 1) % p.m].at(x, y);
        const double next = channels[(i + 1) % p.m].at(x, y);
        v[i] = (prev + 2.0 * channels[i].at(x, y) + next) / 4.0;
      }
    }
  }
  if (p.normalize)
    l2_normalize_pixels(vol);
  return vol;
}

FeatureVolume build_pixelwise_hog(const Image &img, const HogParams &p) {
  p.validate();
  const int cell = p.cell_size;
  const int block = HogParams::kCellsPerSide * cell;
  require_min_size(img, block + 1, "pixel-wise HOG");
  const int w = img.width();
  const int h = img.height();
  constexpr int bins = HogParams::kBins;
  const double bin_width = std::numbers::pi / bins;

  const GradientPair grads =
      gradients_for(img, p.presmooth_sigma, GradientOperator::Central);

  // Per-pixel magnitude split across its two nearest orientation bins.
  const std::size_t n = img.size();
  std::vector<int> bin_lo(n), bin_hi(n);
  std::vector<double> mag_lo(n), mag_hi(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double gx = grads.gx.pixels()[i];
    const double gy = grads.gy.pixels()[i];
    const double mag = std::sqrt(gx * gx + gy * gy);
    const double fb = unsigned_angle(gx, gy) / bin_width - 0.5;
    const double b0 = std::floor(fb);
    const double frac = fb - b0;
    bin_lo[i] = (static_cast<int>(b0) + bins) % bins;
    bin_hi[i] = (bin_lo[i] + 1) % bins;
    mag_lo[i] = mag * (1.0 - frac);
    mag_hi[i] = mag * frac;
  }

  // Bilinear cell weights for each block offset.  Offsets run over
  // [-cell, cell); cell centres sit at -cell/2 and +cell/2.
  std::vector<double> cw0(block), cw1(block);
  for (int k = 0; k < block; ++k) {
    const double f = (k - cell + 0.5) / cell + 0.5;
    cw0[k] = std::max(0.0, 1.0 - std::abs(f));
    cw1[k] = std::max(0.0, 1.0 - std::abs(f - 1.0));
  }

  FeatureVolume vol(w, h, p.dims());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      auto hist = vol.pixel(x, y);
      for (int ky = 0; ky < block; ++ky) {
        const int sy = std::clamp(y + ky - cell, 0, h - 1);
        const double wy[2] = {cw0[ky], cw1[ky]};
        for (int kx = 0; kx < block; ++kx) {
          const int sx = std::clamp(x + kx - cell, 0, w - 1);
          const std::size_t si = static_cast<std::size_t>(sy) * w + sx;
          const double lo = mag_lo[si];
          const double hi = mag_hi[si];
          if (lo == 0.0 && hi == 0.0)
            continue;
          const double wx[2] = {cw0[kx], cw1[kx]};
          for (int cy = 0; cy < 2; ++cy) {
            for (int cx = 0; cx < 2; ++cx) {
              const double ws = wy[cy] * wx[cx];
              if (ws == 0.0)
                continue;
              const int base = (cy * 2 + cx) * bins;
              hist[base + bin_lo[si]] += ws * lo;
              hist[base + bin_hi[si]] += ws * hi;
            }
          }
        }
      }
    }
  }
  l2_normalize_pixels(vol);
  return vol;
}

int lss_bin(int dx, int dy, const LssParams &p) {
  if (dx == 0 && dy == 0)
    return -1;
  const double r = std::sqrt(static_cast<double>(dx * dx + dy * dy));
  if (r > p.region_radius)
    return -1;
  const double lr = std::log1p(r) / std::log1p(static_cast<double>(p.region_radius));
  const int rb = std::min(static_cast<int>(lr * p.radial_bins), p.radial_bins - 1);
  const double ang = std::atan2(static_cast<double>(dy), static_cast<double>(dx)) +
                     std::numbers::pi;
  // Angular bins are centred on their directions so the 8-neighbours of the
  // centre land in distinct bins.
  int ab = static_cast<int>(std::floor(ang / (2.0 * std::numbers::pi) * p.angular_bins + 0.5));
  ab %= p.angular_bins;
  return rb * p.angular_bins + ab;
}

FeatureVolume build_lss(const Image &img, const LssParams &p) {
  p.validate();
  require_min_size(img, 2 * p.region_radius + 2, "LSS");
  const int w = img.width();
  const int h = img.height();
  const int pr = p.patch_radius;
  const int pad = p.region_radius + pr + 1;
  const Image padded = pad_replicate(img, pad);
  const int pw = padded.width();
  const auto src = padded.pixels();

  // Patch SSD between q and q+d for every output pixel q.
  std::vector<double> diff(static_cast<std::size_t>(w + 2 * pr) * (h + 2 * pr));
  std::vector<double> hsum(static_cast<std::size_t>(w) * (h + 2 * pr));
  auto patch_ssd = [&](int dx, int dy, std::vector<double> &out) {
    const int dw = w + 2 * pr;
    for (int y = 0; y < h + 2 * pr; ++y) {
      const std::size_t row = static_cast<std::size_t>(y + pad - pr) * pw;
      const std::size_t row_d = static_cast<std::size_t>(y + pad - pr + dy) * pw;
      for (int x = 0; x < dw; ++x) {
        const double e = src[row + x + pad - pr] - src[row_d + x + pad - pr + dx];
        diff[static_cast<std::size_t>(y) * dw + x] = e * e;
      }
    }
    for (int y = 0; y < h + 2 * pr; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int k = 0; k <= 2 * pr; ++k)
          acc += diff[static_cast<std::size_t>(y) * dw + x + k];
        hsum[static_cast<std::size_t>(y) * w + x] = acc;
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int k = 0; k <= 2 * pr; ++k)
          acc += hsum[static_cast<std::size_t>(y + k) * w + x];
        out[static_cast<std::size_t>(y) * w + x] = acc;
      }
    }
  };

  const std::size_t n = img.size();
  std::vector<double> ssd(n);
  std::vector<double> var_auto(n, 0.0);
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      if (dx == 0 && dy == 0)
        continue;
      patch_ssd(dx, dy, ssd);
      for (std::size_t i = 0; i < n; ++i)
        var_auto[i] = std::max(var_auto[i], ssd[i]);
    }
  }
  std::vector<double> denom(n);
  for (std::size_t i = 0; i < n; ++i)
    denom[i] = std::max(p.var_noise, var_auto[i]);

  // The correlation surface decreases monotonically in the SSD, so the
  // per-bin maximum is taken over the bin's smallest SSD.
  FeatureVolume vol(w, h, p.dims());
  auto acc = vol.data();
  const int dims = p.dims();
  const int rr = p.region_radius;
  std::vector<double> min_ssd(n * dims, std::numeric_limits<double>::infinity());
  for (int dy = -rr; dy <= rr; ++dy) {
    for (int dx = -rr; dx <= rr; ++dx) {
      const int bin = lss_bin(dx, dy, p);
      if (bin < 0)
        continue;
      patch_ssd(dx, dy, ssd);
      for (std::size_t i = 0; i < n; ++i) {
        double &slot = min_ssd[static_cast<std::size_t>(bin) * n + i];
        slot = std::min(slot, ssd[i]);
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double d = denom[i];
    for (int b = 0; b < dims; ++b) {
      const double m = min_ssd[static_cast<std::size_t>(b) * n + i];
      double &out = acc[i * dims + b];
      if (std::isinf(m))
        out = 0.0;
      else if (d > 0.0)
        out = std::exp(-m / d);
      else
        out = m > 0.0 ? 0.0 : 1.0;
    }
  }

  // Linear stretch of each descriptor to [0,1].
  for (std::size_t i = 0; i < n; ++i) {
    auto v = acc.subspan(i * dims, dims);
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double mn = *lo;
    const double range = *hi - mn;
    if (range < 1e-12) {
      std::fill(v.begin(), v.end(), 0.0);
      continue;
    }
    for (double &e : v)
      e = (e - mn) / range;
  }
  return vol;
}

FeatureVolume build_usurf(const Image &img, const SurfParams &p) {
  p.validate();
  constexpr int fp = SurfParams::footprint();
  constexpr int sub = SurfParams::kSubregion;
  constexpr int grid = SurfParams::kGrid;
  require_min_size(img, fp + 1, "U-SURF");
  const int w = img.width();
  const int h = img.height();
  const int s = p.haar_scale;
  const int pad = fp / 2 + s + 1;
  const Image padded = pad_replicate(img, pad);
  const IntegralImage integral(padded);
  const int pw = padded.width();
  const int ph = padded.height();

  // Box sums from the integral table carry rounding of the order of its
  // largest entry; responses below that level are cancellation noise.
  double total = 0.0;
  for (double v : padded.pixels())
    total += std::abs(v);
  const double noise_floor = 16.0 * std::numeric_limits<double>::epsilon() * total;
  auto clean = [noise_floor](double r) {
    r = std::abs(r);
    return r > noise_floor ? r : 0.0;
  };

  // |Haar| responses at every padded pixel whose wavelet fits.
  std::vector<double> adx(static_cast<std::size_t>(pw) * ph, 0.0);
  std::vector<double> ady(adx.size(), 0.0);
  for (int y = s; y <= ph - s; ++y) {
    for (int x = s; x <= pw - s; ++x) {
      const double right = integral.box_sum(x, y - s, x + s, y + s);
      const double left = integral.box_sum(x - s, y - s, x, y + s);
      const double below = integral.box_sum(x - s, y, x + s, y + s);
      const double above = integral.box_sum(x - s, y - s, x + s, y);
      adx[static_cast<std::size_t>(y) * pw + x] = clean(right - left);
      ady[static_cast<std::size_t>(y) * pw + x] = clean(below - above);
    }
  }

  FeatureVolume vol(w, h, SurfParams::dims());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      auto v = vol.pixel(x, y);
      const int ox = x + pad - fp / 2;
      const int oy = y + pad - fp / 2;
      for (int j = 0; j < grid; ++j) {
        for (int i = 0; i < grid; ++i) {
          double sx = 0.0, sy = 0.0;
          for (int yy = 0; yy < sub; ++yy) {
            const std::size_t row =
                static_cast<std::size_t>(oy + j * sub + yy) * pw + ox + i * sub;
            for (int xx = 0; xx < sub; ++xx) {
              sx += adx[row + xx];
              sy += ady[row + xx];
            }
          }
          v[(j * grid + i) * 2] = sx;
          v[(j * grid + i) * 2 + 1] = sy;
        }
      }
    }
  }
  l2_normalize_pixels(vol);
  return vol;
}

void dump_volume_pgm(const FeatureVolume &vol,
                     const std::filesystem::path &prefix) {
  for (int c = 0; c < vol.dims(); ++c) {
    const auto plane = vol.channel(c);
    std::filesystem::path out = prefix;
    out += "_c" + std::to_string(c) + ".pgm";
    io::write_heatmap_pgm(plane, vol.width(), vol.height(), out);
  }
}

} // namespace mmreg
