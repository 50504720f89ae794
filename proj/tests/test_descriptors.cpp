#include "doctest.h"
#include "support.hpp"

#include "mmreg/descriptors.hpp"
#include "mmreg/error.hpp"

#include <cmath>
#include <limits>
#include <numbers>

using namespace mmreg;

namespace {

constexpr double kPi = std::numbers::pi;

Image scaled(const Image &img, double a, double b) {
  Image out = img;
  for (double &v : out.pixels())
    v = a * v + b;
  return out;
}

void normalize(std::vector<double> &v) {
  double n = 0.0;
  for (double x : v)
    n += x * x;
  n = std::sqrt(n);
  if (n < kNormFloor) {
    std::fill(v.begin(), v.end(), 0.0);
    return;
  }
  for (double &x : v)
    x /= n;
}

// Per-pixel HOG histogram accumulated directly from the block around (x, y).
std::vector<double> hog_oracle(const Image &img, int x, int y, int cell) {
  const GradientPair g = compute_gradients(img);
  std::vector<double> hist(36, 0.0);
  const double bw = kPi / 9.0;
  // The 2cell x 2cell block spans [x - cell, x + cell); its centre is x - 0.5.
  const double cx = x - 0.5, cy = y - 0.5;
  for (int v = y - cell; v < y + cell; ++v)
    for (int u = x - cell; u < x + cell; ++u) {
      const double gx = g.gx.clamped(u, v), gy = g.gy.clamped(u, v);
      const double mag = std::hypot(gx, gy);
      double theta = std::fmod(std::atan2(gy, gx) + 2.0 * kPi, kPi);
      for (int j = 0; j < 2; ++j)
        for (int i = 0; i < 2; ++i) {
          const double ccx = cx + (i - 0.5) * cell, ccy = cy + (j - 0.5) * cell;
          const double ws = std::max(0.0, 1.0 - std::abs(u - ccx) / cell) *
                            std::max(0.0, 1.0 - std::abs(v - ccy) / cell);
          for (int b = 0; b < 9; ++b) {
            const double centre = (b + 0.5) * bw;
            double d = std::abs(theta - centre);
            d = std::min(d, kPi - d);
            const double wo = std::max(0.0, 1.0 - d / bw);
            hist[(j * 2 + i) * 9 + b] += ws * wo * mag;
          }
        }
    }
  normalize(hist);
  return hist;
}

int lss_bin_oracle(int dx, int dy, int R, int rb, int ab) {
  const double r = std::hypot(dx, dy);
  if (r == 0.0 || r > R)
    return -1;
  const int radial = std::min(rb - 1, int(std::floor(rb * std::log(1.0 + r) / std::log(1.0 + R))));
  // Sector k is centred on the direction atan2 = 2 pi k / ab - pi.
  const double ang = std::atan2(double(dy), double(dx)) + kPi;
  const int angular = int(std::lround(ang / (2.0 * kPi) * ab)) % ab;
  return radial * ab + angular;
}

std::vector<double> lss_oracle(const Image &img, int x, int y, const LssParams &p) {
  auto ssd = [&](int qx, int qy, int dx, int dy) {
    double s = 0.0;
    for (int j = -p.patch_radius; j <= p.patch_radius; ++j)
      for (int i = -p.patch_radius; i <= p.patch_radius; ++i) {
        const double e = img.clamped(qx + i, qy + j) - img.clamped(qx + dx + i, qy + dy + j);
        s += e * e;
      }
    return s;
  };
  double var_auto = 0.0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx)
      if (dx || dy)
        var_auto = std::max(var_auto, ssd(x, y, dx, dy));
  const double denom = std::max(p.var_noise, var_auto);
  std::vector<double> d(p.dims(), 0.0);
  const int R = p.region_radius;
  for (int dy = -R; dy <= R; ++dy)
    for (int dx = -R; dx <= R; ++dx) {
      const int b = lss_bin_oracle(dx, dy, R, p.radial_bins, p.angular_bins);
      if (b < 0)
        continue;
      const double s = ssd(x, y, dx, dy);
      const double c = denom > 0.0 ? std::exp(-s / denom) : (s == 0.0 ? 1.0 : 0.0);
      d[b] = std::max(d[b], c);
    }
  const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
  const double mn = *lo, range = *hi - *lo;
  for (double &v : d)
    v = range < 1e-12 ? 0.0 : (v - mn) / range;
  return d;
}

std::vector<double> surf_oracle(const Image &img, int x, int y, int s) {
  auto box = [&](int x0, int y0, int x1, int y1) {
    double acc = 0.0;
    for (int v = y0; v < y1; ++v)
      for (int u = x0; u < x1; ++u)
        acc += img.clamped(u, v);
    return acc;
  };
  std::vector<double> d(32, 0.0);
  for (int j = 0; j < 4; ++j)
    for (int i = 0; i < 4; ++i)
      for (int v = y - 10 + 5 * j; v < y - 10 + 5 * j + 5; ++v)
        for (int u = x - 10 + 5 * i; u < x - 10 + 5 * i + 5; ++u) {
          d[(j * 4 + i) * 2] += std::abs(box(u, v - s, u + s, v + s) - box(u - s, v - s, u, v + s));
          d[(j * 4 + i) * 2 + 1] +=
              std::abs(box(u - s, v, u + s, v + s) - box(u - s, v - s, u + s, v));
        }
  normalize(d);
  return d;
}

FeatureVolume build(int which, const Image &img, double var_noise = 25.0 / (255.0 * 255.0)) {
  switch (which) {
  case 0:
    return build_cfog(img);
  case 1:
    return build_pixelwise_hog(img);
  case 2: {
    LssParams p;
    p.var_noise = var_noise;
    return build_lss(img, p);
  }
  default:
    return build_usurf(img);
  }
}

} // namespace

TEST_SUITE("descriptors") {

TEST_CASE("oriented gradient channel") {
  const Image img = testing::random_image(16, 16, 21);
  const GradientPair g = compute_gradients(img);
  const Image c0 = oriented_gradient_channel(g, 0.0);
  const Image c45 = oriented_gradient_channel(g, kPi / 4.0);
  for (std::size_t i = 0; i < img.size(); ++i) {
    CHECK(c0.pixels()[i] == std::abs(g.gx.pixels()[i]));
    CHECK(c45.pixels()[i] ==
          doctest::Approx(std::abs((g.gx.pixels()[i] + g.gy.pixels()[i]) / std::sqrt(2.0)))
              .epsilon(1e-12));
  }
  const GradientPair gn = compute_gradients(scaled(img, -1.0, 0.0));
  const Image cn = oriented_gradient_channel(gn, 1.1);
  const Image cp = oriented_gradient_channel(g, 1.1);
  for (std::size_t i = 0; i < img.size(); ++i)
    CHECK(cn.pixels()[i] == cp.pixels()[i]);
}

TEST_CASE("dimensions") {
  const Image img = testing::random_image(48, 48, 2);
  CHECK(build_cfog(img).dims() == 9);
  CfogParams c;
  c.m = 12;
  CHECK(build_cfog(img, c).dims() == 12);
  CHECK(build_pixelwise_hog(img).dims() == 36);
  CHECK(build_lss(img).dims() == 24);
  CHECK(build_usurf(img).dims() == 32);
}

TEST_CASE("constant images give zero volumes") {
  const Image c(48, 48, 0.6);
  for (int which = 0; which < 4; ++which) {
    CAPTURE(which);
    const FeatureVolume v = build(which, c);
    for (double x : v.data())
      CHECK(x == 0.0);
  }
}

TEST_CASE("CFOG matches a direct construction") {
  const Image img = testing::random_image(20, 18, 4);
  CfogParams p;
  p.m = 6;
  p.sigma = 1.1;
  const FeatureVolume v = build_cfog(img, p);
  const GradientPair g = compute_gradients(img);
  std::vector<Image> ch;
  for (int i = 0; i < p.m; ++i) {
    Image raw(img.width(), img.height());
    const double t = i * kPi / p.m;
    for (std::size_t k = 0; k < img.size(); ++k)
      raw.pixels()[k] = std::abs(std::cos(t) * g.gx.pixels()[k] + std::sin(t) * g.gy.pixels()[k]);
    ch.push_back(gaussian_convolve(raw, p.sigma));
  }
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      std::vector<double> e(p.m);
      for (int i = 0; i < p.m; ++i)
        e[i] = 0.25 * ch[(i + p.m - 1) % p.m].at(x, y) + 0.5 * ch[i].at(x, y) +
               0.25 * ch[(i + 1) % p.m].at(x, y);
      normalize(e);
      for (int i = 0; i < p.m; ++i)
        CHECK(v.at(x, y, i) == doctest::Approx(e[i]).epsilon(1e-12));
    }
}

TEST_CASE("normalized pixels have unit or zero norm") {
  const Image img = testing::texture(40, 40, 3);
  for (int which : {0, 1, 3}) {
    const FeatureVolume v = build(which, img);
    for (int y = 0; y < v.height(); ++y)
      for (int x = 0; x < v.width(); ++x) {
        double n = 0.0;
        for (double e : v.pixel(x, y)) {
          CHECK(e >= 0.0);
          n += e * e;
        }
        n = std::sqrt(n);
        CHECK((n == 0.0 || std::abs(n - 1.0) < 1e-6));
      }
  }
}

TEST_CASE("CFOG without normalization keeps raw magnitudes") {
  const Image img = testing::random_image(16, 16, 9);
  CfogParams p;
  p.normalize = false;
  const FeatureVolume a = build_cfog(img, p);
  const FeatureVolume b = build_cfog(scaled(img, 2.0, 0.0), p);
  for (std::size_t i = 0; i < a.data().size(); ++i)
    CHECK(b.data()[i] == doctest::Approx(2.0 * a.data()[i]).epsilon(1e-12));
}

TEST_CASE("HOG matches a per-pixel histogram oracle") {
  const Image img = testing::random_image(24, 24, 31);
  const FeatureVolume v = build_pixelwise_hog(img);
  for (auto [x, y] : {std::pair{12, 12}, std::pair{7, 15}, std::pair{0, 0}, std::pair{23, 5}}) {
    const auto o = hog_oracle(img, x, y, 4);
    for (int c = 0; c < 36; ++c)
      CHECK(v.at(x, y, c) == doctest::Approx(o[c]).epsilon(1e-9));
  }
}

TEST_CASE("HOG splits a vote between two orientation bins") {
  // A single horizontal step gives gradients along +x (angle 0), exactly
  // between the centres of bins 8 and 0.
  Image img(20, 20, 0.0);
  for (int y = 0; y < 20; ++y)
    for (int x = 10; x < 20; ++x)
      img.at(x, y) = 1.0;
  const FeatureVolume v = build_pixelwise_hog(img);
  const auto px = v.pixel(10, 10);
  for (int cell = 0; cell < 4; ++cell) {
    CHECK(px[cell * 9 + 0] == doctest::Approx(px[cell * 9 + 8]).epsilon(1e-12));
    for (int b = 1; b < 8; ++b)
      CHECK(px[cell * 9 + b] == 0.0);
  }
}

TEST_CASE("LSS bins") {
  const LssParams p;
  CHECK(lss_bin(0, 0, p) == -1);
  CHECK(lss_bin(21, 0, p) == -1);
  CHECK(lss_bin(15, 15, p) == -1);
  int counts[24] = {};
  for (int dy = -20; dy <= 20; ++dy)
    for (int dx = -20; dx <= 20; ++dx) {
      const int b = lss_bin(dx, dy, p);
      CHECK(b == lss_bin_oracle(dx, dy, 20, 3, 8));
      if (b >= 0)
        ++counts[b];
    }
  for (int c : counts)
    CHECK(c > 0);
}

TEST_CASE("LSS matches a naive oracle") {
  const Image img = testing::random_image(48, 48, 17);
  const LssParams p;
  const FeatureVolume v = build_lss(img, p);
  for (auto [x, y] : {std::pair{24, 24}, std::pair{3, 40}, std::pair{47, 0}}) {
    const auto o = lss_oracle(img, x, y, p);
    for (int c = 0; c < p.dims(); ++c)
      CHECK(v.at(x, y, c) == doctest::Approx(o[c]).epsilon(1e-9));
  }
}

TEST_CASE("LSS on a constant image stretches to zeros") {
  const FeatureVolume v = build_lss(Image(45, 45, 0.3));
  for (double e : v.data())
    CHECK(e == 0.0);
}

TEST_CASE("SURF matches a direct Haar oracle") {
  const Image img = testing::random_image(32, 32, 23);
  const FeatureVolume v = build_usurf(img);
  for (auto [x, y] : {std::pair{16, 16}, std::pair{2, 29}, std::pair{31, 31}}) {
    const auto o = surf_oracle(img, x, y, 2);
    for (int c = 0; c < 32; ++c)
      CHECK(v.at(x, y, c) == doctest::Approx(o[c]).epsilon(1e-9));
  }
}

TEST_CASE("inversion and gain invariance") {
  for (int seed = 0; seed < 3; ++seed) {
    const Image img = testing::random_image(64, 64, 100 + seed);
    const Image inv = scaled(img, -1.0, 1.0);
    const Image gain = scaled(img, 3.7, 0.0);
    for (int which = 0; which < 4; ++which) {
      CAPTURE(which);
      CHECK(testing::max_abs_diff(build(which, img), build(which, inv)) < 1e-9);
      if (which == 2)
        CHECK(testing::max_abs_diff(build(2, img, 0.0), build(2, gain, 0.0)) < 1e-9);
      else
        CHECK(testing::max_abs_diff(build(which, img), build(which, gain)) < 1e-9);
    }
  }
}

TEST_CASE("descriptors are local") {
  const Image img = testing::random_image(64, 64, 41);
  Image poked = img;
  poked.at(32, 30) += 0.5;
  // Chebyshev radius of influence of one input pixel.
  const int radius[4] = {
      static_cast<int>(std::ceil(3.0 * 0.8)) + 1, // CFOG
      4 + 1,                                      // HOG cell + gradient
      20 + 2 + 1,                                 // LSS region + patch + neighbour
      10 + 2,                                     // SURF half footprint + Haar
  };
  for (int which = 0; which < 4; ++which) {
    CAPTURE(which);
    const FeatureVolume a = build(which, img);
    const FeatureVolume b = build(which, poked);
    bool changed_inside = false;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const int d = std::max(std::abs(x - 32), std::abs(y - 30));
        for (int c = 0; c < a.dims(); ++c) {
          const bool diff = std::abs(a.at(x, y, c) - b.at(x, y, c)) > 1e-12;
          if (d > radius[which])
            CHECK_FALSE(diff);
          changed_inside |= diff;
        }
      }
    CHECK(changed_inside);
  }
}

TEST_CASE("builders reject tiny images and bad parameters") {
  CHECK_THROWS_AS(build_cfog(Image(2, 5)), ParameterError);
  CHECK_THROWS_AS(build_pixelwise_hog(Image(8, 8)), ParameterError);
  CHECK_THROWS_AS(build_lss(Image(41, 60)), ParameterError);
  CHECK_THROWS_AS(build_usurf(Image(20, 20)), ParameterError);
  CfogParams c;
  c.m = 0;
  CHECK_THROWS_AS(build_cfog(Image(10, 10), c), ParameterError);
  c = {};
  c.sigma = 0.0;
  CHECK_THROWS_AS(build_cfog(Image(10, 10), c), ParameterError);
}

TEST_CASE("volume channel dump") {
  const auto dir = testing::temp_dir("dump");
  const FeatureVolume v = build_cfog(testing::texture(16, 12, 1));
  dump_volume_pgm(v, dir / "cfog");
  for (int c = 0; c < 9; ++c)
    CHECK(std::filesystem::exists(dir / ("cfog_c" + std::to_string(c) + ".pgm")));
}

} // TEST_SUITE
